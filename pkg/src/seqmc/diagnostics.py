"""Replication-based checks of the particle system against exact quantities.

Everything here is computed from an :class:`~seqmc.particles.Ensemble`
(occupation counts and ``phi`` per replication and level) together with the
exact propagators of the level sequence, so each ``nu_j^N(h)`` is a cheap
weighted sum over states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .feynman_kac import LevelSequence, propagators_to
from .measures import StateFunction, as_function, integrate, lp_norm, variance
from .particles import Ensemble, ParticleCloud, simulate, step_ensemble

SE_MULTIPLIER = 4.0
MIN_REPLICATIONS = 100
MAX_ABORT_FRACTION = 0.01


@dataclass(frozen=True)
class Check:
    """One Monte Carlo comparison ``|estimate - exact| <= 4 se``."""

    quantity: str
    estimate: float
    se: float
    exact: float
    passed: bool

    @classmethod
    def compare(cls, quantity, estimate, se, exact, k=SE_MULTIPLIER, atol=1e-12):
        ok = abs(estimate - exact) <= k * se + atol
        return cls(quantity, float(estimate), float(se), float(exact), bool(ok))

    def row(self):
        return [self.quantity, self.estimate, self.se, self.exact, self.passed]


def mean_se(x) -> Tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        return float(np.mean(x)), float("nan")
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))


def function_dictionary(seq: LevelSequence, level: Optional[int] = None,
                    size: int = 8) -> List[Tuple[str, StateFunction]]:
    """Indicator functions plus functions centered under ``mu_level``."""
    k = seq.n if level is None else level
    m = seq.m
    mu = seq.mus[k]
    x = np.arange(m, dtype=np.float64)
    out = [(f"ind_{i}", StateFunction(np.eye(m)[i])) for i in range(min(m, size // 2))]

    def centered(name, v):
        out.append((name, StateFunction(v - integrate(mu, v))))

    centered("centered_linear", x)
    centered("centered_square", (x - x.mean()) ** 2)
    centered("centered_sign", (-1.0) ** x)
    centered("centered_cos", np.cos(2.0 * np.pi * x / m))
    rng = np.random.default_rng(20120301)
    i = 0
    while len(out) < size:
        centered(f"centered_random_{i}", rng.standard_normal(m))
        i += 1
    return out[:size]


@dataclass(frozen=True)
class _Exact:
    """Exact vectors entering the V terms for one test function."""

    h: List[np.ndarray]        # q_{j,n}(f)
    h_sq_prop: List[np.ndarray]  # q_{j,n}(f^2)
    gbar: List[np.ndarray]     # q_{j,j+1}(1)
    inner: List[np.ndarray]    # q_{j,j+1}(q_{j+1,n}(f)^2)


def _exact(seq: LevelSequence, f, n: Optional[int] = None) -> _Exact:
    n = seq.n if n is None else n
    v = as_function(f, seq.m).values
    props = propagators_to(seq, n)
    h = [p.matrix @ v for p in props]
    h2 = [p.matrix @ (v * v) for p in props]
    ones = np.ones(seq.m)
    gb, inner = [], []
    for j in range(n):
        from .feynman_kac import one_step_propagator
        q1 = one_step_propagator(seq, j + 1).matrix
        gb.append(q1 @ ones)
        inner.append(q1 @ (h[j + 1] ** 2))
    return _Exact(h, h2, gb, inner)


def _nu(ens: Ensemble, j: int, vec: np.ndarray) -> np.ndarray:
    return ens.phi[:, j] * (np.sum(ens.counts[:, j, :] * vec, axis=1) / ens.N)


def v_terms(ens: Ensemble, seq: LevelSequence, f, n: Optional[int] = None) -> np.ndarray:
    """``V_{j,n}^N(f)`` for every replication and ``j < n``; shape ``(R, n)``."""
    n = seq.n if n is None else n
    ex = _exact(seq, f, n)
    out = np.empty((ens.R, n))
    for j in range(n):
        nu1 = ens.phi[:, j]
        out[:, j] = (nu1 * _nu(ens, j, ex.h[j] ** 2) - _nu(ens, j, ex.h[j]) ** 2
                     + _nu(ens, j, ex.gbar[j] - 1.0) * _nu(ens, j, ex.h_sq_prop[j]))
    return out


def v_term(cloud: ParticleCloud, seq: LevelSequence, n: int, f) -> float:
    """``V_{j,n}^N(f)`` for a single cloud at level ``j < n``."""
    j = cloud.level
    if not 0 <= j < n <= seq.n:
        raise ValueError(f"need 0 <= j < n <= {seq.n}, got j={j}, n={n}")
    ex = _exact(seq, f, n)
    N = cloud.N

    def nu(vec):
        return cloud.phi * float(np.sum(vec[cloud.positions]) / N)

    return (cloud.phi * nu(ex.h[j] ** 2) - nu(ex.h[j]) ** 2
            + nu(ex.gbar[j] - 1.0) * nu(ex.h_sq_prop[j]))


def expected_v0(seq: LevelSequence, f, N: int, n: Optional[int] = None) -> float:
    """Closed form of ``E[V_{0,n}^N(f)]`` for i.i.d. level-0 particles.

    ``(1 - 1/N) Var_{mu_0}(q_{0,n} f) + mu_0((gbar_{0,1} - 1) q_{0,n}(f^2)) / N``.
    """
    n = seq.n if n is None else n
    ex = _exact(seq, f, n)
    mu0 = seq.mus[0]
    return ((1.0 - 1.0 / N) * variance(mu0, ex.h[0])
            + integrate(mu0, (ex.gbar[0] - 1.0) * ex.h_sq_prop[0]) / N)


@dataclass(eq=False)
class VarianceReport:
    """Both sides of the mean-squared-error identity for ``nu_n^N(f)``.

    ``empirical_mse_nu`` is the replication mean of ``|nu_n^N(f) - mu_n(f)|^2``;
    ``formula_rhs`` is ``(Var_{mu_n}(f) + mean sum_j V_{j,n}^N(f)) / N``.
    """

    f: StateFunction
    N: int
    R: int
    empirical_mse_nu: float
    formula_rhs: float
    per_level_V: np.ndarray
    standard_errors: Dict[str, float]
    exact_mean: float
    var_mu_n: float
    aborted: int
    difference_se: float
    ensemble: Optional[Ensemble] = field(default=None, repr=False)
    seq: Optional[LevelSequence] = field(default=None, repr=False)

    @property
    def abort_fraction(self) -> float:
        return self.aborted / (self.R + self.aborted) if self.R + self.aborted else 0.0

    @property
    def identity_holds(self) -> bool:
        gap = abs(self.empirical_mse_nu - self.formula_rhs)
        return gap <= SE_MULTIPLIER * self.difference_se + 1e-15

    @property
    def passed(self) -> bool:
        return self.identity_holds and self.abort_fraction <= MAX_ABORT_FRACTION

    def checks(self) -> List[Check]:
        return [Check("N*mse_nu - (var_mu_n + sum_V)", self.N * (self.empirical_mse_nu - self.formula_rhs),
                      self.N * self.difference_se, 0.0, self.identity_holds)]

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "R": self.R,
            "aborted": self.aborted,
            "empirical_mse_nu": self.empirical_mse_nu,
            "formula_rhs": self.formula_rhs,
            "var_mu_n": self.var_mu_n,
            "per_level_V": [float(v) for v in self.per_level_V],
            "se_empirical_mse_nu": self.standard_errors["empirical_mse_nu"],
            "se_formula_rhs": self.standard_errors["formula_rhs"],
            "se_difference": self.difference_se,
            "identity_holds": self.identity_holds,
        }


def variance_report_from(ens: Ensemble, seq: LevelSequence, f) -> VarianceReport:
    f = as_function(f, seq.m)
    good = ens.select(ens.ok)
    n, N = seq.n, ens.N
    target = integrate(seq.mus[n], f)
    var_n = variance(seq.mus[n], f)
    err2 = (good.nu(n, f) - target) ** 2
    V = v_terms(good, seq, f) if n > 0 else np.zeros((good.R, 0))
    rhs_samples = (var_n + V.sum(axis=1)) / N
    lhs, lhs_se = mean_se(err2)
    rhs, rhs_se = mean_se(rhs_samples)
    _, diff_se = mean_se(err2 - rhs_samples)
    return VarianceReport(
        f=f, N=N, R=good.R, empirical_mse_nu=lhs, formula_rhs=rhs,
        per_level_V=V.mean(axis=0) if good.R else np.zeros(n),
        standard_errors={"empirical_mse_nu": lhs_se, "formula_rhs": rhs_se},
        exact_mean=target, var_mu_n=var_n, aborted=ens.R - good.R,
        difference_se=diff_se, ensemble=good, seq=seq)


def variance_identity_report(seq: LevelSequence, f, N: int, R: int, seed: int,
                             threads: int = 1) -> VarianceReport:
    if R < MIN_REPLICATIONS:
        raise ValueError(f"need at least {MIN_REPLICATIONS} replications, got {R}")
    ens = simulate(seq, N, R, seed, threads=threads)
    return variance_report_from(ens, seq, f)


@dataclass(frozen=True)
class EtaBounds:
    """Empirical errors of ``eta_n^N(f)`` next to their evaluated bounds.

    Arrays have one entry per batch of replications.
    """

    mse: np.ndarray
    mse_bound: np.ndarray
    mae: np.ndarray
    mae_bound: np.ndarray

    @property
    def rhs(self) -> Tuple[float, float]:
        return float(np.mean(self.mse_bound)), float(np.mean(self.mae_bound))

    def pass_fraction(self) -> Tuple[float, float]:
        return (float(np.mean(self.mse <= self.mse_bound)),
                float(np.mean(self.mae <= self.mae_bound)))


def eta_error_bounds(report_or_ensemble, f, seq: Optional[LevelSequence] = None,
                     batches: int = 1) -> EtaBounds:
    """Evaluate both ``eta``-error bounds from replication variances.

    The squared-error bound is ``2 Var(nu(f_n)) + 2 |f_n|_sup^2 Var(nu(1))`` and
    the absolute-error bound is ``Var(nu(f_n))^(1/2) + sqrt(2) |f_n|_sup Var(nu(1))
    + sqrt(2) Var(nu(f_n))^(1/2) Var(nu(1))^(1/2)`` with ``f_n = f - mu_n(f)``.
    """
    if isinstance(report_or_ensemble, VarianceReport):
        ens, seq = report_or_ensemble.ensemble, report_or_ensemble.seq
    else:
        ens = report_or_ensemble.select(report_or_ensemble.ok)
    if seq is None:
        raise ValueError("a level sequence is required")
    n = seq.n
    f = as_function(f, seq.m).values
    target = float(np.sum(seq.mus[n].weights * f))
    fn = f - target
    sup = float(np.max(np.abs(fn)))
    eta_err = ens.eta(n, f) - target
    nu_fn = ens.nu(n, fn)
    nu_1 = ens.phi[:, n]
    out = {"mse": [], "mse_bound": [], "mae": [], "mae_bound": []}
    for idx in np.array_split(np.arange(ens.R), batches):
        v_f = float(np.var(nu_fn[idx], ddof=1))
        v_1 = float(np.var(nu_1[idx], ddof=1))
        out["mse"].append(np.mean(eta_err[idx] ** 2))
        out["mse_bound"].append(2 * v_f + 2 * sup ** 2 * v_1)
        out["mae"].append(np.mean(np.abs(eta_err[idx])))
        out["mae_bound"].append(math.sqrt(v_f) + math.sqrt(2) * sup * v_1
                                + math.sqrt(2) * math.sqrt(v_f * v_1))
    return EtaBounds(**{k: np.array(v) for k, v in out.items()})


def unbiasedness_checks(ens: Ensemble, seq: LevelSequence,
                        functions: Sequence[Tuple[str, StateFunction]],
                        level: Optional[int] = None) -> List[Check]:
    k = seq.n if level is None else level
    good = ens.select(ens.ok)
    out = []
    for name, f in functions:
        est, se = mean_se(good.nu(k, f))
        out.append(Check.compare(f"E[nu_{k}({name})]", est, se, integrate(seq.mus[k], f)))
    est, se = mean_se(good.phi[:, k])
    out.append(Check.compare(f"E[phi_{k}]", est, se, 1.0))
    return out


def martingale_increments(ens: Ensemble, seq: LevelSequence, f) -> Dict[str, np.ndarray]:
    """Per-replication martingale increments built from exact propagators.

    ``A``: ``A_n - A_0`` with ``A_j = nu_j(q_{j,n} f)``, shape ``(R,)``.
    ``L``: ``B_{k+1} - nu_k(q_{k,k+1} 1) nu_k(q_{k,k+1}(q_{k+1,n}(f)^2))`` with
    ``B_k = nu_k(1) nu_k(q_{k,n}(f)^2)``, shape ``(R, n)``.
    ``M``: ``Bt_{k+1} - Bt_k - nu_k(q_{k,k+1}(1) - 1) nu_k(q_{k,n}(f^2))`` with
    ``Bt_k = nu_k(1) nu_k(q_{k,n}(f^2))``, shape ``(R, n)``.
    """
    good = ens.select(ens.ok)
    n = seq.n
    ex = _exact(seq, f)
    A = [_nu(good, j, ex.h[j]) for j in range(n + 1)]
    B = [good.phi[:, j] * _nu(good, j, ex.h[j] ** 2) for j in range(n + 1)]
    Bt = [good.phi[:, j] * _nu(good, j, ex.h_sq_prop[j]) for j in range(n + 1)]
    L = np.empty((good.R, n))
    M = np.empty((good.R, n))
    for k in range(n):
        L[:, k] = B[k + 1] - _nu(good, k, ex.gbar[k]) * _nu(good, k, ex.inner[k])
        M[:, k] = Bt[k + 1] - Bt[k] - _nu(good, k, ex.gbar[k] - 1.0) * _nu(good, k, ex.h_sq_prop[k])
    return {"A": A[n] - A[0], "L": L, "M": M}


def martingale_checks(ens: Ensemble, seq: LevelSequence, f, name: str = "f") -> List[Check]:
    inc = martingale_increments(ens, seq, f)
    est, se = mean_se(inc["A"])
    out = [Check.compare(f"A_n-A_0[{name}]", est, se, 0.0)]
    for key in ("L", "M"):
        for k in range(seq.n):
            est, se = mean_se(inc[key][:, k])
            out.append(Check.compare(f"{key}_{k + 1}-{key}_{k}[{name}]", est, se, 0.0))
    return out


def conditional_mean_check(seq: LevelSequence, cloud: ParticleCloud, f, R: int,
                           seed: int) -> Check:
    """One-step conditional mean of ``eta_k(f)`` given a fixed level-``k-1`` cloud.

    Exact value: ``eta_{k-1}(q_{k-1,k} f) / eta_{k-1}(q_{k-1,k} 1)``.
    """
    from .feynman_kac import one_step_propagator
    k = cloud.level + 1
    v = as_function(f, seq.m).values
    counts = step_ensemble(seq, cloud, R, seed)
    samples = counts @ v / cloud.N
    q = one_step_propagator(seq, k).matrix
    prev = np.bincount(cloud.positions, minlength=seq.m)
    exact = float(prev @ (q @ v)) / float(prev @ (q @ np.ones(seq.m)))
    est, se = mean_se(samples)
    return Check.compare(f"E[eta_{k}(f)|F_{k - 1}]", est, se, exact)


def epsilon_lower_bound(ens: Ensemble, seq: LevelSequence, j: int,
                        functions: Sequence[Tuple[str, StateFunction]], p: float) -> float:
    """Largest ``E|nu_j(f) - mu_j(f)|^2`` over the dictionary with ``|f|_{L_p(mu_j)} = 1``.

    A lower bound on the supremum over the whole unit ball.
    """
    good = ens.select(ens.ok)
    best = 0.0
    for _, f in functions:
        norm = lp_norm(seq.mus[j], f, p)
        if norm == 0:
            continue
        v = f.values / norm
        best = max(best, float(np.mean((good.nu(j, v) - integrate(seq.mus[j], v)) ** 2)))
    return best
