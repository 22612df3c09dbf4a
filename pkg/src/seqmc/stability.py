"""Stability constants of the propagators and the error bounds built on them.

The chain runs from the density bound ``gamma`` and the spectral gaps of the
kernels, through the one-step mixing pair ``(alpha, beta)`` and the L_p growth
factors ``delta(p)``, to the per-pair constants ``c_{j,k}(p)`` and the
mean-squared-error bound for ``nu_n^N``. Every quantity is exact on a finite
space apart from the suprema over functions, which are either solved as
generalized eigenproblems (L_2) or bounded from above.

:func:`falsify_inequality` checks each intermediate inequality numerically
by evaluating both sides exactly on many random and adversarial functions.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import InfeasibleError
from .feynman_kac import (
    HATTED,
    LevelSequence,
    compose,
    hatted_one_step,
    normalized_potential,
    propagators_to,
)
from .measures import (
    lp_norm,
    matrix_of,
    reversibility_defect,
    variance,
    weights_of,
)

DEGENERATE_GAMMA = 1.0 + 1e-12
REVERSIBILITY_TOL = 1e-10
FALSIFY_TOL = 1e-10
# the default tau makes the L2 running-time condition an equality
T_RTOL = 1e-12


# ---------------------------------------------------------------------------
# density bound and spectral gaps


class GammaBound(NamedTuple):
    gamma: float
    raw_max: float
    degenerate: bool

    @property
    def effective(self) -> float:
        """Value used in formulas that need ``gamma > 1``."""
        return DEGENERATE_GAMMA if self.degenerate else self.gamma


def gamma_bound(seq: LevelSequence) -> GammaBound:
    """``max_{k,x} gbar_{k-1,k}(x)``; constant potentials give 1 flagged degenerate."""
    raw = max((float(np.max(normalized_potential(seq, k).values))
               for k in range(1, seq.n + 1)), default=1.0)
    if raw <= 1.0 + 1e-14:
        return GammaBound(1.0, raw, True)
    return GammaBound(raw, raw, False)


def _nontrivial_spectrum(K, mu) -> np.ndarray:
    A, w = matrix_of(K), weights_of(mu)
    defect = reversibility_defect(A, w)
    if defect > REVERSIBILITY_TOL:
        raise ValueError(f"kernel is not reversible for the measure (defect {defect:.3g})")
    m = w.size
    if m == 1:
        return np.zeros(0)
    if np.any(w <= 0):
        raise ValueError("measure must have full support")
    r = np.sqrt(w)
    S = (r[:, None] * A) / r[None, :]
    S = 0.5 * (S + S.T)
    # orthonormal basis of the complement of sqrt(mu), the top eigenvector
    Q, _ = np.linalg.qr(np.column_stack([r, np.eye(m)[:, : m - 1]]))
    B = Q[:, 1:]
    return np.linalg.eigvalsh(B.T @ S @ B)


def poincare_constant(K, mu) -> float:
    """``1 -`` the largest eigenvalue of ``K`` on functions with ``mu(f) = 0``."""
    ev = _nontrivial_spectrum(K, mu)
    if ev.size == 0:
        return 1.0
    return float(1.0 - ev[-1])


def l2_contraction(K, mu) -> float:
    """``sup Var(Kf)^(1/2) / Var(f)^(1/2)``, the largest nontrivial ``|eigenvalue|``."""
    ev = _nontrivial_spectrum(K, mu)
    return float(np.max(np.abs(ev))) if ev.size else 0.0


def rho_from_gaps(lambdas: Sequence[float]) -> float:
    """``1 - max_k (1 - lambda_k)^2``; raises if some gap is not positive."""
    lam = np.asarray(lambdas, dtype=np.float64)
    if lam.size == 0:
        return 1.0
    if np.any(lam <= 0):
        raise InfeasibleError("lambda_k > 0", f"no contraction: gaps {lam.tolist()}")
    return float(1.0 - np.max((1.0 - lam) ** 2))


def rho_literal(lambdas: Sequence[float]) -> float:
    """``min_k (1 - lambda_k)^2``, kept for side-by-side reporting only."""
    lam = np.asarray(lambdas, dtype=np.float64)
    return float(np.min((1.0 - lam) ** 2)) if lam.size else 0.0


class AlphaBeta(NamedTuple):
    alpha: float
    beta: float
    feasible: bool


def alpha_beta(rho: float, gamma: float) -> AlphaBeta:
    alpha = (1.0 - rho) * gamma
    return AlphaBeta(alpha, rho, 0.0 <= alpha < 1.0)


# ---------------------------------------------------------------------------
# L_p growth factors


def _log2_exact(p) -> int:
    r = int(round(math.log2(p)))
    if p < 1 or 2 ** r != p:
        raise ValueError(f"p must be a power of two, got {p}")
    return r


def delta_p_bound(alpha: float, gamma: float, p: int) -> float:
    r = _log2_exact(p)
    return gamma ** (r - 2 + 2.0 ** (-(r - 1))) / (1.0 - alpha * gamma ** (2 ** r - 2))


def delta_p(alpha: float, gamma: float, p: int) -> float:
    """``prod_{i=1}^r gamma^(1-2^-(i-1)) / (1 - alpha gamma^(2^i-2))^(2^-i)`` for ``p = 2^r``.

    Needs ``alpha gamma^(p-2) < 1``.
    """
    r = _log2_exact(p)
    if not alpha * gamma ** (p - 2) < 1.0:
        raise InfeasibleError("alpha*gamma^(p-2) < 1",
                              f"alpha*gamma^(p-2) = {alpha * gamma ** (p - 2):.6g} for p={p}")
    out = 1.0
    for i in range(1, r + 1):
        out *= gamma ** (1.0 - 2.0 ** (-(i - 1))) / (1.0 - alpha * gamma ** (2 ** i - 2)) ** (2.0 ** -i)
    bound = delta_p_bound(alpha, gamma, p)
    assert out <= bound * (1 + 1e-12), (out, bound)
    return out


def delta_p_from_rho(rho: float, gamma: float, p: int) -> float:
    """The same factor written through ``rho``: denominators ``1 - (1-rho) gamma^(2^i-1)``."""
    r = _log2_exact(p)
    if not (1.0 - rho) * gamma ** (p - 1) < 1.0:
        raise InfeasibleError("(1-rho)*gamma^(p-1) < 1")
    out = 1.0
    for i in range(1, r + 1):
        out *= gamma ** (1.0 - 2.0 ** (-(i - 1))) / (1.0 - (1.0 - rho) * gamma ** (2 ** i - 1)) ** (2.0 ** -i)
    return out


def next_power_of_two(p: float) -> int:
    if p < 1:
        raise ValueError(f"p must be at least 1, got {p}")
    return 1 << max(0, math.ceil(math.log2(p) - 1e-12))


def delta_p_general(alpha: float, gamma: float, p: float) -> float:
    """``delta`` at the smallest power of two ``>= p`` (interpolation)."""
    return delta_p(alpha, gamma, next_power_of_two(p))


def ctilde(theta_pq: float, gamma: float, delta_q: float, p: float, q: float) -> float:
    """``theta(p,q) gamma^((p-1)/p) gamma^((q-1)/q) delta(q)``."""
    return theta_pq * gamma ** ((p - 1.0) / p) * gamma ** ((q - 1.0) / q) * delta_q


def ctilde_pp(gamma: float, delta_p_value: float, p: float) -> float:
    """Equal-exponent constant without a hyperbound step: ``delta(p) gamma^((p-1)/p)``."""
    return delta_p_value * gamma ** ((p - 1.0) / p)


def c_jk_p(ctilde_p_halfp: float, ctilde_2p_p: float, p: Optional[float] = None) -> float:
    """``max(ctilde(p, p/2), ctilde(2p, p)^2)``."""
    if p is not None and p < 4:
        raise ValueError(f"need p >= 4 so that p/2 >= 2, got {p}")
    return max(ctilde_p_halfp, ctilde_2p_p ** 2)


def h_p(gamma: float, tau: float, s: int) -> float:
    """``gamma^(2s + 1/p) / tau^2`` with ``p = 2^s``."""
    return gamma ** (2 * s + 1.0 / 2 ** s) / tau ** 2


class DecayConstants(NamedTuple):
    decay_theta: float
    decay_lambda: float
    lambda_bound: float


def exp_decay_constants(alpha: float, gamma: float, p: int) -> DecayConstants:
    """Rate ``alpha gamma^(2p-2)`` and prefactor from ``l_2 = 1, l_2p = 1 + l_p^2 / (alpha(1 - alpha/gamma^2))``."""
    r = _log2_exact(p)
    if r < 1:
        raise ValueError("need p >= 2")
    theta = alpha * gamma ** (2 * p - 2)
    if not theta < 1.0:
        raise InfeasibleError("alpha*gamma^(2p-2) < 1", f"decay rate {theta:.6g} for p={p}")
    a = alpha * (1.0 - alpha / gamma ** 2)
    lam = 1.0
    for _ in range(r - 1):
        lam = 1.0 + lam * lam / a
    bound = (2.0 / a) ** (p / 2 - 1)
    assert lam <= bound * (1 + 1e-12), (lam, bound)
    return DecayConstants(theta, lam, bound)


def conjugate(p: float) -> float:
    return math.inf if p == 1 else p / (p - 1.0)


def hyperbound_theta(K, mu, p: float, q: float) -> float:
    """An upper bound on ``sup ||K f||_{L_p(mu)} / ||f||_{L_q(mu)}``.

    For ``p <= q`` this is 1 (Jensen plus stationarity). Otherwise Hoelder
    applied row by row gives ``|Kf(x)| <= ||K(x,.)/mu||_{L_q*(mu)} ||f||_{L_q(mu)}``
    and the bound is the ``L_p(mu)`` norm of those row factors.
    """
    if p <= q:
        return 1.0
    A, w = matrix_of(K), weights_of(mu)
    dens = A / w[None, :]
    qs = conjugate(q)
    if math.isinf(qs):
        rows = np.max(dens, axis=1)
    else:
        rows = np.sum(w[None, :] * dens ** qs, axis=1) ** (1.0 / qs)
    return float(np.sum(w * rows ** p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# the assembled chain


def _v2_operator(seq: LevelSequence, k: int) -> np.ndarray:
    """Matrix of ``f -> sum_{j<=k} Var_{mu_j}(q_{j,k} f)`` as a quadratic form."""
    A = np.zeros((seq.m, seq.m))
    for j, prop in enumerate(propagators_to(seq, k)):
        w = seq.mus[j].weights
        Q = prop.matrix
        C = np.diag(w) - np.outer(w, w)
        A += Q.T @ C @ Q
    return 0.5 * (A + A.T)


def exact_v2(seq: LevelSequence, k: int) -> float:
    """``sup { sum_{j<=k} Var_{mu_j}(q_{j,k} f) : ||f||_{L_2(mu_k)} <= 1 }``."""
    A = _v2_operator(seq, k)
    B = np.diag(seq.mus[k].weights)
    return float(scipy.linalg.eigh(A, B, eigvals_only=True)[-1])


def _pair_key(a, b) -> str:
    return f"{a:g},{b:g}"


@dataclass(frozen=True)
class StabilityConstants:
    """All constants of the chain for one level sequence.

    ``c`` is the per-pair constant ``c_{j,k}(p)``; with level-uniform inputs it
    does not depend on ``(j, k)``. ``v_hat`` uses the exact L_2 supremum, which
    bounds the L_p one from above; ``v_hat_closed`` is the ``(k+1) gamma / tau^2``
    form. ``feasible`` holds one flag per strict inequality the chain needs.
    """

    gamma: float
    gamma_degenerate: bool
    lambdas: Tuple[float, ...]
    contractions: Tuple[float, ...]
    rho: float
    rho_min_squared_gap: float
    alpha: float
    beta: float
    p: int
    s: int
    tau: float
    deltas: Dict[int, float]
    theta: Dict[str, float]
    ctilde: Dict[str, float]
    c: float
    c_hat: Tuple[float, ...]
    v_hat: Tuple[float, ...]
    v_hat_closed: Tuple[float, ...]
    c_bar: Tuple[float, ...]
    v_bar: Tuple[float, ...]
    h: float
    decay_theta: Dict[int, float]
    decay_lambda: Dict[int, float]
    b_star: Tuple[float, ...]
    steps: Tuple[int, ...]
    feasible: Dict[str, bool]
    a_star: Optional[Tuple[float, ...]] = None
    notes: Tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return len(self.c_hat) - 1

    @property
    def delta_p(self) -> float:
        return self.deltas.get(self.p, math.nan)

    @property
    def all_feasible(self) -> bool:
        return all(self.feasible.values())

    def theta_of(self, p: float, q: float) -> float:
        if p <= q:
            return 1.0
        return self.theta[_pair_key(p, q)]

    def with_alpha(self, alpha: float) -> "StabilityConstants":
        """Copy with a different ``alpha``; the falsifier recomputes what depends on it."""
        return dataclasses.replace(self, alpha=float(alpha))

    def to_dict(self) -> dict:
        d = {
            "gamma": self.gamma,
            "gamma_degenerate": self.gamma_degenerate,
            "lambdas": list(self.lambdas),
            "contractions": list(self.contractions),
            "rho": self.rho,
            "rho_min_squared_gap": self.rho_min_squared_gap,
            "alpha": self.alpha,
            "beta": self.beta,
            "p": self.p,
            "s": self.s,
            "tau": self.tau,
            "c": self.c,
            "h": self.h,
            "c_hat": list(self.c_hat),
            "v_hat": list(self.v_hat),
            "v_hat_closed": list(self.v_hat_closed),
            "c_bar": list(self.c_bar),
            "v_bar": list(self.v_bar),
            "b_star": list(self.b_star),
            "notes": list(self.notes),
        }
        for q, v in sorted(self.deltas.items()):
            d[f"delta_{q}"] = v
        for key, v in sorted(self.theta.items()):
            d[f"theta_{key}"] = v
        for key, v in sorted(self.ctilde.items()):
            d[f"ctilde_{key}"] = v
        for q, v in sorted(self.decay_theta.items()):
            d[f"decay_theta_{q}"] = v
            d[f"decay_lambda_{q}"] = self.decay_lambda[q]
        for key, v in self.feasible.items():
            d[f"feasible_{key}"] = v
        return d


def _safe(fn, *args):
    try:
        return fn(*args)
    except InfeasibleError:
        return math.nan


def chain_constants(seq: LevelSequence, p: int = 4, tau: Optional[float] = None,
                    alpha: Optional[float] = None, beta: Optional[float] = None,
                    theta: Optional[float] = None,
                    a_star: Optional[Sequence[float]] = None) -> StabilityConstants:
    """Compute every constant of the chain for ``seq``.

    ``alpha``/``beta`` default to the spectral route ``((1-rho) gamma, rho)``;
    ``theta`` overrides the hyperbound constants with one uniform value.
    ``tau`` defaults to ``1 - (1-rho) gamma^(2p-1)``, the largest admissible
    value; it only enters the closed-form comparison bounds.
    """
    s = _log2_exact(p)
    if s < 2:
        raise ValueError(f"need p = 2^s with s >= 2, got p={p}")
    n = seq.n
    gb = gamma_bound(seq)
    gamma = gb.effective
    kernels = seq.kernels
    lambdas = tuple(poincare_constant(kernels[k - 1], seq.mus[k]) for k in range(1, n + 1))
    contractions = tuple(l2_contraction(kernels[k - 1], seq.mus[k]) for k in range(1, n + 1))
    notes: List[str] = []
    feasible: Dict[str, bool] = {"gamma_gt_1": not gb.degenerate}
    # the absolute contraction also covers negative spectrum
    eff_gaps = [1.0 - c for c in contractions]
    try:
        rho = rho_from_gaps(eff_gaps)
        feasible["positive_gaps"] = True
    except InfeasibleError:
        rho = 0.0
        feasible["positive_gaps"] = False
    if any(c > 1.0 - lam + 1e-12 for c, lam in zip(contractions, lambdas)):
        notes.append("negative spectrum dominates: rho uses the absolute contraction")
    ab = alpha_beta(rho, gamma)
    a = ab.alpha if alpha is None else float(alpha)
    b = ab.beta if beta is None else float(beta)
    feasible["alpha_in_unit_interval"] = 0.0 < a < 1.0
    feasible["beta_in_unit_interval"] = 0.0 <= b <= 1.0

    deltas = {}
    q = 1
    while q <= 2 * p:
        deltas[q] = _safe(delta_p, a, gamma, q)
        q *= 2
    feasible["delta_p"] = not math.isnan(deltas[p])

    pairs = [(p, p // 2), (2 * p, p), (2, 2)]
    th: Dict[str, float] = {}
    for pp, qq in pairs:
        if pp > qq:
            if theta is not None:
                th[_pair_key(pp, qq)] = float(theta)
            else:
                th[_pair_key(pp, qq)] = max(
                    (hyperbound_theta(kernels[k], seq.mus[k + 1], pp, qq) for k in range(n)),
                    default=1.0)

    def theta_of(pp, qq):
        return 1.0 if pp <= qq else th[_pair_key(pp, qq)]

    ct = {}
    for pp, qq in pairs:
        dq = _safe(delta_p_general, a, gamma, qq)
        ct[_pair_key(pp, qq)] = ctilde(theta_of(pp, qq), gamma, dq, pp, qq)
    c = c_jk_p(ct[_pair_key(p, p // 2)], ct[_pair_key(2 * p, p)], p)

    c_hat = [0.0]
    for k in range(1, n + 1):
        total = 0.0
        for j in range(k):
            gbar = normalized_potential(seq, j + 1).values
            total += c * (2.0 + lp_norm(seq.mus[j], gbar - 1.0, p))
        c_hat.append(total)
    v_hat = [exact_v2(seq, k) for k in range(n + 1)]

    if tau is None:
        tau = 1.0 - (1.0 - rho) * gamma ** (2 * p - 1)
    feasible["tau_positive"] = 0.0 < tau < 1.0
    tau_ok = feasible["tau_positive"]
    v_closed = [(k + 1) * gamma / tau ** 2 if tau_ok else math.nan for k in range(n + 1)]
    h = h_p(gamma, tau, s) if tau_ok else math.nan

    dth, dlam = {}, {}
    q = 2
    while q <= p:
        try:
            dc = exp_decay_constants(a, gamma, q)
            dth[q], dlam[q] = dc.decay_theta, dc.decay_lambda
        except (InfeasibleError, ZeroDivisionError):
            dth[q], dlam[q] = math.nan, math.nan
        q *= 2

    b_star, steps = [], []
    for k in range(n):
        base = seq.base_kernels[k] if seq.base_kernels is not None else kernels[k]
        t = seq.steps[k] if seq.steps is not None else 1
        cont = l2_contraction(base, seq.mus[k + 1])
        b_star.append(-math.log(cont) if cont > 0 else math.inf)
        steps.append(t)

    return StabilityConstants(
        gamma=gb.gamma if not gb.degenerate else gamma,
        gamma_degenerate=gb.degenerate,
        lambdas=lambdas, contractions=contractions, rho=rho,
        rho_min_squared_gap=rho_literal(lambdas), alpha=a, beta=b, p=p, s=s,
        tau=float(tau), deltas=deltas, theta=th, ctilde=ct, c=c,
        c_hat=tuple(c_hat), v_hat=tuple(v_hat), v_hat_closed=tuple(v_closed),
        c_bar=tuple(float(x) for x in np.maximum.accumulate(c_hat)),
        v_bar=tuple(float(x) for x in np.maximum.accumulate(v_hat)),
        h=h, decay_theta=dth, decay_lambda=dlam, b_star=tuple(b_star),
        steps=tuple(steps), feasible=feasible,
        a_star=None if a_star is None else tuple(float(x) for x in a_star),
        notes=tuple(notes))


# ---------------------------------------------------------------------------
# error bounds


@dataclass(frozen=True)
class BoundReport:
    """Right-hand side of the MSE bound for ``nu_n^N(f)``.

    ``rhs`` bounds ``N E|nu_n^N(f) - mu_n(f)|^2``; ``mse_bound = rhs / N``.
    """

    N: int
    sum_var: float
    norm_f: float
    c_hat_n: float
    c_bar_n: float
    v_bar_n: float
    threshold: float
    threshold_met: bool
    eps_bar: float
    rhs: float

    @property
    def mse_bound(self) -> float:
        return self.rhs / self.N

    def to_dict(self) -> dict:
        return dataclasses.asdict(self) | {"mse_bound": self.mse_bound}


def particle_mse_bound(seq: LevelSequence, consts: StabilityConstants, f, N: int,
                    eps_bar: Optional[float] = None) -> BoundReport:
    """``sum_j Var_{mu_j}(q_{j,n} f) + ||f||_{L_p(mu_n)}^2 c_hat_n eps_bar``.

    With ``N >= 2 c_bar_n`` the worst-case error ``eps_bar`` is replaced by
    ``2 v_bar_n / N``; below that threshold the caller must supply it,
    otherwise ``rhs`` is NaN.
    """
    n = seq.n
    v = np.asarray(getattr(f, "values", f), dtype=np.float64)
    props = propagators_to(seq, n)
    sum_var = sum(variance(seq.mus[j], props[j].matrix @ v) for j in range(n + 1))
    norm = lp_norm(seq.mus[n], v, consts.p)
    threshold = 2.0 * float(consts.c_bar[n])
    met = N >= threshold
    if eps_bar is None:
        eps_bar = 2.0 * consts.v_bar[n] / N if met else math.nan
    if n == 0:
        eps_bar = 0.0 if math.isnan(eps_bar) else eps_bar
    rhs = sum_var + norm ** 2 * consts.c_hat[n] * eps_bar
    return BoundReport(N=int(N), sum_var=float(sum_var), norm_f=norm,
                       c_hat_n=consts.c_hat[n], c_bar_n=consts.c_bar[n],
                       v_bar_n=consts.v_bar[n], threshold=threshold,
                       threshold_met=bool(met), eps_bar=float(eps_bar), rhs=float(rhs))


ROUNDED_ILLUSTRATION = {"first_const": 1.0, "first_n": 4.0, "second_n": 180.0, "second_n2": 560.0}
THRESHOLD_NOTE = ("particle threshold grows like n: N >= {:.4g} n; the rounded illustration "
                  "quotes N >= 180 without the factor n")


@dataclass(frozen=True)
class ExplicitBound:
    """``E|nu_n^N(f) - mu_n(f)|^2 <= ||f||_p^2 [(a0 + a1 n)/N + (b1 n + b2 n^2)/N^2]``.

    Coefficients are per unit ``n`` (``first_n``, ``second_n``) and ``n^2``
    (``second_n2``); ``threshold_per_n`` is the particle requirement divided by ``n``.
    """

    gamma: float
    tau: float
    s: int
    n: int
    first_const: float
    first_n: float
    second_n: float
    second_n2: float
    threshold_per_n: float
    N: Optional[int]
    t_ok_l2: Tuple[bool, ...]
    t_ok_hyper: Tuple[bool, ...]
    notes: Tuple[str, ...]

    @property
    def threshold(self) -> float:
        return self.threshold_per_n * self.n

    @property
    def t_inequality_failed(self) -> bool:
        return not (all(self.t_ok_l2) and all(self.t_ok_hyper))

    def coefficient(self, N: int) -> float:
        """Bracket value at ``N`` (the MSE bound for ``||f||_p = 1``)."""
        n = self.n
        return ((self.first_const + self.first_n * n) / N
                + (self.second_n * n + self.second_n2 * n * n) / N ** 2)

    def dominated_by_rounded(self) -> Dict[str, bool]:
        return {k: getattr(self, k) <= v for k, v in ROUNDED_ILLUSTRATION.items()}

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["t_ok_l2"], d["t_ok_hyper"] = list(self.t_ok_l2), list(self.t_ok_hyper)
        d["notes"] = list(self.notes)
        d["threshold"] = self.threshold
        d["t_inequality_failed"] = self.t_inequality_failed
        if self.N:
            d["bound_at_N"] = self.coefficient(self.N)
        return d


def running_time_requirements(gamma: float, tau: float, p: int,
                              a_star: float, b_star: float) -> Tuple[float, float]:
    """Smallest ``t`` meeting the L_2 and the hyperbound running-time conditions."""
    t_l2 = ((2 * p - 1) * math.log(gamma) - math.log(1.0 - tau)) / (2.0 * b_star)
    t_hy = (math.log(p - 1) - math.log(p / 2 - 1)) / (2.0 * a_star)
    return t_l2, t_hy


def explicit_bound(gamma: float, tau: float, s: int, n: int, N: Optional[int] = None,
                   a_star: Optional[Sequence[float]] = None,
                   b_star: Optional[Sequence[float]] = None,
                   t: Optional[Sequence[float]] = None) -> ExplicitBound:
    """Closed-form bound in ``(gamma, tau, p = 2^s, n, N)``.

    The bracket ``1 + n gamma/tau^2 + n K eps`` with ``K = ((1+gamma) v 3)
    gamma^(2s+1/p) / tau^2`` and ``eps <= 2 (1 + n gamma/tau^2) / N`` (valid for
    ``N >= 2 K n``) expands into the coefficients stored on the result.
    """
    if int(s) < 2:
        raise ValueError(f"need s >= 2, got {s}")
    s = int(s)
    p = 2 ** s
    K = max(1.0 + gamma, 3.0) * gamma ** (2 * s + 1.0 / p) / tau / tau
    g_t = gamma / tau / tau
    ok_l2: List[bool] = []
    ok_hy: List[bool] = []
    if t is not None:
        for i, tl in enumerate(t):
            if b_star is not None:
                need, _ = running_time_requirements(gamma, tau, p, 1.0, b_star[i])
                ok_l2.append(bool(tl >= need * (1 - T_RTOL)))
            if a_star is not None:
                _, need = running_time_requirements(gamma, tau, p, a_star[i], 1.0)
                ok_hy.append(bool(tl >= need * (1 - T_RTOL)))
    notes = (THRESHOLD_NOTE.format(2 * K),)
    return ExplicitBound(gamma=gamma, tau=tau, s=s, n=int(n), first_const=1.0,
                         first_n=g_t, second_n=2 * K, second_n2=2 * K * g_t,
                         threshold_per_n=2 * K, N=N, t_ok_l2=tuple(ok_l2),
                         t_ok_hyper=tuple(ok_hy), notes=notes)


# ---------------------------------------------------------------------------
# numerical falsification


KINDS = (
    "alpha_beta_one_step",
    "hatted_l2_iterated",
    "hatted_l2_uniform",
    "hatted_lp",
    "lp_lq_propagator",
    "centered_decay",
    "kernel_l2_contraction",
    "kernel_hyperbound",
    "log_sobolev_hyperbound",
)


@dataclass(frozen=True)
class FalsifierResult:
    """Worst ``LHS / RHS`` found for one inequality; above ``1 + 1e-10`` it fails."""

    kind: str
    ratio: float
    context: str
    worst_f: np.ndarray = field(repr=False)
    evaluated: int

    @property
    def falsified(self) -> bool:
        return self.ratio > 1.0 + FALSIFY_TOL

    def to_dict(self) -> dict:
        return {"kind": self.kind, "ratio": self.ratio, "context": self.context,
                "evaluated": self.evaluated, "falsified": self.falsified}


def _lp_rows(F: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    A = np.abs(F)
    top = np.max(A, axis=1)
    if math.isinf(p):
        return top
    # scale by the row maximum so huge exponents cannot overflow
    scale = np.where(top > 0, top, 1.0)
    return top * np.sum(w[None, :] * (A / scale[:, None]) ** p, axis=1) ** (1.0 / p)


def _sym_eigvecs(seq: LevelSequence) -> List[np.ndarray]:
    out = []
    for k in range(1, seq.n + 1):
        w = seq.mus[k].weights
        r = np.sqrt(w)
        S = (r[:, None] * seq.kernels[k - 1].matrix) / r[None, :]
        _, V = np.linalg.eigh(0.5 * (S + S.T))
        out.extend((V / r[:, None]).T)
    return out


def _candidates(seq: LevelSequence, trials: int, rng) -> np.ndarray:
    m = seq.m
    adv = [np.ones(m)]
    adv.extend(np.eye(m))
    adv.extend(normalized_potential(seq, k).values for k in range(1, seq.n + 1))
    adv.extend(_sym_eigvecs(seq))
    adv = np.array(adv).reshape(-1, m)
    adv = np.vstack([adv, np.abs(adv), 1.0 + np.abs(adv)])
    return np.vstack([rng.standard_normal((trials, m)), adv])


class _Case(NamedTuple):
    context: str
    ratio: callable          # (F: (T, m)) -> (T,) ratios
    quadratic: Optional[Tuple[np.ndarray, np.ndarray]] = None
    center: Optional[np.ndarray] = None  # project f onto mu(f) = 0


ZERO_FLOOR = 1e-13


def _ratio(lhs, rhs):
    # inputs are unit-norm rows, so sides below the floor are rounding noise
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(rhs > ZERO_FLOOR, lhs / rhs, np.where(lhs > 100 * ZERO_FLOOR, np.inf, 0.0))
    return r


def _prepare(F, center):
    if center is not None:
        norm0 = np.linalg.norm(F, axis=1)
        F = F - (F @ center)[:, None]
        keep = np.linalg.norm(F, axis=1) > 1e-8 * np.maximum(norm0, 1e-300)
        F = F[keep]
    norms = np.linalg.norm(F, axis=1)
    F = F[norms > 0]
    return F / np.linalg.norm(F, axis=1)[:, None]


def _cases(kind: str, seq: LevelSequence, c: StabilityConstants) -> List[_Case]:
    n, gamma, alpha, beta = seq.n, c.gamma, c.alpha, c.beta
    mus = [mu.weights for mu in seq.mus]
    out: List[_Case] = []

    def quad(Q, wj, wk, a_coef, b_coef):
        A = Q.T @ np.diag(wj) @ Q
        B = a_coef * np.diag(wk) + b_coef * np.outer(wk, wk)
        return 0.5 * (A + A.T), 0.5 * (B + B.T)

    if kind == "alpha_beta_one_step":
        for k in range(2, n + 1):
            Q = hatted_one_step(seq, k).matrix
            wj, wk = mus[k - 1], mus[k]

            def r(F, Q=Q, wj=wj, wk=wk):
                G = F @ Q.T
                return _ratio(G ** 2 @ wj, alpha * (F ** 2 @ wk) + beta * (F @ wk) ** 2)
            out.append(_Case(f"k={k}", r, quad(Q, wj, wk, alpha, beta)))

    elif kind in ("hatted_l2_iterated", "hatted_l2_uniform"):
        for j in range(1, n):
            for k in range(j + 1, n + 1):
                Q = compose(seq, j, k, HATTED).matrix
                wj, wk = mus[j], mus[k]
                if kind == "hatted_l2_iterated":
                    a_coef, b_coef = alpha ** (k - j), beta / (1.0 - alpha)
                else:
                    a_coef, b_coef = 1.0 / (1.0 - alpha), 0.0

                def r(F, Q=Q, wj=wj, wk=wk, a_coef=a_coef, b_coef=b_coef):
                    G = F @ Q.T
                    return _ratio(G ** 2 @ wj, a_coef * (F ** 2 @ wk) + b_coef * (F @ wk) ** 2)
                out.append(_Case(f"j={j},k={k}", r, quad(Q, wj, wk, a_coef, b_coef)))

    elif kind == "hatted_lp":
        q = 2
        while q <= 2 * c.p:
            d = _safe(delta_p, alpha, gamma, q)
            if not math.isnan(d):
                for j in range(1, n):
                    for k in range(j + 1, n + 1):
                        Q = compose(seq, j, k, HATTED).matrix

                        def r(F, Q=Q, wj=mus[j], wk=mus[k], q=q, d=d):
                            return _ratio(_lp_rows(F @ Q.T, wj, q), d * _lp_rows(F, wk, q))
                        out.append(_Case(f"p={q},j={j},k={k}", r))
            q *= 2

    elif kind == "lp_lq_propagator":
        for pp, qq in ((c.p, c.p // 2), (2 * c.p, c.p)):
            dq = _safe(delta_p_general, alpha, gamma, qq)
            ct = ctilde(c.theta_of(pp, qq), gamma, dq, pp, qq)
            if math.isnan(ct):
                continue
            for k in range(1, n + 1):
                props = propagators_to(seq, k)
                for j in range(k):
                    Q = props[j].matrix

                    def r(F, Q=Q, wj=mus[j], wk=mus[k], pp=pp, qq=qq, ct=ct):
                        return _ratio(_lp_rows(F @ Q.T, wj, pp), ct * _lp_rows(F, wk, qq))
                    out.append(_Case(f"p'={pp},q={qq},j={j},k={k}", r))

    elif kind == "centered_decay":
        q = 2
        while q <= c.p:
            try:
                dc = exp_decay_constants(alpha, gamma, q)
            except (InfeasibleError, ValueError, ZeroDivisionError):
                q *= 2
                continue
            for j in range(1, n):
                for k in range(j + 1, n + 1):
                    Q = compose(seq, j, k, HATTED).matrix
                    coef = dc.decay_lambda * dc.decay_theta ** (k - j)

                    def r(F, Q=Q, wj=mus[j], wk=mus[k], q=q, coef=coef):
                        return _ratio(_lp_rows(F @ Q.T, wj, q) ** q, coef * _lp_rows(F, wk, q) ** q)
                    out.append(_Case(f"p={q},j={j},k={k}", r, center=mus[k]))
            q *= 2

    elif kind == "kernel_l2_contraction":
        for k in range(1, n + 1):
            K = seq.kernels[k - 1].matrix
            w = mus[k]
            coef = math.exp(-2.0 * c.b_star[k - 1] * c.steps[k - 1])

            def r(F, K=K, w=w, coef=coef):
                G = F @ K.T
                vg = G ** 2 @ w - (G @ w) ** 2
                vf = F ** 2 @ w - (F @ w) ** 2
                return _ratio(np.maximum(vg, 0.0), coef * np.maximum(vf, 0.0))
            out.append(_Case(f"k={k}", r))

    elif kind == "kernel_hyperbound":
        for pp, qq in ((c.p, c.p // 2), (2 * c.p, c.p)):
            th = c.theta_of(pp, qq)
            for k in range(1, n + 1):
                K = seq.kernels[k - 1].matrix

                def r(F, K=K, w=mus[k], pp=pp, qq=qq, th=th):
                    return _ratio(_lp_rows(F @ K.T, w, pp), th * _lp_rows(F, w, qq))
                out.append(_Case(f"p'={pp},q={qq},k={k}", r))

    elif kind == "log_sobolev_hyperbound":
        if c.a_star is None:
            return out
        for k in range(1, n + 1):
            K = seq.kernels[k - 1].matrix
            for pp in (2.0, float(c.p)):
                qq = 1.0 + (pp - 1.0) * math.exp(2.0 * c.a_star[k - 1] * c.steps[k - 1])

                def r(F, K=K, w=mus[k], pp=pp, qq=qq):
                    return _ratio(_lp_rows(F @ K.T, w, qq), _lp_rows(F, w, pp))
                out.append(_Case(f"p={pp:g},k={k}", r))
    else:
        raise ValueError(f"unknown inequality kind {kind!r}; choose from {KINDS}")
    return out


def _top_generalized(A, B) -> Optional[np.ndarray]:
    try:
        _, V = scipy.linalg.eigh(A, B)
    except (np.linalg.LinAlgError, ValueError):
        return None
    return V.T[::-1][:2]


def falsify_inequality(kind: str, seq: LevelSequence, consts: StabilityConstants,
                       trials: int = 10_000, seed: int = 0, refine: bool = True) -> FalsifierResult:
    """Search for a function violating the inequality ``kind``.

    Candidates: ``trials`` standard normal vectors, indicators, constants,
    the normalized potentials, eigenvectors of the symmetrized kernels and,
    for quadratic inequalities, the exact maximizer from a generalized
    eigenproblem. Non-quadratic ratios are then locally maximized with
    Nelder-Mead from the best candidates. A ratio at most ``1 + 1e-10``
    means no counterexample was found, which is evidence, not proof.
    """
    rng = np.random.default_rng(seed)
    base = _candidates(seq, trials, rng)
    worst = FalsifierResult(kind, 0.0, "", np.zeros(seq.m), 0)
    count = 0
    for case in _cases(kind, seq, consts):
        F = base
        if case.quadratic is not None:
            extra = _top_generalized(*case.quadratic)
            if extra is not None:
                F = np.vstack([F, extra, -extra])
        F = _prepare(F, case.center)
        ratios = case.ratio(F)
        count += F.shape[0]
        i = int(np.nanargmax(ratios))
        best_r, best_f = float(ratios[i]), F[i]
        if refine and case.quadratic is None and seq.m <= 64:
            for start in F[np.argsort(np.nan_to_num(ratios, nan=-1.0))[-3:]]:
                def neg(x, case=case):
                    x = _prepare(x[None, :], case.center)
                    if x.shape[0] == 0:
                        return 0.0
                    v = case.ratio(x)[0]
                    return -v if np.isfinite(v) else 0.0
                res = scipy.optimize.minimize(neg, start, method="Nelder-Mead",
                                              options={"maxiter": 200 * seq.m, "xatol": 1e-10,
                                                       "fatol": 1e-14})
                count += res.nfev
                if -res.fun > best_r:
                    best_r, best_f = float(-res.fun), res.x
        if best_r > worst.ratio:
            worst = FalsifierResult(kind, best_r, case.context, np.asarray(best_f), 0)
    return dataclasses.replace(worst, evaluated=count)


def falsify_all(seq: LevelSequence, consts: StabilityConstants, trials: int = 10_000,
                seed: int = 0, kinds: Sequence[str] = KINDS) -> List[FalsifierResult]:
    return [falsify_inequality(k, seq, consts, trials, seed + i) for i, k in enumerate(kinds)]
