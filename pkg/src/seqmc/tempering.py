"""Tempered level sequences and the product-measure dimension construction."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError
from .feynman_kac import LevelSequence, normalized_potential
from .measures import (
    MarkovKernel,
    ProbMeasure,
    StateFunction,
    as_function,
    as_kernel,
    kernel_power,
    metropolis_kernel,
    nearest_neighbor_proposal,
)

DENSE_BUDGET = 10_000


@dataclass(frozen=True, eq=False)
class TemperingSpec:
    """``mu_k ~ exp(-beta_k H)`` with ``t_k`` Metropolis steps per level."""

    H: StateFunction
    betas: Sequence[float]
    mcmc_steps: Sequence[int]
    proposal: Optional[MarkovKernel] = None

    def __post_init__(self):
        H = as_function(self.H)
        betas = tuple(float(b) for b in self.betas)
        steps = tuple(int(t) for t in self.mcmc_steps)
        if not betas:
            raise ValueError("need at least one inverse temperature")
        if any(b1 < b0 for b0, b1 in zip(betas, betas[1:])):
            raise ValueError("betas must be non-decreasing")
        if len(steps) != len(betas) - 1:
            raise ValueError(f"need {len(betas) - 1} step counts, got {len(steps)}")
        if any(t < 1 for t in steps):
            raise ValueError("step counts must be positive")
        proposal = self.proposal
        if proposal is None:
            proposal = nearest_neighbor_proposal(H.size)
        proposal = as_kernel(proposal)
        if proposal.size != H.size:
            raise ValueError("proposal and Hamiltonian disagree on the number of states")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "mcmc_steps", steps)
        object.__setattr__(self, "proposal", proposal)

    @property
    def n(self) -> int:
        return len(self.betas) - 1


def gibbs_measure(H, beta: float) -> ProbMeasure:
    h = as_function(H).values
    # shift by the minimum energy so exp never overflows
    w = np.exp(-beta * (h - h.min()))
    return ProbMeasure(w / np.sum(w))


def build_tempered(spec: TemperingSpec, validate: bool = True) -> LevelSequence:
    h = spec.H.values
    mus = [gibbs_measure(h, b) for b in spec.betas]
    pots, kernels, base = [], [], []
    for k in range(1, spec.n + 1):
        dbeta = spec.betas[k] - spec.betas[k - 1]
        pots.append(StateFunction(np.exp(-dbeta * (h - h.min()))))
        K1 = metropolis_kernel(mus[k], spec.proposal)
        base.append(K1)
        kernels.append(kernel_power(K1, spec.mcmc_steps[k - 1]))
    return LevelSequence(mus, pots, kernels, base_kernels=base,
                         steps=spec.mcmc_steps, validate=validate)


def fixture_a() -> TemperingSpec:
    """4 states, ``H = (0,1,2,3)``, ``betas = (0, 0.5, 1)``, 8 steps per level."""
    return TemperingSpec(H=np.arange(4.0), betas=(0.0, 0.5, 1.0), mcmc_steps=(8, 8))


@dataclass(frozen=True, eq=False)
class ProductSpec:
    """d-fold product of a one-dimensional tempering ladder.

    ``insertions`` extra levels go into every original gap (default ``d-1``).
    """

    base: TemperingSpec
    d: int
    insertions: Optional[int] = None

    def __post_init__(self):
        if int(self.d) < 1:
            raise ValueError("dimension must be at least 1")
        object.__setattr__(self, "d", int(self.d))
        ins = self.d - 1 if self.insertions is None else int(self.insertions)
        if ins < 0:
            raise ValueError("insertions must be non-negative")
        object.__setattr__(self, "insertions", ins)

    @property
    def num_states(self) -> int:
        return self.base.H.size ** self.d


def product_states(m: int, d: int) -> np.ndarray:
    """Mixed-radix decoding: row ``s`` holds the coordinates of state ``s``.

    The first coordinate is the most significant digit.
    """
    return np.array(list(itertools.product(range(m), repeat=d)), dtype=np.int64).reshape(-1, d)


def product_proposal(base: MarkovKernel, d: int) -> MarkovKernel:
    """Pick one of the ``d`` coordinates uniformly, move it with ``base``."""
    P1 = as_kernel(base).matrix
    m = P1.shape[0]
    P = np.zeros((m ** d, m ** d))
    for c in range(d):
        factors = [np.eye(m)] * d
        factors[c] = P1
        term = factors[0]
        for F in factors[1:]:
            term = np.kron(term, F)
        P += term / d
    return MarkovKernel(P)


def build_product(pspec: ProductSpec, validate: bool = True,
                  budget: int = DENSE_BUDGET) -> LevelSequence:
    """Product ladder with ``insertions`` intermediate levels per gap.

    Inside original gap ``k -> k+1`` the sub-level ``i`` (of ``r+1``, where
    ``r`` is the number of insertions) has density proportional to
    ``prod_l g_{k,k+1}(x_l)^(i/(r+1))`` against ``mu_k^{(x)d}``; the
    potential between consecutive sub-levels is ``prod_l g(x_l)^(1/(r+1))``.
    With ``d == 1`` this reproduces :func:`build_tempered` exactly.
    Kernels are single-coordinate Metropolis chains run for ``d * t_k``
    coordinate updates, i.e. ``t_k`` sweeps.
    """
    m, d = pspec.base.H.size, pspec.d
    size = m ** d
    if size > budget:
        raise CapacityError(f"product space has m^d = {m}^{d} = {size} states, "
                            f"over the dense budget of {budget}")
    base_seq = build_tempered(pspec.base)
    states = product_states(m, d)
    prop = product_proposal(pspec.base.proposal, d)
    parts = pspec.insertions + 1

    def product_measure(w):
        return np.prod(w[states], axis=1)

    mus = [ProbMeasure.from_unnormalized(product_measure(base_seq.mus[0].weights))]
    pots, kernels, base_k, steps = [], [], [], []
    for k in range(1, base_seq.n + 1):
        g = base_seq.potentials[k - 1].values
        # log of prod_l g(x_l)^(1/parts), the potential between sub-levels
        log_pot = np.sum(np.log(g)[states], axis=1) / parts
        start = product_measure(base_seq.mus[k - 1].weights)
        t = pspec.base.mcmc_steps[k - 1] * d
        for i in range(1, parts + 1):
            if i == parts:
                target = product_measure(base_seq.mus[k].weights)
            else:
                target = start * np.exp(i * log_pot)
            mu = ProbMeasure.from_unnormalized(target)
            mus.append(mu)
            pots.append(StateFunction(np.exp(log_pot)))
            K1 = metropolis_kernel(mu, prop)
            base_k.append(K1)
            kernels.append(kernel_power(K1, t))
            steps.append(t)
    return LevelSequence(mus, pots, kernels, base_kernels=base_k, steps=steps,
                         validate=validate)


def inserted_density_max(pspec: ProductSpec) -> float:
    """Largest relative density between consecutive product sub-levels.

    The density of sub-level ``i+1`` against sub-level ``i`` (both taken with
    the unnormalized weights ``prod_l gbar(x_l)^(i/(r+1)) mu_k^{(x)d}``) is
    ``prod_l gbar_{k,k+1}(x_l)^(1/(r+1))``; with ``r = d-1`` its maximum is the
    one-dimensional bound ``max gbar``.
    """
    base_seq = build_tempered(pspec.base)
    states = product_states(pspec.base.H.size, pspec.d)
    parts = pspec.insertions + 1
    out = 0.0
    for k in range(1, base_seq.n + 1):
        gbar = normalized_potential(base_seq, k).values
        density = np.prod(gbar[states], axis=1) ** (1.0 / parts)
        out = max(out, float(np.max(density)))
    return out


SWEEP_COLUMNS = (
    "d", "levels", "gamma", "gamma_normalized", "lambda_min", "N", "N_threshold",
    "work", "factor_step_cost", "factor_levels", "factor_particles",
    "mse", "mse_se", "mse_bound", "skipped", "reason",
)


def dimension_sweep(base: TemperingSpec, dims: Sequence[int], N: int, R: int, seed: int,
                    p: int = 4, threads: int = 1, budget: int = DENSE_BUDGET) -> list:
    """One row per dimension: constants, particle threshold, work and error.

    Particles scale as ``N * d``. ``work`` counts single-coordinate updates,
    ``transitions * particles * (t * d)`` summed over levels, so each of the
    three factors of ``d`` shows up in its own column relative to the first row.
    ``gamma`` is the largest relative density between consecutive inserted
    levels; ``gamma_normalized`` is the bound on the normalized potentials of
    the built sequence, which can be larger. The test function is ``H`` of
    the first coordinate, whose target mean does not depend on ``d``.
    """
    from .particles import simulate
    from .stability import chain_constants, gamma_bound, poincare_constant, particle_mse_bound

    rows = []
    ref = None
    for d in dims:
        pspec = ProductSpec(base, d)
        row = dict.fromkeys(SWEEP_COLUMNS, "")
        row.update(d=d, skipped=False)
        try:
            seq = build_product(pspec, budget=budget)
        except CapacityError as exc:
            row.update(skipped=True, reason=str(exc))
            rows.append(row)
            continue
        n_d = N * d
        f = base.H.values[product_states(base.H.size, d)[:, 0]]
        consts = chain_constants(seq, p=p)
        bound = particle_mse_bound(seq, consts, f, n_d)
        ens = simulate(seq, n_d, R, seed, threads=threads)
        good = ens.select(ens.ok)
        err2 = (good.nu(seq.n, f) - float(seq.mus[-1].weights @ f)) ** 2
        work = sum(n_d * t for t in seq.steps)
        lam = min(poincare_constant(seq.kernels[k], seq.mus[k + 1]) for k in range(seq.n))
        row.update(
            levels=seq.n, gamma=inserted_density_max(pspec),
            gamma_normalized=gamma_bound(seq).gamma, lambda_min=lam, N=n_d,
            N_threshold=bound.threshold, work=work, mse=float(np.mean(err2)),
            mse_se=float(np.std(err2, ddof=1) / np.sqrt(err2.size)),
            mse_bound=bound.mse_bound)
        if ref is None:
            ref = (max(seq.steps), seq.n, n_d)
        row.update(factor_step_cost=max(seq.steps) / ref[0], factor_levels=seq.n / ref[1],
                   factor_particles=n_d / ref[2])
        rows.append(row)
    return rows
