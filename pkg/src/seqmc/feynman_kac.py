"""Level sequences and exact Feynman-Kac propagators on a finite space.

A :class:`LevelSequence` holds measures ``mu_0..mu_n``, positive potentials
``g_{k-1,k}`` and kernels ``K_1..K_n`` on one common state space. Kernels are
stationary for their level, and consecutive measures are linked by
``mu_k(f) = mu_{k-1}(g f) / mu_{k-1}(g)``.

Propagators are dense matrices acting on column vectors of function values:

* plain   ``q_{k-1,k} = diag(gbar_{k-1,k}) K_k``
* hatted  ``qhat_{k-1,k} = K_{k-1} diag(gbar_{k-1,k})``  (defined for k >= 2)

and multi-step propagators are ordered products of these.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DimensionMismatchError
from .measures import (
    MarkovKernel,
    ProbMeasure,
    StateFunction,
    StateSpace,
    as_function,
    as_kernel,
    as_measure,
    stationarity_defect,
)

PLAIN = "plain"
HATTED = "hatted"

CONSISTENCY_TOL = 1e-10
STATIONARITY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LevelSequence:
    """The ``(mu_k, g_{k-1,k}, K_k)`` model on a shared finite space.

    ``base_kernels`` and ``steps`` optionally record the one-step MCMC kernel
    and the step count ``t_k`` that produced ``K_k`` (``K_k = base^t_k``).
    Pass ``validate=False`` to skip the eager consistency checks for very
    large spaces.
    """

    mus: Sequence[ProbMeasure]
    potentials: Sequence[StateFunction]
    kernels: Sequence[MarkovKernel]
    space: Optional[StateSpace] = None
    base_kernels: Optional[Sequence[MarkovKernel]] = None
    steps: Optional[Sequence[int]] = None
    validate: bool = True
    cache_capacity: Optional[int] = None
    _gbar: tuple = field(init=False, repr=False)
    _cache: OrderedDict = field(init=False, repr=False)
    _lock: threading.Lock = field(init=False, repr=False)

    def __post_init__(self):
        mus = tuple(as_measure(mu) for mu in self.mus)
        pots = tuple(as_function(g) for g in self.potentials)
        kers = tuple(as_kernel(K) for K in self.kernels)
        if not mus:
            raise ValueError("need at least one level")
        n = len(mus) - 1
        if len(pots) != n or len(kers) != n:
            raise ValueError(
                f"{len(mus)} measures need {n} potentials and {n} kernels, "
                f"got {len(pots)} and {len(kers)}")
        m = mus[0].size
        space = self.space or StateSpace(m)
        sizes = {mu.size for mu in mus} | {g.size for g in pots} | {K.size for K in kers}
        if sizes != {space.size}:
            raise DimensionMismatchError(f"inconsistent state-space sizes {sorted(sizes)}")
        for k, g in enumerate(pots, start=1):
            if np.any(g.values <= 0):
                raise ValueError(f"potential g_{{{k - 1},{k}}} must be strictly positive")
        base = None
        if self.base_kernels is not None:
            base = tuple(as_kernel(K) for K in self.base_kernels)
            if len(base) != n:
                raise ValueError("need one base kernel per transition")
        steps = None if self.steps is None else tuple(int(t) for t in self.steps)
        if steps is not None and len(steps) != n:
            raise ValueError("need one step count per transition")

        gbar = []
        for k in range(1, n + 1):
            g = pots[k - 1].values
            w = mus[k - 1].weights
            gb = g / np.sum(w * g)
            # second pass pins the mu_{k-1}-mean to 1 up to rounding
            gb = gb / np.sum(w * gb)
            gb.setflags(write=False)
            gbar.append(StateFunction(gb))

        setattr_ = object.__setattr__
        setattr_(self, "mus", mus)
        setattr_(self, "potentials", pots)
        setattr_(self, "kernels", kers)
        setattr_(self, "space", space)
        setattr_(self, "base_kernels", base)
        setattr_(self, "steps", steps)
        setattr_(self, "_gbar", tuple(gbar))
        setattr_(self, "_cache", OrderedDict())
        setattr_(self, "_lock", threading.Lock())
        if self.cache_capacity is None:
            setattr_(self, "cache_capacity", 2 * (n + 1))
        if self.validate:
            self.check()

    @property
    def n(self) -> int:
        return len(self.mus) - 1

    @property
    def m(self) -> int:
        return self.space.size

    def check(self) -> None:
        """Raise ``ValueError`` unless the consistency invariants hold."""
        for k in range(1, self.n + 1):
            prev = self.mus[k - 1].weights
            g = self.potentials[k - 1].values
            implied = prev * g / np.sum(prev * g)
            err = np.max(np.abs(implied - self.mus[k].weights))
            if err > CONSISTENCY_TOL:
                raise ValueError(
                    f"mu_{k} is not the g-reweighting of mu_{k - 1} (max error {err:.3g})")
            defect = stationarity_defect(self.kernels[k - 1], self.mus[k])
            if defect > STATIONARITY_TOL:
                raise ValueError(f"K_{k} is not stationary for mu_{k} (defect {defect:.3g})")

    def _cached(self, key, compute):
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
            value = compute()
            if self.cache_capacity > 0:
                self._cache[key] = value
                while len(self._cache) > self.cache_capacity:
                    self._cache.popitem(last=False)
            return value


@dataclass(frozen=True, eq=False)
class Propagator:
    j: int
    k: int
    matrix: np.ndarray
    variant: str = PLAIN

    def __post_init__(self):
        A = np.array(self.matrix, dtype=np.float64)
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)

    def __call__(self, f) -> StateFunction:
        return propagate(self, f)


def _check_level(seq: LevelSequence, k: int, lo: int = 1):
    if not lo <= k <= seq.n:
        raise ValueError(f"level {k} outside [{lo}, {seq.n}]")


def normalized_potential(seq: LevelSequence, k: int) -> StateFunction:
    """``gbar_{k-1,k} = g_{k-1,k} / mu_{k-1}(g_{k-1,k})``, for ``1 <= k <= n``."""
    _check_level(seq, k)
    return seq._gbar[k - 1]


def one_step_propagator(seq: LevelSequence, k: int) -> Propagator:
    _check_level(seq, k)
    A = seq._gbar[k - 1].values[:, None] * seq.kernels[k - 1].matrix
    return Propagator(k - 1, k, A, PLAIN)


def hatted_one_step(seq: LevelSequence, k: int) -> Propagator:
    """``qhat_{k-1,k}(f) = K_{k-1}(gbar_{k-1,k} f)``; needs ``k >= 2``."""
    _check_level(seq, k, lo=2)
    A = seq.kernels[k - 2].matrix * seq._gbar[k - 1].values[None, :]
    return Propagator(k - 1, k, A, HATTED)


def compose(seq: LevelSequence, j: int, k: int, variant: str = PLAIN) -> Propagator:
    """Multi-step propagator ``q_{j,k}`` (or ``qhat_{j,k}``), cached per key.

    The hatted family is only defined from ``j >= 1``.
    """
    if variant not in (PLAIN, HATTED):
        raise ValueError(f"unknown propagator variant {variant!r}")
    if j > k:
        raise ValueError(f"compose needs j <= k, got j={j}, k={k}")
    if j < 0 or k > seq.n:
        raise ValueError(f"levels ({j}, {k}) outside [0, {seq.n}]")
    if variant == HATTED and j < 1:
        raise ValueError("hatted propagator is defined only for j >= 1")

    def compute():
        step = one_step_propagator if variant == PLAIN else hatted_one_step
        A = np.eye(seq.m)
        for i in range(j + 1, k + 1):
            A = A @ step(seq, i).matrix
        return Propagator(j, k, A, variant)

    return seq._cached((j, k, variant), compute)


def propagators_to(seq: LevelSequence, k: int) -> List[Propagator]:
    """All plain ``q_{j,k}`` for ``j = 0..k`` from one backward sweep."""
    if not 0 <= k <= seq.n:
        raise ValueError(f"level {k} outside [0, {seq.n}]")
    out = [None] * (k + 1)
    A = np.eye(seq.m)
    out[k] = Propagator(k, k, A)
    for j in range(k - 1, -1, -1):
        A = one_step_propagator(seq, j + 1).matrix @ A
        out[j] = Propagator(j, k, A)
    return out


def propagate(p: Propagator, f) -> StateFunction:
    v = as_function(f).values
    if v.shape[0] != p.matrix.shape[1]:
        raise DimensionMismatchError(
            f"function has {v.shape[0]} states, propagator acts on {p.matrix.shape[1]}")
    return StateFunction(p.matrix @ v)
