"""Finite state spaces, probability measures, functions and Markov kernels.

All objects are thin immutable wrappers around 64-bit numpy arrays. The
operations accept either the wrapper types or plain array-likes, so
``integrate(mu, [0.0, 2.0])`` works as well as ``integrate(mu, f)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatchError

logger = logging.getLogger(__name__)

SUM_TOL = 1e-12


def _frozen(a, ndim):
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StateSpace:
    size: int
    labels: Optional[tuple] = None

    def __post_init__(self):
        if int(self.size) < 1:
            raise ValueError("state space needs at least one state")
        object.__setattr__(self, "size", int(self.size))
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != self.size:
                raise ValueError("labels must have one entry per state")
            if len(set(labels)) != len(labels):
                raise ValueError("state labels must be distinct")
            object.__setattr__(self, "labels", labels)


@dataclass(frozen=True, eq=False)
class ProbMeasure:
    """Probability vector over ``len(weights)`` states."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights, 1)
        if w.size == 0:
            raise ValueError("empty measure")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        if abs(np.sum(w) - 1.0) > SUM_TOL:
            raise ValueError(f"weights sum to {np.sum(w)!r}, not 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_unnormalized(cls, w) -> "ProbMeasure":
        w = np.asarray(w, dtype=np.float64)
        return cls(w / np.sum(w))

    @classmethod
    def uniform(cls, m: int) -> "ProbMeasure":
        return cls(np.full(m, 1.0 / m))

    @property
    def size(self) -> int:
        return self.weights.size

    def __len__(self):
        return self.weights.size


@dataclass(frozen=True, eq=False)
class StateFunction:
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values, 1)
        if not np.all(np.isfinite(v)):
            raise ValueError("function values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.values.size

    def __len__(self):
        return self.values.size


@dataclass(frozen=True, eq=False)
class MarkovKernel:
    """Row-stochastic transition matrix."""

    matrix: np.ndarray
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        K = _frozen(self.matrix, 2)
        if K.shape[0] != K.shape[1]:
            raise ValueError(f"kernel must be square, got {K.shape}")
        if not np.all(np.isfinite(K)) or np.any(K < 0):
            raise ValueError("kernel entries must be finite and non-negative")
        drift = np.max(np.abs(K.sum(axis=1) - 1.0))
        if drift > SUM_TOL:
            raise ValueError(f"kernel rows do not sum to 1 (max drift {drift:.3g})")
        object.__setattr__(self, "matrix", K)

    @classmethod
    def identity(cls, m: int) -> "MarkovKernel":
        return cls(np.eye(m))

    @classmethod
    def perfect_mixing(cls, mu) -> "MarkovKernel":
        w = weights_of(mu)
        return cls(np.tile(w, (w.size, 1)))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def weights_of(mu) -> np.ndarray:
    return mu.weights if isinstance(mu, ProbMeasure) else np.asarray(mu, dtype=np.float64)


def values_of(f) -> np.ndarray:
    return f.values if isinstance(f, StateFunction) else np.asarray(f, dtype=np.float64)


def matrix_of(K) -> np.ndarray:
    return K.matrix if isinstance(K, MarkovKernel) else np.asarray(K, dtype=np.float64)


def _check_same(*sizes):
    if len(set(sizes)) != 1:
        raise DimensionMismatchError(f"state-space sizes differ: {sizes}")


def integrate(mu, f) -> float:
    """Return ``mu(f) = sum_x mu(x) f(x)``."""
    w, v = weights_of(mu), values_of(f)
    _check_same(w.shape[0], v.shape[0])
    return float(np.sum(w * v))


def variance(mu, f) -> float:
    """``mu(f^2) - mu(f)^2``, with negative round-off clamped to zero."""
    w, v = weights_of(mu), values_of(f)
    _check_same(w.shape[0], v.shape[0])
    mean = np.sum(w * v)
    return max(float(np.sum(w * v * v) - mean * mean), 0.0)


def lp_norm(mu, f, p: float) -> float:
    """``mu(|f|^p)^(1/p)``."""
    if p < 1:
        raise ValueError(f"L_p norm requires p >= 1, got {p}")
    w, v = weights_of(mu), values_of(f)
    _check_same(w.shape[0], v.shape[0])
    return float(np.sum(w * np.abs(v) ** p) ** (1.0 / p))


def sup_norm(f) -> float:
    return float(np.max(np.abs(values_of(f))))


def kernel_apply(K, f) -> StateFunction:
    """``K(f)(x) = sum_y K(x, y) f(y)``."""
    A, v = matrix_of(K), values_of(f)
    _check_same(A.shape[1], v.shape[0])
    return StateFunction(A @ v)


def kernel_power(K, t: int) -> MarkovKernel:
    """``K^t`` by repeated squaring; ``t == 0`` gives the identity.

    Accumulated row-sum drift above ``1e-12`` is removed by renormalizing the
    rows, and the event is logged and recorded on the returned kernel.
    """
    t = int(t)
    if t < 0:
        raise ValueError("kernel power must be non-negative")
    A = matrix_of(K)
    P = np.array(np.linalg.matrix_power(A, t), dtype=np.float64)  # t=1 returns A itself
    np.clip(P, 0.0, None, out=P)
    notes = ()
    drift = float(np.max(np.abs(P.sum(axis=1) - 1.0)))
    if drift > SUM_TOL:
        msg = f"kernel_power(t={t}): row-sum drift {drift:.3g} renormalized"
        logger.warning(msg)
        notes = (msg,)
        P = P / P.sum(axis=1, keepdims=True)
    return MarkovKernel(P, warnings=notes)


def stationarity_defect(K, mu) -> float:
    A, w = matrix_of(K), weights_of(mu)
    _check_same(A.shape[0], w.shape[0])
    return float(np.max(np.abs(w @ A - w)))


def check_stationary(K, mu, tol: float = 1e-12) -> bool:
    """True iff ``max_y |(mu K)(y) - mu(y)| <= tol``."""
    return stationarity_defect(K, mu) <= tol


def reversibility_defect(K, mu) -> float:
    A, w = matrix_of(K), weights_of(mu)
    _check_same(A.shape[0], w.shape[0])
    flux = w[:, None] * A
    return float(np.max(np.abs(flux - flux.T)))


def check_reversible(K, mu, tol: float = 1e-12) -> bool:
    """Detailed balance ``mu(x)K(x,y) == mu(y)K(y,x)`` up to ``tol``."""
    return reversibility_defect(K, mu) <= tol


def metropolis_kernel(target, proposal) -> MarkovKernel:
    """Metropolis-Hastings kernel for ``target`` driven by ``proposal``.

    Off-diagonal entries are ``P(x,y) min(1, pi(y)P(y,x) / (pi(x)P(x,y)))``;
    the rejected mass stays on the diagonal. The target must have full
    support.
    """
    pi = weights_of(target)
    P = matrix_of(proposal)
    _check_same(pi.shape[0], P.shape[0])
    if np.any(pi <= 0):
        raise ValueError("target must put positive mass on every state")
    forward = pi[:, None] * P
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(forward > 0, forward.T / forward, 0.0)
    K = P * np.minimum(1.0, ratio)
    np.fill_diagonal(K, 0.0)
    np.fill_diagonal(K, 1.0 - K.sum(axis=1))
    return MarkovKernel(K)


def nearest_neighbor_proposal(m: int) -> MarkovKernel:
    """Reflecting simple random walk on ``0..m-1`` (1/2 to each side)."""
    P = np.zeros((m, m))
    if m == 1:
        P[0, 0] = 1.0
        return MarkovKernel(P)
    for x in range(m):
        P[x, max(x - 1, 0)] += 0.5
        P[x, min(x + 1, m - 1)] += 0.5
    return MarkovKernel(P)


def indicator(m: int, i: int) -> StateFunction:
    v = np.zeros(m)
    v[i] = 1.0
    return StateFunction(v)


def as_function(f, m: Optional[int] = None) -> StateFunction:
    sf = f if isinstance(f, StateFunction) else StateFunction(np.asarray(f, dtype=np.float64))
    if m is not None:
        _check_same(m, sf.size)
    return sf


def as_measure(mu) -> ProbMeasure:
    return mu if isinstance(mu, ProbMeasure) else ProbMeasure(mu)


def as_kernel(K) -> MarkovKernel:
    return K if isinstance(K, MarkovKernel) else MarkovKernel(K)


__all__: Sequence[str] = [
    "StateSpace", "ProbMeasure", "StateFunction", "MarkovKernel",
    "integrate", "variance", "lp_norm", "sup_norm", "kernel_apply",
    "kernel_power", "check_stationary", "check_reversible",
    "stationarity_defect", "reversibility_defect", "metropolis_kernel",
    "nearest_neighbor_proposal", "indicator", "as_function", "as_measure",
    "as_kernel", "weights_of", "values_of", "matrix_of",
]
