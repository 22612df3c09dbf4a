"""The interacting particle system: multinomial resampling + MCMC mutation.

Every replication ``r`` of an experiment with master seed ``s`` draws its
uniforms from its own counter-based stream, a Philox generator keyed by
``(s, r)``. A replication consumes its stream in a fixed layout::

    N uniforms            initial draws from mu_0
    for k = 1..n:
        N uniforms        resampling at level k
        N uniforms        mutation at level k

so the batched engine (:func:`simulate`) and the one-replication reference
path (:func:`init_cloud` / :func:`step` / :func:`run`) produce identical
particles, independently of chunking and thread count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence

import numpy as np

from .errors import DegenerateWeightsError
from .feynman_kac import LevelSequence, normalized_potential
from .measures import values_of

logger = logging.getLogger(__name__)

CHUNK = 1024
_MASK64 = (1 << 64) - 1
# largest (rows x particles x cdf-length) block compared at once in resampling
_BROADCAST_LIMIT = 1 << 22


def replication_rng(seed: int, replication: int = 0) -> np.random.Generator:
    """Generator for stream ``(seed, replication)`` (Philox, 128-bit key)."""
    if replication < 0 or replication > _MASK64:
        raise ValueError("replication index must fit in 64 bits")
    key = (int(seed) & _MASK64) | (int(replication) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def _pick_rows(cdf: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per row, the first index ``i`` with ``v < cdf[i]`` (cdf rows ascending)."""
    R, L = cdf.shape
    N = v.shape[1]
    inner = cdf[:, :-1]
    out = np.empty((R, N), dtype=np.int64)
    if N * L <= _BROADCAST_LIMIT:
        step = max(1, _BROADCAST_LIMIT // max(N * L, 1))
        for a in range(0, R, step):
            b = min(a + step, R)
            out[a:b] = np.count_nonzero(inner[a:b, None, :] <= v[a:b, :, None], axis=2)
    else:
        for r in range(R):
            out[r] = np.searchsorted(inner[r], v[r], side="right")
    return out


def _resample_rows(weights: np.ndarray, u: np.ndarray):
    """Multinomial resampling of every row; returns (indices, ok-mask)."""
    cdf = np.cumsum(weights, axis=1)
    total = cdf[:, -1]
    ok = total > 0
    v = u * total[:, None]
    idx = _pick_rows(cdf, v)
    np.minimum(idx, weights.shape[1] - 1, out=idx)
    idx[~ok] = 0
    return idx, ok


def _mutate(cum_kernel: np.ndarray, positions: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Move each particle one draw from its kernel row (inverse CDF)."""
    out = np.empty_like(positions)
    last = cum_kernel.shape[1] - 1
    for x in np.unique(positions):
        mask = positions == x
        row = cum_kernel[x]
        out[mask] = np.searchsorted(row[:-1], u[mask] * row[-1], side="right")
    np.minimum(out, last, out=out)
    return out


def _initial_positions(seq: LevelSequence, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(seq.mus[0].weights)
    idx = np.searchsorted(cdf[:-1], u * cdf[-1], side="right")
    return np.minimum(idx, seq.m - 1)


@dataclass(frozen=True)
class _LevelTables:
    raw: np.ndarray
    gbar: np.ndarray
    cum_kernel: np.ndarray


def _tables(seq: LevelSequence, k: int) -> _LevelTables:
    return seq._cached(("particle-tables", k), lambda: _LevelTables(
        raw=seq.potentials[k - 1].values,
        gbar=normalized_potential(seq, k).values,
        cum_kernel=np.cumsum(seq.kernels[k - 1].matrix, axis=1),
    ))


def _advance(seq: LevelSequence, k: int, positions: np.ndarray, phi: np.ndarray,
             u_resample: np.ndarray, u_mutate: np.ndarray):
    """Level ``k-1 -> k`` for a block of replications (rows)."""
    tab = _tables(seq, k)
    N = positions.shape[1]
    new_phi = phi * (np.sum(tab.gbar[positions], axis=1) / N)
    parents, ok = _resample_rows(tab.raw[positions], u_resample)
    resampled = np.take_along_axis(positions, parents, axis=1)
    moved = _mutate(tab.cum_kernel, resampled, u_mutate)
    return moved, new_phi, ok


# ----------------------------------------------------------------------------
# one replication


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    """Particles ``xi_k`` at level ``k`` with the running product ``phi_k``.

    ``rng_state`` is the generator state right after this cloud was drawn,
    so :func:`step` continues the replication's stream deterministically.
    """

    level: int
    positions: np.ndarray
    phi: float
    rng_state: Any = field(default=None, repr=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.int64)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    def counts(self, m: int) -> np.ndarray:
        return np.bincount(self.positions, minlength=m)


@dataclass(frozen=True, eq=False)
class RunRecord:
    clouds: List[ParticleCloud]
    seed: int
    model: LevelSequence
    replication: int = 0

    @property
    def N(self) -> int:
        return self.clouds[0].N

    @property
    def final(self) -> ParticleCloud:
        return self.clouds[-1]


def _generator_from(cloud_or_state) -> np.random.Generator:
    bg = np.random.Philox()
    bg.state = cloud_or_state
    return np.random.Generator(bg)


def init_cloud(seq: LevelSequence, N: int, seed: int, replication: int = 0) -> ParticleCloud:
    """Draw ``N`` i.i.d. particles from ``mu_0`` (inverse CDF)."""
    if N < 1:
        raise ValueError("need at least one particle")
    gen = replication_rng(seed, replication)
    pos = _initial_positions(seq, gen.random(N))
    return ParticleCloud(0, pos, 1.0, gen.bit_generator.state)


def multinomial_resample(weights, N_out: int, rng: np.random.Generator) -> np.ndarray:
    """``N_out`` i.i.d. indices drawn with probability ``weights / sum(weights)``."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if not np.sum(w) > 0:
        raise DegenerateWeightsError("all resampling weights are zero")
    idx, _ = _resample_rows(w[None, :], rng.random(N_out)[None, :])
    return idx[0]


def step(seq: LevelSequence, cloud: ParticleCloud,
         rng: Optional[np.random.Generator] = None) -> ParticleCloud:
    """Resample with weights ``g_{k-1,k}`` then mutate with ``K_k``.

    Without ``rng`` the cloud's own stream is continued.
    """
    k = cloud.level + 1
    if k > seq.n:
        raise ValueError(f"cloud is already at the last level {seq.n}")
    gen = rng if rng is not None else _generator_from(cloud.rng_state)
    N = cloud.N
    u_res = gen.random(N)
    u_mut = gen.random(N)
    pos, phi, ok = _advance(seq, k, cloud.positions[None, :], np.array([cloud.phi]),
                            u_res[None, :], u_mut[None, :])
    if not ok[0]:
        raise DegenerateWeightsError(f"all potentials vanished at level {k}")
    return ParticleCloud(k, pos[0], float(phi[0]), gen.bit_generator.state)


def run(seq: LevelSequence, N: int, seed: int, replication: int = 0) -> RunRecord:
    """One full replication, keeping every level's cloud."""
    clouds = [init_cloud(seq, N, seed, replication)]
    for _ in range(seq.n):
        clouds.append(step(seq, clouds[-1]))
    return RunRecord(clouds, int(seed), seq, replication)


def eta(cloud: ParticleCloud, f) -> float:
    """Empirical mean ``(1/N) sum_i f(xi_k^i)``."""
    v = values_of(f)
    return float(np.sum(v[cloud.positions]) / cloud.N)


def nu(cloud: ParticleCloud, f) -> float:
    """Unnormalized measure ``phi_k * eta_k(f)``."""
    return cloud.phi * eta(cloud, f)


# ----------------------------------------------------------------------------
# many replications


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Occupation counts and ``phi`` for a range of replications.

    ``counts[r, k, x]`` is the number of level-``k`` particles of replication
    ``r`` sitting on state ``x``. Aborted replications have ``ok == False``.
    """

    counts: np.ndarray
    phi: np.ndarray
    ok: np.ndarray
    N: int
    seed: int
    start: int = 0

    @property
    def R(self) -> int:
        return self.phi.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[1] - 1

    @property
    def replications(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.R)

    def eta(self, k: int, f) -> np.ndarray:
        v = values_of(f)
        return np.sum(self.counts[:, k, :] * v, axis=1) / self.N

    def nu(self, k: int, f) -> np.ndarray:
        return self.phi[:, k] * self.eta(k, f)

    def select(self, mask) -> "Ensemble":
        return Ensemble(self.counts[mask], self.phi[mask], self.ok[mask], self.N, self.seed,
                        self.start)


def _simulate_block(seq: LevelSequence, N: int, seed: int, reps: Sequence[int],
                    keep_positions: bool = False):
    n, m = seq.n, seq.m
    R = len(reps)
    u = np.empty((R, (2 * n + 1) * N))
    for i, r in enumerate(reps):
        u[i] = replication_rng(seed, r).random(u.shape[1])
    pos = _initial_positions(seq, u[:, :N])
    phi = np.ones((R, n + 1))
    ok = np.ones(R, dtype=bool)
    counts = np.empty((R, n + 1, m), dtype=np.int64)
    history = [pos] if keep_positions else None

    def tally(k, p):
        offs = (np.arange(R) * m)[:, None]
        counts[:, k, :] = np.bincount((p + offs).ravel(), minlength=R * m).reshape(R, m)

    tally(0, pos)
    for k in range(1, n + 1):
        a = (2 * k - 1) * N
        pos, phi[:, k], ok_k = _advance(seq, k, pos, phi[:, k - 1],
                                        u[:, a:a + N], u[:, a + N:a + 2 * N])
        ok &= ok_k
        tally(k, pos)
        if keep_positions:
            history.append(pos)
    return counts, phi, ok, history


def simulate(seq: LevelSequence, N: int, R: int, seed: int, threads: int = 1,
             start: int = 0, chunk: int = CHUNK) -> Ensemble:
    """Run replications ``start .. start+R-1`` of the particle system.

    Work is split into fixed-size chunks (independent of ``threads``) that may
    run concurrently; results are stitched back in replication order.
    """
    if N < 1 or R < 1:
        raise ValueError("need N >= 1 and R >= 1")
    blocks = [range(a, min(a + chunk, start + R)) for a in range(start, start + R, chunk)]

    def work(reps):
        c, p, o, _ = _simulate_block(seq, N, seed, reps)
        return c, p, o

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    counts = np.concatenate([p[0] for p in parts])
    phi = np.concatenate([p[1] for p in parts])
    ok = np.concatenate([p[2] for p in parts])
    n_bad = int(np.count_nonzero(~ok))
    if n_bad:
        logger.warning("%d of %d replications aborted on degenerate weights", n_bad, R)
    return Ensemble(counts, phi, ok, N, int(seed), start)


def simulate_positions(seq: LevelSequence, N: int, seed: int, reps: Sequence[int]):
    """Per-level particle positions for the given replications (small runs)."""
    _, phi, ok, history = _simulate_block(seq, N, seed, list(reps), keep_positions=True)
    return np.stack(history, axis=1), phi, ok


def step_ensemble(seq: LevelSequence, cloud: ParticleCloud, R: int, seed: int,
                  chunk: int = CHUNK) -> np.ndarray:
    """``R`` independent one-level continuations of a fixed cloud.

    Row ``r`` uses stream ``(seed, r)``; returns counts of shape ``(R, m)``.
    Conditioning on the past is realized by holding ``cloud`` fixed.
    """
    k = cloud.level + 1
    if k > seq.n:
        raise ValueError("cloud is at the last level")
    N, m = cloud.N, seq.m
    out = np.empty((R, m), dtype=np.int64)
    for a in range(0, R, chunk):
        b = min(a + chunk, R)
        u = np.stack([replication_rng(seed, r).random(2 * N) for r in range(a, b)])
        pos = np.broadcast_to(cloud.positions, (b - a, N))
        moved, _, _ = _advance(seq, k, pos, np.full(b - a, cloud.phi), u[:, :N], u[:, N:])
        offs = (np.arange(b - a) * m)[:, None]
        out[a:b] = np.bincount((moved + offs).ravel(), minlength=(b - a) * m).reshape(-1, m)
    return out
