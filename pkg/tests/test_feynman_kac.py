import math

import numpy as np
import pytest
from hypothesis import given, settings

from seqmc.errors import DimensionMismatchError
from seqmc.feynman_kac import (
    HATTED,
    LevelSequence,
    compose,
    hatted_one_step,
    normalized_potential,
    one_step_propagator,
    propagate,
    propagators_to,
)
from seqmc.measures import MarkovKernel, ProbMeasure, integrate
from seqmc.tempering import build_tempered

from .conftest import tempering_specs


def _fixture_a_gbar_oracle():
    # gbar_{0,1} = exp(-H/2) / mean_uniform(exp(-H/2)), H = (0, 1, 2, 3)
    e = [math.exp(-0.5 * h) for h in range(4)]
    return [x / (sum(e) / 4) for x in e]


def test_normalized_potential_matches_enumeration(seq_a):
    np.testing.assert_allclose(normalized_potential(seq_a, 1).values, _fixture_a_gbar_oracle(),
                               rtol=1e-14)
    for k in (1, 2):
        assert integrate(seq_a.mus[k - 1], normalized_potential(seq_a, k)) == pytest.approx(1, abs=1e-15)


def test_end_measure_matches_direct_normalization(seq_a):
    e = np.exp(-np.arange(4.0))
    np.testing.assert_allclose(seq_a.mus[2].weights, e / e.sum(), atol=1e-14)


def test_sequence_validation():
    mu = ProbMeasure.uniform(2)
    K = MarkovKernel.identity(2)
    with pytest.raises(ValueError):
        LevelSequence([mu, mu], [[1.0, 1.0]], [])
    with pytest.raises(ValueError):
        LevelSequence([mu, mu], [[0.0, 1.0]], [K])
    with pytest.raises(DimensionMismatchError):
        LevelSequence([mu, ProbMeasure.uniform(3)], [[1.0, 1.0]], [K])
    # mu_1 is not the reweighting of mu_0
    with pytest.raises(ValueError):
        LevelSequence([mu, ProbMeasure([0.3, 0.7])], [[1.0, 1.0]], [K])
    # kernel not stationary for mu_1
    with pytest.raises(ValueError):
        LevelSequence([mu, mu], [[1.0, 1.0]], [MarkovKernel([[0.0, 1.0], [0.0, 1.0]])])


def test_compose_argument_checks(seq_a):
    with pytest.raises(ValueError):
        compose(seq_a, 2, 1)
    with pytest.raises(ValueError):
        compose(seq_a, 0, 2, HATTED)
    with pytest.raises(ValueError):
        compose(seq_a, 0, 3)
    with pytest.raises(ValueError):
        compose(seq_a, 0, 1, "other")
    with pytest.raises(ValueError):
        hatted_one_step(seq_a, 1)
    np.testing.assert_array_equal(compose(seq_a, 1, 1).matrix, np.eye(4))


def test_propagate_checks_size(seq_a):
    with pytest.raises(DimensionMismatchError):
        propagate(compose(seq_a, 0, 2), [1.0, 2.0])


def test_one_level_with_constant_potential_is_kernel():
    mu = ProbMeasure([0.2, 0.8])
    K = MarkovKernel.perfect_mixing(mu)
    seq = LevelSequence([mu, mu], [[3.0, 3.0]], [K])
    np.testing.assert_allclose(one_step_propagator(seq, 1).matrix, K.matrix)


def test_cache_is_bounded_and_consistent(seq_a):
    a = compose(seq_a, 0, 2)
    assert compose(seq_a, 0, 2) is a
    for j in range(3):
        for k in range(j, 3):
            compose(seq_a, j, k)
    assert len(seq_a._cache) <= seq_a.cache_capacity


def test_propagators_to_matches_compose(seq_a):
    for j, p in enumerate(propagators_to(seq_a, 2)):
        np.testing.assert_allclose(p.matrix, compose(seq_a, j, 2).matrix, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(tempering_specs())
def test_semigroup_mass_transport_and_hatted_relation(spec):
    seq = build_tempered(spec)
    n = seq.n
    rng = np.random.default_rng(0)
    F = rng.standard_normal((20, seq.m))
    for j in range(n + 1):
        for k in range(j, n + 1):
            Q = compose(seq, j, k).matrix
            for l in range(j, k + 1):
                np.testing.assert_allclose(compose(seq, j, l).matrix @ compose(seq, l, k).matrix,
                                           Q, atol=1e-10)
            np.testing.assert_allclose((F @ Q.T) @ seq.mus[j].weights, F @ seq.mus[k].weights,
                                       atol=1e-10)
            if k > j:
                Kk = seq.kernels[k - 1].matrix
                gb = normalized_potential(seq, j + 1).values
                Qh = compose(seq, j + 1, k, HATTED).matrix
                np.testing.assert_allclose(gb[None, :] * (F @ Kk.T @ Qh.T), F @ Q.T, atol=1e-10)
