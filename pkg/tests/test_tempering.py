import itertools

import numpy as np
import pytest
from hypothesis import given, settings

from seqmc.errors import CapacityError
from seqmc.feynman_kac import normalized_potential
from seqmc.measures import check_reversible
from seqmc.stability import gamma_bound
from seqmc.tempering import (
    SWEEP_COLUMNS,
    ProductSpec,
    TemperingSpec,
    build_product,
    build_tempered,
    dimension_sweep,
    gibbs_measure,
    inserted_density_max,
    product_proposal,
    product_states,
)

from .conftest import tempering_specs

BASE3 = TemperingSpec(H=np.array([0.0, 1.0, 2.0]), betas=(0.0, 0.5, 1.0), mcmc_steps=(4, 4))


def test_fixture_a_measures_match_direct_normalization(seq_a):
    H = np.arange(4.0)
    for mu, beta in zip(seq_a.mus, (0.0, 0.5, 1.0)):
        w = np.exp(-beta * H)
        assert np.max(np.abs(mu.weights - w / w.sum())) < 1e-14
    for g in seq_a.potentials:
        assert np.allclose(g.values, np.exp(-0.5 * H), rtol=1e-15)
    assert seq_a.steps == (8, 8)


def test_gibbs_measure_survives_large_energies():
    mu = gibbs_measure(np.array([0.0, 800.0, 1600.0]), 2.0)
    assert mu.weights[0] == pytest.approx(1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        TemperingSpec(np.arange(3.0), (), ())
    with pytest.raises(ValueError):
        TemperingSpec(np.arange(3.0), (1.0, 0.5), (1,))
    with pytest.raises(ValueError):
        TemperingSpec(np.arange(3.0), (0.0, 0.5), (1, 2))
    with pytest.raises(ValueError):
        TemperingSpec(np.arange(3.0), (0.0, 0.5), (0,))
    with pytest.raises(ValueError):
        TemperingSpec(np.arange(3.0), (0.0, 0.5), (1,), proposal=np.eye(2))
    with pytest.raises(ValueError):
        ProductSpec(BASE3, 0)


def test_equal_betas_give_constant_potentials():
    seq = build_tempered(TemperingSpec(np.arange(3.0), (0.4, 0.4, 0.4), (1, 1)))
    assert gamma_bound(seq).degenerate


@settings(max_examples=40, deadline=None)
@given(tempering_specs())
def test_build_tempered_invariants(spec):
    seq = build_tempered(spec)
    seq.check()
    for k in range(seq.n):
        assert check_reversible(seq.base_kernels[k], seq.mus[k + 1], tol=1e-12)


def test_product_states_mixed_radix():
    s = product_states(3, 2)
    assert s.shape == (9, 2)
    assert s[5].tolist() == [1, 2]


def test_product_proposal_moves_one_coordinate():
    P1 = np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]])
    P = product_proposal(P1, 2).matrix
    states = product_states(3, 2)
    assert np.allclose(P.sum(axis=1), 1.0)
    for a, b in itertools.product(range(9), repeat=2):
        moved = np.count_nonzero(states[a] != states[b])
        if moved > 1:
            assert P[a, b] == 0.0


def test_product_dimension_one_is_base():
    seq1 = build_tempered(BASE3)
    prod = build_product(ProductSpec(BASE3, 1))
    assert prod.n == seq1.n
    for a, b in zip(prod.mus, seq1.mus):
        assert np.max(np.abs(a.weights - b.weights)) < 1e-15
    for a, b in zip(prod.kernels, seq1.kernels):
        assert np.max(np.abs(a.matrix - b.matrix)) < 1e-14


def test_product_m3_d2():
    d = 2
    base_seq = build_tempered(BASE3)
    prod = build_product(ProductSpec(BASE3, d))
    assert len(prod.mus) == base_seq.n * d + 1
    end = np.kron(base_seq.mus[-1].weights, base_seq.mus[-1].weights)
    assert np.max(np.abs(prod.mus[-1].weights - end)) < 1e-12
    start = np.kron(base_seq.mus[0].weights, base_seq.mus[0].weights)
    assert np.max(np.abs(prod.mus[0].weights - start)) < 1e-12
    for k in range(1, prod.n + 1):
        gbar = normalized_potential(prod, k).values
        assert prod.mus[k - 1].weights @ gbar == pytest.approx(1.0, abs=1e-14)


def test_inserted_densities_bounded_by_base_gamma():
    # enumerate prod_l gbar(x_l)^(1/d) over all tuples, gap by gap
    d = 2
    base_seq = build_tempered(BASE3)
    gamma = gamma_bound(base_seq).gamma
    worst = 0.0
    for k in range(1, base_seq.n + 1):
        gbar = normalized_potential(base_seq, k).values
        for x in itertools.product(range(3), repeat=d):
            worst = max(worst, np.prod(gbar[list(x)]) ** (1 / d))
    assert worst <= gamma * (1 + 1e-14)
    assert inserted_density_max(ProductSpec(BASE3, d)) == pytest.approx(worst, rel=1e-14)
    assert inserted_density_max(ProductSpec(BASE3, d)) == pytest.approx(gamma, rel=1e-14)


def test_product_capacity_error():
    base = TemperingSpec(np.arange(4.0), (0.0, 1.0), (1,))
    with pytest.raises(CapacityError, match="4\\^10"):
        build_product(ProductSpec(base, 10))


def test_dimension_sweep_rows():
    rows = dimension_sweep(BASE3, [1, 2, 9], N=20, R=50, seed=1)
    assert [r["d"] for r in rows] == [1, 2, 9]
    assert all(set(r) == set(SWEEP_COLUMNS) for r in rows)
    one, two, big = rows
    assert not one["skipped"] and not two["skipped"]
    assert big["skipped"] and "dense budget" in big["reason"]
    assert one["factor_step_cost"] == 1 and one["factor_levels"] == 1
    assert two["factor_step_cost"] == 2 and two["factor_levels"] == 2
    assert two["factor_particles"] == 2
    assert two["work"] / one["work"] == 8
    assert two["gamma"] == pytest.approx(one["gamma"], rel=1e-14)
    assert two["levels"] == 4 and two["N"] == 40
    # below the particle threshold the bound is reported as NaN
    assert two["N"] < two["N_threshold"] and np.isnan(two["mse_bound"])
    assert two["mse"] > 0 and two["mse_se"] > 0
