import itertools

import numpy as np
import pytest

from seqmc.diagnostics import (
    Check,
    conditional_mean_check,
    epsilon_lower_bound,
    eta_error_bounds,
    expected_v0,
    function_dictionary,
    martingale_checks,
    martingale_increments,
    mean_se,
    unbiasedness_checks,
    v_term,
    v_terms,
    variance_identity_report,
)
from seqmc.feynman_kac import LevelSequence
from seqmc.measures import integrate
from seqmc.particles import ParticleCloud, init_cloud, run, simulate

H = np.arange(4.0)


def test_check_compare_uses_four_standard_errors():
    assert Check.compare("x", 1.0, 0.25, 0.0).passed
    assert not Check.compare("x", 1.01, 0.25, 0.0).passed
    assert Check.compare("x", 2.0, 0.0, 2.0).passed


def test_mean_se():
    m, se = mean_se([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5
    assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert np.isnan(mean_se([1.0])[1])


def test_function_dictionary(seq_a):
    funcs = function_dictionary(seq_a, size=10)
    assert len(funcs) == 10
    for name, f in funcs:
        if name.startswith("centered"):
            assert abs(integrate(seq_a.mus[-1], f)) < 1e-12


@pytest.mark.parametrize("N", [1, 2, 3])
def test_expected_v0_matches_enumeration(seq_a, N):
    # E[V_0] over all N-tuples of i.i.d. mu_0 particles
    w = seq_a.mus[0].weights
    total = 0.0
    for pos in itertools.product(range(seq_a.m), repeat=N):
        prob = np.prod(w[list(pos)])
        total += prob * v_term(ParticleCloud(0, np.array(pos), 1.0), seq_a, seq_a.n, H)
    assert total == pytest.approx(expected_v0(seq_a, H, N), rel=1e-12, abs=1e-14)


def test_v_term_matches_batched(seq_a):
    rec = run(seq_a, 7, 11)
    ens = simulate(seq_a, 7, 12, 11)
    V = v_terms(ens, seq_a, H)
    for j in range(seq_a.n):
        assert V[0, j] == pytest.approx(v_term(rec.clouds[j], seq_a, seq_a.n, H), rel=1e-12)
    with pytest.raises(ValueError):
        v_term(rec.final, seq_a, seq_a.n, H)


def test_variance_identity(seq_a):
    rep = variance_identity_report(seq_a, H, 16, 20_000, 2)
    assert rep.identity_holds and rep.passed
    assert rep.aborted == 0
    assert rep.per_level_V.shape == (seq_a.n,)
    d = rep.to_dict()
    assert d["R"] == 20_000 and d["identity_holds"] is True


def test_variance_identity_single_level():
    seq = LevelSequence([np.array([0.2, 0.3, 0.5])], [], [])
    rep = variance_identity_report(seq, [1.0, 0.0, -1.0], 5, 5000, 0)
    assert rep.formula_rhs == pytest.approx(rep.var_mu_n / 5, rel=1e-12)
    assert rep.identity_holds


def test_variance_identity_needs_replications(seq_a):
    with pytest.raises(ValueError):
        variance_identity_report(seq_a, H, 8, 99, 0)


def test_unbiasedness_and_martingales(seq_a):
    ens = simulate(seq_a, 8, 20_000, 6)
    checks = unbiasedness_checks(ens, seq_a, function_dictionary(seq_a))
    checks += martingale_checks(ens, seq_a, H)
    assert all(c.passed for c in checks), [c for c in checks if not c.passed]
    inc = martingale_increments(ens, seq_a, H)
    assert inc["L"].shape == (20_000, seq_a.n) and inc["A"].shape == (20_000,)


def test_martingale_increment_is_random_with_one_particle(seq_a):
    # with N = 1, A_n - A_0 has mean zero but is not identically zero
    ens = simulate(seq_a, 1, 2000, 8)
    assert np.std(martingale_increments(ens, seq_a, H)["A"]) > 0


def test_conditional_mean(seq_a):
    cloud = init_cloud(seq_a, 10, 1)
    assert conditional_mean_check(seq_a, cloud, H, 20_000, 5).passed


def test_eta_error_bounds(seq_a):
    rep = variance_identity_report(seq_a, H, 32, 10_000, 9)
    b = eta_error_bounds(rep, H, batches=10)
    assert b.mse.shape == (10,)
    mse_frac, mae_frac = b.pass_fraction()
    assert mse_frac == 1.0 and mae_frac == 1.0
    with pytest.raises(ValueError):
        eta_error_bounds(rep.ensemble, H)


def test_epsilon_lower_bound_is_nonnegative(seq_a):
    ens = simulate(seq_a, 8, 500, 0)
    eps = epsilon_lower_bound(ens, seq_a, 1, function_dictionary(seq_a, level=1), 4)
    assert eps >= 0
