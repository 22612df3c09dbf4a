import numpy as np
import pytest
from hypothesis import strategies as st

from seqmc.tempering import TemperingSpec, build_tempered, fixture_a


@pytest.fixture(scope="session")
def seq_a():
    return build_tempered(fixture_a())


@st.composite
def tempering_specs(draw, max_states=6, max_levels=3):
    m = draw(st.integers(2, max_states))
    H = draw(st.lists(st.floats(-2, 2, allow_nan=False), min_size=m, max_size=m))
    n = draw(st.integers(1, max_levels))
    gaps = draw(st.lists(st.floats(0.05, 0.8), min_size=n, max_size=n))
    betas = np.concatenate([[0.0], np.cumsum(gaps)])
    steps = draw(st.lists(st.integers(1, 6), min_size=n, max_size=n))
    return TemperingSpec(H=np.array(H), betas=betas, mcmc_steps=steps)


@st.composite
def prob_vectors(draw, m):
    w = draw(st.lists(st.floats(0.05, 1.0), min_size=m, max_size=m))
    w = np.array(w)
    return w / w.sum()


def random_reversible(rng, m):
    """A random kernel reversible for a random full-support measure."""
    pi = rng.uniform(0.1, 1.0, m)
    pi /= pi.sum()
    S = rng.uniform(0.0, 1.0, (m, m))
    S = S + S.T
    flux = S / S.sum() * 0.9
    K = flux / pi[:, None]
    K /= max(1.0, K.sum(axis=1).max())
    np.fill_diagonal(K, 0.0)
    np.fill_diagonal(K, 1.0 - K.sum(axis=1))
    return K, pi


# acceptance criterion -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, title, detail = ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {status}: {title} ({detail})")
