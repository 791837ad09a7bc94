import numpy as np
import pytest

from qpreduce.acceptance import dual_eigenfunction
from qpreduce.duality import (box_sites, check_good, check_sule, dual_operator, extract_eigenfunction,
                              fit_decay_exponent, match_oracle, phase_is_diophantine, pp_counting_check,
                              truncated_matrix)
from qpreduce.dynamics import GOLDEN, Cocycle, Frequency
from qpreduce.kam import KamSchedule, reduce_full
from qpreduce.spectrum import Potential, schrodinger_cocycle
from qpreduce.torus import ScalarTorusFunction

FR = Frequency.golden()
PHASE = 0.1


def test_dual_operator_examples():
    op = dual_operator(ScalarTorusFunction.cosine(2.0), 0.3, FR)
    assert np.isclose(op.vhat.coeff(1), 0.3) and np.isclose(op.vhat.coeff(-1), 0.3)
    V = ScalarTorusFunction.from_modes({0: 0.2, 1: 0.1 - 0.3j, 3: 0.05j})
    op = dual_operator(V, 1.0, FR)
    assert op.vhat.allclose(V, 0)
    with pytest.raises(ValueError):
        dual_operator(V.to_double(), 1.0, FR)


def test_truncated_matrix_examples():
    op = dual_operator(ScalarTorusFunction.zeros(), 1.0, FR, PHASE)
    H = truncated_matrix(op, 2)
    n = np.arange(-2, 3)
    assert np.allclose(H, np.diag(2 * np.cos(2 * np.pi * (PHASE + n * GOLDEN))), atol=0)
    lam = 0.05
    H = truncated_matrix(dual_operator(Potential.amo(lam), 1.0, FR, PHASE), 10)
    assert np.allclose(np.diag(H, 1), lam) and np.allclose(np.diag(H, -1), lam)
    assert np.count_nonzero(np.triu(H, 2)) == 0
    assert np.array_equal(H, H.T)
    V = ScalarTorusFunction.from_modes({1: 0.1 - 0.3j, 2: 0.2})
    H = truncated_matrix(dual_operator(V, 1.0, FR, PHASE), 6)
    assert np.array_equal(H, H.conj().T)
    H2 = truncated_matrix(dual_operator(ScalarTorusFunction.cosine(1.0, (1, 1), d=2), 1.0,
                                        Frequency((GOLDEN, np.sqrt(2) - 1)), PHASE), 3)
    assert H2.shape == (49, 49) and np.array_equal(H2, H2.T)
    with pytest.raises(ValueError):
        truncated_matrix(dual_operator(ScalarTorusFunction.cosine(1.0, 5), 1.0, FR), 3)


@pytest.mark.parametrize("m", [0, 2])
def test_extract_free_case(m):
    E = 2 * np.cos(2 * np.pi * (PHASE + m * GOLDEN))
    c = schrodinger_cocycle(ScalarTorusFunction.zeros(), E, FR)
    st, _ = reduce_full(c, KamSchedule())
    ef = extract_eigenfunction(st, m, PHASE, ScalarTorusFunction.zeros(), E, FR, radius=8)
    delta = np.zeros(17)
    delta[8 + m] = 1.0
    assert np.max(np.abs(np.abs(ef.amplitudes) - delta)) < 1e-12
    assert ef.residual < 1e-12 and ef.norm >= ef.norm_bound


def test_extract_rejects_non_rotation():
    c = Cocycle.constant(FR, np.array([[1.0, 1.0], [0.0, 1.0]]))
    st, _ = reduce_full(c, KamSchedule(), ("rational", (0,)))
    with pytest.raises(ValueError, match="rotation"):
        extract_eigenfunction(st, 0, PHASE, ScalarTorusFunction.zeros(), 2.0, FR)


@pytest.fixture(scope="module")
def amo_site0():
    return dual_eigenfunction(0.05, PHASE, 0, 64)


@pytest.fixture(scope="module")
def amo_site3():
    return dual_eigenfunction(0.05, PHASE, 3, 64)


def test_extract_amo_matches_oracle(amo_site0):
    V, fr, E, st, ef = amo_site0
    assert phase_is_diophantine(PHASE, fr, 0.05, 2.0, 1000)[0]
    o = match_oracle(ef, dual_operator(V, 1.0, fr, PHASE), 64)
    assert o["overlap"] >= 0.999
    assert ef.residual < 1e-6 and ef.meta["resid_ok"]
    assert ef.norm >= ef.norm_bound
    assert abs(np.sum(np.abs(ef.amplitudes) ** 2) - 1.0) < 1e-10


def test_extract_amo_site3_eigenvalue(amo_site3):
    V, fr, E, st, ef = amo_site3
    o = match_oracle(ef, dual_operator(V, 1.0, fr, PHASE), 64)
    assert o["eigenvalue_mismatch"] < 1e-6
    assert ef.center == (3,)
    assert int(np.argmax(np.abs(ef.amplitudes))) - 64 == 3


def test_phase_covariance(amo_site0):
    # u at site 1 and phase phi equals u at site 0 and phase phi + alpha, shifted by one site
    V, fr, E, st, ef = dual_eigenfunction(0.05, PHASE, 1, 64)
    alt = extract_eigenfunction(st, 0, PHASE + GOLDEN, V, E, fr, radius=64)
    a = ef.amplitudes[1:]
    b = alt.amplitudes[:-1]
    assert np.max(np.abs(np.abs(a) - np.abs(b))) < 1e-10


def test_decay_certificates(amo_site0):
    V, fr, E, st, ef = amo_site0
    k = fit_decay_exponent(ef)
    assert k >= 4
    g = check_good(ef, 64, 4.0, 0.2)
    assert g.passed
    s = check_sule(ef, 4.0, 1.0)
    assert np.isfinite(s.C) and s.passed
    assert check_sule(ef, 4.0, 1.0, C=0.5 * s.C).passed is False


def test_certificate_examples():
    R = 32
    delta = np.zeros(2 * R + 1)
    delta[R] = 1.0
    for N, C, eps in ((1, 2.0, 0.5), (10, 8.0, 0.1), (32, 1.5, 0.9)):
        assert check_good(delta, N, C, eps).passed
    n = box_sites(R, 1)[:, 0]
    u = np.maximum(np.abs(n), 1).astype(float) ** -4.0
    u /= np.linalg.norm(u)
    assert check_good(u, 16, 3.0, 0.2).passed
    assert not check_good(u, 16, 5.0, 0.2).passed
    assert check_sule(u, 4.0, 0.0).C <= 1.0
    assert abs(fit_decay_exponent(u) - 4.0) < 0.5


def free_good_count(N, C, eps):
    """Deltas centred at n pass iff |n| < (1 - eps) N or 1 <= eps^{-1} |n|^{-C}."""
    n = np.arange(-N, N + 1)
    a = np.abs(n)
    ok = (a < (1 - eps) * N) | (a == 0) | (np.maximum(a, 1).astype(float) ** (-C) / eps >= 1.0)
    return int(np.sum(ok))


@pytest.mark.parametrize("N,eps", [(16, 0.2), (64, 1e-3)])
def test_counting_free_exact(N, eps):
    op = dual_operator(ScalarTorusFunction.zeros(), 1.0, FR)
    frac, per = pp_counting_check(op, N, 4.0, eps, n_phases=2)
    assert frac == free_good_count(N, 4.0, eps) / (2.0 * N)
    assert all(p == frac for p in per)
    # the free fraction tends to 1 only as eps -> 0: it is 1 - eps + O(1/N)
    assert abs(frac - (1 - eps)) <= 1.5 / N


def test_counting_large_coupling_reported():
    frac, _ = pp_counting_check(dual_operator(Potential.amo(10.0), 1.0, FR), 32, 4.0, 0.2, n_phases=2)
    assert 0.0 <= frac <= 33 / 32


def test_eigenfunction_csv(amo_site0):
    ef = amo_site0[-1]
    lines = ef.to_csv().splitlines()
    assert lines[0] == "n1,u"
    assert len(lines) > 10
