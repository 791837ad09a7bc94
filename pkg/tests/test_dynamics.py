import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpreduce.dynamics import (GOLDEN, SILVER, Cocycle, Frequency, conjugate, degree, is_diophantine,
                               is_uniformly_hyperbolic, lyapunov_exponent, rotation_number,
                               transfer_product)
from qpreduce.spectrum import Potential, schrodinger_cocycle, schrodinger_rho
from qpreduce.torus import MatrixTorusFunction, ScalarTorusFunction, matrix_exp, rotation_matrix, rotation_series


def brute_dc(alpha, R, tau):
    n = np.arange(1, R + 1)
    dist = np.abs(n * alpha - np.round(n * alpha))
    return np.min(dist * n**tau)


def test_is_diophantine_examples():
    ok, worst = is_diophantine(Frequency(GOLDEN), 0.2, 1.5, 10_000)
    assert ok and brute_dc(GOLDEN, 10_000, 1.5) > 0.2
    assert worst is not None
    ok, worst = is_diophantine(Frequency(1 / 3, check=False), 1e-6, 1.5, 100)
    assert not ok and abs(worst[0]) % 3 == 0
    ok, _ = is_diophantine(Frequency((GOLDEN, SILVER)), 1e-3, 3.0, 1000)
    assert ok
    with pytest.raises(ValueError):
        is_diophantine(Frequency(GOLDEN), 0.1, 1.0, 0)


def test_frequency_rejects_rational():
    with pytest.raises(ValueError):
        Frequency(0.25)
    with pytest.raises(ValueError):
        Frequency((0.5, 0.5))


def random_cocycle(seed, d=1):
    rng = np.random.default_rng(seed)
    a = ScalarTorusFunction.from_modes({(0,) * d: 0.3 * rng.normal(), (1,) + (0,) * (d - 1):
                                        0.2 * (rng.normal() + 1j * rng.normal())}, d=d)
    b = ScalarTorusFunction.from_modes({(0,) * d: rng.normal(), (1,) + (0,) * (d - 1): 0.1j}, d=d)
    cc = ScalarTorusFunction.constant(0.4 * rng.normal(), d)
    f = MatrixTorusFunction.from_entries(a, b, cc, -a, tag="sl2")
    return Cocycle(Frequency(GOLDEN if d == 1 else (GOLDEN, SILVER)), matrix_exp(f))


def test_transfer_product_examples():
    c = random_cocycle(0)
    assert np.allclose(transfer_product(c, 0.3, 0), np.eye(2))
    A = np.array([[2.0, 1.0], [1.0, 1.0]])
    cc = Cocycle.constant(GOLDEN, A)
    assert np.allclose(transfer_product(cc, 0.1, 5), np.linalg.matrix_power(A, 5))
    naive = np.eye(2)
    for k in range(8):
        naive = c.at(np.array([0.3 + k * GOLDEN]))[0] @ naive
    assert np.max(np.abs(transfer_product(c, 0.3, 8) - naive)) < 1e-12
    back = transfer_product(c, 0.3 + 8 * GOLDEN, -8)
    assert np.allclose(back @ naive, np.eye(2), atol=1e-12)


def test_rotation_number_examples():
    for phi in (0.1, 0.37, 0.8):
        est = rotation_number(Cocycle.constant(GOLDEN, rotation_matrix(phi)), 20_000, 4)
        assert abs(est.rho - phi) < 1e-9
    for E in (-1.5, 0.0, 0.7, 1.9):
        rho, _ = schrodinger_rho(ScalarTorusFunction.zeros(), E, Frequency(GOLDEN))
        assert abs(rho - np.arccos(E / 2) / (2 * np.pi)) < 1e-9


@pytest.mark.slow
def test_rotation_number_amo_long_run():
    c = schrodinger_cocycle(Potential.amo(0.05), 0.3, Frequency(GOLDEN))
    ref = rotation_number(c, 1_000_000, 8)
    est = rotation_number(c, 100_000, 32)
    assert abs(est.rho - ref.rho) < 1e-5


def test_rotation_number_refuses_degree():
    c = Cocycle(Frequency(GOLDEN), rotation_series((1,), 1, 1.0))
    with pytest.raises(ValueError, match="degree"):
        rotation_number(c, 1000, 2)


def test_rotation_error_bound_shrinks():
    c = schrodinger_cocycle(Potential.amo(0.2), 0.5, Frequency(GOLDEN))
    e1 = rotation_number(c, 2_000, 8).error_bound
    e2 = rotation_number(c, 50_000, 8).error_bound
    assert e2 < e1


def test_lyapunov_examples():
    assert abs(lyapunov_exponent(Cocycle.constant(GOLDEN, np.diag([2.0, 0.5])), 20_000) - np.log(2)) < 1e-3
    assert lyapunov_exponent(Cocycle.constant(GOLDEN, rotation_matrix(0.3)), 20_000) < 1e-3
    c = schrodinger_cocycle(ScalarTorusFunction.zeros(), 3.0, Frequency(GOLDEN))
    assert abs(lyapunov_exponent(c, 20_000) - np.log((3 + np.sqrt(5)) / 2)) < 1e-3
    val, raw = lyapunov_exponent(c, 1000, return_raw=True)
    assert val >= 0 and np.isfinite(raw)


def test_degree_examples():
    assert degree(MatrixTorusFunction.identity()) == (0,)
    assert degree(rotation_series((3,), 1, 1.0)) == (3,)
    assert degree(rotation_series((2, -1), 2, 1.0)) == (2, -1)
    prod = rotation_series((1, 2), 2, 1.0) * rotation_series((-3, 1), 2, 1.0)
    assert degree(prod) == (-2, 3)


@settings(max_examples=15, deadline=None)
@given(st.integers(-4, 4), st.integers(-4, 4), st.integers(0, 1000))
def test_degree_additive_with_deformation(n, m, seed):
    # a degree-0 deformation does not change the class
    g = random_cocycle(seed).amap
    assert degree(rotation_series((n,), 1, 1.0) * g * rotation_series((m,), 1, 1.0)) == (n + m,)


def test_uniform_hyperbolicity_examples():
    cert = is_uniformly_hyperbolic(Cocycle.constant(GOLDEN, np.diag([2.0, 0.5])))
    assert cert.passed and cert.n == 1
    assert not is_uniformly_hyperbolic(Cocycle.constant(GOLDEN, rotation_matrix(0.2)), n_max=256).passed
    c = schrodinger_cocycle(Potential.amo(0.05), 2.5, Frequency(GOLDEN))
    assert is_uniformly_hyperbolic(c, n_max=1024).passed
    inside = schrodinger_cocycle(Potential.amo(0.05), 0.3, Frequency(GOLDEN))
    assert not is_uniformly_hyperbolic(inside, n_max=256).passed


def test_conjugate_examples():
    c = random_cocycle(4)
    same = conjugate(c, MatrixTorusFunction.identity())
    assert same.amap.allclose(c.amap, 1e-14)
    P = np.array([[1.0, 0.5], [0.0, 1.0]])
    A = rotation_matrix(0.23)
    cp = conjugate(Cocycle.constant(GOLDEN, A), MatrixTorusFunction.constant(P))
    assert np.allclose(cp.at(np.array([0.0]))[0], P @ A @ np.linalg.inv(P))
    r0 = rotation_number(Cocycle.constant(GOLDEN, A), 20_000, 4).rho
    assert abs(rotation_number(cp, 20_000, 4).rho - r0) < 1e-6
    for m in (1, -1, 2):
        cb = conjugate(Cocycle.constant(GOLDEN, A), rotation_series((m,), 1, 0.5))
        r1 = rotation_number(cb, 20_000, 4).rho
        assert abs(((r1 - r0 - m * GOLDEN / 2) + 0.5) % 1.0 - 0.5) < 1e-6


def test_conjugate_shift_law_nonconstant():
    c = random_cocycle(11)
    r0 = rotation_number(c, 50_000, 8)
    for m in (1, 3):
        cb = conjugate(c, rotation_series((m,), 1, 0.5))
        r1 = rotation_number(cb, 50_000, 8)
        err = abs(((r1.rho - r0.rho - m * GOLDEN / 2) + 0.5) % 1.0 - 0.5)
        assert err <= 2 * (r0.error_bound + r1.error_bound)


def test_rho_monotone_in_energy():
    V = Potential.amo(0.3)
    Es = np.linspace(-2.8, 2.8, 41)
    rhos = [schrodinger_rho(V, E, Frequency(GOLDEN), "fast") for E in Es]
    for (r0, e0), (r1, e1) in zip(rhos, rhos[1:]):
        assert r1 <= r0 + e0 + e1
