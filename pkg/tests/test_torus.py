import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpreduce.torus import (MatrixTorusFunction, ScalarTorusFunction, analytic_norm, ck_norm,
                            matrix_exp, plateau_multiplier, rotation_series, smooth_approximant,
                            sup_norm)


def random_series(rng, R, d=1):
    modes = {}
    for n in np.ndindex(*([2 * R + 1] * d)):
        k = tuple(v - R for v in n)
        if k > (0,) * d or k == (0,) * d:
            modes[k] = (rng.normal() + 1j * rng.normal()) / (1 + sum(abs(v) for v in k)) ** 2
    modes[(0,) * d] = modes[(0,) * d].real
    return ScalarTorusFunction.from_modes(modes, d=d)


def test_analytic_norm_examples():
    assert float(analytic_norm(ScalarTorusFunction.zeros(), 0.3)) == 0.0
    f = ScalarTorusFunction.cosine(1.0)
    for h in (0.01, 0.1, 0.5):
        assert np.isclose(float(analytic_norm(f, h)), np.exp(2 * np.pi * h), rtol=1e-14)
    with pytest.raises(ValueError):
        analytic_norm(f, 0.0)


def test_analytic_norm_dominates_grid_sup():
    rng = np.random.default_rng(3)
    f = random_series(rng, 10)
    x = np.linspace(0, 1, 4001)
    assert float(analytic_norm(f, 0.1)) >= np.max(np.abs(f(x)))
    assert float(ck_norm(f, 0)) <= float(analytic_norm(f, 1e-3))


def test_ck_norm_examples():
    assert np.isclose(float(ck_norm(ScalarTorusFunction.constant(-2.5), 3)), 2.5)
    assert np.isclose(float(ck_norm(ScalarTorusFunction.cosine(1.0), 1)), 2 * np.pi, rtol=1e-12)
    f = ScalarTorusFunction.from_modes({1: 0.5, 2: 0.2j, 3: -0.1})
    G = 1 << 16
    fx = f(np.arange(G) / G)
    h = 1.0 / G
    d1 = (np.roll(fx, -1) - np.roll(fx, 1)) / (2 * h)
    d2 = (np.roll(fx, -1) - 2 * fx + np.roll(fx, 1)) / h**2
    fd = max(np.max(np.abs(fx)), np.max(np.abs(d1)), np.max(np.abs(d2)))
    assert abs(float(ck_norm(f, 2, grid_n=G)) - fd) / fd < 1e-6


def test_smooth_approximant_examples():
    c = ScalarTorusFunction.constant(1.7)
    for j in (1, 2, 10):
        assert smooth_approximant(c, j).allclose(c)
    f = ScalarTorusFunction.cosine(1.0)
    for j in (2, 5, 40):
        assert smooth_approximant(f, j).allclose(f)
    rng = np.random.default_rng(5)
    g = random_series(rng, 50)
    fj = smooth_approximant(g, 10)
    # direct kernel application on the tail
    n = np.arange(-50, 51)
    sig = plateau_multiplier(10, np.abs(n))
    direct = g.coeffs * sig
    x = np.linspace(0, 1, 1024, endpoint=False)
    E = np.exp(2j * np.pi * np.outer(x, n))
    tail = np.max(np.abs(E @ (g.coeffs - direct)))
    assert np.isclose(float(sup_norm(fj - g, 1024)), tail, rtol=1e-10)


def test_smoothing_monotone_convergence():
    rng = np.random.default_rng(9)
    f = random_series(rng, 40)
    errs = [float(sup_norm(smooth_approximant(f, j) - f, 512)) for j in range(2, 80, 4)]
    assert np.all(np.diff(errs) <= 1e-14)
    assert errs[-1] < 1e-14


def test_algebra_examples():
    f = ScalarTorusFunction.cosine(1.0)
    assert abs(f.average()) == 0
    alpha = 0.318
    e3 = ScalarTorusFunction.from_modes({3: 1.0}, real=False)
    assert np.isclose(e3.shift(alpha).coeff(3), np.exp(2j * np.pi * 3 * alpha))
    g = ScalarTorusFunction.from_modes({2: 0.3 - 0.1j})
    p = f * g
    assert p.support_radius(1e-15) == 3
    x = np.linspace(0, 1, 97)
    assert np.allclose(p(x), f(x) * g(x), atol=1e-14)
    assert p.truncate(1).support_radius(1e-15) == 1
    with pytest.raises(ValueError):
        f + ScalarTorusFunction.zeros(2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-1, 1))
def test_shift_roundtrip(seed, alpha):
    f = random_series(np.random.default_rng(seed), 6)
    assert f.shift(alpha).shift(-alpha).allclose(f, 1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1.0), st.floats(1e-3, 1.0))
def test_analytic_norm_monotone(seed, h1, h2):
    f = random_series(np.random.default_rng(seed), 5)
    lo, hi = sorted((h1, h2))
    assert float(analytic_norm(f, lo)) <= float(analytic_norm(f, hi))


def test_reality_pairing():
    f = random_series(np.random.default_rng(1), 4)
    c = f.coeffs
    assert np.allclose(c, np.conj(c[::-1]))


def test_matrix_exp_examples():
    Z = MatrixTorusFunction.constant(np.zeros((2, 2)), tag="sl2")
    assert matrix_exp(Z).allclose(MatrixTorusFunction.identity())
    t = 0.7
    D = matrix_exp(MatrixTorusFunction.constant(np.diag([t, -t]), tag="sl2"))
    assert np.allclose(D(np.array([0.2]))[0], np.diag([np.exp(t), np.exp(-t)]), atol=1e-13)
    a = ScalarTorusFunction.from_modes({0: 0.05, 1: 0.03 - 0.01j})
    b = ScalarTorusFunction.from_modes({2: 0.02j})
    f = MatrixTorusFunction.from_entries(a, b, b.scale(-0.5) + a, -a, tag="sl2")
    E = matrix_exp(f, 64)
    x = np.linspace(0, 1, 64, endpoint=False)
    F = f(x)
    taylor = np.broadcast_to(np.eye(2), F.shape).copy()
    term = taylor.copy()
    for k in range(1, 13):
        term = term @ F / k
        taylor = taylor + term
    assert np.max(np.abs(E(x) - taylor)) < 1e-12
    assert E.check_SL2()
    prod = E * matrix_exp(-f, 64)
    assert np.max(np.abs(prod(x) - np.eye(2))) < 1e-10


def test_matrix_exp_refuses_aliasing():
    f = MatrixTorusFunction.from_entries(*(ScalarTorusFunction.from_modes({20: 0.1}),) * 2,
                                         ScalarTorusFunction.from_modes({20: 0.1}),
                                         ScalarTorusFunction.from_modes({20: -0.1}), tag="sl2")
    with pytest.raises(ValueError):
        matrix_exp(f, 64)


def test_serialization_roundtrip_and_order():
    f = random_series(np.random.default_rng(2), 3, d=2)
    data = f.to_dict()
    rows = [tuple(r[:2]) for r in data["modes"]]
    assert rows == sorted(rows)
    g = ScalarTorusFunction.from_dict(json.loads(json.dumps(data)))
    assert g.allclose(f, 0)
    assert set(data) >= {"d", "is_double", "modes"}


def test_doubled_torus():
    b = rotation_series((1,), 1, 0.5)
    assert b.double and b.odd_mass() > 0
    with pytest.raises(ValueError):
        b.to_single()
    sq = b * b
    assert np.allclose(sq(np.array([0.1]))[0], rotation_series((1,), 1, 1.0)(np.array([0.1]))[0])
