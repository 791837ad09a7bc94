import numpy as np
import pytest

from qpreduce.dynamics import (GOLDEN, Cocycle, Frequency, constant_rotation_number, degree, dist_z,
                               rho_diophantine_margin, rotation_number)
from qpreduce.kam import (ChainViolation, KamError, KamSchedule, KamState, SmallDivisorError,
                          conjugacy_oscillation, conjugation_residual, detect_resonance, initial_state,
                          kam_step, pert_size, reduce_chain, reduce_full, solve_cohomological)
from qpreduce.spectrum import Potential, locate_energy_by_rotation, schrodinger_cocycle
from qpreduce.torus import MatrixTorusFunction, ScalarTorusFunction, rotation_matrix

FR = Frequency.golden()


def sl2_mode(n, coeff, which):
    """Real sl2 series with a single mode n in the given slot ('diag' or 'off')."""
    z = ScalarTorusFunction.zeros()
    s = ScalarTorusFunction.from_modes({n: coeff})
    if which == "diag":
        return MatrixTorusFunction.from_entries(s, z, z, -s, tag="sl2")
    return MatrixTorusFunction.from_entries(z, s, s, z, tag="sl2")


def check_modewise(a, g, Y, alpha):
    for n in range(-Y.radius, Y.radius + 1):
        if n == 0:
            continue
        Yn, gn = Y.coeff(n), g.coeff(n)
        lhs = np.exp(2j * np.pi * n * alpha) * Yn @ a - a @ Yn
        assert np.max(np.abs(lhs - a @ gn)) < 1e-13


def test_cohomological_zero():
    z = MatrixTorusFunction.constant(np.zeros((2, 2)), tag="sl2")
    sol = solve_cohomological(rotation_matrix(0.2), z, FR, 4)
    assert pert_size(sol.Y) == 0.0 and sol.residual == 0.0


def test_cohomological_rotation_offdiagonal_closed_form():
    phi, n = 0.137, 3
    a = rotation_matrix(phi)
    g = sl2_mode(n, 1e-3 * (1 + 0.5j), "off")
    sol = solve_cohomological(a, g, FR, 5)
    assert sol.residual < 1e-12
    check_modewise(a, g, sol.Y, GOLDEN)
    # eigenbasis of R_phi: a = U diag(e^{2 pi i phi}, e^{-2 pi i phi}) U^{-1}
    U = np.array([[1, 1], [-1j, 1j]]) / np.sqrt(2)
    Ui = np.linalg.inv(U)
    gt = Ui @ g.coeff(n) @ U
    Yt = Ui @ sol.Y.coeff(n) @ U
    w = 2 * np.pi * n * GOLDEN
    assert np.isclose(Yt[0, 1], gt[0, 1] / (np.exp(1j * (w - 4 * np.pi * phi)) - 1), atol=1e-15)
    assert np.isclose(Yt[1, 0], gt[1, 0] / (np.exp(1j * (w + 4 * np.pi * phi)) - 1), atol=1e-15)


def test_cohomological_diagonal_closed_form():
    n = 2
    a = np.eye(2)
    g = sl2_mode(n, 2e-3 - 1e-3j, "diag")
    sol = solve_cohomological(a, g, FR, 3)
    assert sol.residual < 1e-12
    assert np.isclose(sol.Y.coeff(n)[0, 0], g.coeff(n)[0, 0] / (np.exp(2j * np.pi * n * GOLDEN) - 1))


def test_cohomological_floor_raises_with_mode():
    phi = (3 * GOLDEN / 2) % 1.0
    g = sl2_mode(3, 1e-3, "off")
    with pytest.raises(SmallDivisorError) as err:
        solve_cohomological(rotation_matrix(phi), g, FR, 5, denom_floor=1e-3)
    assert abs(err.value.mode[0]) == 3


def test_detect_resonance_examples():
    a = rotation_matrix(0.49 / 2)
    thr = 1e-3 ** 0.1
    ms = np.arange(1, 11)
    far = np.all(dist_z(0.49 - np.concatenate([ms, -ms]) * GOLDEN) >= thr)
    assert (detect_resonance(a, FR, 1e-3, 10, sigma=0.1) is None) == far
    a3 = rotation_matrix(((3 * GOLDEN) % 1.0) / 2)
    for eps in (0.9, 1e-3, 1e-12):
        hit = detect_resonance(a3, FR, eps, 10, sigma=0.1)
        assert hit is not None and hit[0] == (3,)
    assert detect_resonance(np.eye(2), FR, 1e-6, 50, sigma=0.75) is None


def test_detect_resonance_tie_lexicographic():
    # 2 rho = 0 exactly: m and -m are equally distant; the smaller mode wins
    fr = Frequency(GOLDEN)
    a = rotation_matrix(0.5 * 1e-9)
    hit = detect_resonance(a, fr, 0.5, 3, sigma=1.0)
    assert hit is None or hit[0][0] < 0 or hit[1] < dist_z(1e-9 + hit[0][0] * GOLDEN)


def test_schedule_invariants():
    s = KamSchedule()
    ls = [s.l(j) for j in range(1, 4)]
    assert all(x < y for x, y in zip(ls, ls[1:]))
    assert all(s.eps(m) > s.eps(m + 1) for m in range(1, 50))
    assert all(s.N(j) > 0 for j in range(1, 3))
    with pytest.raises(ValueError):
        KamSchedule(M=5)


def state_for(a, f):
    return KamState(np.asarray(a, float), f, MatrixTorusFunction.identity(1, double=True), (0,), 0,
                    [pert_size(f)], [])


def test_kam_step_zero():
    z = MatrixTorusFunction.constant(np.zeros((2, 2)), tag="sl2")
    st = state_for(rotation_matrix(0.3), z)
    out = kam_step(st, KamSchedule(), FR)
    assert out.kind == "nonresonant" and out.new_state is st
    assert out.step_conj.allclose(MatrixTorusFunction.identity(1, double=True))


def test_kam_step_nonresonant_quadratic():
    a = rotation_matrix(0.2)
    f = sl2_mode(1, 1e-6, "off") + sl2_mode(2, 5e-7j, "diag")
    st = state_for(a, f)
    out = kam_step(st, KamSchedule(), FR)
    assert out.kind == "nonresonant"
    assert out.new_state.eps <= 1e-9
    c = Cocycle(FR, st.cocycle(FR).amap)
    assert conjugation_residual(out.new_state, c) < 1e-12


@pytest.mark.parametrize("m", [1, -2])
def test_kam_step_resonant(m):
    phi = ((m * GOLDEN) % 1.0) / 2
    a = rotation_matrix(phi)
    f = sl2_mode(1, 1e-4, "off") + sl2_mode(2, 5e-5, "diag")  # truncation radius covers |m|
    st = state_for(a, f)
    out = kam_step(st, KamSchedule(), FR)
    assert out.kind == "resonant" and out.mode == (m,)
    ns = out.new_state
    assert ns.deg_accum == (m,)
    assert degree(ns.b_accum) == (m,)
    r = constant_rotation_number(ns.a_const)
    assert dist_z(2 * r) < 1e-4 ** 0.1
    c = Cocycle(FR, st.cocycle(FR).amap)
    assert conjugation_residual(ns, c) < 1e-10
    # rotation-number bookkeeping (column convention: rho_orig - <deg, alpha>/2 = rho_new)
    r0 = rotation_number(c, 20_000, 8).rho
    r1 = rotation_number(ns.cocycle(FR), 20_000, 8).rho
    assert abs(((r0 - m * GOLDEN / 2 - r1) + 0.5) % 1.0 - 0.5) < 1e-4


def test_reduce_chain_zero_perturbation():
    c = Cocycle.constant(FR, rotation_matrix(0.3))
    st = reduce_chain(c, KamSchedule(), "diophantine_rho")
    assert st.step_index == 0
    assert st.b_accum.allclose(MatrixTorusFunction.identity(1, double=True), 1e-14)


def amo_dc_energy(lam, gamma):
    V = Potential.amo(lam)
    target = 0.155  # inside the band, away from every gap label up to |m| = 100
    margin, _ = rho_diophantine_margin(target, FR, gamma, 2.0, 100)
    assert margin >= 1.0
    E, _ = locate_energy_by_rotation(V, target, (-2.2, 2.2), tol_e=1e-10, freq=FR, quality="default")
    return V, E


def test_reduce_chain_amo_diophantine():
    V, E = amo_dc_energy(0.01, 0.1)
    c = schrodinger_cocycle(V, E, FR)
    st = reduce_chain(c, KamSchedule(), "diophantine_rho", 0.1, 2.0)
    assert st.eps < 1e-12
    assert conjugation_residual(st, c) < 1e-8
    assert np.max(np.abs(st.b_accum.grid_values(256) - np.eye(2)).reshape(-1, 4).max(1)) < 0.1 + 1e-12 \
        or conjugacy_oscillation(st) < 0.1
    for r in st.telemetry[1:]:
        assert r["eps_out"] <= r["eps_in"] ** 1.4
        assert r["kind"] == "nonresonant"


def test_reduce_chain_rejects_resonant_rho():
    # an energy in the m = 1 gap neighbourhood: 2 rho = alpha exactly is not Diophantine
    c = schrodinger_cocycle(ScalarTorusFunction.zeros(), 2 * np.cos(np.pi * GOLDEN), FR)
    with pytest.raises(ChainViolation):
        reduce_chain(c, KamSchedule(), "diophantine_rho", 0.05, 2.0)
    with pytest.raises(ValueError):
        reduce_chain(c, KamSchedule(), "bogus")


def test_reduce_full_trivial_constant():
    phi = 0.5 * (np.sqrt(2) - 1)
    st, rep = reduce_full(Cocycle.constant(FR, rotation_matrix(phi)), KamSchedule())
    assert rep.branch == "diophantine" and rep.deg_accum == (0,)
    assert np.allclose(st.a_const, rotation_matrix(phi), atol=1e-12)


def test_reduce_full_diophantine_amo():
    V, E = amo_dc_energy(0.01, 0.1)
    c = schrodinger_cocycle(V, E, FR)
    st, rep = reduce_full(c, KamSchedule(), ("diophantine", 0.1, 2.0))
    assert rep.branch == "diophantine" and rep.classification == "elliptic"
    assert rep.residual < 1e-8
    R = rotation_matrix(rep.rho_const)
    assert np.allclose(st.a_const, R, atol=1e-12)


def test_reduce_full_rational_amo_edge():
    from qpreduce.spectrum import refine_edge_by_reduction
    E0 = 2 * np.cos(np.pi * GOLDEN)  # the m = 1 gap of the free operator collapses here
    edge = refine_edge_by_reduction(Potential.amo(0.01), FR, (1,), (E0 - 0.05, E0))
    c = schrodinger_cocycle(Potential.amo(0.01), edge.E, FR)
    st, rep = reduce_full(c, KamSchedule(), ("rational", (1,)))
    assert rep.branch == "rational"
    assert rep.classification in ("parabolic", "identity")
    assert dist_z(rep.rho_const) < 1e-6
    assert rep.residual < 1e-8
    ev = np.linalg.eigvals(st.a_const)
    assert np.allclose(np.abs(ev), 1.0, atol=1e-4)


def test_initial_state_far_from_constant():
    c = schrodinger_cocycle(Potential.amo(3.0), 0.0, FR)
    st = initial_state(c)
    with pytest.raises((ChainViolation, KamError)):
        reduce_chain(c, KamSchedule(), "zero_rho", state=st)
