"""Property-based acceptance checks with analytically forced anchors.

Each ``check_*`` function returns a ``CheckResult`` with the measured metrics,
the thresholds they are compared against and the verdict.  Wall-clock times are
kept apart (``timing``) so that the metric payload is reproducible bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import duality, gapopen
from .dynamics import (Cocycle, Frequency, conjugate, degree, dist_z, rho_diophantine_margin,
                       rotation_number)
from .kam import (KamSchedule, conjugacy_oscillation, conjugation_residual, constant_rotation_number,
                  initial_state, kam_step, reduce_chain, reduce_full, solve_cohomological, ad_matrix,
                  KamState, classify_constant)
from .spectrum import (Potential, locate_energy_by_rotation, refine_edge_by_reduction,
                       refine_energy_by_reduction, scan_spectrum, schrodinger_cocycle, schrodinger_rho)
from .torus import (MatrixTorusFunction, ScalarTorusFunction, analytic_norm, ck_norm, matrix_exp,
                    rotation_matrix, rotation_series, smooth_approximant, sup_norm)


@dataclass
class CheckResult:
    cid: int
    name: str
    passed: bool
    metrics: dict
    thresholds: dict
    timing: dict = field(default_factory=dict)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] criterion {self.cid}: {self.name} | " + ", ".join(
            f"{k}={_fmt(v)}" for k, v in self.metrics.items() if not isinstance(v, (list, dict)))

    def to_dict(self):
        return {"id": self.cid, "name": self.name, "passed": self.passed, "metrics": self.metrics,
                "thresholds": self.thresholds}


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


def _random_sl2_series(rng, radius, amp, d=1):
    """Real trace-free trigonometric polynomial with coefficients of size ~amp."""
    R = radius
    shape = (2, 2) + (2 * R + 1,) * d
    c = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * amp
    c[1, 1] = -c[0, 0]
    # impose f(-n) = conj f(n) so the series is real
    flip = c[(slice(None), slice(None)) + (slice(None, None, -1),) * d].conj()
    c = 0.5 * (c + flip)
    return MatrixTorusFunction(c, double=False, real=True, tag="sl2")


# -- 1 ------------------------------------------------------------------------------

def check_rotation_anchors(n_iters=100_000, n_phases=32, tol=1e-5, t_max=10.0) -> CheckResult:
    fr = Frequency.golden()
    t0 = time.perf_counter()
    errs_r = []
    for phi in np.linspace(0.05, 0.95, 7):
        c = Cocycle(fr, MatrixTorusFunction.constant(rotation_matrix(phi), tag="SL2"))
        errs_r.append(float(dist_z(rotation_number(c, n_iters, n_phases).rho - phi)))
    errs_s = []
    V0 = ScalarTorusFunction.zeros(1)
    for E in np.linspace(-2.0, 2.0, 21):
        exact = np.arccos(E / 2.0) / (2 * np.pi)
        rho, _ = schrodinger_rho(V0, E, fr, {"n_iters": n_iters, "n_phases": n_phases})
        errs_s.append(abs(rho - exact))
    dt = time.perf_counter() - t0
    m = {"max_err_rotation": max(errs_r), "max_err_free": max(errs_s)}
    ok = max(errs_r) < tol and max(errs_s) < tol and dt < t_max
    return CheckResult(1, "rotation-number anchors", ok, m,
                       {"abs_err": tol, "runtime_s": t_max, "n_iters": n_iters, "n_phases": n_phases},
                       {"runtime_s": dt})


# -- 2 ------------------------------------------------------------------------------

def _test_conjugacy(rng, m):
    Y = _random_sl2_series(rng, 2, 0.03)
    b = rotation_series((int(m),), 1, 0.5) * matrix_exp(Y, 64).to_double()
    b = b.trim(1e-15)
    b.tag = "SL2"
    return b


def _base_cocycles(fr):
    rng = np.random.default_rng(11)
    pert = matrix_exp(_random_sl2_series(rng, 2, 0.05), 64)
    c3 = MatrixTorusFunction.constant(rotation_matrix(0.23), tag="SL2") * pert
    c3.tag = "SL2"
    return [schrodinger_cocycle(Potential.amo(0.05), 0.3, fr),
            schrodinger_cocycle(Potential.amo(0.5), 1.2, fr),
            Cocycle(fr, MatrixTorusFunction.constant(rotation_matrix(0.17), tag="SL2")),
            Cocycle(fr, c3),
            Cocycle(fr, MatrixTorusFunction.constant(np.array([[1.5, 0.0], [0.0, 1 / 1.5]]), tag="SL2"))]


def check_degree_law(n_conj=20, n_products=50, tol=2e-5, n_iters=20_000, n_phases=8, seed=2) -> CheckResult:
    fr = Frequency.golden()
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    bases = _base_cocycles(fr)
    rho0 = [rotation_number(c, n_iters, n_phases).rho for c in bases]
    worst = 0.0
    for _ in range(n_conj):
        m = int(rng.integers(-3, 4))
        b = _test_conjugacy(rng, m)
        dg = degree(b)[0]
        for c, r0 in zip(bases, rho0):
            r1 = rotation_number(conjugate(c, b), n_iters, n_phases).rho
            worst = max(worst, float(dist_z(r1 - r0 - dg * fr.vec[0] / 2.0)))
    add_fail = 0
    for _ in range(n_products):
        m1, m2 = (int(v) for v in rng.integers(-3, 4, 2))
        b1, b2 = _test_conjugacy(rng, m1), _test_conjugacy(rng, m2)
        d1, d2, d12 = degree(b1)[0], degree(b2)[0], degree(b1 * b2)[0]
        if d1 != m1 or d2 != m2 or d12 != d1 + d2:
            add_fail += 1
    dt = time.perf_counter() - t0
    ok = worst < tol and add_fail == 0
    return CheckResult(2, "conjugacy/degree law", ok,
                       {"max_shift_err": worst, "additivity_failures": add_fail},
                       {"shift_err": tol, "n_iters": n_iters, "n_phases": n_phases}, {"runtime_s": dt})


# -- 3 ------------------------------------------------------------------------------

def check_cohomological(n_cases=100, tol=1e-12, seed=3, min_denominator=1e-3) -> CheckResult:
    fr = Frequency.golden()
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    skipped = 0
    while done < n_cases:
        phi = rng.uniform(0.02, 0.48)
        a = rotation_matrix(phi)
        n = int(rng.integers(1, 51)) * int(rng.choice([-1, 1]))
        coef = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) * 0.1
        coef[1, 1] = -coef[0, 0]
        c = np.zeros((2, 2, 2 * abs(n) + 1), dtype=complex)
        c[:, :, abs(n) + n] = coef
        c[:, :, abs(n) - n] = coef.conj()
        g = MatrixTorusFunction(c, tag="sl2")
        lam = np.linalg.eigvals(ad_matrix(a))
        den = np.min(np.abs(np.exp(2j * np.pi * n * fr.vec[0]) * lam - 1))
        if den < min_denominator:
            skipped += 1
            continue
        sol = solve_cohomological(a, g, fr, abs(n))
        worst = max(worst, sol.residual)
        done += 1
    return CheckResult(3, "cohomological solver", worst < tol,
                       {"max_residual": worst, "cases": done, "resampled_resonant": skipped},
                       {"residual": tol, "min_denominator": min_denominator})


# -- 4 ------------------------------------------------------------------------------

KAM_ENERGIES = (-1.4, -0.4, 0.0, 0.4, 1.4)


def check_kam_contraction(energies=KAM_ENERGIES, lam=0.01, gamma=0.05, tau=2.0, dc_radius=100,
                          exponent=1.4, resid_tol=1e-8, osc_tol=0.1, t_max=60.0) -> CheckResult:
    fr = Frequency.golden()
    sched = KamSchedule()
    V = Potential.amo(lam)
    rows = []
    ok = True
    times = {}
    for E in energies:
        t0 = time.perf_counter()
        c = schrodinger_cocycle(V, E, fr)
        rho, _ = schrodinger_rho(V, E, fr, "fine")
        margin, _ = rho_diophantine_margin(rho, fr, gamma, tau, dc_radius)
        st0 = initial_state(c)
        N1 = 8
        ms = np.arange(1, N1 + 1)
        init_gap = float(np.min(dist_z(np.concatenate([2 * rho - ms * fr.vec[0], 2 * rho + ms * fr.vec[0]]))))
        row = {"E": E, "rho": rho, "dc_margin": margin, "initial_resonance_distance": init_gap,
               "initial_threshold": sched.resonance_threshold(st0.eps)}
        try:
            st = reduce_chain(c, sched, "diophantine_rho", gamma, tau, state=st0)
            tel = st.telemetry
            worst = max([np.log(r["eps_out"]) / np.log(r["eps_in"]) for r in tel[1:]
                         if r["eps_out"] > 0], default=np.inf)
            contr = all(r["eps_out"] <= r["eps_in"] ** exponent for r in tel[1:])
            res = conjugation_residual(st, c)
            osc = conjugacy_oscillation(st)
            row.update(steps=len(tel), min_contraction_exponent=float(worst), residual=res, oscillation=osc)
            good = contr and res < resid_tol and osc < osc_tol and margin >= 1.0
        except Exception as err:  # reported, not hidden
            row.update(error=str(err))
            good = False
        dt = time.perf_counter() - t0
        times[f"E={E}"] = dt
        good = good and dt < t_max
        row["passed"] = good
        ok = ok and good
        rows.append(row)
    return CheckResult(4, "KAM contraction (AMO, lambda=0.01)", ok,
                       {"energies": rows, "n_energies": len(rows),
                        "worst_residual": max(r.get("residual", np.inf) for r in rows)},
                       {"exponent": exponent, "residual": resid_tol, "oscillation": osc_tol,
                        "runtime_s_per_energy": t_max, "dc": [gamma, tau, dc_radius]}, times)


# -- 5 ------------------------------------------------------------------------------

def check_resonant_bookkeeping(modes=(1, 2, 3, -1, -2, -3), tol=1e-4, seed=5) -> CheckResult:
    fr = Frequency.golden()
    rng = np.random.default_rng(seed)
    sched = KamSchedule()
    rows = []
    ok = True
    for m in modes:
        a = rotation_matrix(m * fr.vec[0] / 2.0 + 1e-7)
        f = _random_sl2_series(rng, 3, 1.0)
        f = f.scale(1e-8 / max(f.size(), 1e-300))
        f.tag = "sl2"
        st = KamState(a, f, MatrixTorusFunction.identity(1, double=True), (0,), 0, [f.size()], [])
        out = kam_step(st, sched, fr)
        r2 = float(dist_z(2 * constant_rotation_number(out.new_state.a_const)))
        good = (out.kind == "resonant" and tuple(out.mode) == (m,)
                and tuple(out.new_state.deg_accum) == (m,) and r2 < tol)
        rows.append({"m": m, "kind": out.kind, "mode": None if out.mode is None else list(out.mode),
                     "deg": list(out.new_state.deg_accum), "two_rho_post": r2})
        ok = ok and good
    return CheckResult(5, "resonant bookkeeping", ok, {"cases": rows,
                                                       "max_two_rho_post": max(r["two_rho_post"] for r in rows)},
                       {"two_rho": tol})


# -- 6 ------------------------------------------------------------------------------

def find_edge(lam=0.3, m=(1,), side="left", n_grid=128):
    """Scan, locate the gap labelled m and refine the requested edge by reduction."""
    fr = Frequency.golden()
    V = Potential.amo(lam)
    sc = scan_spectrum(V, (-2 - 2 * lam - 0.2, 2 + 2 * lam + 0.2), n_grid, "fast", fr)
    gaps = [g for g in sc.gaps if g.label == tuple(m)]
    if not gaps:
        raise RuntimeError(f"no gap labelled {m} found by the scan")
    g = gaps[0]
    E_in = g.lo if side == "left" else g.hi
    brk = (E_in - sc.step, E_in) if side == "left" else (E_in + sc.step, E_in)
    res = refine_edge_by_reduction(V, fr, m, brk)
    return V, fr, g, res


def check_rational_branch(lam=0.3, rho_tol=1e-6, edge=None) -> CheckResult:
    t0 = time.perf_counter()
    V, fr, g, res = edge or find_edge(lam)
    c = schrodinger_cocycle(V, res.E, fr)
    st, rep = reduce_full(c, KamSchedule(), ("rational", (1,)))
    rho_bar = float(dist_z(constant_rotation_number(st.a_const)))
    cls = classify_constant(st.a_const, tol=1e-6)
    ok = rho_bar < rho_tol and cls in ("parabolic", "identity")
    return CheckResult(6, "rational branch at the m=1 edge (lambda=0.3)", ok,
                       {"E": res.E, "gap": [g.lo, g.hi], "rho_bar": rho_bar, "classification": cls,
                        "deg": list(rep.deg_accum), "residual": rep.residual,
                        "trace": float(np.trace(st.a_const))},
                       {"rho": rho_tol}, {"runtime_s": time.perf_counter() - t0})


# -- 7 ------------------------------------------------------------------------------

def dual_eigenfunction(lam, phase, m, radius=64):
    fr = Frequency.golden()
    V = Potential.amo(lam)
    target = (phase + m * fr.vec[0]) % 1.0
    if target > 0.5:
        target = 1.0 - target
    E0, _ = locate_energy_by_rotation(V, target, (-2 - 2 * lam - 0.1, 2 + 2 * lam + 0.1), tol_e=1e-6,
                                      freq=fr, quality="default")
    E, rho, st, rep = refine_energy_by_reduction(V, target, E0, fr)
    ef = duality.extract_eigenfunction(st, m, phase, V, E, fr, radius=radius)
    return V, fr, E, st, ef


def check_duality(lam=0.05, phase=0.1, sites=(0, 1, 3), radius=64, overlap_min=0.999, ev_tol=1e-6,
                  decay_min=4.0) -> CheckResult:
    fr = Frequency.golden()
    margin, _ = rho_diophantine_margin(phase, fr, 0.05, 2.0, 1000)
    rows = []
    ok = margin >= 1.0
    for m in sites:
        V, fr, E, st, ef = dual_eigenfunction(lam, phase, m, radius)
        op = duality.dual_operator(V, 1.0, fr, phase)
        o = duality.match_oracle(ef, op, radius)
        dec = duality.fit_decay_exponent(ef)
        good = (o["overlap"] >= overlap_min and o["eigenvalue_mismatch"] < ev_tol
                and ef.norm >= ef.norm_bound and dec >= decay_min)
        rows.append({"m": m, "E": E, "center": list(ef.center), "overlap": o["overlap"],
                     "eigenvalue_mismatch": o["eigenvalue_mismatch"], "norm": ef.norm,
                     "norm_bound": ef.norm_bound, "decay_exponent": dec, "residual": ef.residual})
        ok = ok and good
    return CheckResult(7, "duality localization (AMO lambda=0.05, phi=0.1)", ok,
                       {"phase_dc_margin": margin, "sites": rows,
                        "min_overlap": min(r["overlap"] for r in rows),
                        "max_eigenvalue_mismatch": max(r["eigenvalue_mismatch"] for r in rows),
                        "min_decay_exponent": min(r["decay_exponent"] for r in rows)},
                       {"overlap": overlap_min, "eigenvalue": ev_tol, "decay": decay_min,
                        "phase_dc": [0.05, 2.0, 1000]})


# -- 8 ------------------------------------------------------------------------------

COUNTING_REGRESSION = 0.744140625


def check_counting(lam=0.05, radius=64, C=4.0, eps=0.2, n_phases=8, threshold=0.9) -> CheckResult:
    op = duality.dual_operator(Potential.amo(lam), 1.0, Frequency.golden(), 0.0)
    frac, per = duality.pp_counting_check(op, radius, C, eps, radius, n_phases)
    # an eigenvector centred at |c| >= (1 - eps) N violates the tail bound at c itself,
    # so at most the (2(1-eps)N + 1)^d centres inside can be good
    ceiling = (2 * np.floor((1 - eps) * radius) + 1) / (2.0 * radius)
    return CheckResult(8, "counting surrogate", frac >= threshold,
                       {"fraction": frac, "per_phase": per, "structural_ceiling": float(ceiling)},
                       {"fraction": threshold, "C": C, "eps": eps, "radius": radius})


# -- 9 ------------------------------------------------------------------------------

def check_gap_opening(edge=None, lyap_factor=2.0) -> CheckResult:
    t0 = time.perf_counter()
    one = ScalarTorusFunction.constant(1.0)
    # (a) free Laplacian at E = 2
    V0 = ScalarTorusFunction.zeros(1)
    fr = Frequency.golden()
    st, _ = reduce_full(schrodinger_cocycle(V0, 2.0, fr), KamSchedule(), ("rational", (0,)))
    nf = gapopen.normal_form_at_edge(V0, 2.0, st, fr)
    pr = gapopen.predict_opening(gapopen.mp_averages(nf, one), nf.c_offdiag, nf.sign)
    va = gapopen.verify_opening(V0, 2.0, one, [-1e-3, 1e-3], pr, fr)
    ok_a = va[0]["uh"] and not va[1]["uh"]
    # (b) AMO lambda = 0.3 at the m = 1 edge
    V, fr, g, res = edge or find_edge(0.3)
    nfb = gapopen.normal_form_at_edge(V, res.E, res.state, fr)
    prb = gapopen.predict_opening(gapopen.mp_averages(nfb, one), nfb.c_offdiag, nfb.sign)
    vb = gapopen.verify_opening(V, res.E, one, [1e-3, -1e-3, 1e-4, -1e-4], prb, fr)
    ok_b_sign = all(r["agree"] for r in vb)
    rate = [r for r in vb if abs(r["t"]) == 1e-4 and r.get("predicted")]
    ratio = rate[0]["lyap"] / rate[0]["rate_prediction"] if rate else np.nan
    ok_b = ok_b_sign and bool(rate) and 1 / lyap_factor <= ratio <= lyap_factor
    # (c) collapsed gap of the free Laplacian, W = cos 2 pi theta
    Vc, Ec, nfc = gapopen.synthetic_collapsed_edge(fr)
    W = ScalarTorusFunction.cosine(1.0, 1)
    dc = gapopen.mp_averages(nfc, W)
    prc = gapopen.predict_opening(dc, nfc.c_offdiag, nfc.sign)
    vc = gapopen.verify_opening(Vc, Ec, W, [-1e-3, 1e-3], prc, fr)
    ok_c = nfc.c_offdiag == 0.0 and dc.d_tilde < 0 and all(r["uh"] for r in vc)
    m = {"a": {"c": nf.c_offdiag, "sign": nf.sign, "a1": pr.rate, "verdicts": va, "passed": bool(ok_a)},
         "b": {"E": res.E, "c": nfb.c_offdiag, "sign": nfb.sign, "rate": prb.rate,
               "opens_for_sign": prb.opens_for_sign, "verdicts": vb, "lyap_ratio": float(ratio),
               "passed": bool(ok_b)},
         "c": {"E": Ec, "d_tilde": dc.d_tilde, "verdicts": vc, "passed": bool(ok_c)},
         "lyap_ratio": float(ratio)}
    return CheckResult(9, "gap opening", bool(ok_a and ok_b and ok_c), m,
                       {"lyap_factor": lyap_factor, "t": [1e-3, 1e-4]}, {"runtime_s": time.perf_counter() - t0})


# -- 10 -----------------------------------------------------------------------------

def smoothing_corpus(k, n_funcs=10, radius=96, seed=7):
    rng = np.random.default_rng(seed)
    out = []
    n = np.arange(1, radius + 1)
    for _ in range(n_funcs):
        amp = rng.uniform(0.5, 1.0, radius) * (1.0 + n) ** (-(k + 2.0))
        ph = rng.uniform(0, 1, radius)
        modes = {(int(m),): 0.5 * a * np.exp(2j * np.pi * p) for m, a, p in zip(n, amp, ph)}
        out.append(ScalarTorusFunction.from_modes(modes, d=1))
    return out


def smoothing_ratios(f, k, j_range=(2, 64)):
    fk = float(ck_norm(f, k))
    jr = range(j_range[0], j_range[1] + 1)
    diff = max(float(analytic_norm(smooth_approximant(f, j + 1) - smooth_approximant(f, j), 1.0 / (j + 1)))
               * j ** k / fk for j in jr)
    size = max(float(analytic_norm(smooth_approximant(f, j), 1.0 / j)) / fk for j in jr)
    errs = [float(sup_norm(smooth_approximant(f, j) - f)) for j in jr]
    mono = all(errs[i + 1] <= errs[i] + 1e-15 for i in range(len(errs) - 1))
    return diff, size, mono


def check_smoothing(ks=(4, 8), spread_max=2.0) -> CheckResult:
    ok = True
    m = {}
    for k in ks:
        rs, ss, mono = [], [], True
        for f in smoothing_corpus(k):
            d, s, mo = smoothing_ratios(f, k)
            rs.append(d)
            ss.append(s)
            mono = mono and mo
        spread = max(rs) / min(rs)
        m[f"k{k}"] = {"diff_ratio_sup": max(rs), "size_ratio_sup": max(ss), "spread": spread,
                      "monotone": mono}
        ok = ok and np.all(np.isfinite(rs)) and spread < spread_max and mono
    m["max_spread"] = max(m[f"k{k}"]["spread"] for k in ks)
    return CheckResult(10, "smoothing bounds", bool(ok), m, {"spread": spread_max, "j": [2, 64]})


CHECKS = {
    1: check_rotation_anchors, 2: check_degree_law, 3: check_cohomological, 4: check_kam_contraction,
    5: check_resonant_bookkeeping, 6: check_rational_branch, 7: check_duality, 8: check_counting,
    9: check_gap_opening, 10: check_smoothing,
}


def run_checks(ids=None):
    """Run the requested checks (default: 1-10), sharing the gap-edge computation."""
    ids = sorted(CHECKS) if ids is None else sorted(ids)
    edge = find_edge(0.3) if (6 in ids or 9 in ids) else None
    out = []
    for i in ids:
        fn = CHECKS[i]
        out.append(fn(edge=edge) if i in (6, 9) else fn())
    return out
