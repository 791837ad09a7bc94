"""KAM reduction of quasi-periodic SL(2,R) cocycles close to constants.

Convention: a state records a conjugacy b on the doubled torus with

    b(theta + alpha)^{-1} . C(theta) . b(theta) = a_const . exp(f_pert(theta)),

where C is the original cocycle map.  A resonant step at mode m multiplies b by
P R_{<m, theta>/2} (degree +m on the doubled torus) and lowers rho by <m, alpha>/2,
so the bookkeeping identity reads  rho(C) = rho(a e^f) + <deg_accum, alpha>/2 (mod 1).

Each step solves the linearised equation mode by mode and then recomputes the
new perturbation exactly (pointwise matrix logarithm on a grid), so the reported
sizes are measured rather than estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (Cocycle, Frequency, as_frequency, constant_rotation_number, dist_z,
                       rho_diophantine_margin, rotation_number)
from .torus import (MatrixTorusFunction, expm_sl2, logm_sl2, matrix_exp, mode_grid,
                    mode_maxnorm, rotation_matrix)


# coefficients below this are round-off from grid transforms of O(1) matrices
COEFF_FLOOR = 5e-17
NONELLIPTIC_FLOOR = 1e-12  # singularity guard for divisors of non-elliptic constants


class KamError(RuntimeError):
    pass


class SmallDivisorError(KamError):
    def __init__(self, mode, denom):
        super().__init__(f"denominator {denom:.3e} below floor at mode {mode}")
        self.mode = mode
        self.denom = denom


class ChainViolation(KamError):
    pass


@dataclass
class KamSchedule:
    """Schedule constants plus the numerical knobs of the engine.

    The first five fields define the scales l_j, eps_m, N_j.  The remaining
    fields are the tuned, desk-scale thresholds actually used by the steps.
    """

    M: int = 10
    c_const: float = 1e-2
    D_const: float = 2.0
    k: int = 8
    normA: float = 2.0
    sigma: float = 0.75           # resonance iff ||2 rho - <m,alpha>|| < eps**sigma
    resonance_cap: float = 0.25   # threshold never exceeds this
    contraction_exponent: float = 1.25
    noise_floor: float = 1e-13
    target_eps: float = 1e-12
    max_steps: int = 40
    n_cap: int = 512
    grid_cap: int = 8192
    chain_threshold: float = 0.05
    switch_eps: float = 1e-6
    switch_power: float = 1.0
    tol_conj: float = 1e-8

    def __post_init__(self):
        if self.M < 10 or self.c_const <= 0 or self.D_const <= 0 or self.normA <= 0:
            raise ValueError("invalid schedule constants")

    def l(self, j: int) -> float:
        return float(self.M) ** (2 ** (j - 1))

    def eps(self, m: float) -> float:
        return self.c_const / ((2 * self.normA) ** self.D_const * m ** (self.k / 4))

    def N(self, j: int) -> int:
        lj, lj1 = self.l(j), self.l(j + 1)
        return int(math.ceil(2.0 / (1.0 / lj - 1.0 / lj1) * math.log(1.0 / self.eps(lj))))

    def degree_bound(self, j: int) -> float:
        lj = self.l(j)
        return 4 * lj * math.log(1.0 / self.eps(lj))

    def resonance_threshold(self, eps: float) -> float:
        return min(max(eps, 1e-300) ** self.sigma, self.resonance_cap)

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class KamState:
    a_const: np.ndarray
    f_pert: MatrixTorusFunction
    b_accum: MatrixTorusFunction
    deg_accum: tuple
    step_index: int = 0
    eps_history: list = field(default_factory=list)
    telemetry: list = field(default_factory=list)

    @property
    def eps(self) -> float:
        return pert_size(self.f_pert)

    def cocycle(self, freq) -> Cocycle:
        amap = self.a_const @ matrix_exp(self.f_pert, _grid_for(self.f_pert.radius, 0, self.f_pert.d))
        return Cocycle(as_frequency(freq), _sl2_renorm(amap))


@dataclass
class StepOutcome:
    kind: str                 # "nonresonant", "resonant" or "halted"
    step_conj: MatrixTorusFunction
    new_state: KamState
    mode: tuple | None = None
    reason: str | None = None


# -- helpers ------------------------------------------------------------------------

def pert_size(f: MatrixTorusFunction) -> float:
    """Coefficient majorant sum_n ||f_n||_F, an upper bound for the sup of |f|."""
    c = np.abs(f.coeffs)
    return float(np.sum(np.sqrt(np.sum(c ** 2, axis=(0, 1)))))


def _next_pow2(x):
    return 1 << int(math.ceil(math.log2(max(x, 2))))


def _grid_for(R, extra, d, cap=8192):
    G = _next_pow2(max(64, 4 * (R + extra) + 16))
    return min(G, cap if d == 1 else min(cap, 256))


def _sl2_renorm(F: MatrixTorusFunction) -> MatrixTorusFunction:
    F.tag = "SL2"
    return F


def tail_radius(f: MatrixTorusFunction, tol: float) -> int:
    """Smallest r with sum_{|n| > r} ||f_n||_F <= tol."""
    mag = np.sqrt(np.sum(np.abs(f.coeffs) ** 2, axis=(0, 1)))
    nm = mode_maxnorm(f.radius, f.d)
    per_shell = np.bincount(nm.ravel(), weights=mag.ravel(), minlength=f.radius + 1)
    tails = np.cumsum(per_shell[::-1])[::-1]  # tails[r] = mass on |n| >= r
    for r in range(f.radius + 1):
        nxt = tails[r + 1] if r + 1 <= f.radius else 0.0
        if nxt <= tol:
            return r
    return f.radius


def _sl2_vec(X):
    """(X11, X12, X21) components, leading axes kept."""
    return np.stack([X[0, 0], X[0, 1], X[1, 0]])


def _sl2_mat(v):
    return np.stack([np.stack([v[0], v[1]]), np.stack([v[2], -v[0]])])


def ad_matrix(a: np.ndarray) -> np.ndarray:
    """3x3 matrix of X -> a^{-1} X a on sl(2) in the basis (E11-E22, E12, E21)."""
    ainv = np.linalg.inv(a)
    basis = [np.array([[1.0, 0], [0, -1]]), np.array([[0, 1.0], [0, 0]]), np.array([[0, 0], [1.0, 0]])]
    cols = [(lambda Y: np.array([Y[0, 0], Y[0, 1], Y[1, 0]]))(ainv @ E @ a) for E in basis]
    return np.stack(cols, axis=1)


def classify_constant(a: np.ndarray, tol: float = 1e-9) -> str:
    tr = float(np.trace(a))
    if abs(tr - 2) <= tol or abs(tr + 2) <= tol:
        if np.max(np.abs(a - np.sign(tr) * np.eye(2))) <= tol:
            return "identity" if tr > 0 else "minus_identity"
        return "parabolic"
    return "elliptic" if abs(tr) < 2 else "hyperbolic"


def rotation_normalizer(a: np.ndarray):
    """P in SL(2,R) and phi with P^{-1} a P = R_phi for elliptic a."""
    tr = np.trace(a)
    if abs(tr) >= 2:
        raise KamError("constant is not elliptic")
    w, V = np.linalg.eig(a)
    for i in range(2):
        v = V[:, i]
        Q = np.column_stack([v.real, -v.imag])
        det = np.linalg.det(Q)
        if det > 0:
            Q = Q / np.sqrt(det)
            phi = np.angle(w[i]) / (2 * np.pi) % 1.0
            # balance the normaliser: any Q R_beta works, pick the best conditioned
            return Q, phi
    raise KamError("could not orient the eigenbasis")


def _conj_residual_vals(b_vals, b_shift_vals, C_vals, a, f_vals):
    bi = np.linalg.inv(b_shift_vals)
    lhs = bi @ C_vals @ b_vals
    rhs = a @ expm_sl2(f_vals)
    return float(np.max(np.abs(lhs - rhs)))


# -- cohomological equation -----------------------------------------------------------

@dataclass
class CohomologicalSolution:
    Y: MatrixTorusFunction
    max_inv_denom: float
    residual: float


def solve_cohomological(a_const, g: MatrixTorusFunction, freq, N: int,
                        resonance_exclusions=(), denom_floor: float = 0.0,
                        grid_n: int | None = None) -> CohomologicalSolution:
    """Solve Y(theta+alpha) a - a Y(theta) = a g(theta) for modes 0 < |n| <= N.

    Mode 0 and excluded modes are left out of both sides.  Denominators are the
    eigenvalues of e^{2 pi i <n,alpha>} Ad_{a^{-1}} - I; any retained one below
    ``denom_floor`` raises SmallDivisorError.
    """
    a = np.asarray(a_const, dtype=float)
    freq = as_frequency(freq)
    g = g.truncate(N)
    d = g.d
    grids = mode_grid(g.radius, d)
    n_vec = np.stack([x.ravel() for x in grids], 1)
    omega = 2 * np.pi * (n_vec @ freq.vec) / g.period
    keep = np.any(n_vec != 0, axis=1)
    for m in resonance_exclusions:
        m = np.atleast_1d(m)
        keep &= ~np.all(n_vec == m, axis=1)
        keep &= ~np.all(n_vec == -m, axis=1)
    M = ad_matrix(a)
    lam = np.linalg.eigvals(M)
    gv = _sl2_vec(g.coeffs).reshape(3, -1)
    den = np.abs(np.exp(1j * omega)[:, None] * lam[None, :] - 1.0)
    min_den = np.min(den, axis=1)
    idx = np.where(keep)[0]
    max_inv = 0.0
    yv = np.zeros_like(gv)
    if idx.size:
        bad = idx[min_den[idx] < denom_floor]
        if bad.size:
            j = bad[np.argmin(min_den[bad])]
            raise SmallDivisorError(tuple(int(v) for v in n_vec[j]), float(min_den[j]))
        L = np.exp(1j * omega[idx])[:, None, None] * M[None] - np.eye(3)[None]
        yv[:, idx] = np.linalg.solve(L, gv[:, idx].T[..., None])[..., 0].T
        max_inv = float(np.max(1.0 / min_den[idx]))
    Yc = _sl2_mat(yv.reshape((3,) + g.coeffs.shape[2:]))
    Y = MatrixTorusFunction(Yc, double=g.double, real=g.real, tag="sl2")
    # residual of the solved equation on a grid (retained modes only)
    gk = MatrixTorusFunction(np.where(keep.reshape(g.coeffs.shape[2:]), g.coeffs, 0),
                             double=g.double, real=g.real)
    G = grid_n or _grid_for(g.radius, 0, d)
    Yv = Y.grid_values(G)
    Ys = Y.shift(freq.vec).grid_values(G)
    gv_ = gk.grid_values(G)
    res = Ys @ a - a @ Yv - a @ gv_
    return CohomologicalSolution(Y, max_inv, float(np.max(np.abs(res))))


def detect_resonance(a_const, freq, eps: float, N: int, sigma: float = 0.75, cap: float | None = None):
    """Mode 0 < |m| <= N with ||2 rho(a) - <m, alpha>|| < eps**sigma, closest first.

    Returns (m, distance) or None.  Ties are broken lexicographically.
    """
    freq = as_frequency(freq)
    if N < 1:
        return None
    thr = eps ** sigma if cap is None else min(eps ** sigma, cap)
    rho = constant_rotation_number(a_const)
    d = freq.d
    r = np.arange(-N, N + 1)
    if d == 1:
        ms = r.reshape(-1, 1)
    else:
        X, Y = np.meshgrid(r, r, indexing="ij")
        ms = np.stack([X.ravel(), Y.ravel()], 1)
    ms = ms[np.any(ms != 0, axis=1)]
    dist = dist_z(2 * rho - ms @ freq.vec)
    hit = np.where(dist < thr)[0]
    if hit.size == 0:
        return None
    order = np.lexsort(tuple(ms[hit].T[::-1]) + (dist[hit],))
    j = hit[order[0]]
    return tuple(int(v) for v in ms[j]), float(dist[j])


# -- one step -------------------------------------------------------------------------

def _rotate_perturbation(f: MatrixTorusFunction, m, P: np.ndarray, G: int) -> MatrixTorusFunction:
    """theta -> R_{-<m,theta>/2} P^{-1} f(theta) P R_{<m,theta>/2}, which lives on T^d."""
    pts = f.grid_points(G)
    x = pts @ np.atleast_1d(m).astype(float) / 2.0
    Rm = rotation_matrix(x)
    Rmi = rotation_matrix(-x)
    Pinv = np.linalg.inv(P)
    fv = f.grid_values(G).reshape(-1, 2, 2)
    out = Rmi @ (Pinv @ fv @ P) @ Rm
    out = out.reshape((G,) * f.d + (2, 2))
    res = MatrixTorusFunction.from_grid(out, f.d, double=False, real=True, tag="sl2")
    return res.trim(1e-17, atol=COEFF_FLOOR)


def _q_map(P: np.ndarray, m, d) -> MatrixTorusFunction:
    from .torus import rotation_series
    return P @ rotation_series(m, d, 0.5)


def _resonant_transform(state: KamState, m, freq: Frequency, sched: KamSchedule):
    """Conjugate by P R_{<m,theta>/2}; returns (new_a, new_f, q_map)."""
    a = state.a_const
    P, phi = rotation_normalizer(a)
    G = _grid_for(state.f_pert.radius, int(np.max(np.abs(m))), state.f_pert.d, sched.grid_cap)
    f_new = _rotate_perturbation(state.f_pert, m, P, G)
    a_new = rotation_matrix(phi - freq.pair(m) / 2.0)
    return a_new, f_new, _q_map(P, m, state.f_pert.d)


def exact_remainder(a, f: MatrixTorusFunction, Y: MatrixTorusFunction, freq, a_new, G):
    """log(a_new^{-1} e^{-Y(theta+alpha)} a e^{f} e^{Y(theta)}) as a series."""
    d = f.d
    fv = f.grid_values(G)
    Yv = Y.grid_values(G)
    Ys = Y.shift(freq.vec).grid_values(G)
    M = np.linalg.inv(a_new) @ expm_sl2(-Ys) @ a @ expm_sl2(fv) @ expm_sl2(Yv)
    L = logm_sl2(M)
    out = MatrixTorusFunction.from_grid(L, d, double=False, real=True, tag="sl2")
    return out.trim(1e-17, atol=COEFF_FLOOR)


def kam_step(state: KamState, sched: KamSchedule, freq, forced_mode=None) -> StepOutcome:
    """One KAM step: truncate, detect resonance, solve, recompute the remainder exactly."""
    freq = as_frequency(freq)
    f = state.f_pert
    d = f.d
    eps_in = pert_size(f)
    j = state.step_index + 1
    ident = MatrixTorusFunction.identity(d, double=True)
    if eps_in == 0.0 and forced_mode is None:
        return StepOutcome("nonresonant", ident, state)

    N = max(1, min(tail_radius(f, max(eps_in ** 2, 0.01 * sched.target_eps)), sched.n_cap))
    a = state.a_const
    kind, mode = "nonresonant", None
    b = state.b_accum
    deg = np.array(state.deg_accum)
    q = None
    res = forced_mode
    elliptic = classify_constant(a) == "elliptic"
    if res is None and elliptic:
        # a non-elliptic constant has 2 rho(a) in Z: its only small divisors are
        # ||<n, alpha>||, controlled by the Diophantine condition on alpha alone
        hit = detect_resonance(a, freq, eps_in, N, sched.sigma, sched.resonance_cap)
        res = hit[0] if hit else None
    if res is not None:
        if classify_constant(a) != "elliptic":
            return StepOutcome("halted", ident, state, reason="resonance with non-elliptic constant")
        a, f, q = _resonant_transform(state, res, freq, sched)
        kind, mode = "resonant", tuple(res)
        deg = deg + np.array(res)
        N = N + int(np.max(np.abs(res)))
    thr = sched.resonance_threshold(max(eps_in, 1e-300))
    floor = thr / 4.0 if (elliptic or kind == "resonant") else NONELLIPTIC_FLOOR
    f0 = f.average() if f.radius >= 0 else np.zeros((2, 2))
    f0 = np.real(f0)
    a_new = a @ expm_sl2(f0)
    g = f.truncate(N)
    try:
        sol = solve_cohomological(a, g, freq, N, denom_floor=floor)
    except SmallDivisorError as err:
        return StepOutcome("halted", ident, state, mode=err.mode, reason=str(err))
    Y = sol.Y
    G = _grid_for(max(f.radius, 2 * N), N, d, sched.grid_cap)
    f_plus = exact_remainder(a, f, Y, freq, a_new, G)
    eps_out = pert_size(f_plus)
    eY = matrix_exp(Y, _grid_for(Y.radius, 0, d, sched.grid_cap))
    step_conj = eY if q is None else q * eY.to_double()
    step_conj = step_conj.to_double()
    new_b = (b * step_conj).trim(1e-16)
    new_b.tag = "SL2"
    limit = max(eps_in ** sched.contraction_exponent, sched.noise_floor)
    rec = {"step_index": j, "kind": kind, "mode": None if mode is None else list(mode),
           "abs_m": 0 if mode is None else int(np.max(np.abs(mode))),
           "eps_in": eps_in, "eps_out": eps_out, "N": int(N),
           "abs_deg": int(np.max(np.abs(deg))) if deg.size else 0,
           "conj_norm": float(new_b.sup_norm(256 if d == 1 else 32)),
           "max_inv_denom": sol.max_inv_denom, "cohom_residual": sol.residual,
           "schedule_precondition": bool(eps_in <= sched.eps(sched.l(j)))}
    new_state = KamState(a_new, f_plus, new_b, tuple(int(v) for v in deg), j,
                         state.eps_history + [eps_out], state.telemetry + [rec])
    if eps_out > limit and kind == "nonresonant":
        rec["kind"] = "halted"
        return StepOutcome("halted", step_conj, new_state, reason="contraction_failure")
    return StepOutcome(kind, step_conj, new_state, mode=mode)


# -- initial splitting ---------------------------------------------------------------

def initial_state(c: Cocycle, warm_start: MatrixTorusFunction | None = None,
                  deg0=None, grid_n: int | None = None) -> KamState:
    """Write b^{-1}(theta+alpha) C(theta) b(theta) = a e^{f(theta)} with a constant.

    ``b`` is the warm-start conjugacy (identity by default); a is the normalised
    average of the conjugated map.
    """
    d = c.d
    if warm_start is None:
        b = MatrixTorusFunction.identity(d, double=True)
        deg = (0,) * d
    else:
        b = warm_start.to_double()
        from .dynamics import degree
        deg = tuple(degree(b)) if deg0 is None else tuple(deg0)
    G = grid_n or _grid_for(max(c.amap.radius, b.radius) * 2, 0, d)
    # values on the T^d grid: the doubled-torus grid with spacing 1/G covers
    # [0, 2)^d, and its first G points per axis are the T^d grid
    Cv = c.amap.grid_values(G).reshape(-1, 2, 2)
    bv = b.grid_values(2 * G)[(slice(0, G),) * d].reshape(-1, 2, 2)
    bs = b.shift(c.freq.vec).grid_values(2 * G)[(slice(0, G),) * d].reshape(-1, 2, 2)
    Ct = np.linalg.inv(bs) @ Cv @ bv
    avg = Ct.mean(axis=0)
    det = np.linalg.det(avg)
    if det <= 0:
        raise KamError("averaged map is not close to SL(2,R); the cocycle is far from constant")
    a = avg / np.sqrt(det)
    L = logm_sl2(np.linalg.inv(a) @ Ct).reshape((G,) * d + (2, 2))
    f = MatrixTorusFunction.from_grid(L, d, double=False, real=True, tag="sl2").trim(1e-17, atol=COEFF_FLOOR)
    return KamState(a, f, b, deg, 0, [pert_size(f)], [])


def conjugation_residual(state: KamState, c: Cocycle, grid_n: int = 256) -> float:
    """sup over a grid of the doubled torus of |b(.+alpha)^{-1} C b - a e^f|."""
    d = c.d
    G = grid_n if d == 1 else min(grid_n, 64)
    # grid of the doubled torus; C has period 1, so sample it on the doubled grid too
    Cd = c.amap.to_double()
    return _conj_residual_vals(state.b_accum.grid_values(G).reshape(-1, 2, 2),
                               state.b_accum.shift(c.freq.vec).grid_values(G).reshape(-1, 2, 2),
                               Cd.grid_values(G).reshape(-1, 2, 2), state.a_const,
                               state.f_pert.to_double().grid_values(G).reshape(-1, 2, 2))


def conjugacy_oscillation(state: KamState, grid_n: int = 256) -> float:
    """sup_theta |b(theta) - mean(b)|, the distance of the conjugacy from a constant."""
    b = state.b_accum
    v = b.grid_values(grid_n if b.d == 1 else 64)
    v = v.reshape(-1, 2, 2)
    mean = np.real(b.average())
    return float(np.max(np.linalg.norm(v - mean, ord=2, axis=(1, 2))))


# -- chains and the full driver ---------------------------------------------------------

def reduce_chain(c: Cocycle, sched: KamSchedule, mode: str = "diophantine_rho",
                 gamma: float = 0.05, tau: float = 2.0, state: KamState | None = None,
                 rho_quality=(20_000, 8)):
    """Run non-resonant steps until eps < target_eps.

    ``mode`` is "diophantine_rho" (measured rho must be Diophantine w.r.t. alpha
    up to the first truncation radius) or "zero_rho".  A resonance is a
    ChainViolation.  Returns the final KamState.
    """
    freq = c.freq
    st = state if state is not None else initial_state(c)
    if st.eps > sched.chain_threshold:
        raise ChainViolation(f"perturbation {st.eps:.3e} above chain threshold {sched.chain_threshold}")
    if mode == "diophantine_rho":
        cur = st.cocycle(freq)
        rho = rotation_number(cur, *rho_quality).rho
        rho_orig = (rho + freq.pair(st.deg_accum) / 2.0) % 1.0
        N1 = max(1, tail_radius(st.f_pert, max(st.eps ** 2, 1e-15)))
        margin, worst = rho_diophantine_margin(rho, freq, gamma, tau, max(N1, 1))
        if margin < 1.0:
            raise ChainViolation(f"rho={rho_orig:.12f} not Diophantine (gamma={gamma}, tau={tau}) "
                                 f"at mode {worst}")
    elif mode != "zero_rho":
        raise ValueError("mode must be 'diophantine_rho' or 'zero_rho'")
    for _ in range(sched.max_steps):
        if st.eps < sched.target_eps:
            return st
        out = kam_step(st, sched, freq)
        if out.kind == "resonant":
            raise ChainViolation(f"resonant step at mode {out.mode} inside a {mode} chain")
        if out.kind == "halted":
            raise KamError(f"chain halted: {out.reason}")
        st = out.new_state
    if st.eps < sched.target_eps:
        return st
    raise KamError(f"chain did not reach target after {sched.max_steps} steps (eps={st.eps:.3e})")


@dataclass
class ReduceReport:
    branch: str
    steps: int
    final_eps: float
    deg_accum: tuple
    classification: str
    rho_const: float
    sign: int
    residual: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return dict(self.__dict__)


def _normalize_rotation(st: KamState) -> KamState:
    P, phi = rotation_normalizer(st.a_const)
    Pi = np.linalg.inv(P)
    f = MatrixTorusFunction(np.einsum("ij,jk...,kl->il...", Pi, st.f_pert.coeffs, P),
                            double=st.f_pert.double, real=True, tag="sl2")
    b = st.b_accum @ P
    b.tag = "SL2"
    return replace(st, a_const=rotation_matrix(phi), f_pert=f, b_accum=b)


def _advance(st, sched, freq, until):
    for _ in range(sched.max_steps):
        if until(st):
            return st
        out = kam_step(st, sched, freq)
        if out.kind == "halted":
            raise KamError(f"step {st.step_index + 1} halted: {out.reason}")
        st = out.new_state
    if until(st):
        return st
    raise KamError(f"switchover not reached within {sched.max_steps} steps (eps={st.eps:.3e})")


def reduce_full(c: Cocycle, sched: KamSchedule, rho_class=("diophantine", 0.05, 2.0),
                warm_start: MatrixTorusFunction | None = None, state: KamState | None = None):
    """Quantitative reducibility driver with a Diophantine and a rational branch.

    ``rho_class`` is ("diophantine", gamma, tau) or ("rational", m0) where
    2 rho(c) = <m0, alpha> mod 1.  Returns (KamState, ReduceReport).
    """
    freq = c.freq
    st = state if state is not None else initial_state(c, warm_start)
    kind = rho_class[0]

    def switched(s):
        bound = sched.switch_eps * (1.0 + max(abs(v) for v in s.deg_accum)) ** (-sched.switch_power)
        return s.eps <= max(bound, sched.target_eps)

    st = _advance(st, sched, freq, switched)
    notes = []
    if kind == "diophantine":
        gamma, tau = rho_class[1], rho_class[2]
        degn = 1.0 + max(abs(v) for v in st.deg_accum)
        st = reduce_chain(c, sched, "diophantine_rho", gamma * degn ** (-tau), tau, state=st) \
            if st.eps >= sched.target_eps else st
        if classify_constant(st.a_const) != "elliptic":
            raise KamError("Diophantine branch ended with a non-elliptic constant")
        st = _normalize_rotation(st)
        branch = "diophantine"
    elif kind == "rational":
        m0 = np.atleast_1d(rho_class[1]).astype(int)
        k = m0 - np.array(st.deg_accum)
        if np.any(k != 0):
            if classify_constant(st.a_const) != "elliptic":
                raise KamError("rational branch: constant must be elliptic before the Q rotation")
            out = kam_step(st, sched, freq, forced_mode=tuple(int(v) for v in k))
            if out.kind == "halted":
                raise KamError(f"rational branch rotation halted: {out.reason}")
            st = out.new_state
            notes.append(f"rotated by Q with mode {tuple(int(v) for v in k)}")
        st = reduce_chain(c, sched, "zero_rho", state=st) if st.eps >= sched.target_eps else st
        branch = "rational"
    else:
        raise ValueError("rho_class must start with 'diophantine' or 'rational'")
    a = st.a_const
    cls = classify_constant(a, tol=1e-6)
    sign = 1 if np.trace(a) >= 0 else -1
    report = ReduceReport(branch, st.step_index, st.eps, st.deg_accum, cls,
                          constant_rotation_number(a), sign,
                          conjugation_residual(st, c), notes)
    return st, report


def residual_vs_eps(state: KamState) -> list:
    return [(r["eps_in"], r["eps_out"]) for r in state.telemetry]


__all__ = [
    "KamSchedule", "KamState", "StepOutcome", "KamError", "SmallDivisorError", "ChainViolation",
    "CohomologicalSolution", "ReduceReport", "solve_cohomological", "detect_resonance", "kam_step",
    "reduce_chain", "reduce_full", "initial_state", "conjugation_residual", "conjugacy_oscillation",
    "pert_size", "classify_constant", "rotation_normalizer", "ad_matrix", "tail_radius",
    "exact_remainder", "Frequency",
]
