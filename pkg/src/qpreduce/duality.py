"""Aubry duality: localized eigenvectors of the long-range operator

    (L_phi u)(n) = sum_k V_k u(n - k) + 2 cos 2 pi (phi + <n, alpha>) u(n)

read off from the conjugacy that reduces a Schroedinger cocycle to a rotation,
plus decay certificates and a direct truncated-diagonalization oracle.

If b(theta+alpha)^{-1} S_E^V(theta) b(theta) = R_psi with b on the doubled torus,
then z(theta) = (b11 - i b12)/sqrt(2) satisfies

    (E - V(theta)) z(theta) = e^{2 pi i psi} z(theta + alpha) + e^{-2 pi i psi} z(theta - alpha),

so on each parity class k = 2n + p of its doubled-torus Fourier modes,
u(n) = z_hat(2n + p) is an eigenvector of L at phase psi + <p, alpha>/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dynamics import as_frequency, dist_z, rho_diophantine_margin
from .kam import KamState
from .spectrum import Potential
from .torus import ScalarTorusFunction


@dataclass
class LongRangeOperator:
    vhat: ScalarTorusFunction  # coefficients of lambda V on T^d
    freq: object
    phase: float

    @property
    def d(self):
        return self.vhat.d

    def with_phase(self, phase):
        return LongRangeOperator(self.vhat, self.freq, phase)


def dual_operator(V, lam: float = 1.0, freq=None, phase: float = 0.0) -> LongRangeOperator:
    v = V.function() if isinstance(V, Potential) else V
    if v.double:
        raise ValueError("potential must live on T^d")
    return LongRangeOperator(v.scale(lam), as_frequency(freq), float(phase))


def box_sites(radius: int, d: int) -> np.ndarray:
    """Sites of [-radius, radius]^d in lexicographic order (shape (P, d))."""
    r = np.arange(-radius, radius + 1)
    grids = np.meshgrid(*([r] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], 1)


def truncated_matrix(op: LongRangeOperator, radius: int) -> np.ndarray:
    """H[m, n] = vhat(m - n) + delta_{mn} 2 cos 2 pi (phi + <m, alpha>) on the box."""
    if radius < op.vhat.radius:
        raise ValueError("box radius smaller than the support of vhat")
    sites = box_sites(radius, op.d)
    diff = sites[:, None, :] - sites[None, :, :]
    R = op.vhat.radius
    inside = np.all(np.abs(diff) <= R, axis=2)
    c = op.vhat.coeffs
    H = np.zeros((len(sites), len(sites)), dtype=complex)
    idx = np.where(inside)
    H[idx] = c[tuple((diff[idx] + R).T)]
    H[np.diag_indices_from(H)] += 2 * np.cos(2 * np.pi * (op.phase + sites @ op.freq.vec))
    if np.max(np.abs(H.imag)) == 0.0:
        return H.real
    return H


@dataclass
class LocalizedEigenfunction:
    amplitudes: np.ndarray     # dense values on box_sites(radius, d)
    radius: int
    eigenvalue: float
    center: tuple
    norm: float                # l2 norm of z_hat before normalisation
    norm_bound: float          # (2 ||B||_{C^0})^{-1}
    residual: float
    phase: float
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return len(self.center)

    def sites(self):
        return box_sites(self.radius, self.d)

    def to_csv(self) -> str:
        head = ",".join([f"n{i + 1}" for i in range(self.d)] + ["u"])
        rows = [head]
        for s, v in zip(self.sites(), self.amplitudes):
            if v != 0:
                rows.append(",".join(str(int(x)) for x in s) + f",{float(np.real(v)):.17g}")
        return "\n".join(rows) + "\n"


@dataclass
class GoodnessCertificate:
    N: int
    C: float
    eps: float
    passed: bool
    worst_site: tuple | None
    worst_ratio: float
    radius: int

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class SuleCertificate:
    k_tilde: float
    b: float
    C: float
    passed: bool
    center: tuple
    radius: int

    def to_dict(self):
        return dict(self.__dict__)


def _reduced_z11(state: KamState):
    """Doubled-torus coefficients of (b11 - i b12)/sqrt(2)."""
    c = state.b_accum.coeffs
    return (c[0, 0] - 1j * c[0, 1]) / np.sqrt(2.0)


def _class_vector(z, p, d):
    """u(n) = z(2n + p) on the box |n| <= R' that covers the support."""
    R = (z.shape[0] - 1) // 2
    Rp = (R + 1) // 2 + 1
    sites = box_sites(Rp, d)
    k = 2 * sites + np.array(p)
    ok = np.all(np.abs(k) <= R, axis=1)
    u = np.zeros(len(sites), dtype=complex)
    u[ok] = z[tuple((k[ok] + R).T)]
    return u, Rp


def _shift_reflect(u, Rp, d, shift, reflect, radius):
    """w(n) = u(n - shift), or conj(u(-(n - shift))) if reflect, on box radius."""
    src = box_sites(Rp, d)
    vals = u
    if reflect:
        src = -src
        vals = np.conj(u)
    dst = src + np.array(shift)
    out_sites = box_sites(radius, d)
    w = np.zeros(len(out_sites), dtype=complex)
    ok = np.all(np.abs(dst) <= radius, axis=1)
    lin = np.ravel_multi_index(tuple((dst[ok] + radius).T), (2 * radius + 1,) * d)
    w[lin] = vals[ok]
    lost = float(np.sum(np.abs(vals[~ok]) ** 2))
    return w, lost


def extract_eigenfunction(reduced: KamState, m, phase: float, V, E: float, freq=None,
                          radius: int = 64, resid_tol: float = 1e-6, sign: int | None = None):
    """Eigenvector of L_phase with eigenvalue E from a reduction to a rotation.

    ``m`` is the rotation site: rho(alpha, S_E^V) = +-(phase + <m, alpha>) mod 1.
    The sign is detected unless given.  The result is centred at the site where
    the re-indexed coefficients land (reported as ``center``).
    """
    freq = as_frequency(freq)
    d = freq.d
    a = reduced.a_const
    # the constant must be a rotation R_psi
    cs = 0.5 * (a[0, 0] + a[1, 1])
    sn = 0.5 * (a[1, 0] - a[0, 1])
    if np.max(np.abs(a - np.array([[cs, -sn], [sn, cs]]))) > 1e-9 or abs(cs * cs + sn * sn - 1) > 1e-9:
        raise ValueError("reduced constant is not a rigid rotation")
    psi = np.arctan2(sn, cs) / (2 * np.pi) % 1.0
    deg = np.array(reduced.deg_accum, dtype=int)
    p = deg % 2
    q = (deg - p) // 2
    phi1 = psi + freq.pair(p) / 2.0      # phase of the z11 eigenvector
    m = np.atleast_1d(m).astype(int)
    cands = []
    for s in (+1, -1):
        if sign is not None and s != sign:
            continue
        shift = m - q if s > 0 else m + q
        err = float(dist_z(s * phi1 - freq.pair(shift) - phase))
        cands.append((err, s, shift))
    err, s, shift = min(cands, key=lambda t: t[0])
    z = _reduced_z11(reduced)
    u, Rp = _class_vector(z, p, d)
    norm = float(np.linalg.norm(u))
    w, lost = _shift_reflect(u, Rp, d, shift, s < 0, radius)
    w = w / norm
    # fix the global phase so the largest entry is real and positive
    k = int(np.argmax(np.abs(w)))
    w = w * np.exp(-1j * np.angle(w[k]))
    bnorm = reduced.b_accum.sup_norm(256 if d == 1 else 64)
    Vf = V.function() if isinstance(V, Potential) else V
    op = dual_operator(Vf, 1.0, freq, phase)
    H = truncated_matrix(op, radius)
    resid = float(np.linalg.norm(H @ w - E * w))
    center = tuple(int(x) for x in np.atleast_1d(shift))
    meta = {"phase_mismatch": err, "sign": s, "parity": p.tolist(), "q": q.tolist(),
            "psi": psi, "mass_outside_box": lost / norm ** 2, "peak_site":
            tuple(int(x) for x in box_sites(radius, d)[k]), "resid_ok": resid < resid_tol}
    return LocalizedEigenfunction(w.real if np.max(np.abs(w.imag)) < 1e-12 else w, radius, float(E),
                                  center, norm, 1.0 / (2.0 * bnorm), resid, phase, meta)


# -- certificates ------------------------------------------------------------------

def _as_box(u, d=None):
    if isinstance(u, LocalizedEigenfunction):
        return np.abs(u.amplitudes), u.radius, u.d
    arr = np.asarray(u)
    d = d or 1
    side = int(round(len(arr) ** (1.0 / d)))
    return np.abs(arr), (side - 1) // 2, d


def check_good(u, N: int, C: float, eps: float, d: int | None = None) -> GoodnessCertificate:
    """|u(n)| <= eps^{-1} |n|^{-C} for all stored |n| >= (1 - eps) N."""
    mag, R, d = _as_box(u, d)
    sites = box_sites(R, d)
    nrm = np.max(np.abs(sites), axis=1).astype(float)
    sel = nrm >= (1 - eps) * N
    sel &= nrm > 0
    if not np.any(sel):
        return GoodnessCertificate(N, C, eps, True, None, 0.0, R)
    bound = nrm[sel] ** (-C) / eps
    ratio = mag[sel] / bound
    i = int(np.argmax(ratio))
    worst = tuple(int(x) for x in sites[sel][i])
    return GoodnessCertificate(N, C, eps, bool(ratio[i] <= 1.0), worst, float(ratio[i]), R)


def check_sule(u, k_tilde: float, b: float, center=None, C: float | None = None,
               d: int | None = None) -> SuleCertificate:
    """Fit the smallest C with |u(n)| <= C max(1,|m'|)^b |n - m'|^{-k_tilde}."""
    mag, R, d = _as_box(u, d)
    if center is None:
        center = u.center if isinstance(u, LocalizedEigenfunction) else (0,) * d
    c = np.array(center)
    sites = box_sites(R, d)
    dist = np.max(np.abs(sites - c), axis=1).astype(float)
    sel = dist > 0
    scale = max(1.0, float(np.max(np.abs(c)))) ** b
    need = mag[sel] * dist[sel] ** k_tilde / scale
    fitted = float(np.max(need)) if need.size else 0.0
    passed = True if C is None else fitted <= C
    return SuleCertificate(k_tilde, b, fitted, bool(passed), tuple(int(x) for x in c), R)


def fit_decay_exponent(u, center=None, floor: float = 1e-13, d: int | None = None) -> float:
    """Slope of the upper envelope of log|u(n)| against log|n - center|."""
    mag, R, d = _as_box(u, d)
    if center is None:
        center = u.center if isinstance(u, LocalizedEigenfunction) else (0,) * d
    sites = box_sites(R, d)
    dist = np.max(np.abs(sites - np.array(center)), axis=1)
    top = mag.max()
    rs, vals = [], []
    for r in range(1, int(dist.max()) + 1):
        sh = mag[dist == r]
        if sh.size == 0:
            continue
        v = sh.max()
        if v <= floor * top:
            break
        rs.append(r)
        vals.append(v)
    if len(rs) < 2:
        # decay faster than the floor within one shell: report the floor-implied exponent
        return float(np.log(top / (floor * top)) / np.log(2.0)) if rs else np.inf
    slope = np.polyfit(np.log(rs), np.log(vals), 1)[0]
    return float(-slope)


def match_oracle(ef: LocalizedEigenfunction, op: LongRangeOperator, radius: int = 64):
    """Dense eigensolve of the truncated matrix; best overlap with ef."""
    H = truncated_matrix(op, radius)
    w, U = linalg.eigh(H)
    v = ef.amplitudes
    if ef.radius != radius:
        raise ValueError("eigenfunction and oracle use different boxes")
    ov = np.abs(U.conj().T @ v)
    j = int(np.argmax(ov))
    order = np.sort(ov)[::-1]
    return {"overlap": float(ov[j]), "eigenvalue": float(w[j]), "index": j,
            "second_overlap": float(order[1]) if len(order) > 1 else 0.0,
            "eigenvalue_mismatch": float(abs(w[j] - ef.eigenvalue))}


def _phase_sequence(n):
    g = (np.sqrt(5.0) - 1) / 2
    return (0.5 + g * np.arange(1, n + 1)) % 1.0


def pp_counting_check(op: LongRangeOperator, radius: int, C: float, eps: float, N: int | None = None,
                      n_phases: int = 8):
    """Fraction (count of (N, C, eps)-good eigenvectors)/(2N)^d of the truncated
    operator, averaged over a fixed low-discrepancy set of phases."""
    N = radius if N is None else N
    d = op.d
    fr = []
    for ph in _phase_sequence(n_phases):
        H = truncated_matrix(op.with_phase(ph), radius)
        _, U = linalg.eigh(H)
        cnt = 0
        for j in range(U.shape[1]):
            if check_good(U[:, j], N, C, eps, d=d).passed:
                cnt += 1
        fr.append(cnt / (2.0 * N) ** d)
    return float(np.mean(fr)), fr


def phase_is_diophantine(phase, freq, gamma, tau, radius):
    """||2 phase - <k, alpha>|| >= gamma / (|k| + 1)^tau for |k| <= radius."""
    margin, worst = rho_diophantine_margin(phase, freq, gamma, tau, radius)
    return margin >= 1.0, worst


__all__ = [
    "LongRangeOperator", "LocalizedEigenfunction", "GoodnessCertificate", "SuleCertificate",
    "dual_operator", "truncated_matrix", "extract_eigenfunction", "check_good", "check_sule",
    "fit_decay_exponent", "match_oracle", "pp_counting_check", "box_sites", "phase_is_diophantine",
]
