"""Schroedinger cocycles S_E^V = [[E - V, -1], [1, 0]], the integrated density of
states via the rotation number, spectrum scans with gap labels, and gap-edge
location by reduction.

Rotation numbers of Schroedinger cocycles are reported in [0, 1/2]; the IDS is
N(E) = 1 - 2 rho(E), and an open gap carries the label m with
2 rho = <m, alpha> mod 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .dynamics import (Cocycle, Frequency, as_frequency, dist_z, is_uniformly_hyperbolic,
                       lyapunov_exponent, rotation_number)
from .kam import KamError, KamSchedule, reduce_full
from .torus import MatrixTorusFunction, ScalarTorusFunction

QUALITY = {
    "fast": {"n_iters": 5_000, "n_phases": 4},
    "default": {"n_iters": 20_000, "n_phases": 8},
    "fine": {"n_iters": 100_000, "n_phases": 32},
}


def _quality(q):
    if isinstance(q, dict):
        return q
    return QUALITY[q]


@dataclass
class Potential:
    v: ScalarTorusFunction
    coupling: float = 1.0

    def __post_init__(self):
        if not self.v.real:
            raise ValueError("potential must be real")

    @property
    def d(self):
        return self.v.d

    def function(self) -> ScalarTorusFunction:
        return self.v.scale(self.coupling)

    def with_coupling(self, lam):
        return Potential(self.v, lam)

    def to_dict(self):
        return {"v": self.v.to_dict(), "coupling": self.coupling}

    @classmethod
    def amo(cls, lam, d=1):
        """2 lam cos(2 pi theta_1)."""
        return cls(ScalarTorusFunction.cosine(2.0, 1, d=d), lam)


def schrodinger_cocycle(V: Potential | ScalarTorusFunction, E: float, freq=None) -> Cocycle:
    Vf = V.function() if isinstance(V, Potential) else V
    freq = as_frequency(freq if freq is not None else Frequency.golden())
    A = MatrixTorusFunction.from_entries(-Vf + float(E), -1.0, 1.0, 0.0, tag="SL2")
    return Cocycle(freq, A)


def fold_rho(rho: float) -> float:
    """Map a rotation number of a Schroedinger cocycle into [0, 1/2]."""
    r = rho % 1.0
    if r > 0.75:
        r -= 1.0
    return float(min(max(r, 0.0), 0.5))


def schrodinger_rho(V, E, freq=None, quality="default"):
    q = _quality(quality)
    est = rotation_number(schrodinger_cocycle(V, E, freq), q["n_iters"], q["n_phases"])
    return fold_rho(est.rho), est.error_bound


def ids(V, E, freq=None, quality="default") -> float:
    """N(E) = 1 - 2 rho(E)."""
    rho, _ = schrodinger_rho(V, E, freq, quality)
    return float(min(max(1.0 - 2.0 * rho, 0.0), 1.0))


def gap_label(rho_value: float, freq, radius: int = 50, tol: float = 1e-6):
    """Unique |m| <= radius with ||2 rho - <m, alpha>|| < tol, or None."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    freq = as_frequency(freq)
    r = np.arange(-radius, radius + 1)
    if freq.d == 1:
        ms = r.reshape(-1, 1)
    else:
        X, Y = np.meshgrid(r, r, indexing="ij")
        ms = np.stack([X.ravel(), Y.ravel()], 1)
    dist = dist_z(2 * rho_value - ms @ freq.vec)
    hit = np.where(dist < tol)[0]
    if hit.size == 0:
        return None
    if hit.size > 1:
        raise ValueError(f"ambiguous gap label: {[tuple(ms[i]) for i in hit]} within tol={tol}")
    m = tuple(int(v) for v in ms[hit[0]])
    return m if freq.d > 1 else m


@dataclass
class Gap:
    lo: float
    hi: float
    label: tuple | None
    rho: float
    collapsed: bool

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi, "label": None if self.label is None else list(self.label),
                "rho": self.rho, "collapsed_candidate": self.collapsed}


@dataclass
class SpectrumScan:
    energies: np.ndarray
    rho: np.ndarray
    lyap: np.ndarray
    uh: np.ndarray
    gaps: list = field(default_factory=list)
    step: float = 0.0

    def gap_ids(self):
        out = -np.ones(len(self.energies), dtype=int)
        for k, g in enumerate(self.gaps):
            out[(self.energies >= g.lo) & (self.energies <= g.hi) & self.uh] = k
        return out

    def to_csv(self) -> str:
        lines = ["E,rho,lyap,uh,gap_id,label"]
        gid = self.gap_ids()
        for i, E in enumerate(self.energies):
            lab = ""
            if gid[i] >= 0 and self.gaps[gid[i]].label is not None:
                lab = ";".join(str(v) for v in self.gaps[gid[i]].label)
            lines.append(f"{E:.12g},{self.rho[i]:.12g},{self.lyap[i]:.12g},{int(self.uh[i])},{gid[i]},{lab}")
        return "\n".join(lines) + "\n"


def _point(V, E, freq, q, uh_kwargs):
    c = schrodinger_cocycle(V, E, freq)
    rho = fold_rho(rotation_number(c, q["n_iters"], q["n_phases"]).rho)
    ly = lyapunov_exponent(c, q["n_iters"], max(2, q["n_phases"] // 2))
    uh = False
    if ly > uh_kwargs.pop("lyap_gate", 1e-3):
        uh = is_uniformly_hyperbolic(c, **uh_kwargs).passed
    return rho, ly, uh


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


class _PointJob:
    def __init__(self, V, freq, q, uh_kwargs):
        self.V, self.freq, self.q, self.uh = V, freq, q, uh_kwargs

    def __call__(self, E):
        return _point(self.V, E, self.freq, self.q, dict(self.uh))


def scan_spectrum(V, e_range, n_grid: int, quality="fast", freq=None, label_radius=50,
                  label_tol=1e-4, refine_levels=3, refine_factor=8, jobs=1,
                  uh_kwargs=None) -> SpectrumScan:
    """Uniform energy scan with UH-based gap detection and edge refinement."""
    if n_grid < 16:
        raise ValueError("n_grid must be >= 16")
    freq = as_frequency(freq if freq is not None else Frequency.golden())
    q = _quality(quality)
    uhk = {"n_max": 1024, "grid_n": 128}
    uhk.update(uh_kwargs or {})
    job = _PointJob(V, freq, q, uhk)
    E = np.linspace(e_range[0], e_range[1], n_grid)
    res = _map(job, list(E), jobs)
    rho = np.array([r[0] for r in res])
    ly = np.array([r[1] for r in res])
    uh = np.array([r[2] for r in res], dtype=bool)
    step = float(E[1] - E[0])
    gaps = []
    i = 0
    n = len(E)
    while i < n:
        if not uh[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and uh[j + 1]:
            j += 1
        # gaps touching the scan boundary are the outside of the spectrum
        if i > 0 and j < n - 1:
            lo = _refine_edge(job, E[i - 1], E[i], refine_levels, refine_factor, jobs)
            hi = _refine_edge(job, E[j + 1], E[j], refine_levels, refine_factor, jobs)
            r = float(np.median(rho[i:j + 1]))
            try:
                lab = gap_label(r, freq, label_radius, label_tol)
            except ValueError:
                lab = None
            gaps.append(Gap(float(lo), float(hi), lab, r, (hi - lo) < step))
        i = j + 1
    return SpectrumScan(E, rho, ly, uh, gaps, step)


def _refine_edge(job, e_out, e_in, levels, factor, jobs):
    """Move the UH-side point of an edge bracket towards the spectrum."""
    a, b = e_out, e_in
    for _ in range(levels):
        pts = np.linspace(a, b, factor + 1)[1:-1]
        flags = [r[2] for r in _map(job, list(pts), jobs)]
        inner = [k for k, f in enumerate(flags) if f]
        if not inner:
            a = pts[-1] if len(pts) else a
            continue
        k = inner[0]
        b = pts[k]
        a = pts[k - 1] if k > 0 else a
    return b


def locate_energy_by_rotation(V, target_rho, bracket, tol_e=1e-10, freq=None, quality="fine",
                              max_iter=200):
    """Bisection on the nonincreasing map E -> rho(E).  Returns (E, rho(E))."""
    lo, hi = float(bracket[0]), float(bracket[1])
    r_lo, _ = schrodinger_rho(V, lo, freq, quality)
    r_hi, _ = schrodinger_rho(V, hi, freq, quality)
    if not (r_lo >= target_rho >= r_hi):
        raise ValueError(f"bracket does not straddle target: rho({lo})={r_lo}, rho({hi})={r_hi}")
    for _ in range(max_iter):
        if hi - lo < tol_e:
            break
        mid = 0.5 * (lo + hi)
        r, _ = schrodinger_rho(V, mid, freq, quality)
        if r > target_rho:
            lo = mid
        else:
            hi = mid
    E = 0.5 * (lo + hi)
    return E, schrodinger_rho(V, E, freq, quality)[0]


def rho_by_reduction(V, E, freq=None, sched=None, gamma=0.05, tau=2.0):
    """Folded rho(E) read off an exact reduction: rho(a) + <deg, alpha>/2."""
    freq = as_frequency(freq if freq is not None else Frequency.golden())
    c = schrodinger_cocycle(V, E, freq)
    st, rep = reduce_full(c, sched or KamSchedule(), ("diophantine", gamma, tau))
    return fold_rho(rep.rho_const + freq.pair(rep.deg_accum) / 2.0), st, rep


def refine_energy_by_reduction(V, target_rho, E0, freq=None, sched=None, tol=1e-13, max_iter=30,
                               h=1e-6):
    """Secant on E -> rho_by_reduction(E) - target from a coarse E0.

    Returns (E, rho, state, report) at the final iterate.
    """
    e0, e1 = float(E0), float(E0) + h
    g0 = rho_by_reduction(V, e0, freq, sched)[0] - target_rho
    for _ in range(max_iter):
        r1, st, rep = rho_by_reduction(V, e1, freq, sched)
        g1 = r1 - target_rho
        if abs(g1) < tol or g1 == g0:
            break
        e0, e1, g0 = e1, e1 - g1 * (e1 - e0) / (g1 - g0), g1
    return e1, r1, st, rep


def band_rho_label(m, freq):
    """rho in [0, 1/2] and parity sign for the label m: 2 rho = <m, alpha> + j."""
    freq = as_frequency(freq)
    x = freq.pair(m) % 1.0
    j = int(round(x - freq.pair(m)))
    return x / 2.0, (-1) ** (j % 2)


# -- gap edges by reduction ---------------------------------------------------------

@dataclass
class EdgeResult:
    E: float
    state: object
    report: object
    trace_defect: float
    path: list


def _edge_fn(V, freq, m, sched, sign, warm):
    def h(E):
        c = schrodinger_cocycle(V, E, freq)
        st, rep = reduce_full(c, sched, ("rational", m), warm_start=warm.get("b"))
        warm["b"] = st.b_accum
        warm["last"] = (E, st, rep)
        return sign * np.trace(st.a_const) - 2.0
    return h


def refine_edge_by_reduction(V, freq, m, bracket, sched=None, warm_start=None, xtol=1e-14):
    """Energy in ``bracket`` where the reduced constant has trace +-2 (a gap edge)."""
    freq = as_frequency(freq)
    sched = sched or KamSchedule()
    _, sign = band_rho_label(m, freq)
    warm = {"b": warm_start}
    h = _edge_fn(V, freq, m, sched, sign, warm)
    a, b = bracket
    ha, hb = h(a), h(b)
    if ha * hb > 0:
        raise ValueError(f"edge bracket has no sign change: h({a})={ha:.3e}, h({b})={hb:.3e}")
    E = optimize.brentq(h, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    hv = h(E)
    _, st, rep = warm["last"]
    return EdgeResult(E, st, rep, float(hv), [])


def _edge_secant(h, E0, dE, tol=1e-13, max_iter=40):
    x0, x1 = E0, E0 + dE
    f0, f1 = h(x0), h(x1)
    for _ in range(max_iter):
        if f1 == f0:
            break
        x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
        x0, f0 = x1, f1
        x1, f1 = x2, h(x2)
        if abs(x1 - x0) < tol:
            break
    return x1, f1


def continue_gap_edge(V: Potential, freq, m, side: str, lam_target: float, lam_start: float = 0.01,
                      lam_step: float = 0.01, sched=None, min_step=1e-4):
    """Follow the `side` ("left"/"right") edge of the gap labelled m from a small
    coupling to ``lam_target`` with warm-started reductions and secant solves."""
    freq = as_frequency(freq)
    sched = sched or KamSchedule()
    rho_m, sign = band_rho_label(m, freq)
    E_free = 2.0 * np.cos(2 * np.pi * rho_m)
    lam = lam_start
    Vs = V.with_coupling(lam)
    # at small coupling the gap is centred near the free energy; bracket each side
    half = 4.0 * max(abs(V.v.coeffs).sum(), 1e-3) * lam + 1e-3
    brk = (E_free - half, E_free) if side == "left" else (E_free, E_free + half)
    res = refine_edge_by_reduction(Vs, freq, m, brk if side == "left" else brk[::-1], sched)
    path = [(lam, res.E)]
    b = res.state.b_accum
    E = res.E
    dE_dl = 0.0
    step = lam_step
    while lam < lam_target - 1e-15:
        nl = min(lam + step, lam_target)
        guess = E + dE_dl * (nl - lam)
        warm = {"b": b}
        h = _edge_fn(V.with_coupling(nl), freq, m, sched, sign, warm)
        try:
            En, hv = _edge_secant(h, guess, 1e-6)
            ok = abs(hv) < 1e-9
        except (KamError, ValueError, np.linalg.LinAlgError):
            ok = False
        if not ok:
            step /= 2
            if step < min_step:
                raise KamError(f"edge continuation stalled at coupling {lam}")
            continue
        dE_dl = (En - E) / (nl - lam)
        lam, E = nl, En
        b = warm["b"]
        path.append((lam, E))
        step = min(step * 1.5, lam_step * 2)
    _, st, rep = warm["last"] if len(path) > 1 else (E, res.state, res.report)
    return EdgeResult(E, st, rep, float(sign * np.trace(st.a_const) - 2), path)


__all__ = [
    "Potential", "schrodinger_cocycle", "ids", "scan_spectrum", "gap_label", "locate_energy_by_rotation",
    "SpectrumScan", "Gap", "fold_rho", "schrodinger_rho", "band_rho_label", "refine_edge_by_reduction",
    "continue_gap_edge", "EdgeResult", "QUALITY", "rho_by_reduction", "refine_energy_by_reduction",
]
