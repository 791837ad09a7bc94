"""Quasi-periodic SL(2,R) cocycles: iteration, rotation number, Lyapunov exponent,
degree, uniform hyperbolicity and conjugation.

Conventions
-----------
* A cocycle (alpha, A) acts by (theta, v) -> (theta + alpha, A(theta) v).
* R_phi rotates by 2 pi phi; rotation numbers are measured in turns of the
  vector angle, so rho(alpha, R_phi) = phi mod 1 and the Schroedinger cocycle
  S_E^V = [[E - V, -1], [1, 0]] has rho in [0, 1/2].
* The degree of a map on the doubled torus is its winding over the doubled
  period, so b = R_{<m, theta>/2} has degree m there and conjugating by it
  moves rho by <m, alpha>/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .torus import MatrixTorusFunction, rotation_matrix

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
SILVER = np.sqrt(2.0) - 1.0
GROWTH_RTOL = 1e-6  # a cone of positive width around an exactly-2 direction grows by 2 - O(w^2)


def dist_z(x):
    """Distance to the nearest integer, ||x||_{R/Z}."""
    x = np.asarray(x, dtype=float)
    return np.abs(x - np.round(x))


@dataclass(frozen=True)
class Frequency:
    alpha: tuple
    dc_params: tuple | None = None  # (kappa, tau)

    def __init__(self, alpha, dc_params=None, check=True):
        a = tuple(float(v) for v in np.atleast_1d(alpha))
        if len(a) not in (1, 2):
            raise ValueError("only d = 1 or d = 2 frequencies are supported")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "dc_params", None if dc_params is None else tuple(dc_params))
        if check:
            radius = 10_000 if len(a) == 1 else 300
            _, worst, dist = _dc_scan(np.array(a), radius, tau=0.0)
            if dist < 1e-12:
                raise ValueError(f"frequency is rationally dependent at mode {worst}")
            if dc_params is not None:
                ok, worst = is_diophantine(self, dc_params[0], dc_params[1], 1000 if len(a) == 1 else 100)
                if not ok:
                    raise ValueError(f"frequency fails its Diophantine parameters at {worst}")

    @property
    def d(self) -> int:
        return len(self.alpha)

    @property
    def vec(self) -> np.ndarray:
        return np.array(self.alpha)

    def pair(self, m) -> float:
        """<m, alpha>."""
        return float(np.dot(np.atleast_1d(m), self.vec))

    def to_dict(self):
        return {"alpha": list(self.alpha), "dc_params": None if self.dc_params is None else list(self.dc_params)}

    @classmethod
    def golden(cls):
        return cls(GOLDEN)


def as_frequency(freq) -> Frequency:
    return freq if isinstance(freq, Frequency) else Frequency(freq, check=False)


def _modes_upto(radius, d):
    if d == 1:
        return np.arange(1, radius + 1).reshape(-1, 1)
    r = np.arange(-radius, radius + 1)
    X, Y = np.meshgrid(r, r, indexing="ij")
    m = np.stack([X.ravel(), Y.ravel()], 1)
    # one representative of each +-n pair
    keep = (m[:, 0] > 0) | ((m[:, 0] == 0) & (m[:, 1] > 0))
    return m[keep]


def _dc_scan(alpha, radius, tau):
    m = _modes_upto(radius, len(alpha))
    dist = dist_z(m @ alpha)
    score = np.max(np.abs(m), axis=1).astype(float) ** tau * dist
    i = int(np.argmin(score))
    return score[i], tuple(int(v) for v in m[i]), float(dist[i])


def is_diophantine(freq, kappa, tau, check_radius: int):
    """Check ||<n, alpha>|| > kappa / |n|^tau for 0 < |n| <= check_radius.

    Returns (passed, worst_mode) where worst_mode minimises |n|^tau ||<n, alpha>||.
    """
    if check_radius < 1:
        raise ValueError("check_radius must be >= 1")
    alpha = as_frequency(freq).vec
    score, worst, _ = _dc_scan(alpha, int(check_radius), tau)
    return bool(score > kappa), worst


def rho_diophantine_margin(rho, freq, gamma, tau, radius):
    """min over 0 < |m| <= radius of ||2 rho - <m, alpha>|| (|m|+1)^tau / gamma (pass iff >= 1).

    m = 0 is included (2 rho must stay away from integers).
    """
    alpha = as_frequency(freq).vec
    m = _modes_upto(radius, len(alpha))
    m = np.concatenate([np.zeros((1, len(alpha)), dtype=int), m, -m])
    dist = dist_z(2 * rho - m @ alpha)
    score = dist * (np.max(np.abs(m), axis=1) + 1.0) ** tau / gamma
    i = int(np.argmin(score))
    return float(score[i]), tuple(int(v) for v in m[i])


@dataclass
class Cocycle:
    freq: Frequency
    amap: MatrixTorusFunction

    def __post_init__(self):
        self.freq = as_frequency(self.freq)
        if self.amap.d != self.freq.d:
            raise ValueError("frequency and map dimensions differ")
        if not self.amap.check_SL2():
            raise ValueError("cocycle map does not take values in SL(2,R)")
        self.amap.tag = "SL2"

    @classmethod
    def constant(cls, freq, mat):
        freq = as_frequency(freq)
        return cls(freq, MatrixTorusFunction.constant(np.asarray(mat, float), freq.d, tag="SL2"))

    @property
    def d(self):
        return self.freq.d

    def at(self, theta):
        return self.amap(theta)

    def to_dict(self):
        return {"freq": self.freq.to_dict(), "amap": self.amap.to_dict()}

    @classmethod
    def from_dict(cls, data):
        fr = data["freq"]
        return cls(Frequency(fr["alpha"], fr.get("dc_params"), check=False),
                   MatrixTorusFunction.from_dict(data["amap"]))


@dataclass
class RotationEstimate:
    rho: float
    n_iters: int
    error_bound: float
    per_phase: np.ndarray = field(default=None, repr=False)
    lift: float = 0.0

    def to_dict(self):
        return {"rho": self.rho, "n_iters": self.n_iters, "error_bound": self.error_bound,
                "convention": "turns of the vector angle; Schroedinger cocycles in [0,1/2]"}


# -- compiled orbit kernels ------------------------------------------------------

@numba.njit(cache=True)
def _eval_map(C, R, z1, z2, d, pw1, pw2, out):
    """Real 2x2 value of the series with coefficient box C (4, K, K2) where
    z_i = exp(2 pi i x_i / P) encode the base point."""
    K = 2 * R + 1
    if R == 0:
        for e in range(4):
            out[e] = C[e, 0, 0].real
        return
    zi = 1.0 / z1
    pw1[R] = 1.0
    for k in range(1, R + 1):
        pw1[R + k] = pw1[R + k - 1] * z1
        pw1[R - k] = pw1[R - k + 1] * zi
    if d == 2:
        zi2 = 1.0 / z2
        pw2[R] = 1.0
        for k in range(1, R + 1):
            pw2[R + k] = pw2[R + k - 1] * z2
            pw2[R - k] = pw2[R - k + 1] * zi2
    for e in range(4):
        acc = 0.0
        if d == 1:
            for k in range(K):
                acc += (C[e, k, 0] * pw1[k]).real
        else:
            for k1 in range(K):
                row = 0j
                for k2 in range(K):
                    row += C[e, k1, k2] * pw2[k2]
                acc += (row * pw1[k1]).real
        out[e] = acc


@numba.njit(cache=True)
def _interp_lift(G, x1, x2, P, d):
    n1 = G.shape[0]
    t1 = (x1 % P) / P * n1
    i1 = int(np.floor(t1))
    f1 = t1 - i1
    i1 %= n1
    j1 = (i1 + 1) % n1
    if d == 1:
        return (1 - f1) * G[i1, 0] + f1 * G[j1, 0]
    n2 = G.shape[1]
    t2 = (x2 % P) / P * n2
    i2 = int(np.floor(t2))
    f2 = t2 - i2
    i2 %= n2
    j2 = (i2 + 1) % n2
    return ((1 - f1) * (1 - f2) * G[i1, i2] + f1 * (1 - f2) * G[j1, i2]
            + (1 - f1) * f2 * G[i1, j2] + f1 * f2 * G[j1, j2])


@numba.njit(cache=True)
def _orbit_stats(C, R, P, d, alpha, theta0, angle0, n, lift_grid, use_lift, weights, want_lyap=True):
    """Return (weighted mean lifted angle increment, mean log growth) for each phase."""
    nph = theta0.shape[0]
    rho = np.zeros(nph)
    lyap = np.zeros(nph)
    pw1 = np.zeros(2 * R + 1, dtype=np.complex128)
    pw2 = np.zeros(2 * R + 1, dtype=np.complex128)
    a = np.zeros(4)
    twopi = 2 * np.pi
    wsum = 0.0
    for j in range(n):
        wsum += weights[j]
    s1 = np.exp(2j * np.pi * alpha[0] / P)
    s2 = np.exp(2j * np.pi * alpha[1] / P)
    for p in range(nph):
        ang = angle0[p]
        v0 = np.cos(twopi * ang)
        v1 = np.sin(twopi * ang)
        acc = 0.0
        lg = 0.0
        psi = 0.0
        x1 = theta0[p, 0]
        x2 = theta0[p, 1]
        z1 = np.exp(2j * np.pi * x1 / P)
        z2 = np.exp(2j * np.pi * x2 / P)
        for j in range(n):
            if R > 0 and j % 512 == 0:
                # resynchronise the multiplicative phase recurrence
                y1 = (theta0[p, 0] + j * alpha[0]) % P
                y2 = (theta0[p, 1] + j * alpha[1]) % P
                z1 = np.exp(2j * np.pi * y1 / P)
                z2 = np.exp(2j * np.pi * y2 / P)
                x1 = y1
                x2 = y2
            if R > 0 or j == 0:
                _eval_map(C, R, z1, z2, d, pw1, pw2, a)
            w0 = a[0] * v0 + a[1] * v1
            w1 = a[2] * v0 + a[3] * v1
            nrm = np.sqrt(w0 * w0 + w1 * w1)
            if want_lyap:
                lg += np.log(nrm)
            if use_lift:
                if R > 0 or j == 0:
                    psi = np.arctan2(a[2], a[0]) / twopi
                    base = _interp_lift(lift_grid, x1, x2, P, d)
                    psi += np.round(base - psi)
                new = np.arctan2(w1, w0) / twopi
                rel = new - psi - ang
                rel -= np.round(rel)
                inc = psi + rel
                acc += weights[j] * inc
                ang = ang + inc
                ang -= np.floor(ang)
            v0 = w0 / nrm
            v1 = w1 / nrm
            z1 *= s1
            z2 *= s2
            x1 += alpha[0]
            x2 += alpha[1]
        rho[p] = acc / wsum if use_lift else 0.0
        lyap[p] = lg / n
    return rho, lyap


@numba.njit(cache=True)
def _products_kernel(C, R, P, d, alpha, theta0, n, warm, out_M, out_dir):
    """A_n(theta) at each base point and the forward-iterated direction at theta
    (from theta - warm alpha, angle in radians mod pi)."""
    pw1 = np.zeros(2 * R + 1, dtype=np.complex128)
    pw2 = np.zeros(2 * R + 1, dtype=np.complex128)
    a = np.zeros(4)
    for p in range(theta0.shape[0]):
        # direction: iterate a vector from theta - warm alpha up to theta
        v0 = 1.0
        v1 = 0.37
        for j in range(warm):
            y1 = (theta0[p, 0] + (j - warm) * alpha[0]) % P
            y2 = (theta0[p, 1] + (j - warm) * alpha[1]) % P
            _eval_map(C, R, np.exp(2j * np.pi * y1 / P), np.exp(2j * np.pi * y2 / P), d, pw1, pw2, a)
            w0 = a[0] * v0 + a[1] * v1
            w1 = a[2] * v0 + a[3] * v1
            nrm = np.sqrt(w0 * w0 + w1 * w1)
            v0 = w0 / nrm
            v1 = w1 / nrm
        out_dir[p] = np.arctan2(v1, v0) % np.pi
        m00 = 1.0
        m01 = 0.0
        m10 = 0.0
        m11 = 1.0
        for j in range(n):
            y1 = (theta0[p, 0] + j * alpha[0]) % P
            y2 = (theta0[p, 1] + j * alpha[1]) % P
            _eval_map(C, R, np.exp(2j * np.pi * y1 / P), np.exp(2j * np.pi * y2 / P), d, pw1, pw2, a)
            n00 = a[0] * m00 + a[1] * m10
            n01 = a[0] * m01 + a[1] * m11
            n10 = a[2] * m00 + a[3] * m10
            n11 = a[2] * m01 + a[3] * m11
            m00, m01, m10, m11 = n00, n01, n10, n11
        out_M[p, 0, 0] = m00
        out_M[p, 0, 1] = m01
        out_M[p, 1, 0] = m10
        out_M[p, 1, 1] = m11


def bump_weights(n):
    """Smooth bump exp(-1/(t(1-t))) sampled at midpoints, used for weighted Birkhoff sums."""
    t = (np.arange(n) + 0.5) / n
    return np.exp(-1.0 / (t * (1.0 - t)))


def _coeff_box(amap: MatrixTorusFunction):
    c = np.ascontiguousarray(amap.coeffs.reshape((4,) + amap.coeffs.shape[2:]))
    if amap.d == 1:
        c = c[..., None]
    return c.astype(np.complex128), amap.radius


def _phases(n_phases, d, seed=0):
    """Deterministic low-discrepancy (theta, angle) starting points (R_{d+1} sequence)."""
    dim = d + 1
    g = 2.0
    for _ in range(50):
        g = (1 + g) ** (1.0 / (dim + 1))
    a = (1.0 / g) ** np.arange(1, dim + 1)
    j = np.arange(1, n_phases + 1) + seed * 1009
    pts = (0.5 + np.outer(j, a)) % 1.0
    return pts[:, :d], pts[:, d]


def _first_col_angle(vals):
    return np.arctan2(vals[..., 1, 0], vals[..., 0, 0]) / (2 * np.pi)


def _lift_grid(amap: MatrixTorusFunction, max_grid=2**14):
    """Continuous lift of the first-column angle on a grid, refusing nonzero degree."""
    d = amap.d
    G = max(64, 8 * amap.radius + 8)
    cap = max_grid if d == 1 else 1024
    while True:
        vals = amap.grid_values(G)
        psi = _first_col_angle(vals)
        if d == 1:
            psi = psi.reshape(-1, 1)
        jumps = [np.abs(dist_z(np.diff(psi, axis=ax, append=np.take(psi, [0], axis=ax))))
                 for ax in range(d)]
        if max(float(j.max()) for j in jumps) < 0.125 or G >= cap:
            break
        G *= 2
    deg = degree(amap)
    if any(deg):
        raise ValueError(f"rotation number needs a degree-0 map; measured degree {deg}")
    un = np.copy(psi)
    un[:, 0] = _unwrap_turns(psi[:, 0])
    for i in range(un.shape[0]):
        if d == 2:
            row = _unwrap_turns(psi[i, :])
            un[i, :] = row + np.round(un[i, 0] - row[0])
    return np.ascontiguousarray(un)


def _unwrap_turns(x):
    return np.unwrap(2 * np.pi * np.asarray(x)) / (2 * np.pi)


def _validate_orbit_args(n_iters, n_phases):
    if n_iters < 1 or n_phases < 1:
        raise ValueError("n_iters and n_phases must be positive")


def rotation_number(c: Cocycle, n_iters: int = 100_000, n_phases: int = 32, seed: int = 0) -> RotationEstimate:
    """Fibered rotation number by smoothly weighted Birkhoff averages of lifted angle increments."""
    _validate_orbit_args(n_iters, n_phases)
    amap = c.amap
    lift = _lift_grid(amap)
    C, R = _coeff_box(amap)
    th, ang = _phases(n_phases, c.d, seed)
    th = th * amap.period
    alpha = np.array(c.freq.alpha + (0.0,) * (2 - c.d))
    th2 = np.zeros((n_phases, 2))
    th2[:, :c.d] = th
    per, _ = _orbit_stats(C, R, amap.period, c.d, alpha, th2, ang, int(n_iters), lift, True,
                          bump_weights(int(n_iters)), False)
    mean = float(np.mean(per))
    spread = float(np.max(per) - np.min(per))
    rho = mean % 1.0
    if rho > 1.0 - 1e-13:
        rho = 0.0
    return RotationEstimate(rho, int(n_iters), spread + 1.0 / n_iters, per, mean)


def lyapunov_exponent(c: Cocycle, n_iters: int = 100_000, n_phases: int = 8, seed: int = 0,
                      return_raw: bool = False):
    """Mean of (1/n) log |A_n(theta) v| over phases, clamped at zero."""
    _validate_orbit_args(n_iters, n_phases)
    C, R = _coeff_box(c.amap)
    th, ang = _phases(n_phases, c.d, seed)
    th2 = np.zeros((n_phases, 2))
    th2[:, :c.d] = th * c.amap.period
    alpha = np.array(c.freq.alpha + (0.0,) * (2 - c.d))
    _, lg = _orbit_stats(C, R, c.amap.period, c.d, alpha, th2, ang, int(n_iters),
                         np.zeros((1, 1)), False, np.ones(1))
    raw = float(np.mean(lg))
    val = max(raw, 0.0)
    return (val, raw) if return_raw else val


def transfer_product(c: Cocycle, theta, n: int) -> np.ndarray:
    """A(theta + (n-1) alpha) ... A(theta); for n < 0 the inverse of A_{-n}(theta + n alpha)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if n == 0:
        return np.eye(2)
    if n < 0:
        M = transfer_product(c, theta + n * c.freq.vec, -n)
        return np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]])
    pts = theta[None, :] + np.arange(n)[:, None] * c.freq.vec[None, :]
    mats = c.amap(pts if c.d == 2 else pts[:, 0])
    out = np.eye(2)
    for M in mats:
        out = M @ out
    return out


def _compiled_products(c: Cocycle, thetas, n: int, warm: int = 0):
    thetas = np.asarray(thetas, dtype=float).reshape(-1, c.d)
    C, R = _coeff_box(c.amap)
    th = np.zeros((thetas.shape[0], 2))
    th[:, :c.d] = thetas
    alpha = np.zeros(2)
    alpha[:c.d] = c.freq.vec
    M = np.zeros((th.shape[0], 2, 2))
    u = np.zeros(th.shape[0])
    _products_kernel(C, R, float(c.amap.period), c.d, alpha, th, int(n), int(warm), M, u)
    return M, u


def orbit_products(c: Cocycle, thetas: np.ndarray, n: int) -> np.ndarray:
    """A_n(theta) for many base points at once (shape (P, 2, 2))."""
    return _compiled_products(c, thetas, n)[0]


# -- degree ------------------------------------------------------------------------

def degree(b: MatrixTorusFunction, max_samples: int = 2**20, line_offsets=(0.0,)) -> tuple:
    """Winding of the first-column direction along each fundamental cycle.

    Grids are doubled until successive angle jumps are below pi/4 (1/8 turn).
    """
    d = b.d
    P = b.period
    out = []
    for ax in range(d):
        wind = None
        for off in line_offsets:
            G = max(64, 8 * b.radius + 8)
            while True:
                t = np.arange(G) * P / G
                pts = np.zeros((G, d))
                pts[:, ax] = t
                for o in range(d):
                    if o != ax:
                        pts[:, o] = off * P
                vals = b(pts if d == 2 else pts[:, 0])
                if np.min(np.hypot(vals[:, 0, 0], vals[:, 1, 0])) == 0:
                    raise ValueError("first column vanishes on the sampling grid")
                psi = _first_col_angle(vals)
                steps = np.diff(np.append(psi, psi[0]))
                steps -= np.round(steps)
                if np.max(np.abs(steps)) < 0.125:
                    break
                if G * 2 > max_samples:
                    raise ValueError("degree: angle jumps stay >= pi/4 at the maximal grid")
                G *= 2
            w = int(np.round(np.sum(steps)))
            if wind is not None and w != wind:
                raise ValueError("degree: inconsistent winding across base lines")
            wind = w
        out.append(wind)
    return tuple(out)


def degree_on_double(b: MatrixTorusFunction) -> tuple:
    """Degree measured on the doubled torus (twice the T^d degree for single maps)."""
    dg = degree(b)
    return dg if b.double else tuple(2 * v for v in dg)


# -- uniform hyperbolicity --------------------------------------------------------

@dataclass
class UHCertificate:
    passed: bool
    n: int | None
    cone_halfwidth: float | None
    min_growth: float
    margin: float
    grid_n: int

    def to_dict(self):
        return dict(self.__dict__)


def _grid_points(d, G):
    x = np.arange(G) / G
    if d == 1:
        return x.reshape(-1, 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], 1)


def _forward_direction(c: Cocycle, pts, n_warm):
    """Unstable direction angle (radians, mod pi) at pts by forward iteration from pts - n alpha."""
    return _compiled_products(c, pts, 0, n_warm)[1]


def _angdiff(a, b):
    """Signed difference of projective angles (mod pi) in (-pi/2, pi/2]."""
    x = (a - b) % np.pi
    return np.where(x > np.pi / 2, x - np.pi, x)


def _min_growth_on_arc(M, lo, hi):
    """min over angles t in [lo, hi] of |M (cos t, sin t)| (arc shorter than pi)."""
    Q = np.einsum("pji,pjk->pik", M, M)
    a = 0.5 * (Q[:, 0, 0] + Q[:, 1, 1])
    b = 0.5 * (Q[:, 0, 0] - Q[:, 1, 1])
    cc = Q[:, 0, 1]
    # v^T Q v = a + b cos 2t + cc sin 2t ; minimum at 2t = atan2(cc, b) + pi
    tmin = 0.5 * (np.arctan2(cc, b) + np.pi)
    def val(t):
        return a + b * np.cos(2 * t) + cc * np.sin(2 * t)
    best = np.minimum(val(lo), val(hi))
    width = hi - lo
    inside = ((tmin - lo) % np.pi) <= width
    best = np.where(inside, np.minimum(best, val(tmin)), best)
    return np.sqrt(np.maximum(best, 0.0))


def is_uniformly_hyperbolic(c: Cocycle, n_max: int = 4096, grid_n: int | None = None,
                            growth_min: float = 2.0, n_warm: int | None = None,
                            widths=(0.4, 0.2, 0.1, 0.05, 0.02, 0.01, 5e-3, 2e-3, 1e-3, 5e-4,
                                    2e-4)) -> UHCertificate:
    """One-sided invariant-cone certificate for uniform hyperbolicity.

    Cones of half-width w (radians) are centred on the numerically estimated
    unstable direction at each grid point.  The test passes for iterate n when
    A_n(theta) maps every cone strictly inside the cone at theta + n alpha and
    stretches every vector of it by at least ``growth_min``.
    """
    grid_n = grid_n or (256 if c.d == 1 else 32)
    if c.amap.radius == 0:
        grid_n = 1  # constant cocycle: every base point is alike
    pts = _grid_points(c.d, grid_n) * c.amap.period
    best = UHCertificate(False, None, None, 0.0, -np.inf, grid_n)
    n = 1
    while n <= n_max:
        warm = n_warm if n_warm is not None else max(4 * n, 64)
        u0 = _forward_direction(c, pts, warm)
        u1 = _forward_direction(c, pts + n * c.freq.vec, warm)
        M = orbit_products(c, pts, n)
        if not np.all(np.isfinite(M)) or np.max(np.abs(M)) > 1e150:
            break  # products overflow: longer iterates carry no more information
        for w in widths:
            ends = np.stack([u0 - w, u0, u0 + w], 1)
            imgs = []
            for k in range(3):
                v = np.stack([np.cos(ends[:, k]), np.sin(ends[:, k])], 1)
                mv = np.einsum("pij,pj->pi", M, v)
                imgs.append(np.arctan2(mv[:, 1], mv[:, 0]))
            dlo = _angdiff(imgs[0], u1)
            dmid = _angdiff(imgs[1], u1)
            dhi = _angdiff(imgs[2], u1)
            # orientation: the arc lo -> mid -> hi is mapped monotonically
            ordered = ((dlo <= dmid) & (dmid <= dhi)) | ((dlo >= dmid) & (dmid >= dhi))
            inside = np.maximum(np.abs(dlo), np.abs(dhi))
            margin = float(np.min(np.where(ordered, w - inside, -np.inf)))
            grow = float(np.min(_min_growth_on_arc(M, u0 - w, u0 + w)))
            score = min(margin / w, (grow - growth_min) / growth_min)
            if score > best.margin:
                best = UHCertificate(False, n, w, grow, score, grid_n)
            if margin > 0 and grow >= growth_min * (1.0 - GROWTH_RTOL):
                return UHCertificate(True, n, w, grow, score, grid_n)
        n *= 2
    return best


# -- conjugation ------------------------------------------------------------------

def conjugate(c: Cocycle, b: MatrixTorusFunction) -> Cocycle:
    """(alpha, b(theta + alpha) A(theta) b(theta)^{-1}), computed by exact series algebra."""
    if b.d != c.d:
        raise ValueError("conjugacy and cocycle live on different tori")
    if not b.check_SL2():
        raise ValueError("conjugacy must take values in SL(2,R)")
    new = b.shift(c.freq.vec) * c.amap * b.inverse_SL2()
    new = new.trim(1e-15)
    new.tag = "SL2"
    return Cocycle(c.freq, new)


def constant_rotation_number(A: np.ndarray) -> float:
    """rho of a constant elliptic (or +-parabolic) SL(2,R) matrix."""
    A = np.asarray(A, dtype=float)
    tr = np.trace(A)
    if abs(tr) > 2 + 1e-12:
        return 0.0 if tr > 0 else 0.5
    w = np.arccos(np.clip(tr / 2, -1, 1)) / (2 * np.pi)
    if A[1, 0] > 0 or (A[1, 0] == 0 and A[0, 1] <= 0):
        return float(w)
    return float((1.0 - w) % 1.0)


__all__ = [
    "GOLDEN", "SILVER", "Frequency", "Cocycle", "RotationEstimate", "UHCertificate",
    "is_diophantine", "rho_diophantine_margin", "transfer_product", "orbit_products",
    "rotation_number", "lyapunov_exponent", "degree", "degree_on_double",
    "is_uniformly_hyperbolic", "conjugate", "constant_rotation_number", "dist_z",
    "rotation_matrix",
]
