"""Finite Fourier series on the torus T^d (d = 1, 2) and on the doubled torus 2T^d.

Coefficients are stored densely on the centred box |n|_max <= radius.  A series
on the doubled torus uses integer modes k with basis e^{i pi <k, theta>}, so a
series on T^d embeds by k = 2n.

Scalar series back potentials and matrix entries; matrix series hold sl(2,R)
perturbations and SL(2,R) conjugacies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy import signal

TOL_STRUCT = 1e-9


def default_grid(d: int) -> int:
    return 256 if d == 1 else 64


@dataclass(frozen=True)
class NormEstimate:
    kind: str  # "analytic", "ck" or "sup"
    value: float
    param: float | int | None = None

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("norm estimate must be nonnegative")
        if self.kind == "analytic" and not (self.param is not None and self.param > 0):
            raise ValueError("analytic(h) requires h > 0")
        if self.kind == "ck" and not (isinstance(self.param, (int, np.integer)) and self.param >= 0):
            raise ValueError("ck(k) requires integer k >= 0")

    def __float__(self):
        return float(self.value)


def _as_points(theta, d):
    pts = np.asarray(theta, dtype=float)
    if d == 1:
        return pts.reshape(-1, 1)
    return pts.reshape(-1, d)


def mode_grid(radius: int, d: int) -> list[np.ndarray]:
    """Integer mode coordinates of the dense coefficient box, one array per axis."""
    r = np.arange(-radius, radius + 1)
    return list(np.meshgrid(*([r] * d), indexing="ij"))


def mode_maxnorm(radius: int, d: int) -> np.ndarray:
    return np.max(np.abs(np.stack(mode_grid(radius, d))), axis=0)


class FourierSeries:
    """Common machinery for scalar and matrix valued series.

    ``coeffs`` has shape ``value_shape + (2R+1,)*d``.
    """

    value_shape: tuple = ()
    __array_ufunc__ = None  # let numpy defer to our reflected operators

    def __init__(self, coeffs, double: bool = False, real: bool = True):
        c = np.array(coeffs, dtype=complex)
        nv = len(self.value_shape)
        if c.shape[:nv] != self.value_shape:
            raise ValueError(f"coefficient array must start with {self.value_shape}")
        d = c.ndim - nv
        if d not in (1, 2):
            raise ValueError("only d = 1 or d = 2 is supported")
        if len(set(c.shape[nv:])) != 1 or c.shape[nv] % 2 == 0:
            raise ValueError("coefficient box must be square with odd side")
        if real:
            flip = c[(Ellipsis,) + (slice(None, None, -1),) * d]
            c = 0.5 * (c + np.conj(flip))
        c.setflags(write=False)
        self._c = c
        self.d = d
        self.double = bool(double)
        self.real = bool(real)

    # -- basic properties -------------------------------------------------
    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def radius(self) -> int:
        return (self._c.shape[-1] - 1) // 2

    @property
    def period(self) -> float:
        return 2.0 if self.double else 1.0

    def _new(self, coeffs, double=None, real=None):
        return type(self)(coeffs, self.double if double is None else double,
                          self.real if real is None else real)

    def coeff(self, n) -> complex | np.ndarray:
        n = np.atleast_1d(np.asarray(n, dtype=int))
        if np.max(np.abs(n)) > self.radius:
            return np.zeros(self.value_shape, dtype=complex) if self.value_shape else 0j
        idx = tuple(int(k) + self.radius for k in n)
        return self._c[(Ellipsis,) + idx]

    def support_radius(self, tol: float = 0.0) -> int:
        """Largest |n| carrying a coefficient above ``tol``."""
        mag = np.abs(self._c).reshape((-1,) + self._c.shape[len(self.value_shape):])
        mag = np.max(mag, axis=0) if mag.shape[0] > 1 else mag[0]
        mask = mag > tol
        if not mask.any():
            return 0
        return int(mode_maxnorm(self.radius, self.d)[mask].max())

    # -- reshaping ---------------------------------------------------------
    def pad(self, radius: int):
        if radius <= self.radius:
            return self
        w = radius - self.radius
        nv = len(self.value_shape)
        widths = [(0, 0)] * nv + [(w, w)] * self.d
        return self._new(np.pad(self._c, widths))

    def truncate(self, radius: int):
        """Zero all modes with |n| > radius (the box shrinks to ``radius``)."""
        radius = max(int(radius), 0)
        if radius >= self.radius:
            return self
        s = slice(self.radius - radius, self.radius + radius + 1)
        return self._new(self._c[(Ellipsis,) + (s,) * self.d])

    def trim(self, tol: float = 1e-16, atol: float = 0.0):
        """Shrink the box to the support of coefficients above max(tol * max, atol)."""
        scale = np.max(np.abs(self._c)) if self._c.size else 0.0
        return self.truncate(self.support_radius(max(tol * scale, atol)))

    def to_double(self):
        if self.double:
            return self
        R = self.radius
        out = np.zeros(self.value_shape + (4 * R + 1,) * self.d, dtype=complex)
        out[(Ellipsis,) + (slice(0, None, 2),) * self.d] = self._c
        return self._new(out, double=True)

    def odd_mass(self) -> float:
        """Coefficient mass on odd modes (zero iff the series lives on T^d)."""
        if not self.double:
            return 0.0
        grids = mode_grid(self.radius, self.d)
        odd = np.zeros(grids[0].shape, dtype=bool)
        for g in grids:
            odd |= (g % 2) != 0
        return float(np.abs(self._c[..., odd]).sum())

    def to_single(self, tol: float = 1e-10):
        """Reinterpret a doubled-torus series with only even modes as a series on T^d."""
        if not self.double:
            return self
        if self.odd_mass() > tol:
            raise ValueError("series has odd modes; it does not live on T^d")
        R = self.radius
        start = R % 2
        sub = self._c[(Ellipsis,) + (slice(start, None, 2),) * self.d]
        return self._new(sub, double=False)

    def _align(self, other):
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        a, b = self, other
        if a.double != b.double:
            a, b = a.to_double(), b.to_double()
        R = max(a.radius, b.radius)
        return a.pad(R), b.pad(R)

    # -- algebra -----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, FourierSeries):
            a, b = self._align(other)
            return a._new(a._c + b._c, real=a.real and b.real)
        return self + self.constant_like(other)

    __radd__ = __add__

    def __neg__(self):
        return self._new(-self._c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, s):
        real = self.real and np.isrealobj(s)
        return self._new(self._c * s, real=real)

    def shift(self, alpha):
        """Coefficients of theta -> f(theta + alpha)."""
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        grids = mode_grid(self.radius, self.d)
        phase = sum(g * a for g, a in zip(grids, alpha)) * (2.0 / self.period)
        return self._new(self._c * np.exp(1j * np.pi * phase))

    def average(self):
        c0 = self._c[(Ellipsis,) + (self.radius,) * self.d]
        return np.real(c0) if self.real else c0

    def derivative(self, order):
        """Mode-wise partial derivative of multi-order ``order``."""
        order = tuple(np.atleast_1d(order).astype(int))
        grids = mode_grid(self.radius, self.d)
        fac = np.ones(grids[0].shape, dtype=complex)
        for g, k in zip(grids, order):
            fac = fac * (2j * np.pi * g / self.period) ** k
        return self._new(self._c * fac)

    # -- evaluation --------------------------------------------------------
    def _phase_matrix(self, x):
        k = np.arange(-self.radius, self.radius + 1)
        return np.exp(2j * np.pi * np.outer(x, k) / self.period)

    def __call__(self, theta):
        """Values at points; theta has shape (P,) for d = 1 or (P, d)."""
        pts = _as_points(theta, self.d)
        if self.d == 1:
            E = self._phase_matrix(pts[:, 0])
            vals = np.tensordot(self._c, E, axes=([-1], [1]))
        else:
            E1 = self._phase_matrix(pts[:, 0])
            E2 = self._phase_matrix(pts[:, 1])
            vals = np.einsum("...ab,pa,pb->...p", self._c, E1, E2)
        vals = np.moveaxis(vals, -1, 0)
        return vals.real if self.real else vals

    def grid_points(self, grid_n: int) -> np.ndarray:
        x = np.arange(grid_n) * self.period / grid_n
        if self.d == 1:
            return x.reshape(-1, 1)
        X, Y = np.meshgrid(x, x, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def grid_values(self, grid_n: int) -> np.ndarray:
        """Values on the uniform grid over the fundamental domain (inverse FFT).

        Shape ``(grid_n,)*d + value_shape``; modes beyond the grid are folded.
        """
        G = int(grid_n)
        nv = len(self.value_shape)
        R = self.radius
        K = 2 * R + 1
        buf = np.zeros(self.value_shape + (G,) * self.d, dtype=complex)
        idx = np.arange(-R, R + 1) % G
        if K <= G:
            ix = np.ix_(*([idx] * self.d))
            buf[(Ellipsis,) + ix] = self._c
        else:
            for pos in np.ndindex(*([K] * self.d)):
                tgt = tuple(int(idx[p]) for p in pos)
                buf[(Ellipsis,) + tgt] += self._c[(Ellipsis,) + pos]
        axes = tuple(range(nv, nv + self.d))
        vals = np.fft.ifftn(buf, axes=axes) * G ** self.d
        vals = np.moveaxis(vals, list(range(nv)), list(range(self.d, self.d + nv)))
        return vals.real if self.real else vals

    @classmethod
    def from_grid(cls, values, d: int, double: bool = False, real: bool = True,
                  radius: int | None = None):
        """Inverse of ``grid_values``; keeps modes |n| < grid_n / 2."""
        v = np.asarray(values)
        G = v.shape[0]
        nv = v.ndim - d
        v = np.moveaxis(v, list(range(d, d + nv)), list(range(nv)))
        axes = tuple(range(nv, nv + d))
        c = np.fft.fftn(v, axes=axes) / G**d
        R = (G - 1) // 2 if radius is None else min(radius, (G - 1) // 2)
        idx = np.r_[np.arange(-R, 0) + G, np.arange(0, R + 1)]
        for ax in axes:
            c = np.take(c, idx, axis=ax)
        return cls(c, double=double, real=real)

    # -- serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        grids = mode_grid(self.radius, self.d)
        flat = [g.ravel() for g in grids]
        nv = len(self.value_shape)
        c = self._c.reshape(self.value_shape + (-1,))
        order = np.lexsort(flat[::-1])
        modes = []
        for i in order:
            vals = c[..., i].ravel()
            if np.all(vals == 0):
                continue
            row = [int(f[i]) for f in flat]
            for z in vals:
                row += [float(z.real), float(z.imag)]
            modes.append(row)
        del nv
        return {"d": self.d, "is_double": self.double, "real": self.real,
                "value_shape": list(self.value_shape), "modes": modes}

    @classmethod
    def from_dict(cls, data: Mapping):
        d = int(data["d"])
        shape = tuple(data.get("value_shape", list(cls.value_shape)))
        rows = data["modes"]
        R = max((max(abs(v) for v in row[:d]) for row in rows), default=0)
        c = np.zeros(shape + (2 * R + 1,) * d, dtype=complex)
        nvals = int(np.prod(shape)) if shape else 1
        for row in rows:
            idx = tuple(int(v) + R for v in row[:d])
            nums = row[d:]
            vals = np.array([nums[2 * i] + 1j * nums[2 * i + 1] for i in range(nvals)])
            c[(Ellipsis,) + idx] = vals.reshape(shape) if shape else vals[0]
        return cls(c, double=bool(data.get("is_double", False)), real=bool(data.get("real", True)))

    def allclose(self, other, tol=1e-12) -> bool:
        a, b = self._align(other)
        return bool(np.max(np.abs(a._c - b._c), initial=0.0) <= tol)


class ScalarTorusFunction(FourierSeries):
    value_shape = ()

    @classmethod
    def zeros(cls, d=1, double=False):
        return cls(np.zeros((1,) * d), double=double)

    @classmethod
    def constant(cls, value, d=1, double=False):
        c = np.full((1,) * d, value, dtype=complex)
        return cls(c, double=double, real=np.isrealobj(value))

    def constant_like(self, value):
        return type(self).constant(value, self.d, self.double)

    @classmethod
    def from_modes(cls, modes: Mapping | Iterable, d: int = 1, double: bool = False,
                   real: bool = True):
        """Build from {n: coefficient}; with ``real`` the -n partners are implied."""
        items = list(modes.items()) if isinstance(modes, Mapping) else list(modes)
        keys = [tuple(np.atleast_1d(k).astype(int)) for k, _ in items]
        R = max((max(abs(v) for v in k) for k in keys), default=0)
        c = np.zeros((2 * R + 1,) * d, dtype=complex)
        for k, (_, val) in zip(keys, items):
            if len(k) != d:
                raise ValueError("mode dimension mismatch")
            c[tuple(v + R for v in k)] += val
            if real and any(k):
                neg = tuple(-v + R for v in k)
                c[neg] += np.conj(val)
        return cls(c, double=double, real=real)

    @classmethod
    def cosine(cls, amplitude=1.0, mode=1, d=1, double=False):
        """amplitude * cos(2 pi <mode, theta>)."""
        mode = tuple(np.atleast_1d(mode).astype(int))
        if len(mode) != d:
            mode = (mode[0],) + (0,) * (d - 1)
        return cls.from_modes({mode: amplitude / 2}, d=d, double=double)

    def __mul__(self, other):
        if isinstance(other, MatrixTorusFunction):
            return other * self
        if isinstance(other, ScalarTorusFunction):
            a, b = self._align(other)
            conv = signal.convolve(a._c, b._c, method="auto")
            return ScalarTorusFunction(conv, a.double, a.real and b.real)
        return self.scale(other)

    __rmul__ = __mul__


class MatrixTorusFunction(FourierSeries):
    """2x2 matrix valued series; ``tag`` is "sl2", "SL2" or None."""

    value_shape = (2, 2)

    def __init__(self, coeffs, double=False, real=True, tag=None):
        super().__init__(coeffs, double, real)
        self.tag = tag

    def _new(self, coeffs, double=None, real=None, tag="keep"):
        return MatrixTorusFunction(coeffs, self.double if double is None else double,
                                   self.real if real is None else real,
                                   self.tag if tag == "keep" else tag)

    @classmethod
    def from_entries(cls, a11, a12, a21, a22, tag=None):
        ents = [a11, a12, a21, a22]
        ref = next(e for e in ents if isinstance(e, FourierSeries))
        ents = [e if isinstance(e, FourierSeries) else ref.constant_like(e) for e in ents]
        double = any(e.double for e in ents)
        if double:
            ents = [e.to_double() for e in ents]
        R = max(e.radius for e in ents)
        ents = [e.pad(R) for e in ents]
        c = np.stack([e.coeffs for e in ents]).reshape((2, 2) + ents[0].coeffs.shape)
        return cls(c, double=double, real=all(e.real for e in ents), tag=tag)

    @classmethod
    def constant(cls, mat, d=1, double=False, tag=None):
        mat = np.asarray(mat)
        c = mat.reshape((2, 2) + (1,) * d).astype(complex)
        return cls(c, double=double, real=np.isrealobj(mat), tag=tag)

    def constant_like(self, mat):
        if np.isscalar(mat):
            mat = mat * np.eye(2)
        return MatrixTorusFunction.constant(mat, self.d, self.double)

    @classmethod
    def identity(cls, d=1, double=False):
        return cls.constant(np.eye(2), d, double, tag="SL2")

    def entry(self, i, j) -> ScalarTorusFunction:
        return ScalarTorusFunction(self._c[i, j], self.double, self.real)

    @property
    def entries(self):
        return tuple(self.entry(i, j) for i in (0, 1) for j in (0, 1))

    def __mul__(self, other):
        """Pointwise matrix product (or scaling by a scalar series / number)."""
        if isinstance(other, MatrixTorusFunction):
            a, b = self._align(other)
            R2 = 2 * a.radius
            out = np.zeros((2, 2) + (2 * R2 + 1,) * a.d, dtype=complex)
            for i in range(2):
                for j in range(2):
                    for k in range(2):
                        out[i, j] += signal.convolve(a._c[i, k], b._c[k, j], method="auto")
            return MatrixTorusFunction(out, a.double, a.real and b.real)
        if isinstance(other, ScalarTorusFunction):
            a, b = self._align(other)
            out = np.stack([signal.convolve(a._c[i, j], b._c, method="auto")
                            for i in range(2) for j in range(2)])
            out = out.reshape((2, 2) + out.shape[1:])
            return MatrixTorusFunction(out, a.double, a.real and b.real)
        if isinstance(other, np.ndarray) and other.shape == (2, 2):
            return self @ other
        return self.scale(other)

    def __rmul__(self, other):
        if isinstance(other, np.ndarray) and other.shape == (2, 2):
            return self._new(np.einsum("ij,jk...->ik...", other, self._c), tag=None)
        return self.__mul__(other)

    def __matmul__(self, mat):
        mat = np.asarray(mat)
        return self._new(np.einsum("ij...,jk->ik...", self._c, mat), tag=None)

    def __rmatmul__(self, mat):
        mat = np.asarray(mat)
        return self._new(np.einsum("ij,jk...->ik...", mat, self._c), tag=None)

    def trace(self) -> ScalarTorusFunction:
        return ScalarTorusFunction(self._c[0, 0] + self._c[1, 1], self.double, self.real)

    def check_sl2(self, tol=TOL_STRUCT) -> bool:
        return bool(np.max(np.abs(self._c[0, 0] + self._c[1, 1])) <= tol)

    def check_SL2(self, grid_n=None, tol=TOL_STRUCT) -> bool:
        grid_n = grid_n or default_grid(self.d)
        v = self.grid_values(grid_n)
        det = v[..., 0, 0] * v[..., 1, 1] - v[..., 0, 1] * v[..., 1, 0]
        return bool(np.max(np.abs(det - 1)) <= tol)

    def sup_norm(self, grid_n=None) -> float:
        """Grid sup of the operator norm."""
        grid_n = grid_n or default_grid(self.d)
        v = self.grid_values(grid_n).reshape(-1, 2, 2)
        return float(np.max(np.linalg.norm(v, ord=2, axis=(1, 2))))

    def size(self) -> float:
        """Coefficient majorant of the largest entry: an upper bound on the sup."""
        return float(np.max(np.abs(self._c).reshape(4, -1).sum(axis=1)))

    def inverse_SL2(self):
        """Adjugate, which is the inverse for SL(2) valued maps."""
        c = self._c
        adj = np.stack([c[1, 1], -c[0, 1], -c[1, 0], c[0, 0]]).reshape(c.shape)
        return self._new(adj)

    @classmethod
    def from_grid(cls, values, d, double=False, real=True, radius=None, tag=None):
        out = super().from_grid(values, d, double, real, radius)
        out.tag = tag
        return out

    @classmethod
    def from_dict(cls, data):
        out = super().from_dict(data)
        out.tag = data.get("tag")
        return out

    def to_dict(self):
        out = super().to_dict()
        out["tag"] = self.tag
        return out


# -- norms -------------------------------------------------------------------

def analytic_norm(f: FourierSeries, h: float) -> NormEstimate:
    """Coefficient majorant sum |f_n| e^{2 pi |n|_1 h}, an upper bound of the strip sup."""
    if h <= 0:
        raise ValueError("h must be positive")
    grids = mode_grid(f.radius, f.d)
    l1 = sum(np.abs(g) for g in grids) * (2.0 / f.period) / 2.0
    w = np.exp(2 * np.pi * l1 * h)
    mag = np.abs(f.coeffs)
    if mag.ndim > f.d:
        # matrix series: operator norm is bounded by the Frobenius majorant
        mag = np.sqrt(np.sum(mag**2, axis=tuple(range(mag.ndim - f.d))))
    return NormEstimate("analytic", float(np.sum(mag * w)), h)


def _sup(values, nv):
    if nv == 0:
        return float(np.max(np.abs(values)))
    v = values.reshape(-1, 2, 2)
    return float(np.max(np.linalg.norm(v, ord=2, axis=(1, 2))))


def sup_norm(f: FourierSeries, grid_n: int | None = None) -> NormEstimate:
    grid_n = grid_n or default_grid(f.d)
    grid_n = max(grid_n, 4 * f.radius + 2)
    return NormEstimate("sup", _sup(f.grid_values(grid_n), len(f.value_shape)))


def ck_norm(f: FourierSeries, k: int, grid_n: int | None = None) -> NormEstimate:
    """max over |k'| <= k of the grid sup of the k'-th derivative."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    grid_n = grid_n or default_grid(f.d)
    grid_n = max(grid_n, 4 * f.radius + 2)
    best = 0.0
    for order in np.ndindex(*([k + 1] * f.d)):
        if sum(order) > k:
            continue
        best = max(best, _sup(f.derivative(order).grid_values(grid_n), len(f.value_shape)))
    return NormEstimate("ck", best, int(k))


# -- smoothing ---------------------------------------------------------------

def _smooth_step(x):
    """C-infinity step: 1 for x <= 0, 0 for x >= 1."""
    x = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x < 1, np.exp(-1.0 / np.maximum(1 - x, 1e-300)), 0.0)
        b = np.where(x > 0, np.exp(-1.0 / np.maximum(x, 1e-300)), 0.0)
    return a / (a + b)


def plateau_multiplier(j: int, nmax) -> np.ndarray:
    """sigma_j(n): 1 on |n| <= j/2, 0 on |n| > j, smooth in between."""
    return _smooth_step((np.asarray(nmax, dtype=float) - j / 2.0) / (j / 2.0))


def smooth_approximant(f: FourierSeries, j: int, k: int = 0):
    """Analytic approximant at scale 1/j (the multiplier does not depend on k)."""
    if j < 1:
        raise ValueError("j must be >= 1")
    del k
    sig = plateau_multiplier(j, mode_maxnorm(f.radius, f.d) * (2.0 / f.period) / 2.0)
    return f._new(f.coeffs * sig).truncate(j)


# -- pointwise 2x2 algebra -----------------------------------------------------

def expm_sl2(X: np.ndarray) -> np.ndarray:
    """Closed-form exponential of trace-free 2x2 matrices (last two axes)."""
    X = np.asarray(X)
    delta = -(X[..., 0, 0] * X[..., 1, 1] - X[..., 0, 1] * X[..., 1, 0])  # X^2 = delta I
    s = np.sqrt(delta.astype(complex))
    small = np.abs(s) < 1e-6
    s_safe = np.where(small, 1.0, s)
    ch = np.where(small, 1 + delta / 2 + delta**2 / 24, np.cosh(s_safe))
    sh = np.where(small, 1 + delta / 6 + delta**2 / 120, np.sinh(s_safe) / s_safe)
    if np.isrealobj(X):
        ch, sh = ch.real, sh.real
    eye = np.eye(2)
    return ch[..., None, None] * eye + sh[..., None, None] * X


def logm_sl2(M: np.ndarray) -> np.ndarray:
    """Principal logarithm of SL(2) matrices with trace > -2 (last two axes)."""
    M = np.asarray(M)
    half = 0.5 * (M[..., 0, 0] + M[..., 1, 1])
    if np.any(np.real(half) <= -1 + 1e-12):
        raise ValueError("logarithm undefined near -identity")
    z = np.asarray(half, dtype=complex)
    s = np.arccosh(z)  # cosh(s) = tr/2
    small = np.abs(s) < 1e-6
    s_safe = np.where(small, 1.0, s)
    ssq = s**2
    ratio = np.where(small, 1 - ssq / 6 + 7 * ssq**2 / 360, s_safe / np.where(small, 1.0, np.sinh(s_safe)))
    if np.isrealobj(M):
        ratio = ratio.real
    X = (M - half[..., None, None] * np.eye(2)) * ratio[..., None, None]
    return X


def matrix_exp(f: MatrixTorusFunction, grid_n: int | None = None) -> MatrixTorusFunction:
    """e^{f(theta)} for trace-free f, evaluated pointwise on a grid and transformed back."""
    if not f.check_sl2():
        raise ValueError("matrix_exp needs a trace-free series")
    grid_n = grid_n or default_grid(f.d)
    if f.radius > 0 and grid_n < 4 * f.radius:
        raise ValueError(f"grid_n={grid_n} too small for support radius {f.radius} (aliasing)")
    grid_n = max(grid_n, 4)
    vals = expm_sl2(f.grid_values(grid_n))
    out = MatrixTorusFunction.from_grid(vals, f.d, f.double, f.real, radius=grid_n // 2, tag="SL2")
    return out.trim(1e-15)


def pointwise(fn, *series: MatrixTorusFunction, grid_n: int, tag=None, double=None,
              real=None) -> MatrixTorusFunction:
    """Apply a pointwise 2x2 map to grid values of the inputs and transform back."""
    ref = series[0]
    dbl = any(s.double for s in series) if double is None else double
    ser = [s.to_double() if dbl else s for s in series]
    vals = [s.grid_values(grid_n) for s in ser]
    out = fn(*vals)
    rl = all(s.real for s in series) if real is None else real
    return MatrixTorusFunction.from_grid(out, ref.d, dbl, rl, tag=tag)


def rotation_matrix(phi) -> np.ndarray:
    """R_phi with phi in turns; broadcasts over phi."""
    phi = np.asarray(phi, dtype=float)
    c, s = np.cos(2 * np.pi * phi), np.sin(2 * np.pi * phi)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def rotation_series(m, d=1, scale=0.5) -> MatrixTorusFunction:
    """theta -> R_{scale <m, theta>} as an exact series.

    ``scale = 1/2`` gives a map on the doubled torus of degree m there;
    ``scale = 1`` gives a map on T^d of degree m.
    """
    m = np.atleast_1d(np.asarray(m, dtype=int))
    if len(m) != d:
        raise ValueError("mode dimension mismatch")
    double = scale == 0.5
    if not double and scale != 1:
        raise ValueError("scale must be 1/2 or 1")
    k = m * (1 if double else 1)
    key = tuple(int(v) for v in k)
    neg = tuple(-v for v in key)
    R = int(np.max(np.abs(k))) if k.size else 0
    c = np.zeros((2, 2) + (2 * R + 1,) * d, dtype=complex)
    ip = tuple(v + R for v in key)
    im = tuple(v + R for v in neg)
    # cos = (e + e^-)/2, sin = (e - e^-)/(2i), basis e^{2 pi i <k,theta>/period}
    c[(0, 0) + ip] += 0.5
    c[(0, 0) + im] += 0.5
    c[(1, 1) + ip] += 0.5
    c[(1, 1) + im] += 0.5
    c[(1, 0) + ip] += -0.5j
    c[(1, 0) + im] += 0.5j
    c[(0, 1) + ip] += 0.5j
    c[(0, 1) + im] += -0.5j
    return MatrixTorusFunction(c, double=double, tag="SL2")
