"""Gap opening at reducible energies by a small potential perturbation.

At an energy E where b(theta+alpha)^{-1} S_E^V(theta) b(theta) = sigma [[1, c], [0, 1]]
(sigma = +-1, b on the doubled torus), the perturbed cocycle satisfies

    b(theta+alpha)^{-1} S_E^{V+tW}(theta) b(theta) = sigma B - t W(theta) P(theta),
    P = [[(z12 - c z11) z11, (z12 - c z11) z12], [-z11^2, -z11 z12]],   z1j = b_1j,

because S^{V+tW} = S^V - t W e_11.  Averaging, the eigenvalues near sigma are
sigma (1 +- sqrt(sigma c t a1) + O(t)) with a1 = [W z11^2]: the cocycle is uniformly
hyperbolic for small t with sigma c t a1 > 0, with Lyapunov exponent ~ sqrt(sigma c t a1).
For c = 0 the averaged perturbation is [[a2, a3], [-a1, -a2]] with determinant
d~ = -a2^2 + a1 a3, and both signs of t open the gap when d~ < 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import as_frequency, is_uniformly_hyperbolic, lyapunov_exponent
from .kam import KamError, KamState, conjugation_residual
from .spectrum import Potential, schrodinger_cocycle, schrodinger_rho
from .torus import MatrixTorusFunction, ScalarTorusFunction

TOL_STRUCT = 1e-9


@dataclass
class ParabolicNormalForm:
    c_offdiag: float
    z: MatrixTorusFunction       # b on the doubled torus, b^{-1}(.+alpha) S b = sigma [[1,c],[0,1]]
    sign: int                    # sigma
    classification: str         # identity | parabolic | hyperbolic
    E: float
    residual: float
    freq: object = None

    def to_dict(self):
        return {"c": self.c_offdiag, "sign": self.sign, "classification": self.classification,
                "E": self.E, "residual": self.residual}


@dataclass
class MoserPoschelData:
    a1: float
    a2: float
    a3: float
    d_tilde: float
    y1: float
    y2: float
    y3: float

    def scaled(self, s):
        return MoserPoschelData(s * self.a1, s * self.a2, s * self.a3, s * s * self.d_tilde,
                                self.y1, self.y2, self.y3)

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class OpeningPrediction:
    case: str                    # c_nonzero | c_zero | degenerate
    opens_for_sign: int | None   # sign of t that opens the gap (c != 0)
    opens_both: bool
    degenerate: bool
    rate: float = 0.0            # sigma c a1 (Lyapunov ~ sqrt(rate |t|)) for c != 0

    def opens(self, t):
        if self.degenerate:
            return None
        if self.opens_both:
            return True
        return bool(np.sign(t) == self.opens_for_sign)

    def to_dict(self):
        return dict(self.__dict__)


def _edge_similarity(a, tol=TOL_STRUCT):
    """Rotation T and (sigma, c, kind) with T^{-1} a T = sigma [[1, c], [0, 1]]."""
    tr = float(np.trace(a))
    if abs(tr) > 2 + tol:
        return np.eye(2), int(np.sign(tr)), 0.0, "hyperbolic"
    if abs(tr) < 2 - tol:
        raise KamError(f"constant is elliptic (trace {tr:.3e}); the rational branch must end at rho = 0")
    sigma = 1 if tr > 0 else -1
    N = sigma * a - np.eye(2)
    if np.max(np.abs(N)) <= tol:
        return np.eye(2), sigma, 0.0, "identity"
    # N is (close to) nilpotent: its columns span its kernel
    k = int(np.argmax(np.linalg.norm(N, axis=0)))
    v = N[:, k] / np.linalg.norm(N[:, k])
    T = np.array([[v[0], -v[1]], [v[1], v[0]]])
    M = sigma * np.linalg.solve(T, a @ T)
    return T, sigma, float(M[0, 1]), "parabolic"


def normal_form_at_edge(V, E: float, state: KamState, freq=None, tol=TOL_STRUCT) -> ParabolicNormalForm:
    """Normalize the reduced constant at a rho = 0 energy to sigma [[1, c], [0, 1]]."""
    freq = as_frequency(freq)
    T, sigma, c, kind = _edge_similarity(state.a_const, tol)
    b = state.b_accum @ T
    b.tag = "SL2"
    a = sigma * np.array([[1.0, c], [0.0, 1.0]])
    st = replace(state, a_const=a, b_accum=b,
                 f_pert=MatrixTorusFunction(np.einsum("ij,jk...,kl->il...", T.T, state.f_pert.coeffs, T),
                                            double=state.f_pert.double, real=True, tag="sl2"))
    res = conjugation_residual(st, schrodinger_cocycle(V, E, freq))
    if kind == "hyperbolic":
        c = 0.0
    return ParabolicNormalForm(c, b, sigma, kind, float(E), float(res), freq)


def _avg(*fs):
    out = fs[0]
    for f in fs[1:]:
        out = out * f
    return float(np.real(out.average()))


def mp_averages(nf: ParabolicNormalForm, W: ScalarTorusFunction) -> MoserPoschelData:
    if not W.real:
        raise ValueError("W must be real")
    z11 = nf.z.entry(0, 0)
    z12 = nf.z.entry(0, 1)
    Wd = W.to_double() if (z11.double and not W.double) else W
    a1 = _avg(Wd, z11, z11)
    a2 = _avg(Wd, z11, z12)
    a3 = _avg(Wd, z12, z12)
    y1 = 0.5 * (_avg(z11, z11) + _avg(z12, z12))
    y2 = 0.5 * (_avg(z11, z11) - _avg(z12, z12))
    y3 = _avg(z11, z12)
    return MoserPoschelData(a1, a2, a3, -a2 * a2 + a3 * a1, y1, y2, y3)


def predict_opening(data: MoserPoschelData, c: float, sign: int = 1, tol: float = 1e-12) -> OpeningPrediction:
    """Hyperbolicity prediction for S^{V+tW} at small |t| (see module docstring)."""
    scale = max(abs(data.a1), abs(data.a2), abs(data.a3), 1.0)
    if abs(c) > tol and abs(data.a1) > tol * scale:
        s = int(np.sign(sign * c * data.a1))
        return OpeningPrediction("c_nonzero", s, False, False, float(sign * c * data.a1))
    if abs(c) <= tol and data.d_tilde < -tol * scale * scale:
        return OpeningPrediction("c_zero", None, True, False, 0.0)
    return OpeningPrediction("degenerate", None, False, True, 0.0)


def verify_opening(V, E: float, W: ScalarTorusFunction, t_list, prediction: OpeningPrediction | None = None,
                   freq=None, lyap_iters: int = 100_000, uh_kwargs=None):
    """UH verdict and Lyapunov exponent of S_E^{V+tW} for each t."""
    freq = as_frequency(freq)
    Vf = V.function() if isinstance(V, Potential) else V
    uhk = {"n_max": 1 << 14, "grid_n": 256}
    uhk.update(uh_kwargs or {})
    out = []
    for t in t_list:
        c = schrodinger_cocycle(Vf + W.scale(float(t)), E, freq)
        cert = is_uniformly_hyperbolic(c, **uhk)
        ly = float(lyapunov_exponent(c, lyap_iters, 8))
        row = {"t": float(t), "uh": bool(cert.passed), "lyap": ly, "uh_n": cert.n}
        if prediction is not None:
            pred = prediction.opens(t)
            row["predicted"] = pred
            row["agree"] = None if pred is None else bool(pred == cert.passed)
            if prediction.case == "c_nonzero" and pred:
                row["rate_prediction"] = float(np.sqrt(prediction.rate * t))
        out.append(row)
    return out


def generic_condition_check(nf: ParabolicNormalForm, W: ScalarTorusFunction, margin: float = 1e-10):
    """Energy shift E' = -[W y1]/[y1] and the two degeneracy witnesses."""
    z11 = nf.z.entry(0, 0)
    z12 = nf.z.entry(0, 1)
    Wd = W.to_double() if (z11.double and not W.double) else W
    y1f = (z11 * z11 + z12 * z12).scale(0.5)
    y2f = (z11 * z11 - z12 * z12).scale(0.5)
    y3f = z11 * z12
    y1, y2, y3 = _avg(y1f), _avg(y2f), _avg(y3f)
    if abs(y1) <= 1e-14:
        raise ValueError("[y1] = 0: degenerate conjugacy")
    wy1, wy2, wy3 = _avg(Wd, y1f), _avg(Wd, y2f), _avg(Wd, y3f)
    w1 = -wy1 * y2 + wy2 * y1
    w2 = -wy1 * y3 + wy3 * y1
    opens = max(abs(w1), abs(w2)) > margin
    return {"E_prime": -wy1 / y1, "witness": (w1, w2), "opens": bool(opens), "degenerate": not opens,
            "y": (y1, y2, y3), "Wy": (wy1, wy2, wy3)}


def rho_one_sided_differences(V, E: float, h: float = 1e-4, freq=None, quality="fine"):
    """(rho(E - h) - rho(E))/h and (rho(E + h) - rho(E))/h; reported, not asserted."""
    r0 = schrodinger_rho(V, E, freq, quality)[0]
    rl = schrodinger_rho(V, E - h, freq, quality)[0]
    rr = schrodinger_rho(V, E + h, freq, quality)[0]
    return (rl - r0) / h, (rr - r0) / h


def synthetic_collapsed_edge(freq=None, m: int = 1):
    """Free Laplacian at the closed gap 2 rho = <m, alpha>: V = 0, E = 2 cos(pi <m, alpha>),
    reduced to the identity by b = P R_{<m, theta>/2} (c = 0)."""
    from .kam import rotation_normalizer
    from .torus import rotation_series
    freq = as_frequency(freq)
    d = freq.d
    mm = np.zeros(d, dtype=int)
    mm[0] = m
    E = 2.0 * np.cos(np.pi * freq.pair(mm))
    V0 = ScalarTorusFunction.zeros(d)
    S = np.array([[E, -1.0], [1.0, 0.0]])
    P, phi = rotation_normalizer(S)
    s = 1 if abs(((phi - freq.pair(mm) / 2.0) + 0.5) % 1.0 - 0.5) < 1e-12 else -1
    b = P @ rotation_series(tuple(int(s * v) for v in mm), d, 0.5)
    b.tag = "SL2"
    st = KamState(np.eye(2), MatrixTorusFunction.constant(np.zeros((2, 2)), d, double=True, tag="sl2"),
                  b, tuple(int(s * v) for v in mm), 0, [], [])
    nf = normal_form_at_edge(V0, E, st, freq)
    return V0, E, nf


__all__ = [
    "ParabolicNormalForm", "MoserPoschelData", "OpeningPrediction", "normal_form_at_edge", "mp_averages",
    "predict_opening", "verify_opening", "generic_condition_check", "rho_one_sided_differences",
    "synthetic_collapsed_edge",
]
