"""Brute-force oscillatory quadrature for composition amplitudes and T (n = 1).

Each double integral is truncated to a box around the stationary point, damped
by a Gaussian mollifier ``exp(-eps^2 |w - w0|^2)`` and summed with the
trapezoid rule.  The mollified values for the eps-sequence are extrapolated
to ``eps -> 0`` by polynomial fitting in ``eps^2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import fft as sfft

from . import expr as ex
from .classes import AmplitudeSpec, PhaseSpec, SymbolSpec

MIN_NODES_PER_WAVE = 8
CHUNK_ROWS = 256
DENSE_MAX_NODES = 8192


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class QuadPlan:
    """Trapezoid plan for a double integral over ``[c - R, c + R)^2``.

    ``R`` is the truncation radius of each integration variable, ``M`` the
    number of nodes per axis and ``eps`` the decreasing mollifier widths.
    """

    R: tuple = (30.0, 30.0)
    M: int = 2304
    eps: tuple = (0.4, 0.2, 0.1)
    tol: float = 1e-3

    def __post_init__(self):
        R = self.R if isinstance(self.R, (tuple, list)) else (self.R, self.R)
        object.__setattr__(self, "R", tuple(float(r) for r in R))
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        if len(self.R) != 2 or min(self.R) <= 0:
            raise OracleError("R must hold two positive radii")
        if self.M <= 0 or self.M % 2:
            raise OracleError("M must be a positive even integer")
        if not self.eps or any(e <= 0 for e in self.eps):
            raise OracleError("eps must be a non-empty sequence of positive widths")
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise OracleError("eps must be strictly decreasing")
        if self.nodes_per_wave < MIN_NODES_PER_WAVE:
            raise OracleError(
                f"plan under-resolves the bilinear phase: {self.nodes_per_wave:.2f} nodes per "
                f"wavelength < {MIN_NODES_PER_WAVE}; raise M or shrink R")

    @property
    def nodes_per_wave(self) -> float:
        # the kernel e^{i u v} on the box has local wavelength 2 pi / R
        h0, h1 = (2 * r / self.M for r in self.R)
        return min(2 * math.pi / (self.R[1] * h0), 2 * math.pi / (self.R[0] * h1))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["R"] = list(self.R)
        d["eps"] = list(self.eps)
        return d


@dataclass
class OracleResult:
    value: complex
    converged: bool
    spread: float
    mollified: list = field(default_factory=list)
    plan: QuadPlan | None = None
    path: str = "dense"

    def to_dict(self) -> dict:
        return {
            "value": [self.value.real, self.value.imag],
            "converged": self.converged,
            "spread": self.spread,
            "mollified": [[v.real, v.imag] for v in self.mollified],
            "plan": self.plan.to_dict() if self.plan else None,
            "path": self.path,
        }


def richardson(eps: tuple, values) -> complex:
    """Value at eps = 0 of the interpolating polynomial in eps^2 (Neville)."""
    s = [e * e for e in eps]
    p = [complex(v) for v in values]
    n = len(p)
    for k in range(1, n):
        for i in range(n - k):
            p[i] = (s[i + k] * p[i] - s[i] * p[i + 1]) / (s[i + k] - s[i])
    return p[0]


def _axis(center: float, R: float, M: int) -> tuple[np.ndarray, float]:
    h = 2 * R / M
    return center - R + h * np.arange(M), h


def chirp_sum(x: np.ndarray, theta: float) -> np.ndarray:
    """``X_j = sum_k x_k exp(i theta j k)`` for j < len(x), by Bluestein's identity.

    Chirp phases are formed as ``theta * k^2 / 2`` in floating point rather
    than through complex powers, so the error is set by the rounding of
    ``theta * j * k`` itself and does not accumulate with M.
    """
    M = len(x)
    k = np.arange(M, dtype=float)
    c = np.exp(0.5j * theta * k * k)
    L = sfft.next_fast_len(2 * M - 1)
    kern = np.zeros(L, dtype=complex)
    kern[:M] = np.conj(c)
    kern[L - M + 1:] = np.conj(c[1:])[::-1]
    buf = np.zeros(L, dtype=complex)
    buf[:M] = x * c
    conv = sfft.ifft(sfft.fft(buf) * sfft.fft(kern))[:M]
    return c * conv


def _weights(nodes: np.ndarray, center: float, eps: np.ndarray) -> np.ndarray:
    return np.exp(-np.outer((nodes - center) ** 2, eps ** 2))  # (M, len(eps))


def _finish(vals: np.ndarray, plan: QuadPlan, path: str) -> OracleResult:
    value = richardson(plan.eps, vals)
    if len(vals) > 2:
        coarse = richardson(plan.eps[-2:], vals[-2:])
    elif len(vals) == 2:
        coarse = vals[-1]
    else:
        coarse = value
    spread = abs(value - coarse) / max(abs(value), 1e-12)
    return OracleResult(complex(value), bool(spread <= plan.tol), float(spread),
                        [complex(x) for x in vals], plan, path)


def double_integral(kernel: Callable[[np.ndarray, np.ndarray], np.ndarray],
                    center: tuple[float, float], plan: QuadPlan) -> OracleResult:
    """Mollified, extrapolated ``(2 pi)^{-1} int int kernel(u, v) du dv``.

    ``kernel`` receives a column of ``u`` nodes and a row of ``v`` nodes and
    returns the broadcast integrand block.  Cost is O(M^2) evaluations.
    """
    if plan.M > DENSE_MAX_NODES:
        raise OracleError(f"M = {plan.M} exceeds the dense quadrature cap {DENSE_MAX_NODES}; "
                          "only separable integrands support larger plans")
    u, hu = _axis(center[0], plan.R[0], plan.M)
    v, hv = _axis(center[1], plan.R[1], plan.M)
    eps = np.asarray(plan.eps)
    wu = _weights(u, center[0], eps)
    wv = _weights(v, center[1], eps)
    acc = np.zeros(len(eps), dtype=complex)
    vrow = v[None, :]
    for start in range(0, plan.M, CHUNK_ROWS):
        block = np.broadcast_to(kernel(u[start:start + CHUNK_ROWS, None], vrow),
                                (min(CHUNK_ROWS, plan.M - start), plan.M))
        if not np.all(np.isfinite(block)):
            raise OracleError("integrand is not finite on the quadrature box")
        acc += np.einsum("ik,ik->k", wu[start:start + CHUNK_ROWS], block @ wv)
    return _finish(acc * hu * hv / (2 * math.pi), plan, "dense")


def separable_integral(F: Callable[[np.ndarray], np.ndarray], G: Callable[[np.ndarray], np.ndarray],
                       origin: tuple[float, float], sign: int,
                       center: tuple[float, float], plan: QuadPlan) -> OracleResult:
    """Same as :func:`double_integral` for ``e^{i sign (u-u0)(v-v0)} F(u) G(v)``.

    The inner sums form a chirp-z transform, so the cost is O(M log M) and
    plans with millions of nodes per axis are affordable.
    """
    u, hu = _axis(center[0], plan.R[0], plan.M)
    v, hv = _axis(center[1], plan.R[1], plan.M)
    fu = np.broadcast_to(np.asarray(F(u), dtype=complex), u.shape)
    gv = np.broadcast_to(np.asarray(G(v), dtype=complex), v.shape)
    if not (np.all(np.isfinite(fu)) and np.all(np.isfinite(gv))):
        raise OracleError("integrand is not finite on the quadrature box")
    eps = np.asarray(plan.eps)
    U0 = center[0] - plan.R[0] - origin[0]
    V0 = center[1] - plan.R[1] - origin[1]
    k = np.arange(plan.M)
    # (U0 + j hu)(V0 + k hv) = U0 V0 + U0 hv k + hu V0 j + hu hv j k
    pre = np.exp(1j * sign * U0 * hv * k)
    post = np.exp(1j * sign * (U0 * V0 + hu * V0 * k))
    vals = np.empty(len(eps), dtype=complex)
    for i, e in enumerate(eps):
        gw = gv * np.exp(-(e * (v - center[1])) ** 2)
        inner = post * chirp_sum(gw * pre, sign * hu * hv)
        fw = fu * np.exp(-(e * (u - center[0])) ** 2)
        vals[i] = np.dot(fw, inner)
    return _finish(vals * hu * hv / (2 * math.pi), plan, "separable")


def _check_dim(*specs):
    for s in specs:
        if s.dim != 1:
            raise OracleError("the quadrature oracle is one-dimensional")


def _bind(e: ex.Expr, params: Mapping[str, float], fixed: Mapping[str, float]) -> ex.Expr:
    mapping = {k: ex.const(v) for k, v in {**params, **fixed}.items()}
    return ex.subs(e, mapping) if mapping else e


def _ev(e: ex.Expr, point) -> np.ndarray:
    return np.asarray(ex.evaluate(e, point, check_finite=False))


def _choose(method: str, separable: bool) -> bool:
    if method not in ("auto", "dense", "separable"):
        raise OracleError(f"unknown quadrature method {method!r}")
    if method == "separable" and not separable:
        raise OracleError("integrand does not factor into F(u) G(v)")
    return separable and method != "dense"


def eval_c_tp(a: AmplitudeSpec, p: SymbolSpec, x: float, z: float, xi: float,
              plan: QuadPlan | None = None, method: str = "auto") -> OracleResult:
    """c(x,z,xi) = int int e^{i(y-z)(eta-xi)} a(x,y,xi) p(y,eta) dy deta / 2pi."""
    _check_dim(a, p)
    plan = plan or QuadPlan()
    a_e = _bind(a.expr, a.params, {"x1": x, "xi1": xi})
    p_e = _bind(p.expr, p.params, {})
    pv = p_e.free_vars()
    if _choose(method, not {"x1", "xi1"} <= pv):
        if "x1" in pv:
            F = lambda Y: _ev(a_e, {"y1": Y}) * _ev(p_e, {"x1": Y})
            G = lambda H: 1.0
        else:
            F = lambda Y: _ev(a_e, {"y1": Y})
            G = lambda H: _ev(p_e, {"xi1": H})
        return separable_integral(F, G, (z, xi), 1, (z, xi), plan)

    def kernel(Y, H):
        phase = np.exp(1j * (Y - z) * (H - xi))
        return phase * _ev(a_e, {"y1": Y}) * _ev(p_e, {"x1": Y, "xi1": H})

    return double_integral(kernel, (z, xi), plan)


def eval_c_pt(a: AmplitudeSpec, p: SymbolSpec, phi: PhaseSpec, x: float, z: float, xi: float,
              plan: QuadPlan | None = None, method: str = "auto") -> OracleResult:
    """c(x,z,xi) = int int e^{i(phi(y,xi)-phi(x,xi)+(x-y)eta)} a(y,z,xi) p(x,eta) dy deta / 2pi.

    The integrand always factors, so ``auto`` takes the chirp-z path.
    """
    _check_dim(a, p, phi)
    plan = plan or QuadPlan()
    ph = _bind(phi.expr, phi.params, {"xi1": xi})
    phi_x = float(np.real(_ev(ph, {"x1": x})))
    grad = float(np.real(_ev(ex.diff(ph, "x1"), {"x1": x})))
    a_e = _bind(a.expr, a.params, {"y1": z, "xi1": xi})
    p_e = _bind(p.expr, p.params, {"x1": x})

    def F(Y):
        return np.exp(1j * (_ev(ph, {"x1": Y}) - phi_x)) * _ev(a_e, {"x1": Y})

    def G(H):
        return _ev(p_e, {"xi1": H})

    if _choose(method, True):
        return separable_integral(F, G, (x, 0.0), -1, (x, grad), plan)
    return double_integral(lambda Y, H: np.exp(1j * (x - Y) * H) * F(Y) * G(H), (x, grad), plan)


def eval_T(a: AmplitudeSpec, phi: PhaseSpec, u, x: float, plan: QuadPlan | None = None,
           method: str = "auto") -> OracleResult:
    """Tu(x) = int int e^{i(phi(x,xi) - y xi)} a(x,y,xi) u(y) dy dxi / 2pi.

    ``u`` is an expression in ``x1`` (or ``y1``) or a parseable string.
    """
    _check_dim(a, phi)
    plan = plan or QuadPlan()
    if isinstance(u, str):
        u = ex.parse(u, 1)
    u_e = ex.rename_block(u, "x", "y", 1)
    if u_e.free_vars() - {"y1"}:
        raise OracleError("u must depend on a single spatial variable")
    ph = _bind(phi.expr, phi.params, {"x1": x})
    a_e = _bind(a.expr, a.params, {"x1": x})
    av = a_e.free_vars()
    if _choose(method, not {"y1", "xi1"} <= av):
        if "y1" in av:
            F = lambda Y: _ev(a_e, {"y1": Y}) * _ev(u_e, {"y1": Y})
            G = lambda X: np.exp(1j * _ev(ph, {"xi1": X}))
        else:
            F = lambda Y: _ev(u_e, {"y1": Y})
            G = lambda X: np.exp(1j * _ev(ph, {"xi1": X})) * _ev(a_e, {"xi1": X})
        return separable_integral(F, G, (0.0, 0.0), -1, (0.0, 0.0), plan)

    def kernel(Y, X):
        phase = np.exp(1j * (_ev(ph, {"xi1": X}) - Y * X))
        return phase * _ev(a_e, {"y1": Y, "xi1": X}) * _ev(u_e, {"y1": Y})

    return double_integral(kernel, (0.0, 0.0), plan)
