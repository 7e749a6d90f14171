"""Spectral propagator for ``i d_t u - a(D) u = 0`` and weighted space-time norms.

The propagator is ``e^{+i t a(D)}`` (the kernel ``e^{i[(x-y).xi + t a(xi)]}``),
so for ``a(xi) = xi`` the solution is ``u0(x + t)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import fft as sfft

from . import expr as ex
from .classes import DecayFlags, SamplePlan, SymbolSpec, validate_symbol
from .gridquant import Grid, GridField, _workers

BOUNDARY_TOL = 1e-8
T_CHUNK = 256


class ConfinementError(RuntimeError):
    pass


class ConfinementWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DispersionSpec:
    """Real symbol ``a(xi) = a1(xi) + a0(xi)`` (for ``|xi| >= rho0``)."""

    a: ex.Expr
    dim: int
    a1: ex.Expr
    a0: ex.Expr
    rho0: float = 1.0
    name: str = ""

    @classmethod
    def from_strings(cls, a: str, dim: int, a1: str, a0: str, rho0: float = 1.0, name: str = ""):
        return cls(ex.parse(a, dim), dim, ex.parse(a1, dim), ex.parse(a0, dim), rho0, name or a)

    def __post_init__(self):
        xis = set(ex.block_vars("xi", self.dim))
        for e in (self.a, self.a1, self.a0):
            if e.free_vars() - xis:
                raise ValueError(f"dispersion symbols may only depend on xi: {e}")

    @property
    def grad_a(self) -> list[ex.Expr]:
        return ex.gradient(ex.simplify(self.a), "xi", self.dim)

    def on_grid(self, g: Grid) -> np.ndarray:
        return _grid_values(self.a, g).real

    def grad_on_grid(self, g: Grid) -> list[np.ndarray]:
        return [_grid_values(d, g).real for d in self.grad_a]

    def max_speed(self, g: Grid) -> float:
        return float(np.max(np.sqrt(sum(d ** 2 for d in self.grad_on_grid(g)))))

    def check(self, g: Grid, samples: SamplePlan | None = None) -> dict:
        """Sampled hypotheses: dispersiveness on the dual grid, the order-0 class of
        ``a0`` and the decomposition/homogeneity of ``a1`` on ``|xi| >= rho0``."""
        speed = np.sqrt(sum(d ** 2 for d in self.grad_on_grid(g)))
        samples = samples or SamplePlan(min_abs={"xi": self.rho0})
        names = ex.block_vars("xi", self.dim)
        pts = samples.points(names)
        a0_report = validate_symbol(SymbolSpec(self.a0, self.dim, (0.0, 0.0), DecayFlags(improving_xi=True)),
                                    samples=samples)
        val = lambda e, p: np.asarray(ex.evaluate(e, p, check_finite=False), dtype=float)
        split = np.max(np.abs(val(self.a, pts) - val(self.a1, pts) - val(self.a0, pts)) /
                       (1 + np.abs(val(self.a, pts))))
        scaled = {k: 2.0 * v for k, v in pts.items()}
        homog = np.max(np.abs(val(self.a1, scaled) - 2.0 * val(self.a1, pts)) / (1 + np.abs(val(self.a1, scaled))))
        out = {
            "min_speed": float(speed.min()),
            "dispersive": bool(speed.min() > 0),
            "a0_class": a0_report.passed,
            "split_residual": float(split),
            "homogeneity_residual": float(homog),
        }
        out["passed"] = out["dispersive"] and out["a0_class"] and split < 1e-9 and homog < 1e-9
        return out


def _grid_values(e: ex.Expr, g: Grid) -> np.ndarray:
    vals = np.asarray(ex.evaluate(e, g.points("xi")), dtype=complex)
    return np.broadcast_to(vals, (g.N ** g.n,)).reshape(g.shape)


def evolve(a: DispersionSpec, u0: GridField, t: float) -> GridField:
    """``u(t) = e^{i t a(D)} u0``."""
    g = u0.grid
    mult = np.exp(1j * t * a.on_grid(g))
    return GridField(g, sfft.ifftn(mult * sfft.fftn(u0.values, workers=_workers()), workers=_workers()))


def _bracket(g: Grid) -> np.ndarray:
    return np.sqrt(1.0 + sum(m * m for m in g.mesh("x")))


def confinement(u0: GridField, a: DispersionSpec | None = None, T: float | None = None) -> list[str]:
    """Reasons the datum may wrap around the periodic box (empty if confined)."""
    g = u0.grid
    issues = []
    vals = np.abs(u0.values)
    peak = vals.max() if vals.size else 0.0
    if peak == 0.0:
        return issues
    outside = np.zeros(g.shape, dtype=bool)
    for m in g.mesh("x"):
        outside |= np.abs(m) > g.L / 4
    if np.any(vals[outside] > BOUNDARY_TOL * peak):
        issues.append("datum is not supported in [-L/4, L/4]^n")
    if a is not None and T is not None:
        vmax = a.max_speed(g)
        if vmax > 0 and T > g.L / (2 * vmax):
            issues.append(f"T = {T} exceeds L/(2 max|grad a|) = {g.L / (2 * vmax):.4g}")
    return issues


def _boundary_mask(g: Grid) -> np.ndarray:
    mask = np.zeros(g.shape, dtype=bool)
    for ax in range(g.n):
        idx = [slice(None)] * g.n
        idx[ax] = 0
        mask[tuple(idx)] = True
        idx[ax] = g.N - 1
        mask[tuple(idx)] = True
    return mask


def default_nt(T: float, g: Grid) -> int:
    nt = int(math.ceil(8 * T / g.h))
    return nt + (nt % 2)


@dataclass
class SpacetimeResult:
    norms: np.ndarray          # one per datum
    taus: np.ndarray           # saturation abscissae, 0..T
    curves: np.ndarray         # (data, len(taus)) running norms on [-tau, tau]
    T: float
    Nt: int


def _spacetime_batch(a: DispersionSpec, data: np.ndarray, g: Grid, k: int, s: float, T: float,
                     Nt: int | None = None) -> SpacetimeResult:
    """Trapezoid-in-time weighted norms for a stack of data of shape (m, *grid.shape)."""
    if k < 0 or int(k) != k:
        raise ValueError("k must be a non-negative integer")
    Nt = Nt or default_nt(T, g)
    if Nt % 2:
        raise ValueError("Nt must be even so that t = 0 is a node")
    t = np.linspace(-T, T, Nt + 1)
    dt = 2 * T / Nt
    m = data.shape[0]
    axes = tuple(range(-g.n, 0))
    spec = sfft.fftn(data, axes=axes, workers=_workers())
    sym = a.on_grid(g)
    weight = _bracket(g) ** (-2.0 * (k + s))
    cell = g.h ** g.n
    boundary = _boundary_mask(g)
    peak = np.abs(data).reshape(m, -1).max(axis=1)
    f = np.empty((m, Nt + 1))
    for start in range(0, Nt + 1, T_CHUNK):
        tt = t[start:start + T_CHUNK]
        prop = np.exp(1j * np.multiply.outer(tt, sym))           # (c, *shape)
        u = sfft.ifftn(prop[:, None] * spec[None], axes=axes, workers=_workers())  # (c, m, *shape)
        mag2 = np.abs(u) ** 2
        edge = np.sqrt(mag2[..., boundary].max(axis=-1)) if boundary.any() else 0.0
        if np.any(edge > BOUNDARY_TOL * peak[None, :]):
            raise ConfinementError("solution reached the boundary cell; enlarge L or shorten T")
        wsum = (mag2 * weight).reshape(len(tt), m, -1).sum(axis=-1) * cell
        f[:, start:start + len(tt)] = (np.abs(tt)[:, None] ** (2 * k) * wsum).T
    # running trapezoid over [-tau, tau], tau = t[mid:]
    mid = Nt // 2
    seg = 0.5 * dt * (f[:, mid + 1:] + f[:, mid:-1] + f[:, mid - 1::-1] + f[:, mid:0:-1])
    running = np.concatenate([np.zeros((m, 1)), np.cumsum(seg, axis=1)], axis=1)
    curves = np.sqrt(running)
    return SpacetimeResult(curves[:, -1].copy(), t[mid:].copy(), curves, T, Nt)


def spacetime_norm(a: DispersionSpec, u0: GridField, k: int, s: float, T: float,
                   Nt: int | None = None) -> tuple[float, np.ndarray, np.ndarray]:
    """``||t^k <x>^{-k-s} u||_{L^2([-T,T] x box)}`` plus its saturation curve.

    Returns ``(norm, taus, curve)`` where ``curve[i]`` is the norm restricted
    to ``|t| <= taus[i]``.
    """
    for msg in confinement(u0, a, T):
        warnings.warn(msg, ConfinementWarning, stacklevel=2)
    res = _spacetime_batch(a, u0.values[None], u0.grid, k, s, T, Nt)
    return float(res.norms[0]), res.taus, res.curves[0]


def gaussian_family(g: Grid, seed: int = 0, widths: int = 5, centers: int = 5, modulations: int = 3,
                    width_range=(1.0, 3.0), center_range=(-4.0, 4.0), max_modulation: float = 1.0):
    """Seeded Gaussian data ``exp(-|x-c|^2/(2 w^2)) e^{i omega.x}`` on the grid.

    Returns ``(fields, params)`` with ``widths*centers*modulations`` members.
    """
    rng = np.random.default_rng(seed)
    ws = np.sort(np.exp(rng.uniform(*np.log(width_range), size=widths)))
    cs = np.sort(rng.uniform(*center_range, size=(centers, g.n)), axis=0)
    ms = np.sort(rng.uniform(0.0, max_modulation, size=(modulations, g.n)), axis=0)
    X = g.mesh("x")
    fields, params = [], []
    for w in ws:
        for c in cs:
            for om in ms:
                r2 = sum((Xi - ci) ** 2 for Xi, ci in zip(X, c))
                ph = sum(Xi * oi for Xi, oi in zip(X, om))
                fields.append(GridField(g, np.exp(-r2 / (2 * w * w)) * np.exp(1j * ph)))
                params.append({"width": float(w), "center": [float(v) for v in c],
                               "modulation": [float(v) for v in om]})
    return fields, params


def final_decade_increase(taus: np.ndarray, curve: np.ndarray) -> float:
    """``(S(T) - S(T/10)) / S(T)`` for a saturation curve ``S``."""
    T = taus[-1]
    s_dec = float(np.interp(T / 10, taus, curve))
    s_end = float(curve[-1])
    return 0.0 if s_end == 0 else (s_end - s_dec) / s_end


def log_slope(taus: np.ndarray, curve: np.ndarray, lo: float = 0.1) -> float:
    """Least-squares slope of ``curve^2`` against ``log tau`` on ``[lo T, T]``."""
    T = taus[-1]
    sel = taus >= lo * T
    return float(np.polyfit(np.log(taus[sel]), curve[sel] ** 2, 1)[0])


@dataclass
class SmoothingReport:
    k: int
    s: float
    T: float
    Nt: int
    ratios: list
    sup_ratio: float
    final_increase: list
    monotone: bool
    taus: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    grid: Grid | None = None
    seed: int | None = None
    data: list = field(default_factory=list)

    def to_dict(self, curves: bool = False) -> dict:
        d = {
            "k": self.k, "s": self.s, "T": self.T, "Nt": self.Nt,
            "ratios": self.ratios, "sup_ratio": self.sup_ratio,
            "final_decade_increase": self.final_increase, "monotone": self.monotone,
            "grid": self.grid.to_dict() if self.grid else None, "seed": self.seed,
            "data": self.data,
        }
        if curves:
            d["taus"] = self.taus
            d["curves"] = self.curves
        return d


def smoothing_ratio(a: DispersionSpec, family: Sequence[GridField], k: int, s: float, T: float,
                    Nt: int | None = None, seed: int | None = None, data_params=None) -> SmoothingReport:
    """Ratios ``||t^k <x>^{-k-s} u|| / ||<x>^k u0||`` over a data family."""
    if not family:
        raise ValueError("empty data family")
    if k >= 1 and not s > k + 0.5:
        raise ValueError(f"the k = {k} estimate needs s > k + 1/2, got s = {s}")
    g = family[0].grid
    for u in family:
        if u.grid != g:
            raise ValueError("all family members must share one grid")
        for msg in confinement(u, a, T):
            warnings.warn(msg, ConfinementWarning, stacklevel=2)
    data = np.stack([u.values for u in family])
    res = _spacetime_batch(a, data, g, k, s, T, Nt)
    br = _bracket(g) ** k
    denom = np.sqrt(g.h ** g.n * (np.abs(data * br) ** 2).reshape(len(family), -1).sum(axis=1))
    ratios = np.where(denom > 0, res.norms / np.where(denom > 0, denom, 1.0), 0.0)
    curves = res.curves / np.where(denom > 0, denom, 1.0)[:, None]
    inc = [final_decade_increase(res.taus, c) for c in curves]
    monotone = bool(np.all(np.diff(curves, axis=1) >= -1e-12 * np.maximum(curves[:, 1:], 1e-300)))
    return SmoothingReport(k, s, T, res.Nt, [float(r) for r in ratios], float(np.max(ratios)), inc, monotone,
                           res.taus.tolist(), curves.tolist(), g, seed, list(data_params or []))


def commutator_residual(a: DispersionSpec, u0: GridField, t: float) -> float:
    """Relative residual of ``tau(t,X,D) T_t = T_t sigma(X,D)`` on the grid.

    ``sigma(x,xi) = x.grad a(xi)`` and ``tau = sigma(x + t grad a, xi)``, both
    quantized x-left.
    """
    for msg in confinement(u0):
        warnings.warn(msg, ConfinementWarning, stacklevel=2)
    g = u0.grid
    X = g.mesh("x")
    grads = a.grad_on_grid(g)
    axes = tuple(range(g.n))

    def mult(m, v):
        return sfft.ifftn(m * sfft.fftn(v, axes=axes), axes=axes)

    def sigma(v):
        return sum(Xi * mult(d, v) for Xi, d in zip(X, grads))

    speed2 = sum(d * d for d in grads)
    prop = np.exp(1j * t * a.on_grid(g))
    Tt = lambda v: mult(prop, v)
    lhs = sigma(Tt(u0.values)) + t * mult(speed2, Tt(u0.values))
    rhs = Tt(sigma(u0.values))
    norm = lambda v: math.sqrt(g.h ** g.n * float(np.sum(np.abs(v) ** 2)))
    denom = norm(u0.values) + norm(np.sqrt(sum(Xi ** 2 for Xi in X)) * u0.values)
    return norm(lhs - rhs) / denom if denom else 0.0
