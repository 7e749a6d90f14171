"""Declared symbol, amplitude and phase classes with sampled decay certificates.

Growth hypotheses of the form "for all x, y, xi" are certified by a sampled
supremum over a documented plan; nothing here is a proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .expr import Expr, MultiIndex, multi_indices

DEFAULT_CAP = 1e6
DEFAULT_GROWTH = 10.0
PROFILES = ("PT", "TP", "L2", "SG")


@dataclass(frozen=True)
class OrderTriple:
    m1: float
    m2: float
    m3: float

    def __add__(self, other: "OrderTriple") -> "OrderTriple":
        return OrderTriple(self.m1 + other.m1, self.m2 + other.m2, self.m3 + other.m3)

    def __iter__(self):
        return iter((self.m1, self.m2, self.m3))


@dataclass(frozen=True)
class OrderPair:
    t1: float
    t2: float

    def __add__(self, other: "OrderPair") -> "OrderPair":
        return OrderPair(self.t1 + other.t1, self.t2 + other.t2)

    def __iter__(self):
        return iter((self.t1, self.t2))


@dataclass(frozen=True)
class DecayFlags:
    """Whether each derivative in a block lowers that block's order by one.

    For a symbol p(x, xi) only ``improving_x`` and ``improving_xi`` are read.
    """

    improving_x: bool = False
    improving_y: bool = False
    improving_xi: bool = False


@dataclass(frozen=True)
class SamplePlan:
    """Tensor grid per axis plus seeded log-uniform random points.

    ``inner_radius`` splits samples into an inner and an outer shell; the
    phase validator uses the ratio of their sups to detect growth.
    """

    axis: tuple = (-1e4, -10 ** (8 / 3), -10 ** (4 / 3), -1.0, 0.0, 1.0, 10 ** (4 / 3), 10 ** (8 / 3), 1e4)
    n_random: int = 50
    seed: int = 0
    inner_radius: float = 10 ** (8 / 3) * 1.0001
    min_abs: Mapping[str, float] = field(default_factory=dict)

    def points(self, axes: Sequence[str]) -> dict[str, np.ndarray]:
        k = len(axes)
        grid = np.array(list(product(self.axis, repeat=k)), dtype=float).reshape(-1, k)
        rng = np.random.default_rng(self.seed)
        lo, hi = 0.0, np.log10(max(abs(a) for a in self.axis))
        mags = 10 ** rng.uniform(lo - 1, hi, size=(self.n_random, k))
        signs = rng.choice([-1.0, 1.0], size=(self.n_random, k))
        pts = np.vstack([grid, mags * signs])
        keep = np.ones(len(pts), dtype=bool)
        for block, rho in self.min_abs.items():
            cols = [i for i, a in enumerate(axes) if a.rstrip("0123456789") == block]
            if cols:
                keep &= np.sqrt((pts[:, cols] ** 2).sum(axis=1)) >= rho
        pts = pts[keep]
        return {a: pts[:, i] for i, a in enumerate(axes)}


@dataclass
class DecayEntry:
    index: tuple
    label: str
    sup: float
    growth: float
    worst_point: dict
    passed: bool

    def to_dict(self) -> dict:
        return {
            "index": [list(a) if isinstance(a, tuple) else a for a in self.index],
            "label": self.label,
            "sup": _jsonable(self.sup),
            "growth": _jsonable(self.growth),
            "worst_point": {k: _jsonable(v) for k, v in self.worst_point.items()},
            "passed": self.passed,
        }


@dataclass
class DecayReport:
    kind: str
    entries: list
    cap: float
    seed: int
    constants: dict = field(default_factory=dict)
    max_order: int = 0

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def worst(self) -> DecayEntry | None:
        failing = [e for e in self.entries if not e.passed]
        pool = failing or self.entries
        if not pool:
            return None
        return max(pool, key=lambda e: (np.nan_to_num(e.sup, nan=np.inf)))

    def to_dict(self) -> dict:
        worst = self.worst
        return {
            "kind": self.kind,
            "passed": self.passed,
            "cap": self.cap,
            "seed": self.seed,
            "max_order": self.max_order,
            "constants": {k: _jsonable(v) for k, v in self.constants.items()},
            "worst": worst.to_dict() if worst else None,
            "entries": [e.to_dict() for e in self.entries],
        }


def _jsonable(v):
    if isinstance(v, (bool, str)) or v is None:
        return v
    v = float(v)
    if np.isnan(v):
        return "nan"
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _weight(pts: Mapping[str, np.ndarray], block: str, dim: int, power: float) -> np.ndarray:
    sq = 1.0
    for name in ex.block_vars(block, dim):
        sq = sq + pts[name] ** 2
    return sq ** (power / 2.0)


def _bracket(values: Sequence[np.ndarray]) -> np.ndarray:
    sq = 1.0
    for v in values:
        sq = sq + np.abs(v) ** 2
    return np.sqrt(sq)


def _entry(index, label, quotient, pts, cap, growth_factor=None, inner=None) -> DecayEntry:
    q = np.abs(np.broadcast_to(np.asarray(quotient), next(iter(pts.values())).shape))
    q = np.where(np.isnan(q), np.inf, q)
    i = int(np.argmax(q))
    sup = float(q[i])
    growth = 1.0
    if inner is not None:
        sup_in = float(q[inner].max()) if inner.any() else 0.0
        sup_out = float(q[~inner].max()) if (~inner).any() else 0.0
        if sup_in > 0:
            growth = sup_out / sup_in
        elif sup_out > 1e-12:
            growth = np.inf
    passed = bool(np.isfinite(sup) and sup <= cap)
    if growth_factor is not None:
        passed = passed and growth <= growth_factor
    worst = {k: float(v[i]) for k, v in pts.items()}
    return DecayEntry(index, label, sup, growth, worst, passed)


def _eval(e: Expr, pts, params) -> np.ndarray:
    point = dict(pts)
    point.update(params or {})
    return np.asarray(ex.evaluate(e, point, check_finite=False))


@dataclass(frozen=True)
class AmplitudeSpec:
    """Amplitude a(x, y, xi) with declared orders and decay flags."""

    expr: Expr
    dim: int
    orders: OrderTriple = OrderTriple(0.0, 0.0, 0.0)
    flags: DecayFlags = DecayFlags()
    params: Mapping[str, float] = field(default_factory=dict)

    blocks = ("x", "y", "xi")

    @classmethod
    def from_string(cls, text: str, dim: int, orders=(0, 0, 0), flags=DecayFlags(), params=None):
        return cls(ex.parse(text, dim), dim, OrderTriple(*orders), flags, dict(params or {}))

    def with_orders(self, orders) -> "AmplitudeSpec":
        return replace(self, orders=OrderTriple(*orders))


@dataclass(frozen=True)
class SymbolSpec:
    """Symbol p(x, xi) with orders (t1, t2); rename blocks to use it in (y, eta)."""

    expr: Expr
    dim: int
    orders: OrderPair = OrderPair(0.0, 0.0)
    flags: DecayFlags = DecayFlags()
    params: Mapping[str, float] = field(default_factory=dict)

    blocks = ("x", "xi")

    @classmethod
    def from_string(cls, text: str, dim: int, orders=(0, 0), flags=DecayFlags(), params=None):
        return cls(ex.parse(text, dim), dim, OrderPair(*orders), flags, dict(params or {}))


@dataclass(frozen=True)
class PhaseSpec:
    """Real phase phi(x, xi) with the hypothesis profile it is meant to satisfy."""

    expr: Expr
    dim: int
    profile: str = "L2"
    params: Mapping[str, float] = field(default_factory=dict)
    trial_points: tuple = (0.0,)
    constants: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown phase profile {self.profile!r}; expected one of {PROFILES}")

    @classmethod
    def from_string(cls, text: str, dim: int, profile: str = "L2", params=None, trial_points=(0.0,)):
        return cls(ex.parse(text, dim), dim, profile, dict(params or {}), tuple(trial_points))

    def bound(self) -> Expr:
        """Phase with its parameters (e.g. ``t``) substituted as constants."""
        return ex.subs(self.expr, {k: ex.const(v) for k, v in self.params.items()})


def _block_multi(dim: int, nblocks: int, max_order: int):
    for total in range(max_order + 1):
        for combo in product(multi_indices(dim, total), repeat=nblocks):
            if sum(m.order for m in combo) == total:
                yield combo


def _validate_blocks(e: Expr, dim: int, blocks, orders, improving, max_order, plan, cap, params, kind):
    if max_order > ex.MAX_ORDER:
        raise ex.MaxOrderError(f"max_order {max_order} exceeds the differentiation limit {ex.MAX_ORDER}")
    axes = [v for b in blocks for v in ex.block_vars(b, dim)]
    pts = plan.points(axes)
    base = [_weight(pts, b, dim, -m) for b, m in zip(blocks, orders)]
    entries = []
    for combo in _block_multi(dim, len(blocks), max_order):
        d = e
        for b, alpha in zip(blocks, combo):
            d = ex.diff_multi(d, b, alpha, max_order=ex.MAX_ORDER)
        vals = _eval(d, pts, params)
        weight = 1.0
        for b, alpha, w, imp in zip(blocks, combo, base, improving):
            weight = weight * w
            if imp and alpha.order:
                weight = weight * _weight(pts, b, dim, alpha.order)
        label = "d" + "".join(f"[{b}]{tuple(a)}" for b, a in zip(blocks, combo) if a.order) or "f"
        entries.append(_entry(tuple(tuple(a) for a in combo), label, vals * weight, pts, cap))
    return DecayReport(kind, entries, cap, plan.seed, max_order=max_order)


def validate_amplitude(a: AmplitudeSpec, max_order: int = 3, samples: SamplePlan | None = None,
                       cap: float = DEFAULT_CAP) -> DecayReport:
    """Sampled sup of |d^(a,b,g) a| <x>^-m1 <y>^-m2 <xi>^-m3 (plus flagged gains)."""
    plan = samples or SamplePlan()
    f = a.flags
    return _validate_blocks(a.expr, a.dim, ("x", "y", "xi"), tuple(a.orders),
                            (f.improving_x, f.improving_y, f.improving_xi),
                            max_order, plan, cap, a.params, "amplitude")


def validate_symbol(p: SymbolSpec, max_order: int = 3, samples: SamplePlan | None = None,
                    cap: float = DEFAULT_CAP) -> DecayReport:
    plan = samples or SamplePlan()
    f = p.flags
    return _validate_blocks(p.expr, p.dim, ("x", "xi"), tuple(p.orders),
                            (f.improving_x, f.improving_xi), max_order, plan, cap, p.params, "symbol")


def _det(mat: list[list[np.ndarray]]) -> np.ndarray:
    n = len(mat)
    if n == 1:
        return mat[0][0]
    if n == 2:
        return mat[0][0] * mat[1][1] - mat[0][1] * mat[1][0]
    raise ValueError("dimension > 2 not supported")


def validate_phase(phi: PhaseSpec, max_order: int = 3, samples: SamplePlan | None = None,
                   cap: float = DEFAULT_CAP, growth_factor: float = DEFAULT_GROWTH) -> DecayReport:
    """Sample each condition of the declared phase profile.

    Every condition is rewritten as a quotient that must stay bounded; lower
    bounds (non-degeneracy, C1) are checked through their reciprocals.  A
    quotient passes when its sup is finite, below ``cap``, and the sup over the
    outer sample shell exceeds the inner-shell sup by at most ``growth_factor``.
    """
    plan = samples or SamplePlan()
    n = phi.dim
    e = phi.bound()
    if any(isinstance(c.value, complex) for c in _consts(e)):
        raise ValueError("phase must be real-valued")
    xs, xis = ex.block_vars("x", n), ex.block_vars("xi", n)
    pts = plan.points(xs + xis)
    inner = np.ones(len(pts[xs[0]]), dtype=bool)
    for v in pts.values():
        inner &= np.abs(v) <= plan.inner_radius
    bx = _bracket([pts[v] for v in xs])
    bxi = _bracket([pts[v] for v in xis])
    entries: list[DecayEntry] = []
    constants: dict = {}

    def check(index, label, quotient):
        entries.append(_entry(index, label, quotient, pts, cap, growth_factor, inner))

    def val(d):
        return _eval(d, pts, {})

    # Mixed derivatives |a|,|b| >= 1.
    sg = phi.profile == "SG"
    for total in range(2, max_order + 1):
        for ka in range(1, total):
            for alpha in multi_indices(n, ka):
                if alpha.order != ka:
                    continue
                for beta in multi_indices(n, total - ka):
                    if beta.order != total - ka:
                        continue
                    d = ex.diff_multi(ex.diff_multi(e, "x", alpha), "xi", beta)
                    q = np.abs(val(d))
                    if sg:
                        q = q * bx ** (alpha.order - 1)
                    check((tuple(alpha), tuple(beta)), f"mixed{tuple(alpha)}{tuple(beta)}", q)

    if phi.profile == "L2":
        hess = [[val(ex.diff(ex.diff(e, xs[i]), xis[j])) for j in range(n)] for i in range(n)]
        det = np.abs(np.broadcast_to(_det(hess), bx.shape))
        constants["C0"] = float(det.min())
        with np.errstate(divide="ignore"):
            check(("det",), "nondegeneracy 1/|det d_x d_xi phi|", 1.0 / det)
        _check_x_beta(phi, e, plan, max_order, cap, growth_factor, entries, constants)

    if phi.profile == "PT":
        grad = [val(ex.diff(e, v)) for v in xs]
        ratio = _bracket(grad) / bxi
        constants["C1"] = float(ratio.min())
        constants["C2"] = float(ratio.max())
        check(("grad_x",), "upper <grad_x phi>/<xi>", ratio)
        check(("grad_x",), "lower <xi>/<grad_x phi>", 1.0 / ratio)
        for alpha in multi_indices(n, max_order):
            if alpha.order >= 1:
                d = ex.diff_multi(e, "x", alpha)
                check((tuple(alpha), None), f"d_x{tuple(alpha)} phi/<xi>", np.abs(val(d)) / bxi)

    if phi.profile == "TP":
        grad = [val(ex.diff(e, v)) for v in xis]
        ratio = _bracket(grad) / bx
        constants["C1"] = float(ratio.min())
        constants["C2"] = float(ratio.max())
        check(("grad_xi",), "upper <grad_xi phi>/<x>", ratio)
        check(("grad_xi",), "lower <x>/<grad_xi phi>", 1.0 / ratio)
        for beta in multi_indices(n, max_order):
            if beta.order >= 1:
                d = ex.diff_multi(e, "xi", beta)
                check((None, tuple(beta)), f"d_xi{tuple(beta)} phi/<x>", np.abs(val(d)) / bx)

    if sg:
        for alpha in multi_indices(n, max_order):
            d = ex.diff_multi(e, "x", alpha)
            q = np.abs(val(d)) * bx ** (alpha.order - 1) / bxi
            check((tuple(alpha), None), f"SG d_x{tuple(alpha)} phi", q)
        for beta in multi_indices(n, max_order):
            if beta.order >= 1:
                d = ex.diff_multi(e, "xi", beta)
                check((None, tuple(beta)), f"SG d_xi{tuple(beta)} phi", np.abs(val(d)) / bx)

    report = DecayReport(f"phase:{phi.profile}", entries, cap, plan.seed, constants, max_order)
    return report


def _check_x_beta(phi, e, plan, max_order, cap, growth_factor, entries, constants):
    """exists x_beta in the trial set with sup_xi |d_xi^beta phi(x_beta, xi)| bounded."""
    n = phi.dim
    xs, xis = ex.block_vars("x", n), ex.block_vars("xi", n)
    pts = plan.points(xis)
    inner = np.ones(len(pts[xis[0]]), dtype=bool)
    for v in pts.values():
        inner &= np.abs(v) <= plan.inner_radius
    for beta in multi_indices(n, max_order):
        if beta.order == 0:
            continue
        d = ex.diff_multi(e, "xi", beta)
        best = None
        for x0 in phi.trial_points:
            x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n,))
            point = dict(pts)
            point.update({v: x0[i] for i, v in enumerate(xs)})
            q = np.abs(_eval(d, point, {}))
            entry = _entry((None, tuple(beta)), f"x_beta d_xi{tuple(beta)} phi at x={x0.tolist()}",
                           q, pts, cap, growth_factor, inner)
            if best is None or (entry.passed and not best.passed) or (
                    entry.passed == best.passed and entry.sup < best.sup):
                best = entry
        entries.append(best)
        constants[f"C_beta{tuple(beta)}"] = best.sup


def _consts(e: Expr):
    seen = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        if node.kind == "const":
            yield node
        stack.extend(node.args)
