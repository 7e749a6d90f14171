"""Symbolic asymptotic expansions for compositions of FIOs with symbols.

Four series kinds are produced:

``TP``          c(x,z,xi) ~ sum_a i^-|a|/a! d_y^a[a(x,y,xi) d_xi^a p(y,xi)]|_{y=z}
``PT``          c(x,z,xi) ~ sum_a i^-|a|/a! (d_xi^a p)(x, grad_x phi)
                            d_y^a[exp(i Psi(x,y,xi)) a(y,z,xi)]|_{y=x}
``TP-reduce``   c(x,xi)   ~ sum_{a,b} i^-(|a|+|b|)/(a!b!) (d_x^a p)(grad_xi phi, xi)
                            d_eta^{a+b}[exp(i Psi(eta,xi,x)) (d_y^b a)(x, grad_xi phi, eta)]|_{eta=xi}
``PsDO-reduce`` c(x,xi)   ~ sum_b i^-|b|/b! d_xi^b d_y^b a(x,y,xi)|_{y=x}

Terms are left unexpanded; compare them by evaluation, never structurally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .classes import (AmplitudeSpec, DecayFlags, OrderPair, OrderTriple, PhaseSpec, SymbolSpec,
                      validate_amplitude, validate_phase, validate_symbol)
from .expr import Expr, MultiIndex, multi_indices

KINDS = ("TP", "PT", "TP-reduce", "PsDO-reduce")


class ClassValidationError(ValueError):
    """An input failed the class hypotheses required by the composition theorem."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class Coefficient:
    """Exact ``rational * i**quarter``."""

    rational: Fraction
    quarter: int

    @classmethod
    def for_index(cls, *indices: MultiIndex, sign: int = -1) -> "Coefficient":
        """``i^(sign*|index|) / index!``; every expansion uses ``sign=-1`` except TP."""
        order = sum(m.order for m in indices)
        denom = 1
        for m in indices:
            denom *= m.factorial()
        return cls(Fraction(1, denom), (sign * order) % 4)

    @property
    def value(self) -> complex:
        return complex(float(self.rational)) * (1j ** self.quarter)

    def __str__(self):
        r = self.rational
        sign = "-" if self.quarter in (2, 3) else ""
        unit = "i" if self.quarter in (1, 3) else ""
        if r == 1:
            return f"{sign}{unit or '1'}"
        return f"{sign}{unit + '*' if unit else ''}{r}"


@dataclass(frozen=True)
class ExpansionTerm:
    index: tuple
    coefficient: Coefficient
    body: Expr

    @property
    def order(self) -> int:
        return sum(m.order for m in self.index)

    def evaluate(self, point: Mapping[str, object]):
        return self.coefficient.value * ex.evaluate(self.body, point, check_finite=False)


@dataclass(frozen=True)
class PsiExpr:
    """Phase defect Psi, vanishing to second order on the diagonal."""

    psi: Expr
    kind: str
    dim: int

    @property
    def diagonal(self) -> tuple[str, str]:
        return ("y", "x") if self.kind == "PT" else ("eta", "xi")

    def on_diagonal(self, e: Expr) -> Expr:
        src, dst = self.diagonal
        return ex.subs(e, {a: ex.var(b) for a, b in zip(ex.block_vars(src, self.dim),
                                                         ex.block_vars(dst, self.dim))})

    def vanishing_residuals(self, point: Mapping[str, object]) -> list:
        """|Psi| and |d Psi| on the diagonal, evaluated at ``point``."""
        src, _ = self.diagonal
        exprs = [self.psi] + [ex.diff(self.psi, v) for v in ex.block_vars(src, self.dim)]
        return [np.abs(ex.evaluate(self.on_diagonal(e), point, check_finite=False)) for e in exprs]


@dataclass
class ExpansionSeries:
    kind: str
    dim: int
    N: int
    terms: list
    predicted_orders: object
    flags: DecayFlags
    remainder_order: float
    improving: str
    variables: tuple = field(default=())

    def truncation(self, point: Mapping[str, object], N: int | None = None):
        N = self.N if N is None else N
        total = 0j
        for term in self.terms:
            if term.order <= N:
                total = total + term.evaluate(point)
        return total

    def leading(self) -> ExpansionTerm:
        return self.terms[0]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "N": self.N,
            "variables": list(self.variables),
            "improving": self.improving,
            "predicted_orders": list(self.predicted_orders),
            "flags": {k: getattr(self.flags, k) for k in ("improving_x", "improving_y", "improving_xi")},
            "remainder_order": self.remainder_order,
            "terms": [
                {
                    "index": [list(m) for m in t.index],
                    "coefficient": {"rational": str(t.coefficient.rational), "quarter_turns": t.coefficient.quarter,
                                    "text": str(t.coefficient)},
                    "body": ex.to_string(t.body),
                }
                for t in self.terms
            ],
        }


# ---------------------------------------------------------------------------
# Order arithmetic
# ---------------------------------------------------------------------------

def predict_orders(kind: str, a_orders: OrderTriple, a_flags: DecayFlags = DecayFlags(),
                   p_orders: OrderPair = OrderPair(0.0, 0.0), p_flags: DecayFlags = DecayFlags(),
                   phase_profile: str | None = None):
    """Orders and decay flags of the composed amplitude."""
    m1, m2, m3 = a_orders
    t1, t2 = p_orders
    if kind == "TP":
        orders = OrderTriple(m1, m2 + t1, m3 + t2)
        flags = DecayFlags(
            improving_x=a_flags.improving_x,
            improving_y=a_flags.improving_y and p_flags.improving_x,
        )
    elif kind == "PT":
        orders = OrderTriple(m1 + t1, m2, m3 + t2)
        flags = DecayFlags(
            improving_x=(a_flags.improving_x and p_flags.improving_x and p_flags.improving_xi
                         and phase_profile == "SG"),
            improving_y=a_flags.improving_y,
        )
    elif kind == "TP-reduce":
        orders = OrderPair(m1 + m2 + t1, m3 + t2)
        flags = DecayFlags()
    elif kind == "PsDO-reduce":
        orders = OrderPair(m1 + m2, m3)
        flags = DecayFlags()
    else:
        raise ValueError(f"unknown composition kind {kind!r}; expected one of {KINDS}")
    return orders, flags


def _require(report, what):
    if not report.passed:
        worst = report.worst
        raise ClassValidationError(f"{what} failed class validation at {worst.label} "
                                   f"(sup {worst.sup:.3g})", report)


def _check_n(N: int):
    if N < 0:
        raise ValueError("truncation order must be non-negative")
    if N > ex.MAX_ORDER:
        raise ex.MaxOrderError(f"N = {N} exceeds the differentiation limit {ex.MAX_ORDER}")


def _with_params(e: Expr, params: Mapping[str, float]) -> Expr:
    if not params:
        return ex.simplify(e)
    return ex.subs(e, {k: ex.const(v) for k, v in params.items()})


# ---------------------------------------------------------------------------
# Expansions
# ---------------------------------------------------------------------------

def tp_expand(a: AmplitudeSpec, p: SymbolSpec, N: int, validate: bool = True) -> ExpansionSeries:
    """Expansion of the amplitude of T o p(x,D), improving in xi (any phase).

    Moving ``(eta - xi)^alpha`` off ``e^{i(y-z)(eta-xi)}`` by parts turns it
    into ``(i d_y)^alpha``, so the coefficients are ``i^{+|alpha|}/alpha!``.
    """
    _check_n(N)
    n = a.dim
    if not p.flags.improving_xi:
        raise ClassValidationError("tp_expand needs a symbol declared improving in xi")
    if validate:
        _require(validate_symbol(p), "symbol p")
        _require(validate_amplitude(a), "amplitude a")
    a_e = _with_params(a.expr, a.params)
    p_y = ex.rename_block(_with_params(p.expr, p.params), "x", "y", n)
    to_z = {y: ex.var(z) for y, z in zip(ex.block_vars("y", n), ex.block_vars("z", n))}
    terms = []
    for alpha in multi_indices(n, N):
        inner = ex.mul(a_e, ex.diff_multi(p_y, "xi", alpha))
        body = ex.subs(ex.diff_multi(inner, "y", alpha), to_z)
        terms.append(ExpansionTerm((alpha,), Coefficient.for_index(alpha, sign=1), body))
    orders, flags = predict_orders("TP", a.orders, a.flags, p.orders, p.flags)
    return ExpansionSeries("TP", n, N, terms, orders, flags, orders.m3 - (N + 1), "xi",
                           tuple(ex.block_vars("x", n) + ex.block_vars("z", n) + ex.block_vars("xi", n)))


def psi_pt(phi: PhaseSpec) -> PsiExpr:
    """Psi(x,y,xi) = phi(y,xi) - phi(x,xi) + (x - y).grad_x phi(x,xi)."""
    n = phi.dim
    e = phi.bound()
    grad = ex.gradient(e, "x", n)
    e_y = ex.rename_block(e, "x", "y", n)
    diffs = [ex.sub(ex.var(x), ex.var(y)) for x, y in zip(ex.block_vars("x", n), ex.block_vars("y", n))]
    return PsiExpr(ex.add(ex.sub(e_y, e), ex.dot(diffs, grad)), "PT", n)


def psi_tp(phi: PhaseSpec) -> PsiExpr:
    """Psi(eta,xi,x) = phi(x,xi) - phi(x,eta) + (eta - xi).grad_xi phi(x,xi)."""
    n = phi.dim
    e = phi.bound()
    grad = ex.gradient(e, "xi", n)
    e_eta = ex.rename_block(e, "xi", "eta", n)
    diffs = [ex.sub(ex.var(h), ex.var(k)) for h, k in zip(ex.block_vars("eta", n), ex.block_vars("xi", n))]
    return PsiExpr(ex.add(ex.sub(e, e_eta), ex.dot(diffs, grad)), "TP", n)


def pt_expand(a: AmplitudeSpec, p: SymbolSpec, phi: PhaseSpec, N: int,
              validate: bool = True) -> ExpansionSeries:
    """Expansion of the amplitude of p(x,D) o T, improving in xi."""
    _check_n(N)
    n = a.dim
    if validate:
        _require(validate_phase(phi if phi.profile == "PT" else _as_profile(phi, "PT")), "phase (PT profile)")
        _require(validate_amplitude(a), "amplitude a")
        _require(validate_symbol(p), "symbol p")
    psi = psi_pt(phi)
    grad = ex.gradient(phi.bound(), "x", n)
    p_e = _with_params(p.expr, p.params)
    # a(y, z, xi): simultaneous rename x -> y, y -> z
    shift = dict(zip(ex.block_vars("x", n), ex.block_vars("y", n)))
    shift.update(zip(ex.block_vars("y", n), ex.block_vars("z", n)))
    a_yz = ex.rename(_with_params(a.expr, a.params), shift)
    carrier = ex.mul(ex.exp(ex.mul(ex.I, psi.psi)), a_yz)
    at_grad = dict(zip(ex.block_vars("xi", n), grad))
    terms = []
    for alpha in multi_indices(n, N):
        p_part = ex.subs(ex.diff_multi(p_e, "xi", alpha), at_grad)
        body = ex.mul(p_part, psi.on_diagonal(ex.diff_multi(carrier, "y", alpha)))
        terms.append(ExpansionTerm((alpha,), Coefficient.for_index(alpha), body))
    orders, flags = predict_orders("PT", a.orders, a.flags, p.orders, p.flags, phi.profile)
    return ExpansionSeries("PT", n, N, terms, orders, flags, orders.m3 - (N + 1), "xi",
                           tuple(ex.block_vars("x", n) + ex.block_vars("z", n) + ex.block_vars("xi", n)))


def tp_reduce(a: AmplitudeSpec, p: SymbolSpec, phi: PhaseSpec, N: int,
              validate: bool = True) -> ExpansionSeries:
    """Two-variable amplitude c(x, xi) of T o p(x,D), improving in x."""
    _check_n(N)
    n = a.dim
    if not a.flags.improving_y:
        raise ClassValidationError("tp_reduce needs an amplitude declared improving in y")
    if not p.flags.improving_x:
        raise ClassValidationError("tp_reduce needs a symbol declared improving in x")
    if validate:
        _require(validate_phase(phi if phi.profile == "TP" else _as_profile(phi, "TP")), "phase (TP profile)")
        _require(validate_amplitude(a), "amplitude a")
        _require(validate_symbol(p), "symbol p")
    psi = psi_tp(phi)
    grad = ex.gradient(phi.bound(), "xi", n)
    p_e = _with_params(p.expr, p.params)
    a_e = _with_params(a.expr, a.params)
    xs, ys, xis, etas = (ex.block_vars(b, n) for b in ("x", "y", "xi", "eta"))
    p_at = dict(zip(xs, grad))
    a_at = dict(zip(ys, grad))
    a_at.update({k: ex.var(h) for k, h in zip(xis, etas)})
    e_ipsi = ex.exp(ex.mul(ex.I, psi.psi))
    terms = []
    for total in range(N + 1):
        for ka in range(total + 1):
            for alpha in multi_indices(n, ka):
                if alpha.order != ka:
                    continue
                p_part = ex.subs(ex.diff_multi(p_e, "x", alpha), p_at)
                for beta in _exact(n, total - ka):
                    body = ex.ZERO
                    if p_part is not ex.ZERO:
                        a_part = ex.subs(ex.diff_multi(a_e, "y", beta), a_at)
                        d = ex.diff_multi(ex.mul(e_ipsi, a_part), "eta", alpha + beta)
                        body = ex.mul(p_part, psi.on_diagonal(d))
                    terms.append(ExpansionTerm((alpha, beta), Coefficient.for_index(alpha, beta), body))
    orders, flags = predict_orders("TP-reduce", a.orders, a.flags, p.orders, p.flags, phi.profile)
    return ExpansionSeries("TP-reduce", n, N, terms, orders, flags, orders.t1 - (N + 1), "x",
                           tuple(xs + xis))


def psido_reduce(a: AmplitudeSpec, N: int, validate: bool = True) -> ExpansionSeries:
    """Standard (x-left) symbol of the amplitude-form operator with phase x.xi."""
    _check_n(N)
    n = a.dim
    if not a.flags.improving_y:
        raise ClassValidationError("psido_reduce needs an amplitude declared improving in y")
    if validate:
        _require(validate_amplitude(a), "amplitude a")
    a_e = _with_params(a.expr, a.params)
    diag = {y: ex.var(x) for y, x in zip(ex.block_vars("y", n), ex.block_vars("x", n))}
    terms = []
    for beta in multi_indices(n, N):
        body = ex.subs(ex.diff_multi(ex.diff_multi(a_e, "y", beta), "xi", beta), diag)
        terms.append(ExpansionTerm((beta,), Coefficient.for_index(beta), body))
    orders, flags = predict_orders("PsDO-reduce", a.orders, a.flags)
    return ExpansionSeries("PsDO-reduce", n, N, terms, orders, flags, orders.t1 - (N + 1), "x",
                           tuple(ex.block_vars("x", n) + ex.block_vars("xi", n)))


def _exact(n: int, order: int):
    return [m for m in multi_indices(n, order) if m.order == order]


def _as_profile(phi: PhaseSpec, profile: str) -> PhaseSpec:
    return PhaseSpec(phi.expr, phi.dim, profile, phi.params, phi.trial_points, phi.constants)


def series_symbol(series: ExpansionSeries, N: int | None = None) -> Expr:
    """Sum coefficient * body over terms with order <= N as one expression."""
    N = series.N if N is None else N
    out = ex.ZERO
    for term in series.terms:
        if term.order <= N:
            out = ex.add(out, ex.mul(ex.const(term.coefficient.value), term.body))
    return out


def pseudo_composition_terms(a: AmplitudeSpec, p: SymbolSpec, N: int) -> list:
    """Standard PsDO composition terms i^-|a|/a! d_xi^a p(x,xi) d_y^a a(y,z,xi)|_{y=x}."""
    n = a.dim
    shift = dict(zip(ex.block_vars("x", n), ex.block_vars("y", n)))
    shift.update(zip(ex.block_vars("y", n), ex.block_vars("z", n)))
    a_yz = ex.rename(a.expr, shift)
    diag = {y: ex.var(x) for y, x in zip(ex.block_vars("y", n), ex.block_vars("x", n))}
    out = []
    for alpha in multi_indices(n, N):
        body = ex.mul(ex.diff_multi(p.expr, "xi", alpha), ex.subs(ex.diff_multi(a_yz, "y", alpha), diag))
        out.append(ExpansionTerm((alpha,), Coefficient.for_index(alpha), body))
    return out
