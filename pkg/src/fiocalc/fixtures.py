"""Named symbols, amplitudes, phases and data families used by tests and the CLI."""

from __future__ import annotations

import numpy as np

from .classes import AmplitudeSpec, DecayFlags, PhaseSpec, SymbolSpec
from .gridquant import Grid
from .smoothlab import DispersionSpec

PHASES = {
    "xxi": ("x1*xi1", 1, "L2"),
    "translate": ("x1*xi1 + t*xi1", 1, "PT"),
    "atan": ("x1*xi1 + atan(x1)", 1, "PT"),
    "jbr": ("x1*xi1 + jbr(x1)", 1, "SG"),
    "atan_tp": ("x1*xi1 + atan(xi1)", 1, "TP"),
    "xxi2": ("x1*xi1 + x2*xi2", 2, "L2"),
    "jbr2": ("x1*xi1 + x2*xi2 + jbr(x1, x2)", 2, "SG"),
}


def phase(name: str, **params) -> PhaseSpec:
    text, dim, profile = PHASES[name]
    if name == "translate":
        params.setdefault("t", 1.0)
    return PhaseSpec.from_string(text, dim, profile, params)


def all_phases() -> list[PhaseSpec]:
    return [phase(k) for k in PHASES]


DISPERSIONS = {
    "xi": ("xi1", 1, "xi1", "0"),
    "xi+atan": ("xi1 + atan(xi1)", 1, "xi1", "atan(xi1)"),
    "2d": ("2*xi1 + jbr(xi1, xi2)", 2, "2*xi1 + sqrt(xi1^2 + xi2^2)", "jbr(xi1, xi2) - sqrt(xi1^2 + xi2^2)"),
}


def dispersion(name: str) -> DispersionSpec:
    a, dim, a1, a0 = DISPERSIONS[name]
    return DispersionSpec.from_strings(a, dim, a1, a0, 1.0, name)


# Smoothing laboratory defaults: data confined to [-L/4, L/4], T <= L / (2 max|grad a|).
SMOOTHING_GRID = Grid(1, 2048, 256.0)
SMOOTHING_T = 64.0


def tp_pair():
    """Amplitude <y>^-2 and symbol <xi> for the improving-in-xi rate study."""
    a = AmplitudeSpec.from_string("jbrpow(y1, -2)", 1, (0, -2, 0), DecayFlags(False, True, True))
    p = SymbolSpec.from_string("jbr(xi1)", 1, (0, 1), DecayFlags(True, False, True))
    return a, p


def sobolev_fixture():
    """Operator for the weighted boundedness surrogate: orders (1, -1, 0),
    amplitude improving in y, phase with bounded xi-derivatives at x = 0."""
    a = AmplitudeSpec.from_string("jbr(x1)*jbrpow(y1, -1)*(2 + jbrpow(xi1, -1))", 1, (1, -1, 0),
                                  DecayFlags(False, True, False))
    return a, phase("jbr")


def leading_term_triples(seed: int = 0, count: int = 5):
    """Seeded (a, p, phi) triples with PT-profile phases."""
    rng = np.random.default_rng(seed)
    amps = [("jbrpow(y1, -1)*jbr(x1)", (1, -1, 0)), ("atan(x1)*jbrpow(y1, -2)", (0, -2, 0)),
            ("exp(-y1^2)*jbr(xi1)", (0, 0, 1)), ("jbrpow(x1, -1)*(1 + y1^2)*jbrpow(y1, -2)", (-1, 0, 0)),
            ("cos(y1)*jbrpow(y1, -2)*jbrpow(xi1, -1)", (0, -2, -1))]
    syms = [("jbr(xi1)", (0, 1)), ("atan(x1)*jbr(xi1)", (0, 1)), ("jbrpow(x1, -1)*xi1", (-1, 1)),
            ("1 + jbrpow(xi1, -1)", (0, 0)), ("jbr(x1)", (1, 0))]
    phs = ["x1*xi1", "x1*xi1 + atan(x1)", "x1*xi1 + jbr(x1)", "x1*xi1 + atan(x1)*atan(xi1)", "x1*xi1 - atan(x1)"]
    out = []
    for _ in range(count):
        (at, ao), (pt, po) = amps[rng.integers(len(amps))], syms[rng.integers(len(syms))]
        out.append((AmplitudeSpec.from_string(at, 1, ao), SymbolSpec.from_string(pt, 1, po),
                    PhaseSpec.from_string(phs[rng.integers(len(phs))], 1, "PT")))
    return out


# Observed max of opnorm / th25_bound over the seeded family is 1.07 (N=128, L=16).
TH25_CONSTANT = 1.5


def th25_family(seed: int = 0, count: int = 10) -> list[AmplitudeSpec]:
    """Seeded amplitudes a(y, xi) with bounded derivatives of every order."""
    rng = np.random.default_rng(seed)
    ys = ["jbrpow(y1, -{r})", "atan(y1/{s})", "exp(-(y1 - {c})^2/{w})", "cos({s}*y1)*jbrpow(y1, -1)"]
    xis = ["jbrpow(xi1, -{r})", "2 + cos(xi1/{s})", "exp(-xi1^2/{w})", "1"]
    out = []
    for _ in range(count):
        fy = ys[rng.integers(len(ys))]
        fx = xis[rng.integers(len(xis))]
        vals = dict(r=round(float(rng.uniform(0.5, 2.0)), 3), s=round(float(rng.uniform(0.5, 2.0)), 3),
                    c=round(float(rng.uniform(-3, 3)), 3), w=round(float(rng.uniform(1.0, 8.0)), 3))
        scale = round(float(np.exp(rng.uniform(np.log(0.1), np.log(10.0)))), 4)
        text = f"{scale}*({fy.format(**vals)})*({fx.format(**vals)})"
        out.append(AmplitudeSpec.from_string(text, 1))
    return out
