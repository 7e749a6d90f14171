"""TOML spec files describing one phase, amplitude, symbol or dispersion symbol.

Keys::

    kind = "phase" | "amplitude" | "symbol" | "dispersion"
    expr = "x1*xi1 + atan(x1)"      # a(xi) for kind = "dispersion"
    dim = 1
    profile = "PT"                  # phase only: PT | TP | L2 | SG
    orders = [0, -2, 0]             # amplitude: (m1, m2, m3); symbol: (t1, t2)
    flags = ["improving_y"]         # any of improving_x, improving_y, improving_xi
    a1 = "xi1"                      # dispersion only
    a0 = "atan(xi1)"
    rho0 = 1.0

    [params]
    t = 1.0
"""

from __future__ import annotations

from pathlib import Path

import tomli

from .classes import AmplitudeSpec, DecayFlags, PhaseSpec, SymbolSpec
from .smoothlab import DispersionSpec

KINDS = ("phase", "amplitude", "symbol", "dispersion")
FLAG_NAMES = ("improving_x", "improving_y", "improving_xi")


class SpecFileError(ValueError):
    pass


def _flags(names) -> DecayFlags:
    bad = set(names) - set(FLAG_NAMES)
    if bad:
        raise SpecFileError(f"unknown decay flags {sorted(bad)}; expected a subset of {FLAG_NAMES}")
    return DecayFlags(**{k: k in names for k in FLAG_NAMES})


def from_mapping(d: dict, expect: str | None = None):
    kind = d.get("kind", expect)
    if kind not in KINDS:
        raise SpecFileError(f"spec kind must be one of {KINDS}, got {kind!r}")
    if expect and kind != expect:
        raise SpecFileError(f"expected a {expect} spec, got {kind}")
    if "expr" not in d:
        raise SpecFileError("spec is missing 'expr'")
    dim = int(d.get("dim", 1))
    params = {k: float(v) for k, v in d.get("params", {}).items()}
    flags = _flags(d.get("flags", []))
    if kind == "phase":
        return PhaseSpec.from_string(d["expr"], dim, d.get("profile", "L2"), params)
    if kind == "amplitude":
        return AmplitudeSpec.from_string(d["expr"], dim, tuple(d.get("orders", (0, 0, 0))), flags, params)
    if kind == "symbol":
        return SymbolSpec.from_string(d["expr"], dim, tuple(d.get("orders", (0, 0))), flags, params)
    return DispersionSpec.from_strings(d["expr"], dim, d.get("a1", d["expr"]), d.get("a0", "0"),
                                       float(d.get("rho0", 1.0)), d.get("name", ""))


def kind_of(spec) -> str:
    kinds = {PhaseSpec: "phase", AmplitudeSpec: "amplitude", SymbolSpec: "symbol", DispersionSpec: "dispersion"}
    return kinds[type(spec)]


def load(path: str | Path, expect: str | None = None):
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as err:
        raise SpecFileError(f"cannot read spec file {path}: {err.strerror}") from err
    except tomli.TOMLDecodeError as err:
        raise SpecFileError(f"{path}: {err}") from err
    return from_mapping(data, expect)
