"""Symbol calculus, oscillatory-integral oracles and grid quantization for
Fourier integral operators, plus a smoothing-estimate laboratory."""

from .classes import AmplitudeSpec, DecayFlags, PhaseSpec, SamplePlan, SymbolSpec
from .expr import Expr, diff, evaluate, parse, to_string

__version__ = "1.0.0"

__all__ = ["AmplitudeSpec", "DecayFlags", "PhaseSpec", "SamplePlan", "SymbolSpec", "Expr", "diff",
           "evaluate", "parse", "to_string", "__version__"]
