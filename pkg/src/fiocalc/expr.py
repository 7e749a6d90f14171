"""Immutable expression trees with parsing, exact differentiation and evaluation.

Expressions are hash-consed: two structurally equal trees are the same Python
object, so equality is identity and derivative caches are cheap.

Grammar (EBNF)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" int)?
    int     := ["-"] DIGITS | "(" ["-"] DIGITS ")"
    atom    := NUMBER | VARIABLE | "I" | FUNC "(" expr ")"
             | "jbr" "(" expr ("," expr)* ")"
             | "jbrpow" "(" expr ("," expr)* "," ["-"] NUMBER ")"
             | "(" expr ")"
    FUNC    := "sqrt" | "exp" | "sin" | "cos" | "atan"

Variables for ambient dimension n are ``x1..xn``, ``y1..yn``, ``z1..zn``,
``xi1..xin``, ``eta1..etan`` and ``t``.  ``jbr(a, b)`` is the Japanese bracket
``(1 + a^2 + b^2)^(1/2)`` and ``jbrpow(a, b, m)`` its real power ``m``.

Parsing keeps the tree as written, except that arithmetic between literals
involving ``I`` is folded, so ``(1 - 2*I)`` is a single complex constant.
"""

from __future__ import annotations

import math
import re
import threading
import warnings
from functools import lru_cache
from itertools import product
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

MAX_ORDER = 8

BLOCKS = ("x", "y", "z", "xi", "eta")

UNARY_OPS = ("neg", "sqrt", "exp", "sin", "cos", "atan")
BINARY_OPS = ("add", "sub", "mul", "div")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownVariableError(ExprError):
    pass


class UnboundVariableError(ExprError):
    pass


class DomainError(ExprError):
    pass


class MaxOrderError(ExprError):
    pass


class NonFiniteWarning(RuntimeWarning):
    pass


_INTERN: dict = {}
_INTERN_LOCK = threading.Lock()


def _norm_value(value):
    if isinstance(value, complex):
        if value.imag == 0.0:
            value = value.real
        else:
            return complex(value.real + 0.0, value.imag + 0.0)
    value = float(value)
    return value + 0.0  # folds -0.0


class Expr:
    """A node in an expression tree.

    ``kind`` is one of ``const``, ``var``, the unary ops, the binary ops,
    ``pow`` (``value`` holds the integer exponent) or ``jbrpow`` (``value``
    holds the real exponent, ``args`` the bracketed entries).
    """

    __slots__ = ("kind", "value", "args", "_hash", "__weakref__")

    def __new__(cls, kind: str, value=None, args: tuple = ()):
        if kind == "const":
            value = _norm_value(value)
        elif kind == "jbrpow":
            value = float(value) + 0.0
        key = (kind, type(value).__name__, value, tuple(id(a) for a in args))
        with _INTERN_LOCK:
            node = _INTERN.get(key)
            if node is not None:
                return node
            node = object.__new__(cls)
            object.__setattr__(node, "kind", kind)
            object.__setattr__(node, "value", value)
            object.__setattr__(node, "args", tuple(args))
            object.__setattr__(node, "_hash", hash(key))
            _INTERN[key] = node
        return node

    def __setattr__(self, name, value):
        raise AttributeError("Expr is immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return self is other

    def __reduce__(self):
        return (Expr, (self.kind, self.value, self.args))

    def __repr__(self):
        return f"Expr({to_string(self)!r})"

    def __str__(self):
        return to_string(self)

    # Operator sugar builds simplified nodes.
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n: int):
        return power(self, n)

    @property
    def is_const(self) -> bool:
        return self.kind == "const"

    def free_vars(self) -> frozenset:
        return _free_vars(self)


@lru_cache(maxsize=None)
def _free_vars(e: Expr) -> frozenset:
    if e.kind == "var":
        return frozenset([e.value])
    out = frozenset()
    for a in e.args:
        out |= _free_vars(a)
    return out


def const(value) -> Expr:
    return Expr("const", value)


def var(name: str) -> Expr:
    return Expr("var", name)


ZERO = const(0.0)
ONE = const(1.0)
I = const(1j)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, complex, np.number)):
        return const(complex(value) if isinstance(value, complex) else float(value))
    raise TypeError(f"cannot convert {value!r} to Expr")


def block_vars(block: str, dim: int) -> list[str]:
    if block == "t":
        return ["t"]
    if block not in BLOCKS:
        raise ExprError(f"unknown variable block {block!r}")
    return [f"{block}{j + 1}" for j in range(dim)]


def allowed_vars(dim: int) -> set[str]:
    names = {"t"}
    for b in BLOCKS:
        names.update(block_vars(b, dim))
    return names


# ---------------------------------------------------------------------------
# Raw and simplifying constructors
# ---------------------------------------------------------------------------

def _is(e: Expr, v) -> bool:
    return e.kind == "const" and e.value == v


def neg(a: Expr) -> Expr:
    if a.kind == "const":
        return const(-a.value)
    if a.kind == "neg":
        return a.args[0]
    return Expr("neg", None, (a,))


def _negative(v) -> bool:
    if isinstance(v, complex):
        return v.real < 0 or (v.real == 0 and v.imag < 0)
    return v < 0


def _leading_negative(e: Expr) -> bool:
    """True for ``c`` or ``c*u`` with a negative-looking constant ``c``."""
    if e.kind == "const":
        return _negative(e.value)
    return e.kind == "mul" and e.args[0].kind == "const" and _negative(e.args[0].value)


def _flip(e: Expr) -> Expr:
    if e.kind == "const":
        return const(-e.value)
    return mul(const(-e.args[0].value), e.args[1])


def add(a: Expr, b: Expr) -> Expr:
    if a.kind == "const" and b.kind == "const":
        return const(a.value + b.value)
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if _leading_negative(b):
        return sub(a, _flip(b))
    if b.kind == "neg":
        return sub(a, b.args[0])
    if a.kind == "neg":
        return sub(b, a.args[0])
    return Expr("add", None, (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if a is b:
        return ZERO
    if a.kind == "const" and b.kind == "const":
        return const(a.value - b.value)
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    if b.kind == "neg":
        return add(a, b.args[0])
    if _leading_negative(b):
        return add(a, _flip(b))
    # (u + v) - u and (u + v) - v
    if a.kind == "add":
        if a.args[0] is b:
            return a.args[1]
        if a.args[1] is b:
            return a.args[0]
    return Expr("sub", None, (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if a.kind == "const" and b.kind == "const":
        return const(a.value * b.value)
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if _is(a, -1):
        return neg(b)
    if _is(b, -1):
        return neg(a)
    if a.kind == "neg" and b.kind == "neg":
        return mul(a.args[0], b.args[0])
    if a.kind == "neg":
        return neg(mul(a.args[0], b))
    if b.kind == "neg":
        return neg(mul(a, b.args[0]))
    if b.kind == "const" and a.kind != "const":
        a, b = b, a
    if a.kind == "const" and b.kind == "mul" and b.args[0].kind == "const":
        return mul(const(a.value * b.args[0].value), b.args[1])
    return Expr("mul", None, (a, b))


def div(a: Expr, b: Expr) -> Expr:
    if _is(b, 0):
        raise ZeroDivisionError("division by a syntactically zero expression")
    if _is(a, 0):
        return ZERO
    if _is(b, 1):
        return a
    if a is b:
        return ONE
    if a.kind == "const" and b.kind == "const":
        return const(a.value / b.value)
    if b.kind == "const":
        return mul(const(1.0 / b.value), a)
    if a.kind == "neg":
        return neg(div(a.args[0], b))
    return Expr("div", None, (a, b))


def power(a: Expr, n: int) -> Expr:
    if int(n) != n:
        raise ExprError("pow exponent must be an integer; use jbrpow for real powers")
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if a.kind == "const":
        return const(a.value ** n)
    if a.kind == "jbrpow":
        return jbrpow(a.args, a.value * n)
    if a.kind == "pow":
        return power(a.args[0], a.value * n)
    return Expr("pow", n, (a,))


def jbrpow(args: Sequence[Expr], m: float) -> Expr:
    args = tuple(args)
    if not args:
        raise ExprError("jbr needs at least one argument")
    if m == 0:
        return ONE
    if all(a.kind == "const" for a in args):
        return const((1.0 + sum(a.value ** 2 for a in args)) ** (m / 2.0))
    return Expr("jbrpow", m, args)


def jbr(*args: Expr) -> Expr:
    return jbrpow(args, 1.0)


def _unary(op: str, a: Expr) -> Expr:
    if a.kind == "const":
        return const(_SCALAR[op](a.value))
    return Expr(op, None, (a,))


def sqrt(a: Expr) -> Expr:
    return _unary("sqrt", a)


def exp(a: Expr) -> Expr:
    return _unary("exp", a)


def sin(a: Expr) -> Expr:
    return _unary("sin", a)


def cos(a: Expr) -> Expr:
    return _unary("cos", a)


def atan(a: Expr) -> Expr:
    return _unary("atan", a)


def _csqrt(v):
    if isinstance(v, complex) or v < 0:
        raise DomainError(f"sqrt of negative constant {v}")
    return math.sqrt(v)


_SCALAR = {
    "sqrt": _csqrt,
    "exp": lambda v: complex(np.exp(v)) if isinstance(v, complex) else math.exp(v),
    "sin": lambda v: complex(np.sin(v)) if isinstance(v, complex) else math.sin(v),
    "cos": lambda v: complex(np.cos(v)) if isinstance(v, complex) else math.cos(v),
    "atan": lambda v: complex(np.arctan(v)) if isinstance(v, complex) else math.atan(v),
}

_SMART = {
    "neg": lambda args, v: neg(args[0]),
    "sqrt": lambda args, v: sqrt(args[0]),
    "exp": lambda args, v: exp(args[0]),
    "sin": lambda args, v: sin(args[0]),
    "cos": lambda args, v: cos(args[0]),
    "atan": lambda args, v: atan(args[0]),
    "add": lambda args, v: add(*args),
    "sub": lambda args, v: sub(*args),
    "mul": lambda args, v: mul(*args),
    "div": lambda args, v: div(*args),
    "pow": lambda args, v: power(args[0], v),
    "jbrpow": lambda args, v: jbrpow(args, v),
}


def rebuild(e: Expr, args: Sequence[Expr]) -> Expr:
    """Rebuild a node of the same kind over new children, simplifying."""
    if e.kind in ("const", "var"):
        return e
    return _SMART[e.kind](tuple(args), e.value)


def sum_exprs(terms: Iterable[Expr]) -> Expr:
    out = ZERO
    for term in terms:
        out = add(out, term)
    return out


def dot(u: Sequence[Expr], v: Sequence[Expr]) -> Expr:
    return sum_exprs(mul(a, b) for a, b in zip(u, v))


# ---------------------------------------------------------------------------
# Simplification and substitution
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def simplify(e: Expr) -> Expr:
    """Conservative bottom-up simplification: folding and 0/1 identities only."""
    if e.kind in ("const", "var"):
        return e
    return rebuild(e, [simplify(a) for a in e.args])


def subs(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Simultaneous substitution of variables by expressions."""
    mapping = {k: as_expr(v) for k, v in mapping.items()}
    memo: dict = {}

    def go(node: Expr) -> Expr:
        hit = memo.get(node)
        if hit is not None:
            return hit
        if node.kind == "var":
            out = mapping.get(node.value, node)
        elif node.kind == "const" or not (_free_vars(node) & mapping.keys()):
            out = simplify(node)
        else:
            out = rebuild(node, [go(a) for a in node.args])
        memo[node] = out
        return out

    return go(e)


def rename(e: Expr, mapping: Mapping[str, str]) -> Expr:
    return subs(e, {k: var(v) for k, v in mapping.items()})


def rename_block(e: Expr, src: str, dst: str, dim: int) -> Expr:
    return rename(e, dict(zip(block_vars(src, dim), block_vars(dst, dim))))


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _d(e: Expr, v: str) -> Expr:
    if v not in _free_vars(e):
        return ZERO
    k = e.kind
    if k == "var":
        return ONE
    if k == "neg":
        return neg(_d(e.args[0], v))
    if k == "add":
        return add(_d(e.args[0], v), _d(e.args[1], v))
    if k == "sub":
        return sub(_d(e.args[0], v), _d(e.args[1], v))
    if k == "mul":
        a, b = e.args
        return add(mul(_d(a, v), b), mul(a, _d(b, v)))
    if k == "div":
        a, b = e.args
        da, db = _d(a, v), _d(b, v)
        return sub(div(da, b), div(mul(a, db), power(b, 2)))
    if k == "pow":
        (a,) = e.args
        n = e.value
        return mul(mul(const(n), power(a, n - 1)), _d(a, v))
    a = e.args[0]
    if k == "sqrt":
        return div(_d(a, v), mul(const(2.0), e))
    if k == "exp":
        return mul(e, _d(a, v))
    if k == "sin":
        return mul(cos(a), _d(a, v))
    if k == "cos":
        return neg(mul(sin(a), _d(a, v)))
    if k == "atan":
        return div(_d(a, v), add(ONE, power(a, 2)))
    if k == "jbrpow":
        m = e.value
        inner = sum_exprs(mul(arg, _d(arg, v)) for arg in e.args)
        return mul(mul(const(m), jbrpow(e.args, m - 2.0)), inner)
    raise ExprError(f"cannot differentiate node kind {k!r}")


def diff(e: Expr, v: str, k: int = 1) -> Expr:
    """Exact ``k``-th partial derivative of ``e`` with respect to ``v``."""
    if k < 0:
        raise ValueError("derivative order must be non-negative")
    out = simplify(e)
    for _ in range(k):
        out = _d(out, v)
    return out


class MultiIndex(tuple):
    """Fixed-length tuple of non-negative integers."""

    def __new__(cls, entries: Iterable[int]):
        entries = tuple(int(a) for a in entries)
        if any(a < 0 for a in entries):
            raise ValueError("multi-index entries must be non-negative")
        return super().__new__(cls, entries)

    @property
    def order(self) -> int:
        return sum(self)

    def factorial(self) -> int:
        return math.prod(math.factorial(a) for a in self)

    def power(self, z: Sequence) -> object:
        return math.prod(zj ** a for zj, a in zip(z, self))

    def __add__(self, other):
        return MultiIndex(a + b for a, b in zip(self, other))


def multi_indices(dim: int, max_order: int) -> Iterator[MultiIndex]:
    """All multi-indices of length ``dim`` with ``|a| <= max_order``, by order."""
    for order in range(max_order + 1):
        for alpha in product(range(order + 1), repeat=dim):
            if sum(alpha) == order:
                yield MultiIndex(alpha)


def diff_multi(e: Expr, block: str, alpha: Sequence[int], max_order: int = MAX_ORDER) -> Expr:
    alpha = MultiIndex(alpha)
    if alpha.order > max_order:
        raise MaxOrderError(f"|alpha| = {alpha.order} exceeds max order {max_order}")
    out = simplify(e)
    for name, k in zip(block_vars(block, len(alpha)), alpha):
        for _ in range(k):
            out = _d(out, name)
    return out


def gradient(e: Expr, block: str, dim: int) -> list[Expr]:
    return [diff(e, name) for name in block_vars(block, dim)]


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _prec(e: Expr) -> int:
    if e.kind == "const":
        v = e.value
        if isinstance(v, complex):
            return 5 if v == 1j else 5
        return 3 if v < 0 else 5
    return _PREC.get(e.kind, 5)


def to_string(e: Expr) -> str:
    memo: dict = {}

    def wrap(node: Expr, minimum: int) -> str:
        s = go(node)
        return f"({s})" if _prec(node) < minimum else s

    def go(node: Expr) -> str:
        hit = memo.get(node)
        if hit is not None:
            return hit
        k = node.kind
        if k == "const":
            v = node.value
            if isinstance(v, complex):
                if v == 1j:
                    s = "I"
                elif v.real == 0.0:
                    s = f"({_fmt_number(v.imag)}*I)"
                else:
                    sign = "-" if v.imag < 0 else "+"
                    s = f"({_fmt_number(v.real)} {sign} {_fmt_number(abs(v.imag))}*I)"
            else:
                s = _fmt_number(v)
        elif k == "var":
            s = node.value
        elif k in ("add", "sub"):
            lhs, rhs = node.args
            s = wrap(lhs, 1) + (" + " if k == "add" else " - ") + wrap(rhs, 2)
        elif k in ("mul", "div"):
            op = "*" if k == "mul" else "/"
            s = wrap(node.args[0], 2) + op + wrap(node.args[1], 3)
        elif k == "neg":
            a = node.args[0]
            if a.kind == "const":
                s = f"-({go(a)})"
            else:
                s = "-" + wrap(a, 3)
        elif k == "pow":
            n = node.value
            s = wrap(node.args[0], 5) + "^" + (str(n) if n >= 0 else f"({n})")
        elif k == "jbrpow":
            inner = ", ".join(go(a) for a in node.args)
            if node.value == 1.0:
                s = f"jbr({inner})"
            else:
                s = f"jbrpow({inner}, {_fmt_number(node.value)})"
        else:
            s = f"{k}({go(node.args[0])})"
        memo[node] = s
        return s

    return go(e)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),]))"
)

_FUNCS = {"sqrt": sqrt, "exp": exp, "sin": sin, "cos": cos, "atan": atan}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


_LITERAL_OPS = {"add": lambda a, b: a + b, "sub": lambda a, b: a - b,
                "mul": lambda a, b: a * b, "div": lambda a, b: a / b}


def _literal(kind: str, left: Expr, right: Expr) -> Expr:
    # complex literals such as 2*I or (1 - 2*I) become one constant so the
    # printed form of any complex constant parses back to the same node
    if (left.kind == "const" and right.kind == "const"
            and (isinstance(left.value, complex) or isinstance(right.value, complex))
            and not (kind == "div" and right.value == 0)):
        return const(_LITERAL_OPS[kind](left.value, right.value))
    return Expr(kind, None, (left, right))


class _Parser:
    def __init__(self, text: str, dim: int):
        self.tokens = _tokenize(text)
        self.i = 0
        self.allowed = allowed_vars(dim)
        self.dim = dim

    def peek(self, offset: int = 0):
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        tok = self.take()
        if tok[1] != value:
            raise ExprSyntaxError(f"expected {value!r}, got {tok[1] or 'end of input'!r}", tok[2])
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected token {tok[1]!r}", tok[2])
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            right = self.term()
            left = _literal("add" if op == "+" else "sub", left, right)
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            right = self.unary()
            left = _literal("mul" if op == "*" else "div", left, right)
        return left

    def unary(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            nxt = self.peek()
            if nxt[0] == "num" and self.peek(1)[1] != "^":
                self.take()
                return const(-float(nxt[1]))
            return Expr("neg", None, (self.unary(),))
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return Expr("pow", self.integer(), (base,))
        return base

    def integer(self) -> int:
        paren = self.peek()[1] == "("
        if paren:
            self.take()
        sign = 1
        if self.peek()[1] == "-":
            self.take()
            sign = -1
        tok = self.take()
        if tok[0] != "num" or not re.fullmatch(r"\d+", tok[1]):
            raise ExprSyntaxError("exponent must be an integer literal", tok[2])
        if paren:
            self.expect(")")
        return sign * int(tok[1])

    def atom(self) -> Expr:
        tok = self.take()
        kind, text, pos = tok
        if kind == "num":
            return const(float(text))
        if text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if text == "I":
                return I
            if text in _FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Expr(text, None, (arg,))
            if text in ("jbr", "jbrpow"):
                return self.bracket(text, pos)
            if text in self.allowed:
                return var(text)
            if re.fullmatch(r"(x|y|z|xi|eta)\d+", text):
                raise UnknownVariableError(
                    f"variable {text!r} out of range for dimension {self.dim} at position {pos}"
                )
            raise UnknownVariableError(f"unknown name {text!r} at position {pos}")
        raise ExprSyntaxError(f"unexpected token {text or 'end of input'!r}", pos)

    def bracket(self, name: str, pos: int) -> Expr:
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if name == "jbr":
            return Expr("jbrpow", 1.0, tuple(args))
        if len(args) < 2 or args[-1].kind != "const":
            raise ExprSyntaxError("jbrpow needs arguments and a numeric exponent", pos)
        return Expr("jbrpow", args[-1].value, tuple(args[:-1]))


def parse(text: str, dim: int) -> Expr:
    """Parse ``text`` into an (unsimplified) expression tree."""
    if dim < 1:
        raise ValueError("dimension must be positive")
    return _Parser(text, dim).parse()


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _np_sqrt(a):
    if not np.iscomplexobj(a) and np.any(np.asarray(a) < 0):
        raise DomainError("sqrt of a negative value")
    return np.sqrt(a)


def _np_jbrpow(m, *args):
    s = 1.0
    for a in args:
        s = s + a * a
    if m == 1.0:
        return np.sqrt(s)
    if m == -1.0:
        return 1.0 / np.sqrt(s)
    if m == 2.0:
        return s
    if m == -2.0:
        return 1.0 / s
    return s ** (m / 2.0)


_NP_UNARY = {
    "neg": np.negative,
    "sqrt": _np_sqrt,
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "atan": np.arctan,
}
_NP_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply, "div": np.divide}


@lru_cache(maxsize=4096)
def _program(e: Expr) -> tuple:
    """Topologically ordered node list; each node evaluated once per call."""
    order: list[Expr] = []
    index: dict = {}
    stack = [(e, False)]
    while stack:
        node, done = stack.pop()
        if node in index:
            continue
        if done:
            index[node] = len(order)
            order.append(node)
            continue
        stack.append((node, True))
        for a in node.args:
            if a not in index:
                stack.append((a, False))
    steps = tuple(
        (n.kind, n.value, tuple(index[a] for a in n.args)) for n in order
    )
    return steps


def evaluate(e: Expr, point: Mapping[str, object], *, check_finite: bool = True):
    """Evaluate ``e`` with numpy broadcasting over the values in ``point``.

    Returns a float (or complex) for scalar inputs and an ndarray otherwise.
    """
    missing = _free_vars(e) - point.keys()
    if missing:
        raise UnboundVariableError(f"unbound variables: {sorted(missing)}")
    vals: list = []
    with np.errstate(all="ignore"):
        for kind, value, args in _program(e):
            if kind == "const":
                vals.append(value)
            elif kind == "var":
                vals.append(np.asarray(point[value], dtype=float) if not np.iscomplexobj(point[value])
                            else np.asarray(point[value]))
            elif kind in _NP_BINARY:
                vals.append(_NP_BINARY[kind](vals[args[0]], vals[args[1]]))
            elif kind == "pow":
                base = vals[args[0]]
                vals.append(base ** value if value >= 0 else 1.0 / base ** (-value))
            elif kind == "jbrpow":
                vals.append(_np_jbrpow(value, *(vals[a] for a in args)))
            else:
                vals.append(_NP_UNARY[kind](vals[args[0]]))
    out = vals[-1]
    if check_finite and not np.all(np.isfinite(out)):
        warnings.warn(f"non-finite value while evaluating {to_string(e)[:80]}", NonFiniteWarning,
                      stacklevel=2)
    if np.ndim(out) == 0:
        out = complex(out) if np.iscomplexobj(out) else float(out)
    return out


def lambdify(e: Expr, names: Sequence[str]):
    """Return ``f(*values)`` evaluating ``e`` with positional variable values."""
    names = tuple(names)

    def f(*values):
        return evaluate(e, dict(zip(names, values)), check_finite=False)

    return f
