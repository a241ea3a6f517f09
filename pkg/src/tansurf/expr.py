"""Scalar expressions in the curve parameter ``t`` and chart coordinates ``x1..xm``.

Expressions are immutable trees. They can be parsed from text, printed back,
evaluated (through a compiled Python closure), differentiated exactly, and
simplified into a canonical sum-of-monomials form.

Grammar::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | VAR | FUNC "(" expr ")" | "(" expr ")"

so ``-t^2`` is ``-(t^2)`` and ``a^b^c`` is ``a^(b^c)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

__all__ = [
    "Expr", "Num", "Var", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Func",
    "ExprError", "ExprSyntaxError", "UnknownIdentifierError", "CoordinateIndexError",
    "UnboundVariableError", "ExprDomainError", "NotDifferentiableError",
    "FUNCTIONS", "parse_expr", "eval_expr", "diff_expr", "simplify", "substitute",
    "free_vars", "compile_exprs", "to_str", "ZERO", "ONE",
]


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class CoordinateIndexError(ExprError):
    def __init__(self, name: str, offset: int, dim: int):
        super().__init__(f"coordinate {name!r} at offset {offset} outside 1..{dim}")
        self.name = name
        self.offset = offset
        self.dim = dim


class UnboundVariableError(ExprError):
    pass


class ExprDomainError(ExprError, ArithmeticError):
    pass


class NotDifferentiableError(ExprError):
    pass


# ---------------------------------------------------------------------------
# nodes

class Expr:
    """Base class of expression nodes. Use :func:`parse_expr` or the operators."""

    __slots__ = ()
    prec = 5

    def __str__(self) -> str:
        return to_str(self)

    def __add__(self, other):
        return Add(self, _lift(other))

    def __radd__(self, other):
        return Add(_lift(other), self)

    def __sub__(self, other):
        return Sub(self, _lift(other))

    def __rsub__(self, other):
        return Sub(_lift(other), self)

    def __mul__(self, other):
        return Mul(self, _lift(other))

    def __rmul__(self, other):
        return Mul(_lift(other), self)

    def __truediv__(self, other):
        return Div(self, _lift(other))

    def __rtruediv__(self, other):
        return Div(_lift(other), self)

    def __pow__(self, other):
        return Pow(self, _lift(other))

    def __neg__(self):
        return Neg(self)

    def __call__(self, t: float | None = None, x: Sequence[float] = ()) -> float:
        return eval_expr(self, t, x)


def _lift(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Num(float(value))


@dataclass(frozen=True, eq=True)
class Num(Expr):
    value: float
    prec = 5

    def __repr__(self):
        return f"Num({self.value!r})"


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str  # "t" or "x<k>"
    prec = 5

    @property
    def index(self) -> int:
        """0 for ``t``, k for ``xk``."""
        return 0 if self.name == "t" else int(self.name[1:])

    def __repr__(self):
        return f"Var({self.name})"


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr
    prec = 3


@dataclass(frozen=True, eq=True)
class Add(Expr):
    left: Expr
    right: Expr
    prec = 1


@dataclass(frozen=True, eq=True)
class Sub(Expr):
    left: Expr
    right: Expr
    prec = 1


@dataclass(frozen=True, eq=True)
class Mul(Expr):
    left: Expr
    right: Expr
    prec = 2


@dataclass(frozen=True, eq=True)
class Div(Expr):
    left: Expr
    right: Expr
    prec = 2


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exp: Expr
    prec = 4


@dataclass(frozen=True, eq=True)
class Func(Expr):
    name: str
    arg: Expr
    prec = 5


ZERO = Num(0.0)
ONE = Num(1.0)

FUNCTIONS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
}

_BINARY = {Add: "+", Sub: "-", Mul: "*", Div: "/"}


def xvar(k: int) -> Var:
    return Var(f"x{k}")


T = Var("t")


# ---------------------------------------------------------------------------
# printing

def _fmt_num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_str(e: Expr) -> str:
    """Print ``e`` so that :func:`parse_expr` rebuilds the same tree."""
    if isinstance(e, Num):
        s = _fmt_num(e.value)
        return s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({to_str(e.arg)})"
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, _prec(e.arg) < 3)
    if isinstance(e, Pow):
        return _wrap(e.base, _prec(e.base) < 5) + "^" + _wrap(e.exp, _prec(e.exp) < 3)
    op = _BINARY[type(e)]
    p = e.prec
    left = _wrap(e.left, _prec(e.left) < p)
    right = _wrap(e.right, _prec(e.right) <= p)
    if p == 1:
        return f"{left} {op} {right}"
    return f"{left}*{right}" if op == "*" else f"{left}/{right}"


def _prec(e: Expr) -> int:
    if isinstance(e, Num) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 3
    return e.prec


def _wrap(e: Expr, paren: bool) -> str:
    s = to_str(e)
    return f"({s})" if paren else s


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)
_COORD = re.compile(r"x(\d+)\Z")


class _Parser:
    def __init__(self, src: str, dim: int):
        self.src = src
        self.dim = dim
        self.tokens: list[tuple[str, str, int]] = []
        self.pending: list[tuple[str, int]] = []
        self._lex()
        self.pos = 0

    def _offset(self, i: int) -> int:
        return len(self.src[:i].encode("utf-8"))

    def _lex(self):
        src = self.src
        i = 0
        n = len(src)
        while True:
            while i < n and src[i].isspace():
                i += 1
            if i >= n:
                break
            m = _TOKEN.match(src, i)
            if m is None or m.end() == i:
                raise ExprSyntaxError(f"unexpected character {src[i]!r}", self._offset(i))
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), self._offset(start)))
            i = m.end()
        self.tokens.append(("end", "", self._offset(n)))

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str):
        kind, value, off = self.take()
        if value != text or kind != "op":
            what = "end of input" if kind == "end" else repr(value)
            raise ExprSyntaxError(f"expected {text!r}, found {what}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, value, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {value!r}", off)
        for name, off in self.pending:
            m = _COORD.match(name)
            if m is None:
                raise UnknownIdentifierError(name, off)
            k = int(m.group(1))
            if not 1 <= k <= self.dim:
                raise CoordinateIndexError(name, off, self.dim)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def unary(self) -> Expr:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.take()
            return Pow(base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, value, off = self.take()
        if kind == "num":
            return Num(float(value))
        if kind == "ident":
            if value in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(value, arg)
            if value == "t":
                return T
            self.pending.append((value, off))
            return Var(value)
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if kind == "end" else repr(value)
        raise ExprSyntaxError(f"unexpected {what}", off)


def parse_expr(src: str, dim: int) -> Expr:
    """Parse ``src`` into an expression over ``t`` and ``x1..x<dim>``.

    Syntax errors are reported before name errors, with UTF-8 byte offsets.

    >>> parse_expr("x1 + x2^2", 3)
    Add(left=Var(x1), right=Pow(base=Var(x2), exp=Num(2.0)))
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return _Parser(src, dim).parse()


# ---------------------------------------------------------------------------
# structural helpers

def free_vars(e: Expr) -> set[str]:
    out: set[str] = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, (Neg, Func)):
            stack.append(n.arg)
        elif isinstance(n, Pow):
            stack.extend((n.base, n.exp))
        elif not isinstance(n, Num):
            stack.extend((n.left, n.right))
    return out


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (simultaneously)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Num):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, mapping))
    if isinstance(e, Func):
        return Func(e.name, substitute(e.arg, mapping))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, mapping), substitute(e.exp, mapping))
    return type(e)(substitute(e.left, mapping), substitute(e.right, mapping))


def _const_value(e: Expr) -> float | None:
    """Numeric value of a variable-free expression, or None."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Neg) and isinstance(e.arg, Num):
        return -e.arg.value
    if free_vars(e):
        return None
    try:
        return _walk(e, None, ())
    except ExprError:
        return None


def _int_exponent(e: Expr) -> int | None:
    v = _const_value(e)
    if v is not None and math.isfinite(v) and v.is_integer():
        return int(v)
    return None


# ---------------------------------------------------------------------------
# evaluation

def _rpow(base: float, exponent: float) -> float:
    if base <= 0.0:
        raise ValueError("real power of non-positive base")
    return math.exp(exponent * math.log(base))


def _walk(e: Expr, t, x) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        if e.name == "t":
            if t is None:
                raise UnboundVariableError("variable 't' is unbound")
            return float(t)
        k = e.index
        if k > len(x):
            raise UnboundVariableError(f"variable {e.name!r} is unbound")
        return float(x[k - 1])
    if isinstance(e, Neg):
        return -_walk(e.arg, t, x)
    if isinstance(e, Func):
        a = _walk(e.arg, t, x)
        if e.name == "log" and a <= 0.0:
            raise ExprDomainError(f"log of non-positive value {a!r}")
        if e.name == "sqrt" and a < 0.0:
            raise ExprDomainError(f"sqrt of negative value {a!r}")
        try:
            return FUNCTIONS[e.name](a)
        except OverflowError:
            raise ExprDomainError(f"{e.name} overflow at {a!r}") from None
    if isinstance(e, Pow):
        b = _walk(e.base, t, x)
        p = _walk(e.exp, t, x)
        try:
            if p.is_integer() and abs(p) < 2**31:
                return b ** int(p)
            if b <= 0.0:
                raise ExprDomainError(f"real power {p!r} of non-positive base {b!r}")
            return math.exp(p * math.log(b))
        except ZeroDivisionError:
            raise ExprDomainError(f"division by zero in {b!r}^{p!r}") from None
        except OverflowError:
            raise ExprDomainError(f"overflow in {b!r}^{p!r}") from None
    a = _walk(e.left, t, x)
    b = _walk(e.right, t, x)
    if isinstance(e, Add):
        return a + b
    if isinstance(e, Sub):
        return a - b
    if isinstance(e, Mul):
        return a * b
    if b == 0.0:
        raise ExprDomainError("division by zero")
    return a / b


def _code(e: Expr) -> str:
    if isinstance(e, Num):
        return repr(e.value) if math.copysign(1.0, e.value) > 0 else f"({e.value!r})"
    if isinstance(e, Var):
        return "t" if e.name == "t" else f"x[{e.index - 1}]"
    if isinstance(e, Neg):
        return f"(-{_code(e.arg)})"
    if isinstance(e, Func):
        return f"_{e.name}({_code(e.arg)})"
    if isinstance(e, Pow):
        n = _int_exponent(e.exp)
        if n is not None:
            if n == 2:
                b = _code(e.base)
                return f"({b}*{b})" if isinstance(e.base, (Var, Num)) else f"({b}**2)"
            return f"({_code(e.base)}**{n})"
        return f"_rpow({_code(e.base)}, {_code(e.exp)})"
    return f"({_code(e.left)}{_BINARY[type(e)]}{_code(e.right)})"


_NAMESPACE = {f"_{k}": v for k, v in FUNCTIONS.items()} | {"_rpow": _rpow}


def compile_exprs(exprs: Sequence[Expr]) -> Callable[[float | None, Sequence[float]], tuple]:
    """Compile several expressions into one ``f(t, x) -> tuple`` closure.

    Arithmetic failures are re-raised as :class:`ExprDomainError` (or
    :class:`UnboundVariableError`) by re-evaluating the failing expression
    with the checked tree walker.
    """
    exprs = tuple(exprs)
    body = ", ".join(_code(e) for e in exprs)
    src = f"def _f(t, x):\n    return ({body}{',' if len(exprs) == 1 else ''})\n"
    ns = dict(_NAMESPACE)
    exec(compile(src, "<tansurf-expr>", "exec"), ns)
    raw = ns["_f"]

    def fn(t, x=()):
        try:
            return raw(t, x)
        except (ArithmeticError, ValueError, TypeError, IndexError):
            for e in exprs:
                _walk(e, t, x)
            raise ExprDomainError("arithmetic failure during evaluation") from None

    return fn


def _compiled(e: Expr):
    fn = getattr(e, "_compiled_fn", None)
    if fn is None:
        raw = compile_exprs([e])
        fn = lambda t, x: raw(t, x)[0]  # noqa: E731
        object.__setattr__(e, "_compiled_fn", fn)
    return fn


def eval_expr(e: Expr, t: float | None = None, x: Sequence[float] = ()) -> float:
    """Evaluate ``e`` in IEEE double precision.

    ``t`` may be ``None`` when ``e`` does not mention it; ``x`` supplies
    ``x1..xm`` in order.
    """
    if "t" in free_vars(e) and t is None:
        raise UnboundVariableError("variable 't' is unbound")
    return float(_compiled(e)(None if t is None else float(t), [float(v) for v in x]))


# ---------------------------------------------------------------------------
# construction helpers that avoid trivial growth

def _is_num(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Num) and (v is None or e.value == v)


def add(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_num(b, 1.0):
        return a
    if _is_num(a, 0.0):
        return ZERO
    return Div(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value) if a.value != 0.0 else ZERO
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, n: Expr) -> Expr:
    if _is_num(n, 1.0):
        return a
    if _is_num(n, 0.0):
        return ONE
    return Pow(a, n)


def total(terms: Iterable[Expr]) -> Expr:
    acc: Expr = ZERO
    for term in terms:
        acc = add(acc, term)
    return acc


# ---------------------------------------------------------------------------
# differentiation

def _as_var(var) -> str:
    if isinstance(var, Var):
        return var.name
    if var == "t" or _COORD.match(str(var)):
        return str(var)
    raise ValueError(f"not a variable: {var!r}")


def diff_expr(e: Expr, var) -> Expr:
    """Exact derivative of ``e`` with respect to ``var`` (``"t"``, ``"x2"``, or a Var).

    The result is passed through :func:`simplify`. Sums are differentiated
    term by term without re-collecting, so ``diff(a + b)`` evaluates to
    exactly ``diff(a) + diff(b)``.
    """
    v = _as_var(var)
    if isinstance(e, Add):
        return add(diff_expr(e.left, v), diff_expr(e.right, v))
    if isinstance(e, Sub):
        return sub(diff_expr(e.left, v), diff_expr(e.right, v))
    return simplify(_diff(e, v))


def _diff(e: Expr, v: str) -> Expr:
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if v not in free_vars(e):
        return ZERO
    if isinstance(e, Neg):
        return neg(_diff(e.arg, v))
    if isinstance(e, Add):
        return add(_diff(e.left, v), _diff(e.right, v))
    if isinstance(e, Sub):
        return sub(_diff(e.left, v), _diff(e.right, v))
    if isinstance(e, Mul):
        return add(mul(_diff(e.left, v), e.right), mul(e.left, _diff(e.right, v)))
    if isinstance(e, Div):
        da, db = _diff(e.left, v), _diff(e.right, v)
        if _is_num(db, 0.0):
            return div(da, e.right)
        return div(sub(mul(da, e.right), mul(e.left, db)), power(e.right, Num(2.0)))
    if isinstance(e, Pow):
        return _diff_pow(e, v)
    du = _diff(e.arg, v)
    u = e.arg
    if e.name == "sin":
        d = Func("cos", u)
    elif e.name == "cos":
        d = neg(Func("sin", u))
    elif e.name == "tan":
        d = div(ONE, power(Func("cos", u), Num(2.0)))
    elif e.name == "exp":
        d = e
    elif e.name == "log":
        return div(du, u)
    else:  # sqrt
        return div(du, mul(Num(2.0), e))
    return mul(d, du)


def _diff_pow(e: Pow, v: str) -> Expr:
    n = _int_exponent(e.exp)
    if n is not None:
        return mul(mul(Num(float(n)), power(e.base, Num(float(n - 1)))), _diff(e.base, v))
    base_const = _const_value(e.base)
    if base_const is not None and base_const > 0.0:
        return mul(mul(e, Num(math.log(base_const))), _diff(e.exp, v))
    if isinstance(e.base, Func) and e.base.name == "exp":
        # exp(u)^w = exp(u*w)
        return _diff(Func("exp", mul(e.base.arg, e.exp)), v)
    raise NotDifferentiableError(
        f"cannot differentiate {to_str(e)}: real exponent of a possibly non-positive base"
    )


# ---------------------------------------------------------------------------
# simplification: constant folding plus a canonical sum-of-monomials form.
# A monomial is (coefficient, {atom_key: (atom, integer exponent)}); atoms are
# variables, function applications, sums that did not collapse, and real powers.

_Mono = tuple[float, dict[str, tuple[Expr, int]]]


def simplify(e: Expr) -> Expr:
    """Fold constants, apply 0/1 identities and collect like terms.

    Products and quotients of integer powers are merged into monomials and
    equal monomials in a sum are combined; nothing is expanded or factored.
    The output is canonical: simplifying it again returns an equal tree.
    """
    return _rebuild(_norm(e))


def _norm(e: Expr) -> list[_Mono]:
    if isinstance(e, Num):
        return [(e.value, {})] if e.value != 0.0 else []
    if isinstance(e, Var):
        return [(1.0, {e.name: (e, 1)})]
    if isinstance(e, Neg):
        return [(-c, f) for c, f in _norm(e.arg)]
    if isinstance(e, (Add, Sub)):
        left = _norm(e.left)
        right = _norm(e.right)
        if isinstance(e, Sub):
            right = [(-c, f) for c, f in right]
        return _collect(left + right)
    if isinstance(e, Mul):
        return _times(_norm(e.left), _norm(e.right))
    if isinstance(e, Div):
        num = _norm(e.left)
        den = _norm(e.right)
        if not num:
            return []
        if len(den) == 1:
            c, f = den[0]
            if c == 0.0:
                return _atom(Div(_rebuild(num), ZERO))
            inv = {k: (a, -p) for k, (a, p) in f.items()}
            return _times(num, [(1.0 / c, inv)])
        if not den:
            return _atom(Div(_rebuild(num), ZERO))
        return _times(num, _atom_pow(_rebuild(den), -1))
    if isinstance(e, Pow):
        base = _norm(e.base)
        exp_expr = _rebuild(_norm(e.exp))
        n = _int_exponent(exp_expr)
        if n is not None:
            if n == 0:
                return [(1.0, {})]
            if not base:
                return [] if n > 0 else _atom(Pow(ZERO, Num(float(n))))
            if len(base) == 1:
                c, f = base[0]
                try:
                    cn = c ** n
                except (ZeroDivisionError, OverflowError):
                    cn = None
                if cn is not None and math.isfinite(cn):
                    return [(cn, {k: (a, p * n) for k, (a, p) in f.items()})]
            return _atom_pow(_rebuild(base), n)
        b = _rebuild(base)
        folded = _fold(Pow(b, exp_expr))
        if folded is not None:
            return folded
        return _atom(Pow(b, exp_expr))
    # Func
    arg = _rebuild(_norm(e.arg))
    folded = _fold(Func(e.name, arg))
    if folded is not None:
        return folded
    return _atom(Func(e.name, arg))


def _fold(e: Expr) -> list[_Mono] | None:
    if free_vars(e):
        return None
    try:
        v = _walk(e, None, ())
    except ExprError:
        return None
    if not math.isfinite(v):
        return None
    return [(v, {})] if v != 0.0 else []


def _atom(a: Expr) -> list[_Mono]:
    return [(1.0, {to_str(a): (a, 1)})]


def _atom_pow(a: Expr, n: int) -> list[_Mono]:
    if isinstance(a, Pow):
        m = _int_exponent(a.exp)
        if m is not None:
            return [(1.0, {to_str(a.base): (a.base, m * n)})]
    return [(1.0, {to_str(a): (a, n)})]


def _mono_key(f: dict[str, tuple[Expr, int]]) -> tuple:
    return tuple(sorted((k, p) for k, (_, p) in f.items()))


def _collect(terms: list[_Mono]) -> list[_Mono]:
    out: dict[tuple, list] = {}
    for c, f in terms:
        key = _mono_key(f)
        if key in out:
            out[key][0] += c
        else:
            out[key] = [c, f]
    return [(c, f) for c, f in out.values() if c != 0.0]


def _times(a: list[_Mono], b: list[_Mono]) -> list[_Mono]:
    if not a or not b:
        return []
    if len(a) == 1 and len(b) == 1:
        (ca, fa), (cb, fb) = a[0], b[0]
        f = dict(fa)
        for k, (atom, p) in fb.items():
            if k in f:
                q = f[k][1] + p
                if q == 0:
                    del f[k]
                else:
                    f[k] = (atom, q)
            else:
                f[k] = (atom, p)
        c = ca * cb
        return [(c, f)] if c != 0.0 else []
    # a sum stays an opaque factor; scalars are pulled out
    if len(a) == 1 and not a[0][1]:
        return _collect([(a[0][0] * c, f) for c, f in b])
    if len(b) == 1 and not b[0][1]:
        return _collect([(b[0][0] * c, f) for c, f in a])
    return _times(_as_factor(a), _as_factor(b))


def _as_factor(terms: list[_Mono]) -> list[_Mono]:
    if len(terms) == 1:
        return terms
    return _atom(_rebuild(terms))


def _sort_terms(terms: list[_Mono]) -> list[_Mono]:
    # constants last, otherwise by printed key
    return sorted(terms, key=lambda m: (not m[1], _mono_key(m[1])))


def _rebuild(terms: list[_Mono]) -> Expr:
    if not terms:
        return ZERO
    terms = _sort_terms(terms)
    acc: Expr | None = None
    for c, f in terms:
        mag = _mono_expr(abs(c), f)
        if acc is None:
            acc = Neg(mag) if c < 0 else mag
        else:
            acc = Sub(acc, mag) if c < 0 else Add(acc, mag)
    return acc


def _mono_expr(c: float, f: dict[str, tuple[Expr, int]]) -> Expr:
    num: Expr | None = None
    den: Expr | None = None
    for k in sorted(f):
        atom, p = f[k]
        factor = atom if abs(p) == 1 else Pow(atom, Num(float(abs(p))))
        if p > 0:
            num = factor if num is None else Mul(num, factor)
        else:
            den = factor if den is None else Mul(den, factor)
    if num is None:
        num = Num(c)
    elif c != 1.0:
        num = Mul(Num(c), num)
    return num if den is None else Div(num, den)
