"""Deterministic expression language for rate kernels defined in config files.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := unary ('^' factor)?          # '^' is right-associative
    unary  := '-'? atom
    atom   := NUMBER | IDENT | IDENT '[' INT ']'
            | FUNC '(' expr (',' expr)* ')'
            | '(' expr ')'

Functions: ``sin cos exp log abs sqrt`` (one argument), ``min max pow``
(two arguments).  Identifiers: ``r``, ``rp`` (patch positions), ``x``,
``y`` (trait vectors), and the constant ``pi``.  A bare ``x`` or ``y``
denotes the single coordinate in one dimension; higher-dimensional traits
must be indexed (``x[0]``, ``y[2]``).

All offsets reported in errors are 1-based byte positions into the source.
Evaluation is plain IEEE double arithmetic, left to right, with no
reassociation: identical bindings give bit-identical results.  Division by
zero and ``log``/``sqrt`` of out-of-domain arguments raise a tagged
:class:`ExprDomainError` carrying the offending sub-expression's offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

FUNCS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "log": 1,
    "abs": 1,
    "sqrt": 1,
    "min": 2,
    "max": 2,
    "pow": 2,
}
SCALAR_VARS = ("r", "rp")
VECTOR_VARS = ("x", "y")
CONSTANTS = {"pi": math.pi}


class ExprError(ValueError):
    """Base class for expression-language errors."""


class ExprSyntaxError(ExprError):
    """Parse failure. ``offset`` is a 1-based byte position; ``expected``
    names the token classes that would have been accepted there."""

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        self.offset = offset
        self.expected = tuple(expected)
        suffix = f" (expected {', '.join(expected)})" if expected else ""
        super().__init__(f"{message} at offset {offset}{suffix}")


class ExprDomainError(ExprError):
    """Evaluation hit an IEEE domain fault (log/sqrt of a nonpositive or
    negative argument, division by zero, fractional power of a negative)."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class ExprEvalError(ExprError):
    """A variable referenced by the expression is unbound or mis-shaped."""


# --- AST -----------------------------------------------------------------
#
# ``pos`` is excluded from equality so that a pretty-printed expression
# reparses to a structurally identical tree.


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(compare=False, default=0)


@dataclass(frozen=True)
class Const:
    name: str
    pos: int = field(compare=False, default=0)


@dataclass(frozen=True)
class Var:
    name: str
    index: Optional[int] = None
    pos: int = field(compare=False, default=0)


@dataclass(frozen=True)
class Neg:
    operand: "Node"
    pos: int = field(compare=False, default=0)


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"
    pos: int = field(compare=False, default=0)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    pos: int = field(compare=False, default=0)


Node = Union[Num, Const, Var, Neg, Bin, Call]


@dataclass(frozen=True)
class RateExpr:
    """A parsed expression: source text, AST, and the variables it reads."""

    source: str
    ast: Node
    variables: frozenset

    @property
    def spatial(self) -> bool:
        """True when the expression reads a patch position (``r`` or ``rp``)."""
        return bool(self.variables & {"r", "rp"})


# --- tokenizer -----------------------------------------------------------

_OPS = set("+-*/^()[],")


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    """Return (kind, text, 1-based offset) triples, terminated by ('end','',n)."""
    tokens = []
    i = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch in _OPS:
            tokens.append((ch, ch, i + 1))
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == ".":
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            tokens.append(("number", source[i:j], i + 1))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("ident", source[i:j], i + 1))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", i + 1)
    tokens.append(("end", "", n + 1))
    return tokens


# --- parser --------------------------------------------------------------


class _Parser:
    def __init__(self, source: str):
        if not source or not source.strip():
            raise ExprSyntaxError("empty expression", 1, ("atom",))
        self.tokens = _tokenize(source)
        self.i = 0
        self.variables: set[str] = set()

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str):
        tok = self.peek()
        if tok[0] != kind:
            raise ExprSyntaxError(
                f"unexpected token {tok[1]!r}" if tok[0] != "end" else "unexpected end of input",
                tok[2],
                (kind,),
            )
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"trailing input {tok[1]!r}", tok[2], ("end",))
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op, _, pos = self.advance()
            node = Bin(op, node, self.term(), pos)
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[0] in ("*", "/"):
            op, _, pos = self.advance()
            node = Bin(op, node, self.factor(), pos)
        return node

    def factor(self) -> Node:
        node = self.unary()
        if self.peek()[0] == "^":
            _, _, pos = self.advance()
            node = Bin("^", node, self.factor(), pos)
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "-":
            _, _, pos = self.advance()
            return Neg(self.atom(), pos)
        return self.atom()

    def atom(self) -> Node:
        kind, text, pos = self.peek()
        if kind == "number":
            self.advance()
            return Num(float(text), pos)
        if kind == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "ident":
            self.advance()
            if text in FUNCS:
                return self._call(text, pos)
            if text in CONSTANTS:
                return Const(text, pos)
            if text in SCALAR_VARS or text in VECTOR_VARS:
                return self._variable(text, pos)
            raise ExprSyntaxError(f"unknown identifier {text!r}", pos, ("r", "rp", "x", "y", "pi", "function"))
        raise ExprSyntaxError(
            f"unexpected token {text!r}" if kind != "end" else "unexpected end of input",
            pos,
            ("atom",),
        )

    def _call(self, func: str, pos: int) -> Node:
        self.expect("(")
        args = [self.expr()]
        while self.peek()[0] == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        arity = FUNCS[func]
        if len(args) != arity:
            raise ExprSyntaxError(
                f"{func} takes {arity} argument{'s' if arity > 1 else ''}, got {len(args)}", pos
            )
        return Call(func, tuple(args), pos)

    def _variable(self, name: str, pos: int) -> Node:
        self.variables.add(name)
        if self.peek()[0] == "[":
            if name in SCALAR_VARS:
                raise ExprSyntaxError(f"{name!r} is a scalar and cannot be indexed", self.peek()[2])
            self.advance()
            kind, text, ipos = self.peek()
            if kind != "number" or not text.isdigit():
                raise ExprSyntaxError("index must be a nonnegative integer", ipos, ("integer",))
            self.advance()
            self.expect("]")
            return Var(name, int(text), pos)
        return Var(name, None, pos)


def parse(source: str) -> RateExpr:
    """Parse ``source`` into a :class:`RateExpr`.

    Raises :class:`ExprSyntaxError` with a 1-based byte offset and the set
    of accepted token classes on malformed input.
    """
    parser = _Parser(source)
    ast = parser.parse()
    return RateExpr(source=source, ast=ast, variables=frozenset(parser.variables))


# --- evaluation ----------------------------------------------------------


def _bind_vector(name: str, value, pos: int) -> Sequence[float]:
    if value is None:
        raise ExprEvalError(f"variable {name!r} used at offset {pos} but not bound")
    return value


def _eval(node: Node, r, rp, x, y) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Var):
        if node.name in SCALAR_VARS:
            v = r if node.name == "r" else rp
            if v is None:
                raise ExprEvalError(f"variable {node.name!r} used at offset {node.pos} but not bound")
            return float(v)
        vec = _bind_vector(node.name, x if node.name == "x" else y, node.pos)
        if node.index is None:
            if len(vec) != 1:
                raise ExprEvalError(
                    f"bare {node.name!r} at offset {node.pos} needs an index for d={len(vec)}"
                )
            return float(vec[0])
        if node.index >= len(vec):
            raise ExprEvalError(
                f"index {node.name}[{node.index}] at offset {node.pos} out of range for d={len(vec)}"
            )
        return float(vec[node.index])
    if isinstance(node, Neg):
        return -_eval(node.operand, r, rp, x, y)
    if isinstance(node, Bin):
        a = _eval(node.left, r, rp, x, y)
        b = _eval(node.right, r, rp, x, y)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if b == 0.0:
                raise ExprDomainError("division by zero", node.pos)
            return a / b
        return _pow(a, b, node.pos)
    if isinstance(node, Call):
        args = [_eval(arg, r, rp, x, y) for arg in node.args]
        return _apply(node.func, args, node.pos)
    raise TypeError(f"unknown node {node!r}")


def _pow(a: float, b: float, pos: int) -> float:
    try:
        return math.pow(a, b)
    except ValueError:
        raise ExprDomainError(f"invalid power {a!r}^{b!r}", pos) from None
    except OverflowError:
        return math.inf


def _apply(func: str, args: list[float], pos: int) -> float:
    a = args[0]
    if func == "sin":
        return math.sin(a)
    if func == "cos":
        return math.cos(a)
    if func == "exp":
        try:
            return math.exp(a)
        except OverflowError:
            return math.inf
    if func == "log":
        if a <= 0.0:
            raise ExprDomainError(f"log of nonpositive value {a!r}", pos)
        return math.log(a)
    if func == "abs":
        return abs(a)
    if func == "sqrt":
        if a < 0.0:
            raise ExprDomainError(f"sqrt of negative value {a!r}", pos)
        return math.sqrt(a)
    if func == "min":
        return min(a, args[1])
    if func == "max":
        return max(a, args[1])
    if func == "pow":
        return _pow(a, args[1], pos)
    raise TypeError(f"unknown function {func}")


def evaluate(expr: RateExpr, *, r=None, rp=None, x=None, y=None) -> float:
    """Evaluate ``expr`` under the given bindings.

    ``x`` and ``y`` are trait coordinate sequences; ``r`` and ``rp`` are
    scalars in [0,1].  Repeated calls with identical bindings return
    bit-identical IEEE doubles.
    """
    return _eval(expr.ast, r, rp, x, y)


# --- vectorized evaluation ------------------------------------------------


def _eval_vec(node: Node, env: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Var):
        if node.name in SCALAR_VARS:
            v = env.get(node.name)
            if v is None:
                raise ExprEvalError(f"variable {node.name!r} used at offset {node.pos} but not bound")
            return v
        cols = env.get(node.name)
        if cols is None:
            raise ExprEvalError(f"variable {node.name!r} used at offset {node.pos} but not bound")
        idx = node.index
        if idx is None:
            if len(cols) != 1:
                raise ExprEvalError(
                    f"bare {node.name!r} at offset {node.pos} needs an index for d={len(cols)}"
                )
            idx = 0
        if idx >= len(cols):
            raise ExprEvalError(
                f"index {node.name}[{idx}] at offset {node.pos} out of range for d={len(cols)}"
            )
        return cols[idx]
    if isinstance(node, Neg):
        return -_eval_vec(node.operand, env)
    if isinstance(node, Bin):
        a = _eval_vec(node.left, env)
        b = _eval_vec(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return np.divide(a, b)
        return np.power(a, b)
    if isinstance(node, Call):
        args = [_eval_vec(arg, env) for arg in node.args]
        f = node.func
        if f == "sin":
            return np.sin(args[0])
        if f == "cos":
            return np.cos(args[0])
        if f == "exp":
            return np.exp(args[0])
        if f == "log":
            return np.log(args[0])
        if f == "abs":
            return np.abs(args[0])
        if f == "sqrt":
            return np.sqrt(args[0])
        if f == "min":
            return np.minimum(args[0], args[1])
        if f == "max":
            return np.maximum(args[0], args[1])
        return np.power(args[0], args[1])
    raise TypeError(f"unknown node {node!r}")


def evaluate_vec(expr: RateExpr, *, r=None, rp=None, x=None, y=None):
    """Broadcast evaluation over numpy arrays.

    ``x``/``y`` are sequences of coordinate arrays (one array per trait
    dimension) or 2-d arrays of shape (n, d).  Domain faults surface as
    ``nan``/``inf`` entries; callers that need a located diagnostic should
    re-evaluate the offending point with :func:`evaluate`.
    """
    env: dict = {"r": r, "rp": rp}
    for name, value in (("x", x), ("y", y)):
        if value is None:
            env[name] = None
        else:
            arr = np.asarray(value) if isinstance(value, np.ndarray) else value
            if isinstance(arr, np.ndarray) and arr.ndim == 2:
                env[name] = tuple(arr[:, k] for k in range(arr.shape[1]))
            else:
                env[name] = tuple(value)
    with np.errstate(all="ignore"):
        return _eval_vec(expr.ast, env)


# --- pretty printer -------------------------------------------------------


def _fmt_num(v: float) -> str:
    return repr(v)


def _p_expr(node: Node) -> str:
    if isinstance(node, Bin) and node.op in ("+", "-"):
        return f"{_p_expr(node.left)} {node.op} {_p_term(node.right)}"
    return _p_term(node)


def _p_term(node: Node) -> str:
    if isinstance(node, Bin) and node.op in ("*", "/"):
        return f"{_p_term(node.left)}{node.op}{_p_factor(node.right)}"
    return _p_factor(node)


def _p_factor(node: Node) -> str:
    if isinstance(node, Bin) and node.op == "^":
        return f"{_p_unary(node.left)}^{_p_factor(node.right)}"
    return _p_unary(node)


def _p_unary(node: Node) -> str:
    if isinstance(node, Neg):
        return f"-{_p_atom(node.operand)}"
    return _p_atom(node)


def _p_atom(node: Node) -> str:
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Var):
        return node.name if node.index is None else f"{node.name}[{node.index}]"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_p_expr(a) for a in node.args)})"
    return f"({_p_expr(node)})"


def unparse(expr: RateExpr) -> str:
    """Render the AST back to source.  ``parse(unparse(e)).ast == e.ast``."""
    return _p_expr(expr.ast)
