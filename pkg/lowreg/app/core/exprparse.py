"""
Scalar expression language for metric, weight and test-object components.

Grammar (EBNF)::

    expr     = term , { ("+" | "-") , term } ;
    term     = unary , { ("*" | "/") , unary } ;
    unary    = "-" , unary | power ;
    power    = atom , { "^" , unary } ;
    atom     = number | variable | call | "(" , expr , ")" ;
    call     = func1 , "(" , expr , ")" | func2 , "(" , expr , "," , expr , ")" ;
    func1    = "sin" | "cos" | "exp" | "log" | "sqrt" | "abs" | "sign" | "step" ;
    func2    = "max" | "min" ;
    variable = "x" , digit , { digit } ;           (* 1 <= index <= n *)
    number   = digits , [ "." , digits ] , [ ("e" | "E") , [ "+" | "-" ] , digits ]
             | "." , digits , [ exponent ] ;

Precedence from loosest to tightest is add/sub, mul/div, unary minus, pow.
Every binary operator is left-associative, so ``a^b^c`` is ``(a^b)^c``.
``sign`` is 0 at 0; ``step`` is the right-continuous Heaviside (1 at 0).
"""
from dataclasses import dataclass, fields
from functools import lru_cache
from typing import FrozenSet, List, Optional, Sequence, Tuple, Union
import re

import numpy as np
import structlog

from app.core.exceptions import (
    DifferentiationError,
    EvaluationDomainError,
    ExprSyntaxError,
    UnknownIdentifierError,
    VariableIndexError,
)

logger = structlog.get_logger()

UNARY_FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs", "sign", "step")
BINARY_FUNCTIONS = ("max", "min")


class Expr:
    """
    Base class of expression tree nodes.

    Equality is structural; the hash is computed once per node since
    derived trees share subtrees heavily.
    """

    __slots__ = ()

    def _key(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if type(self) is not type(other):
            return NotImplemented
        return hash(self) == hash(other) and self._key() == other._key()

    def __hash__(self) -> int:
        cached = self.__dict__.get("_hash")
        if cached is None:
            cached = hash((type(self).__name__,) + self._key())
            object.__setattr__(self, "_hash", cached)
        return cached

    def __str__(self) -> str:
        return print_expr(self)


@dataclass(frozen=True, eq=False)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=False)
class Var(Expr):
    index: int


@dataclass(frozen=True, eq=False)
class Unary(Expr):
    op: str
    arg: Expr


@dataclass(frozen=True, eq=False)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=False)
class Call2(Expr):
    name: str
    left: Expr
    right: Expr


ZERO = Const(0.0)
ONE = Const(1.0)

Coordinates = Sequence[Union[float, np.ndarray]]


# ---------------------------------------------------------------------------
# Lexer and Pratt parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)

_INFIX_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_UNARY_BP = 30
_BINARY_NAMES = {"+": "add", "-": "sub", "*": "mul", "/": "div", "^": "pow"}


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(source: str) -> List[_Token]:
    tokens: List[_Token] = []
    pos = 0
    length = len(source)
    while pos < length:
        if source[pos:].strip() == "":
            break
        match = _TOKEN_RE.match(source, pos)
        if match is None or match.end() == pos:
            start = pos + len(source[pos:]) - len(source[pos:].lstrip())
            raise ExprSyntaxError("unexpected character", len(source[:start].encode("utf-8")), source)
        kind = match.lastgroup or ""
        start = match.start(kind)
        tokens.append(_Token(kind, match.group(kind), len(source[:start].encode("utf-8"))))
        pos = match.end()
    tokens.append(_Token("end", "", len(source.encode("utf-8"))))
    return tokens


class _Parser:
    def __init__(self, source: str, dimension: int):
        self.source = source
        self.dimension = dimension
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def expect(self, text: str) -> _Token:
        token = self.advance()
        if token.text != text or token.kind == "end":
            raise ExprSyntaxError(f"expected '{text}'", token.offset, self.source)
        return token

    def parse(self) -> Expr:
        node = self.expression(0)
        token = self.peek()
        if token.kind != "end":
            raise ExprSyntaxError(f"unexpected '{token.text}'", token.offset, self.source)
        return node

    def expression(self, min_bp: int) -> Expr:
        left = self.prefix()
        while True:
            token = self.peek()
            if token.kind != "op" or token.text not in _INFIX_BP:
                break
            bp = _INFIX_BP[token.text]
            if bp < min_bp:
                break
            self.advance()
            right = self.expression(bp + 1)
            left = Binary(_BINARY_NAMES[token.text], left, right)
        return left

    def prefix(self) -> Expr:
        token = self.advance()
        if token.kind == "number":
            return Const(float(token.text))
        if token.kind == "ident":
            return self.identifier(token)
        if token.text == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        if token.text == "-":
            return Unary("neg", self.expression(_UNARY_BP))
        if token.kind == "end":
            raise ExprSyntaxError("unexpected end of input", token.offset, self.source)
        raise ExprSyntaxError(f"unexpected '{token.text}'", token.offset, self.source)

    def identifier(self, token: _Token) -> Expr:
        name = token.text
        if name in UNARY_FUNCTIONS or name in BINARY_FUNCTIONS:
            if self.peek().text != "(":
                raise ExprSyntaxError(f"function '{name}' needs arguments", token.offset, self.source)
            self.advance()
            first = self.expression(0)
            if name in BINARY_FUNCTIONS:
                self.expect(",")
                second = self.expression(0)
                self.expect(")")
                return Call2(name, first, second)
            self.expect(")")
            return Unary(name, first)
        var_match = re.fullmatch(r"x(\d+)", name)
        if var_match:
            index = int(var_match.group(1))
            if index < 1 or index > self.dimension:
                raise VariableIndexError(index, self.dimension)
            return Var(index)
        raise UnknownIdentifierError(name, token.offset)


def parse_expr(source: str, n: int) -> Expr:
    """
    Parse an expression source in the variables x1..xn.

    Args:
        source: Expression text
        n: Declared dimension

    Returns:
        Expression tree (no folding is applied)

    Raises:
        ExprSyntaxError: Malformed source, with byte offset
        UnknownIdentifierError: Name that is neither a variable nor a function
        VariableIndexError: Variable index outside 1..n
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0, source)
    return _Parser(source, n).parse()


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_ATOM = 5
_SYMBOL = {"add": " + ", "sub": " - ", "mul": "*", "div": "/", "pow": "^"}


def _format_number(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def _print(node: Expr) -> Tuple[str, int]:
    if isinstance(node, Const):
        if node.value < 0:
            return f"(-{_format_number(-node.value)})", _ATOM
        return _format_number(node.value), _ATOM
    if isinstance(node, Var):
        return f"x{node.index}", _ATOM
    if isinstance(node, Call2):
        return f"{node.name}({_print(node.left)[0]}, {_print(node.right)[0]})", _ATOM
    if isinstance(node, Unary):
        if node.op == "neg":
            text, prec = _print(node.arg)
            if prec < _PREC["neg"]:
                text = f"({text})"
            return f"-{text}", _PREC["neg"]
        return f"{node.op}({_print(node.arg)[0]})", _ATOM
    if isinstance(node, Binary):
        prec = _PREC[node.op]
        left, left_prec = _print(node.left)
        right, right_prec = _print(node.right)
        if left_prec < prec:
            left = f"({left})"
        if right_prec <= prec:
            right = f"({right})"
        return f"{left}{_SYMBOL[node.op]}{right}", prec
    raise TypeError(f"not an expression node: {node!r}")


def print_expr(e: Expr) -> str:
    """Render an expression so that parsing the text gives back the same tree"""
    return _print(e)[0]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _offending_coordinates(mask: np.ndarray, coords: Coordinates) -> Optional[List[float]]:
    if np.ndim(mask) == 0:
        return [float(c) for c in coords] if all(np.ndim(c) == 0 for c in coords) else None
    index = tuple(np.argwhere(mask)[0])
    result = []
    for c in coords:
        arr = np.broadcast_to(np.asarray(c, dtype=float), mask.shape)
        result.append(float(arr[index]))
    return result


def _domain_check(bad: np.ndarray, operation: str, node: Expr, coords: Coordinates) -> None:
    if np.any(bad):
        raise EvaluationDomainError(operation, print_expr(node), _offending_coordinates(np.asarray(bad), coords))


def _eval(node: Expr, coords: Coordinates, memo: dict):
    key = id(node)
    if key in memo:
        return memo[key]
    value = _eval_node(node, coords, memo)
    memo[key] = value
    return value


def _eval_node(node: Expr, coords: Coordinates, memo: dict):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return coords[node.index - 1]
    if isinstance(node, Unary):
        a = _eval(node.arg, coords, memo)
        op = node.op
        if op == "neg":
            return -a
        if op == "sin":
            return np.sin(a)
        if op == "cos":
            return np.cos(a)
        if op == "exp":
            return np.exp(a)
        if op == "log":
            _domain_check(np.asarray(a) <= 0, "log", node, coords)
            return np.log(a)
        if op == "sqrt":
            _domain_check(np.asarray(a) < 0, "sqrt", node, coords)
            return np.sqrt(a)
        if op == "abs":
            return np.abs(a)
        if op == "sign":
            return np.sign(a)
        if op == "step":
            return np.where(np.asarray(a) >= 0, 1.0, 0.0)
        raise DifferentiationError(f"unknown unary operator {op}")
    if isinstance(node, Binary):
        a = _eval(node.left, coords, memo)
        b = _eval(node.right, coords, memo)
        op = node.op
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        if op == "mul":
            return a * b
        if op == "div":
            _domain_check(np.asarray(b) == 0, "division", node, coords)
            return a / b
        if op == "pow":
            base = np.asarray(a, dtype=float)
            expo = np.asarray(b, dtype=float)
            non_integer = expo != np.round(expo)
            _domain_check((base < 0) & non_integer, "pow", node, coords)
            _domain_check((base == 0) & (expo < 0), "pow", node, coords)
            return np.power(base, expo)
    if isinstance(node, Call2):
        a = _eval(node.left, coords, memo)
        b = _eval(node.right, coords, memo)
        return np.maximum(a, b) if node.name == "max" else np.minimum(a, b)
    raise TypeError(f"not an expression node: {node!r}")


def eval_expr(e: Expr, point: Coordinates):
    """
    Evaluate an expression at a point.

    ``point`` holds n coordinates; each may be a float or a numpy array, in
    which case evaluation is vectorised over the broadcast shape.

    Raises:
        EvaluationDomainError: log of a nonpositive value, sqrt of a negative
            value, division by zero or an undefined power
    """
    with np.errstate(all="ignore"):
        value = _eval(e, point, {})
    if np.ndim(value) == 0 and all(np.ndim(c) == 0 for c in point):
        return float(value)
    shape = np.broadcast_shapes(*[np.shape(c) for c in point]) if point else np.shape(value)
    return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()


# ---------------------------------------------------------------------------
# Simplifying builders (constant folding and identities only)
# ---------------------------------------------------------------------------

def const(value: float) -> Expr:
    return Const(float(value))


def var(index: int) -> Expr:
    return Var(index)


def _is(node: Expr, value: float) -> bool:
    return isinstance(node, Const) and node.value == value


def add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Binary("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Binary("sub", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Binary("mul", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    return Binary("div", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is(b, 1.0):
        return a
    if _is(b, 0.0):
        return ONE
    if isinstance(a, Const) and isinstance(b, Const) and a.value > 0:
        return Const(a.value ** b.value)
    return Binary("pow", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def func(name: str, a: Expr) -> Expr:
    if name not in UNARY_FUNCTIONS:
        raise UnknownIdentifierError(name, -1)
    return Unary(name, a)


def maximum(a: Expr, b: Expr) -> Expr:
    return Call2("max", a, b)


def minimum(a: Expr, b: Expr) -> Expr:
    return Call2("min", a, b)


def sum_of(terms: Sequence[Expr]) -> Expr:
    total: Expr = ZERO
    for term in terms:
        total = add(total, term)
    return total


def product_of(factors: Sequence[Expr]) -> Expr:
    total: Expr = ONE
    for factor in factors:
        total = mul(total, factor)
    return total


# ---------------------------------------------------------------------------
# Structure queries and symbolic differentiation
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8192)
def free_variables(e: Expr) -> FrozenSet[int]:
    """Indices of the variables an expression depends on"""
    if isinstance(e, Var):
        return frozenset((e.index,))
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Unary):
        return free_variables(e.arg)
    if isinstance(e, (Binary, Call2)):
        return free_variables(e.left) | free_variables(e.right)
    return frozenset()


def _step(a: Expr) -> Expr:
    return Unary("step", a)


@lru_cache(maxsize=8192)
def diff_expr(e: Expr, i: int) -> Expr:
    """
    Exact partial derivative with respect to x_i.

    abs, max and min are differentiated almost everywhere; at a kink the
    right branch is used (``abs`` gives +1 at 0, ``max``/``min`` take the
    derivative of their second argument on ties).

    Raises:
        DifferentiationError: pow with an exponent that depends on x_i
    """
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if i not in free_variables(e):
        return ZERO
    if isinstance(e, Unary):
        u = e.arg
        du = diff_expr(u, i)
        op = e.op
        if op == "neg":
            return neg(du)
        if op == "sin":
            return mul(func("cos", u), du)
        if op == "cos":
            return neg(mul(func("sin", u), du))
        if op == "exp":
            return mul(e, du)
        if op == "log":
            return div(du, u)
        if op == "sqrt":
            return div(du, mul(Const(2.0), e))
        if op == "abs":
            return mul(sub(mul(Const(2.0), _step(u)), ONE), du)
        if op in ("sign", "step"):
            return ZERO
        raise DifferentiationError(f"unknown unary operator {op}")
    if isinstance(e, Binary):
        a, b = e.left, e.right
        op = e.op
        if op == "add":
            return add(diff_expr(a, i), diff_expr(b, i))
        if op == "sub":
            return sub(diff_expr(a, i), diff_expr(b, i))
        if op == "mul":
            return add(mul(diff_expr(a, i), b), mul(a, diff_expr(b, i)))
        if op == "div":
            return div(sub(mul(diff_expr(a, i), b), mul(a, diff_expr(b, i))), power(b, Const(2.0)))
        if op == "pow":
            if free_variables(b):
                raise DifferentiationError(f"variable exponent in {print_expr(e)}")
            exponent = float(eval_expr(b, ()))
            return mul(mul(Const(exponent), power(a, Const(exponent - 1.0))), diff_expr(a, i))
    if isinstance(e, Call2):
        a, b = e.left, e.right
        da, db = diff_expr(a, i), diff_expr(b, i)
        selector = _step(sub(b, a)) if e.name == "max" else _step(sub(a, b))
        return add(mul(selector, db), mul(sub(ONE, selector), da))
    raise DifferentiationError(f"unsupported node {e!r}")


def nonsmooth_mask(e: Expr, point: Coordinates, atol: float = 0.0) -> np.ndarray:
    """
    Flag points where an abs/sign/step argument or a max/min difference is
    within ``atol`` of zero.
    """
    shape = np.broadcast_shapes(*[np.shape(c) for c in point]) if point else ()
    mask = np.zeros(shape, dtype=bool)

    def visit(node: Expr) -> None:
        nonlocal mask
        if isinstance(node, Unary):
            if node.op in ("abs", "sign", "step"):
                mask = mask | (np.abs(eval_expr(node.arg, point)) <= atol)
            visit(node.arg)
        elif isinstance(node, Call2):
            gap = eval_expr(node.left, point) - eval_expr(node.right, point)
            mask = mask | (np.abs(gap) <= atol)
            visit(node.left)
            visit(node.right)
        elif isinstance(node, Binary):
            visit(node.left)
            visit(node.right)

    visit(e)
    return mask
