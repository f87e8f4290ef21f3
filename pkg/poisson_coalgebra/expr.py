"""
Phase-space expression engine.

Expressions are immutable term graphs over the canonical coordinates q_i, p_i,
named parameters and placeholder symbols. A graph is compiled once into a
topologically ordered tape and evaluated over batches of phase points with
second-order forward-mode jets (value, gradient, Hessian).

Phase arrays are laid out as [q_1..q_N, p_1..p_N]; coordinate indices are
0-based internally and printed 1-based (q1, p1, ...).
"""
import hashlib
import math
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from .errors import DimensionMismatch, DomainError, ParameterMismatch, UnresolvedSymbol

logger = structlog.get_logger()

UNARY_OPS = ("neg", "sin", "cos", "sinh", "cosh", "tanh", "exp", "ln", "sqrt", "sinhc")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
LEAF_OPS = ("const", "coord", "param", "symbol")

BINARY_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}

# sinh(u)/u switches to its Taylor series below this magnitude
SINHC_SERIES_CUTOFF = 0.1

Number = Union[int, float, np.floating, np.integer]


class Expression:
    """Immutable node of a phase-space term graph."""

    __slots__ = ("op", "args", "data", "_tape", "_signature")

    def __init__(self, op: str, args: Tuple["Expression", ...] = (), data: Any = None):
        self.op = op
        self.args = tuple(args)
        self.data = data
        self._tape: Optional[List["Expression"]] = None
        self._signature: Optional[str] = None

    # Arithmetic builds new graphs through the smart constructors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        text = to_infix(self)
        if len(text) > 120:
            text = text[:117] + "..."
        return f"Expression({text})"

    @property
    def is_const(self) -> bool:
        return self.op == "const"


# Leaves
def const(value: Number) -> Expression:
    return Expression("const", (), float(value))


def q(index: int) -> Expression:
    """Position coordinate q_{index+1}."""
    if index < 0:
        raise DimensionMismatch(f"negative coordinate index {index}")
    return Expression("coord", (), ("q", int(index)))


def p(index: int) -> Expression:
    """Momentum coordinate p_{index+1}."""
    if index < 0:
        raise DimensionMismatch(f"negative coordinate index {index}")
    return Expression("coord", (), ("p", int(index)))


def param(name: str, index: Optional[int] = None) -> Expression:
    """Named parameter, optionally a per-site component."""
    return Expression("param", (), (name, None if index is None else int(index)))


def symbol(name: str, site: Optional[int] = None) -> Expression:
    """Placeholder symbol; generator symbols carry a site tag."""
    return Expression("symbol", (), (name, None if site is None else int(site)))


def as_expr(value: Union[Expression, Number]) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool):
        return const(value)
    raise TypeError(f"Cannot convert {type(value).__name__} to Expression")


def _is_const(node: Expression, value: Optional[float] = None) -> bool:
    return node.op == "const" and (value is None or node.data == value)


def _folded(fn: Callable[..., float], *values: float) -> Optional[Expression]:
    try:
        result = fn(*values)
    except (ValueError, OverflowError, ZeroDivisionError):
        return None
    if isinstance(result, complex) or not math.isfinite(result):
        return None
    return const(result)


# Smart constructors
def add(a, b) -> Expression:
    a, b = as_expr(a), as_expr(b)
    if _is_const(a) and _is_const(b):
        folded = _folded(lambda x, y: x + y, a.data, b.data)
        if folded is not None:
            return folded
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Expression("add", (a, b))


def sub(a, b) -> Expression:
    a, b = as_expr(a), as_expr(b)
    if _is_const(a) and _is_const(b):
        folded = _folded(lambda x, y: x - y, a.data, b.data)
        if folded is not None:
            return folded
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Expression("sub", (a, b))


def mul(a, b) -> Expression:
    a, b = as_expr(a), as_expr(b)
    if _is_const(a) and _is_const(b):
        folded = _folded(lambda x, y: x * y, a.data, b.data)
        if folded is not None:
            return folded
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Expression("mul", (a, b))


def div(a, b) -> Expression:
    a, b = as_expr(a), as_expr(b)
    if _is_const(a) and _is_const(b) and b.data != 0.0:
        folded = _folded(lambda x, y: x / y, a.data, b.data)
        if folded is not None:
            return folded
    if _is_const(b, 1.0):
        return a
    return Expression("div", (a, b))


def power(a, b) -> Expression:
    a, b = as_expr(a), as_expr(b)
    if _is_const(a) and _is_const(b):
        if a.data > 0 or float(b.data).is_integer():
            folded = _folded(lambda x, y: x ** y, a.data, b.data)
            if folded is not None:
                return folded
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return const(1.0)
    return Expression("pow", (a, b))


def _sinhc_scalar(u: float) -> float:
    return float(_sinhc_parts(np.asarray([u]), 0)[0][0])


_SCALAR_FUNCTIONS: Dict[str, Callable[[float], float]] = {
    "neg": lambda x: -x,
    "sin": math.sin,
    "cos": math.cos,
    "sinh": math.sinh,
    "cosh": math.cosh,
    "tanh": math.tanh,
    "exp": math.exp,
    "ln": math.log,
    "sqrt": math.sqrt,
    "sinhc": _sinhc_scalar,
}


def _unary(op: str, a) -> Expression:
    a = as_expr(a)
    if _is_const(a):
        folded = _folded(_SCALAR_FUNCTIONS[op], a.data)
        if folded is not None:
            return folded
    return Expression(op, (a,))


def neg(a) -> Expression:
    return _unary("neg", a)


def sin(a) -> Expression:
    return _unary("sin", a)


def cos(a) -> Expression:
    return _unary("cos", a)


def sinh(a) -> Expression:
    return _unary("sinh", a)


def cosh(a) -> Expression:
    return _unary("cosh", a)


def tanh(a) -> Expression:
    return _unary("tanh", a)


def exp(a) -> Expression:
    return _unary("exp", a)


def ln(a) -> Expression:
    return _unary("ln", a)


def sqrt(a) -> Expression:
    return _unary("sqrt", a)


def sinhc(a) -> Expression:
    """sinh(u)/u with the removable singularity at u = 0 filled in."""
    return _unary("sinhc", a)


UNARY_CONSTRUCTORS: Dict[str, Callable[[Any], Expression]] = {
    "neg": neg, "sin": sin, "cos": cos, "sinh": sinh, "cosh": cosh, "tanh": tanh,
    "exp": exp, "ln": ln, "sqrt": sqrt, "sinhc": sinhc,
}
BINARY_CONSTRUCTORS: Dict[str, Callable[[Any, Any], Expression]] = {
    "add": add, "sub": sub, "mul": mul, "div": div, "pow": power,
}


def esum(terms: Iterable[Union[Expression, Number]]) -> Expression:
    """Left-folded sum; the empty sum is 0."""
    total = const(0.0)
    for term in terms:
        total = add(total, term)
    return total


def eprod(factors: Iterable[Union[Expression, Number]]) -> Expression:
    total = const(1.0)
    for factor in factors:
        total = mul(total, factor)
    return total


def square(a) -> Expression:
    return power(a, 2)


# Points and parameters
@dataclass(frozen=True)
class PhasePoint:
    """Canonical point (q, p) of a 2N-dimensional phase space."""
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q_arr = np.array(self.q, dtype=float).ravel()
        p_arr = np.array(self.p, dtype=float).ravel()
        if q_arr.size == 0 or q_arr.shape != p_arr.shape:
            raise DimensionMismatch(
                f"q and p must have equal non-zero length, got {q_arr.size} and {p_arr.size}"
            )
        if not (np.all(np.isfinite(q_arr)) and np.all(np.isfinite(p_arr))):
            raise DomainError("phase point has non-finite entries")
        q_arr.setflags(write=False)
        p_arr.setflags(write=False)
        object.__setattr__(self, "q", q_arr)
        object.__setattr__(self, "p", p_arr)

    @property
    def N(self) -> int:
        return int(self.q.size)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "PhasePoint":
        arr = np.asarray(values, dtype=float).ravel()
        if arr.size % 2:
            raise DimensionMismatch(f"phase array has odd length {arr.size}")
        half = arr.size // 2
        return cls(arr[:half], arr[half:])


ParamValue = Union[float, Sequence[float], np.ndarray]


class ParamSet(Mapping):
    """Immutable mapping of named scalar and per-site vector parameters."""

    def __init__(self, values: Optional[Mapping[str, ParamValue]] = None, **kwargs: ParamValue):
        store: Dict[str, Union[float, np.ndarray]] = {}
        merged = dict(values or {})
        merged.update(kwargs)
        for name, value in merged.items():
            if isinstance(value, (int, float, np.floating, np.integer)):
                store[name] = float(value)
            else:
                arr = np.array(value, dtype=float).ravel()
                arr.setflags(write=False)
                store[name] = arr
        self._store = store

    def __getitem__(self, name: str):
        return self._store[name]

    def __iter__(self):
        return iter(sorted(self._store))

    def __len__(self) -> int:
        return len(self._store)

    def __repr__(self) -> str:
        return f"ParamSet({ {k: self._store[k] for k in self} })"

    def lookup(self, name: str, index: Optional[int] = None) -> float:
        if name not in self._store:
            raise UnresolvedSymbol(name, index)
        value = self._store[name]
        if index is None:
            if isinstance(value, np.ndarray):
                raise ParameterMismatch(f"parameter '{name}' is per-site; an index is required")
            return value
        if not isinstance(value, np.ndarray):
            raise ParameterMismatch(f"parameter '{name}' is scalar but indexed by site {index + 1}")
        if index >= value.size:
            raise UnresolvedSymbol(name, index)
        return float(value[index])

    def with_values(self, **kwargs: ParamValue) -> "ParamSet":
        merged: Dict[str, ParamValue] = dict(self._store)
        merged.update(kwargs)
        return ParamSet(merged)

    def merged(self, other: Mapping[str, ParamValue]) -> "ParamSet":
        return self.with_values(**dict(other))

    def vector(self, name: str) -> np.ndarray:
        value = self._store.get(name)
        if not isinstance(value, np.ndarray):
            raise ParameterMismatch(f"parameter '{name}' is not a per-site vector")
        return value

    def as_dict(self) -> Dict[str, Union[float, List[float]]]:
        return {
            k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in sorted(self._store.items())
        }


EMPTY_PARAMS = ParamSet()


@dataclass(frozen=True)
class Jet:
    """Value, gradient and optional Hessian of a field at one point."""
    value: float
    gradient: np.ndarray
    hessian: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BatchJet:
    """Jets of one field over P points: values (P,), gradients (P, 2N), hessians (P, 2N, 2N)."""
    values: np.ndarray
    gradients: Optional[np.ndarray] = None
    hessians: Optional[np.ndarray] = None


# Graph traversal
def _compile(roots: Sequence[Expression]) -> List[Expression]:
    """Topologically ordered, de-duplicated node list covering all roots."""
    if len(roots) == 1 and roots[0]._tape is not None:
        return roots[0]._tape
    order: List[Expression] = []
    seen = set()
    stack: List[Tuple[Expression, bool]] = [(root, False) for root in reversed(roots)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if key in seen:
            continue
        if expanded:
            seen.add(key)
            order.append(node)
            continue
        stack.append((node, True))
        for child in reversed(node.args):
            if id(child) not in seen:
                stack.append((child, False))
    if len(roots) == 1:
        roots[0]._tape = order
    return order


def nodes(f: Expression) -> List[Expression]:
    return list(_compile([f]))


def free_symbols(f: Expression) -> set:
    """(name, site) keys of every placeholder in f."""
    return {node.data for node in _compile([f]) if node.op == "symbol"}


def parameters(f: Expression) -> set:
    return {node.data for node in _compile([f]) if node.op == "param"}


def max_coordinate(f: Expression) -> int:
    """Largest coordinate index referenced, -1 if none."""
    indices = [node.data[1] for node in _compile([f]) if node.op == "coord"]
    return max(indices) if indices else -1


def signature(f: Expression) -> str:
    """Structural digest; equal digests mean identical term graphs."""
    if f._signature is not None:
        return f._signature
    digests: Dict[int, str] = {}
    for node in _compile([f]):
        if node._signature is not None:
            digests[id(node)] = node._signature
            continue
        payload = repr((node.op, node.data, tuple(digests[id(c)] for c in node.args)))
        digest = hashlib.sha256(payload.encode()).hexdigest()
        node._signature = digest
        digests[id(node)] = digest
    return digests[id(f)]


def structurally_equal(a: Expression, b: Expression) -> bool:
    return signature(a) == signature(b)


def map_leaves(f: Expression, fn: Callable[[Expression], Optional[Expression]]) -> Expression:
    """Rebuild f with every leaf replaced by fn(leaf) when fn returns an Expression."""
    rebuilt: Dict[int, Expression] = {}
    for node in _compile([f]):
        if not node.args:
            replacement = fn(node) if node.op != "const" else None
            rebuilt[id(node)] = node if replacement is None else as_expr(replacement)
            continue
        new_args = tuple(rebuilt[id(c)] for c in node.args)
        if all(new is old for new, old in zip(new_args, node.args)):
            rebuilt[id(node)] = node
        elif node.op in UNARY_CONSTRUCTORS:
            rebuilt[id(node)] = UNARY_CONSTRUCTORS[node.op](new_args[0])
        else:
            rebuilt[id(node)] = BINARY_CONSTRUCTORS[node.op](*new_args)
    return rebuilt[id(f)]


BindingKey = Union[str, Tuple[str, Optional[int]]]


def _binding_key(key: BindingKey) -> Tuple[str, Optional[int]]:
    if isinstance(key, str):
        return (key, None)
    return (key[0], key[1])


def substitute(f: Expression, bindings: Mapping[BindingKey, Union[Expression, Number]]) -> Expression:
    """Replace bound placeholders; unbound placeholders are preserved."""
    table = {_binding_key(k): as_expr(v) for k, v in bindings.items()}
    if not table:
        return f
    return map_leaves(f, lambda leaf: table.get(leaf.data) if leaf.op == "symbol" else None)


def compose_bindings(first: Mapping[BindingKey, Any], second: Mapping[BindingKey, Any]) -> Dict:
    """Bindings equivalent to applying `first` and then `second`."""
    composed = {_binding_key(k): substitute(as_expr(v), second) for k, v in first.items()}
    for key, value in second.items():
        composed.setdefault(_binding_key(key), as_expr(value))
    return composed


def shift_sites(f: Expression, offset: int) -> Expression:
    """Move coordinates, site parameters and site-tagged symbols by offset sites."""
    if offset == 0:
        return f

    def relabel(leaf: Expression) -> Optional[Expression]:
        if leaf.op == "coord":
            kind, index = leaf.data
            return Expression("coord", (), (kind, index + offset))
        if leaf.op == "param" and leaf.data[1] is not None:
            return param(leaf.data[0], leaf.data[1] + offset)
        if leaf.op == "symbol" and leaf.data[1] is not None:
            return symbol(leaf.data[0], leaf.data[1] + offset)
        return None

    return map_leaves(f, relabel)


def _unary_derivative(op: str, a: Expression) -> Expression:
    """d op(u)/du as an Expression in u."""
    if op == "neg":
        return const(-1.0)
    if op == "sin":
        return cos(a)
    if op == "cos":
        return neg(sin(a))
    if op == "sinh":
        return cosh(a)
    if op == "cosh":
        return sinh(a)
    if op == "tanh":
        return 1 - square(tanh(a))
    if op == "exp":
        return exp(a)
    if op == "ln":
        return div(1, a)
    if op == "sqrt":
        return div(0.5, sqrt(a))
    # sinhc: singular form, only valid away from u = 0
    return div(cosh(a) - sinhc(a), a)


def differentiate(f: Expression, name: str) -> Expression:
    """Symbolic derivative of f with respect to the unsited placeholder `name`."""
    derivative: Dict[int, Expression] = {}
    for node in _compile([f]):
        if not node.args:
            hit = node.op == "symbol" and node.data == (name, None)
            derivative[id(node)] = const(1.0 if hit else 0.0)
            continue
        if node.op in UNARY_CONSTRUCTORS:
            (a,) = node.args
            da = derivative[id(a)]
            derivative[id(node)] = const(0.0) if _is_const(da, 0.0) else mul(_unary_derivative(node.op, a), da)
            continue
        a, b = node.args
        da, db = derivative[id(a)], derivative[id(b)]
        if node.op == "add":
            out = add(da, db)
        elif node.op == "sub":
            out = sub(da, db)
        elif node.op == "mul":
            out = add(mul(da, b), mul(a, db))
        elif node.op == "div":
            out = sub(div(da, b), div(mul(a, db), square(b)))
        elif _is_const(db, 0.0):
            exponent = const(b.data - 1.0) if _is_const(b) else sub(b, 1)
            out = mul(mul(b, power(a, exponent)), da)
        else:
            out = mul(node, add(mul(db, ln(a)), div(mul(b, da), a)))
        derivative[id(node)] = out
    return derivative[id(f)]


# Printing
def _format_const(value: float) -> str:
    text = repr(float(value))
    return f"({text})" if value < 0 or text.startswith("-") else text


def to_infix(f: Expression) -> str:
    """Fully parenthesized infix text accepted by the expression parser."""
    text: Dict[int, str] = {}
    for node in _compile([f]):
        if node.op == "const":
            out = _format_const(node.data)
        elif node.op == "coord":
            out = f"{node.data[0]}{node.data[1] + 1}"
        elif node.op == "param":
            name, index = node.data
            out = name if index is None else f"{name}[{index + 1}]"
        elif node.op == "symbol":
            name, site = node.data
            out = name if site is None else f"{name}@{site + 1}"
        elif node.op == "neg":
            out = f"(-{text[id(node.args[0])]})"
        elif node.op in UNARY_OPS:
            out = f"{node.op}({text[id(node.args[0])]})"
        else:
            left, right = (text[id(c)] for c in node.args)
            out = f"({left} {BINARY_SYMBOLS[node.op]} {right})"
        text[id(node)] = out
    return text[id(f)]


# Numerical kernel
_Result = Tuple[Any, Optional[np.ndarray], Optional[np.ndarray]]


def _opt_add(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _opt_neg(a: Optional[np.ndarray]) -> Optional[np.ndarray]:
    return None if a is None else -a


def _scale(block: Optional[np.ndarray], factor) -> Optional[np.ndarray]:
    """Multiply a (P, n[, n]) block by a per-point factor."""
    if block is None:
        return None
    factor = np.asarray(factor)
    if factor.ndim == 0:
        return block * factor
    return block * factor.reshape((-1,) + (1,) * (block.ndim - 1))


def _outer(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if a is None or b is None:
        return None
    return a[:, :, None] * b[:, None, :]


def _sym_outer(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if a is None or b is None:
        return None
    return a[:, :, None] * b[:, None, :] + b[:, :, None] * a[:, None, :]


def _sinhc_parts(u: np.ndarray, order: int) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < SINHC_SERIES_CUTOFF
    safe = np.where(small, 1.0, u)
    u2 = u * u
    series0 = 1.0 + u2 * (1.0 / 6.0 + u2 * (1.0 / 120.0 + u2 * (1.0 / 5040.0 + u2 * (1.0 / 362880.0 + u2 / 39916800.0))))
    f0 = np.where(small, series0, np.sinh(safe) / safe)
    if order < 1:
        return f0, None, None
    series1 = u * (1.0 / 3.0 + u2 * (1.0 / 30.0 + u2 * (1.0 / 840.0 + u2 * (1.0 / 45360.0 + u2 / 3991680.0))))
    exact1 = (safe * np.cosh(safe) - np.sinh(safe)) / (safe * safe)
    f1 = np.where(small, series1, exact1)
    if order < 2:
        return f0, f1, None
    series2 = 1.0 / 3.0 + u2 * (1.0 / 10.0 + u2 * (1.0 / 168.0 + u2 * (1.0 / 6480.0 + u2 / 443520.0)))
    exact2 = (safe * safe * np.sinh(safe) - 2.0 * safe * np.cosh(safe) + 2.0 * np.sinh(safe)) / safe ** 3
    f2 = np.where(small, series2, exact2)
    return f0, f1, f2


def _unary_parts(op: str, u, order: int):
    """f(u), f'(u), f''(u) for a unary op (derivatives only up to order)."""
    if op == "sinhc":
        return _sinhc_parts(u, order)
    f1 = f2 = None
    if op == "sin":
        f0 = np.sin(u)
        if order >= 1:
            f1 = np.cos(u)
            f2 = -f0
    elif op == "cos":
        f0 = np.cos(u)
        if order >= 1:
            f1 = -np.sin(u)
            f2 = -f0
    elif op == "sinh":
        f0 = np.sinh(u)
        if order >= 1:
            f1 = np.cosh(u)
            f2 = f0
    elif op == "cosh":
        f0 = np.cosh(u)
        if order >= 1:
            f1 = np.sinh(u)
            f2 = f0
    elif op == "tanh":
        f0 = np.tanh(u)
        if order >= 1:
            f1 = 1.0 - f0 * f0
            f2 = -2.0 * f0 * f1
    elif op == "exp":
        f0 = np.exp(u)
        if order >= 1:
            f1 = f0
            f2 = f0
    elif op == "ln":
        f0 = np.log(u)
        if order >= 1:
            f1 = 1.0 / u
            f2 = -f1 * f1
    elif op == "sqrt":
        f0 = np.sqrt(u)
        if order >= 1:
            f1 = 0.5 / f0
            f2 = -0.5 * f1 / u
    else:
        raise ValueError(f"unknown unary op {op}")
    return f0, f1, f2


class _Kernel:
    """Evaluates a compiled tape over a batch of phase points."""

    def __init__(self, X: np.ndarray, params: ParamSet, order: int):
        self.X = X
        self.P, self.n = X.shape
        self.N = self.n // 2
        self.params = params
        self.order = order

    def fail(self, message: str, node: Expression, mask) -> None:
        bad = np.nonzero(~np.broadcast_to(mask, (self.P,)))[0]
        point = self.X[bad[0]] if bad.size else None
        raise DomainError(message, point=point, node=_describe(node))

    def check(self, node: Expression, result: _Result) -> _Result:
        val, grad, hess = result
        finite = np.isfinite(val)
        if not np.all(finite):
            self.fail(f"non-finite value in '{node.op}'", node, finite)
        if grad is not None:
            finite = np.all(np.isfinite(grad), axis=1)
            if not np.all(finite):
                self.fail(f"non-finite derivative in '{node.op}'", node, finite)
        if hess is not None:
            finite = np.all(np.isfinite(hess), axis=(1, 2))
            if not np.all(finite):
                self.fail(f"non-finite second derivative in '{node.op}'", node, finite)
        return result

    def leaf(self, node: Expression) -> _Result:
        if node.op == "const":
            return node.data, None, None
        if node.op == "param":
            name, index = node.data
            return self.params.lookup(name, index), None, None
        if node.op == "symbol":
            name, site = node.data
            raise UnresolvedSymbol(name, site)
        kind, index = node.data
        if index >= self.N:
            raise DimensionMismatch(f"coordinate {kind}{index + 1} outside a {self.N}-site phase space")
        column = index if kind == "q" else self.N + index
        grad = None
        if self.order >= 1:
            grad = np.zeros((self.P, self.n))
            grad[:, column] = 1.0
        return self.X[:, column], grad, None

    def unary(self, node: Expression, a: _Result) -> _Result:
        u, gu, hu = a
        if node.op == "neg":
            return -u, _opt_neg(gu), _opt_neg(hu)
        if node.op == "ln" and not np.all(np.asarray(u) > 0):
            self.fail("logarithm of a non-positive value", node, np.asarray(u) > 0)
        if node.op == "sqrt" and not np.all(np.asarray(u) >= 0):
            self.fail("square root of a negative value", node, np.asarray(u) >= 0)
        need = self.order if gu is not None else 0
        f0, f1, f2 = _unary_parts(node.op, u, need)
        grad = _scale(gu, f1) if need >= 1 else None
        hess = None
        if need >= 2:
            hess = _opt_add(_scale(hu, f1), _scale(_outer(gu, gu), f2))
        return f0, grad, hess

    def binary(self, node: Expression, a: _Result, b: _Result) -> _Result:
        va, ga, ha = a
        vb, gb, hb = b
        op = node.op
        if op == "add":
            return va + vb, _opt_add(ga, gb), _opt_add(ha, hb)
        if op == "sub":
            return va - vb, _opt_add(ga, _opt_neg(gb)), _opt_add(ha, _opt_neg(hb))
        if op == "mul":
            val = va * vb
            grad = _opt_add(_scale(ga, vb), _scale(gb, va))
            hess = None
            if self.order >= 2:
                hess = _opt_add(_opt_add(_scale(ha, vb), _scale(hb, va)), _sym_outer(ga, gb))
            return val, grad, hess
        if op == "div":
            if not np.all(np.asarray(vb) != 0):
                self.fail("division by zero", node, np.asarray(vb) != 0)
            val = va / vb
            inv = 1.0 / vb
            grad = _scale(_opt_add(ga, _opt_neg(_scale(gb, val))), inv)
            hess = None
            if self.order >= 2 and grad is not None:
                corr = _opt_add(ha, _opt_neg(_sym_outer(grad, gb)))
                corr = _opt_add(corr, _opt_neg(_scale(hb, val)))
                hess = _scale(corr, inv)
            return val, grad, hess
        return self.pow(node, a, b)

    def pow(self, node: Expression, a: _Result, b: _Result) -> _Result:
        va, ga, ha = a
        vb, gb, hb = b
        base = np.asarray(va)
        if gb is None:
            expo = np.asarray(vb)
            integral = bool(np.all(expo == np.round(expo)))
            if not integral and not np.all(base > 0):
                self.fail("non-integer power of a non-positive base", node, base > 0)
            val = np.power(va, vb)
            if ga is None:
                return val, None, None
            f1 = expo * np.power(va, expo - 1.0)
            grad = _scale(ga, f1)
            hess = None
            if self.order >= 2:
                f2 = expo * (expo - 1.0) * np.power(va, expo - 2.0)
                hess = _opt_add(_scale(ha, f1), _scale(_outer(ga, ga), f2))
            return val, grad, hess
        if not np.all(base > 0):
            self.fail("variable power of a non-positive base", node, base > 0)
        # a^b = exp(b ln a)
        log_a = self.unary(Expression("ln", (node.args[0],)), a)
        prod = self.binary(Expression("mul", ()), b, log_a)
        return self.unary(Expression("exp", ()), prod)

    def run(self, roots: Sequence[Expression]) -> List[_Result]:
        tape = _compile(list(roots))
        last_use: Dict[int, int] = {}
        for position, node in enumerate(tape):
            for child in node.args:
                last_use[id(child)] = position
        keep = {id(r) for r in roots}
        results: Dict[int, _Result] = {}
        with np.errstate(all="ignore"):
            for position, node in enumerate(tape):
                if not node.args:
                    result = self.leaf(node)
                elif len(node.args) == 1:
                    result = self.unary(node, results[id(node.args[0])])
                else:
                    result = self.binary(node, results[id(node.args[0])], results[id(node.args[1])])
                results[id(node)] = self.check(node, result)
                for child in node.args:
                    key = id(child)
                    if last_use.get(key) == position and key not in keep:
                        results.pop(key, None)
        return [results[id(r)] for r in roots]


def _describe(node: Expression) -> str:
    text = to_infix(node)
    return text if len(text) <= 80 else text[:77] + "..."


def as_phase_batch(x: Union[PhasePoint, Sequence[float], np.ndarray]) -> np.ndarray:
    """Coerce a point or an array of points to shape (P, 2N)."""
    if isinstance(x, PhasePoint):
        return x.as_array()[None, :]
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] == 0 or arr.shape[1] % 2:
        raise DimensionMismatch(f"phase batch must have shape (P, 2N), got {arr.shape}")
    return arr


def _finalize(result: _Result, P: int, n: int, order: int) -> BatchJet:
    val, grad, hess = result
    values = np.array(np.broadcast_to(val, (P,)), dtype=float)
    gradients = hessians = None
    if order >= 1:
        gradients = np.zeros((P, n)) if grad is None else np.array(grad, dtype=float)
    if order >= 2:
        hessians = np.zeros((P, n, n)) if hess is None else np.array(hess, dtype=float)
    return BatchJet(values, gradients, hessians)


def jets_batch(
    fields: Sequence[Expression],
    X: Union[np.ndarray, Sequence[float], PhasePoint],
    params: Optional[ParamSet] = None,
    order: int = 1,
) -> List[BatchJet]:
    """Jets of several fields over a batch of points, sharing one tape."""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    batch = as_phase_batch(X)
    kernel = _Kernel(batch, params or EMPTY_PARAMS, order)
    results = kernel.run([as_expr(f) for f in fields])
    P, n = batch.shape
    return [_finalize(r, P, n, order) for r in results]


def evaluate_batch(f: Expression, X, params: Optional[ParamSet] = None) -> np.ndarray:
    return jets_batch([f], X, params, order=0)[0].values


def evaluate(f: Expression, x, params: Optional[ParamSet] = None) -> float:
    """Value of f at a single phase point."""
    return float(evaluate_batch(f, x, params)[0])


def jet_batch(f: Expression, X, params: Optional[ParamSet] = None, order: int = 1) -> BatchJet:
    return jets_batch([f], X, params, order=order)[0]


def jet(f: Expression, x, params: Optional[ParamSet] = None, order: int = 1) -> Jet:
    """Exact first (and optionally second) derivatives at one point."""
    if order not in (1, 2):
        raise ValueError(f"jet order must be 1 or 2, got {order}")
    batch = jet_batch(f, x, params, order)
    hessian = batch.hessians[0] if order == 2 else None
    return Jet(float(batch.values[0]), batch.gradients[0], hessian)


# Brackets
def bracket_from_gradients(grad_f: np.ndarray, grad_g: np.ndarray) -> np.ndarray:
    """Canonical bracket sum_i f_qi g_pi - f_pi g_qi for batched gradients."""
    N = grad_f.shape[-1] // 2
    first = np.sum(grad_f[..., :N] * grad_g[..., N:], axis=-1)
    second = np.sum(grad_f[..., N:] * grad_g[..., :N], axis=-1)
    return first - second


def normalized_bracket(grad_f: np.ndarray, grad_g: np.ndarray, offset: Optional[np.ndarray] = None) -> np.ndarray:
    """|{f,g} - offset| / (|grad f| |grad g| + 1e-30)."""
    value = bracket_from_gradients(grad_f, grad_g)
    if offset is not None:
        value = value - offset
    scale = np.linalg.norm(grad_f, axis=-1) * np.linalg.norm(grad_g, axis=-1) + 1e-30
    return np.abs(value) / scale


def poisson_bracket(f: Expression, g: Expression, x, params: Optional[ParamSet] = None) -> float:
    jf, jg = jets_batch([f, g], x, params, order=1)
    N = jf.gradients.shape[1] // 2
    gf, gg = jf.gradients[0], jg.gradients[0]
    first = math.fsum(gf[:N] * gg[N:])
    second = math.fsum(gf[N:] * gg[:N])
    return first - second


def poisson_bracket_batch(f: Expression, g: Expression, X, params: Optional[ParamSet] = None) -> np.ndarray:
    jf, jg = jets_batch([f, g], X, params, order=1)
    return bracket_from_gradients(jf.gradients, jg.gradients)


def symplectic_form(N: int) -> np.ndarray:
    """Omega with {f, g} = grad f . Omega grad g."""
    omega = np.zeros((2 * N, 2 * N))
    omega[:N, N:] = np.eye(N)
    omega[N:, :N] = -np.eye(N)
    return omega


def bracket_gradient(jet_f: BatchJet, jet_g: BatchJet) -> np.ndarray:
    """Gradient of {f, g}: H_f Omega grad g - H_g Omega grad f."""
    N = jet_f.gradients.shape[1] // 2
    omega = symplectic_form(N)
    term_f = np.einsum("pij,jk,pk->pi", jet_f.hessians, omega, jet_g.gradients)
    term_g = np.einsum("pij,jk,pk->pi", jet_g.hessians, omega, jet_f.gradients)
    return term_f - term_g


def jacobi_residual(f: Expression, g: Expression, h: Expression, X, params: Optional[ParamSet] = None) -> np.ndarray:
    """|{f,{g,h}} + {g,{h,f}} + {h,{f,g}}| per point, scaled by the gradient norms."""
    jf, jg, jh = jets_batch([f, g, h], X, params, order=2)
    total = (
        bracket_from_gradients(jf.gradients, bracket_gradient(jg, jh))
        + bracket_from_gradients(jg.gradients, bracket_gradient(jh, jf))
        + bracket_from_gradients(jh.gradients, bracket_gradient(jf, jg))
    )
    norms = [np.linalg.norm(j.gradients, axis=1) + np.linalg.norm(j.hessians, axis=(1, 2)) for j in (jf, jg, jh)]
    scale = norms[0] * norms[1] * norms[2] + 1e-30
    return np.abs(total) / scale


def fd_gradient(f: Expression, x, params: Optional[ParamSet] = None, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient at a single point."""
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    base = as_phase_batch(x)[0]
    n = base.size
    stencil = np.repeat(base[None, :], 2 * n, axis=0)
    stencil[np.arange(n), np.arange(n)] += h
    stencil[n + np.arange(n), np.arange(n)] -= h
    values = evaluate_batch(f, stencil, params)
    return (values[:n] - values[n:]) / (2.0 * h)


def fd_bracket_oracle(f: Expression, g: Expression, x, params: Optional[ParamSet] = None, h: float = 1e-4) -> float:
    """Central-difference estimate of {f, g}, independent of the jet kernel."""
    gf = fd_gradient(f, x, params, h)
    gg = fd_gradient(g, x, params, h)
    N = gf.size // 2
    return float(np.dot(gf[:N], gg[N:]) - np.dot(gf[N:], gg[:N]))
