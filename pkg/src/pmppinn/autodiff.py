"""Scalar reverse-mode automatic differentiation on a recorded tape.

Every elementary operation appends a node to a :class:`Tape`.  A node keeps
its parent indices, float local partials (for the plain backward pass) and a
symbolic rule that rebuilds the partials as :class:`Var` expressions.  When a
backward pass runs with ``create_graph=True`` it uses the symbolic rules, so
the adjoints it produces are themselves recorded on the tape and can be
differentiated again (reverse-over-reverse).

    >>> with Tape() as tape:
    ...     x = tape.var(3.0)
    ...     y = x * x
    >>> gradient(y, [x])
    [6.0]
"""

from __future__ import annotations

import math
import threading
from collections.abc import Callable, Sequence
from typing import Union

__all__ = [
    "AutodiffError",
    "DomainError",
    "NonFiniteError",
    "TapeMismatchError",
    "SecondOrderUnavailable",
    "Tape",
    "Var",
    "active_tape",
    "record",
    "gradient",
    "derivatives",
    "gradient_nested",
    "add", "sub", "mul", "div", "neg",
    "sin", "cos", "exp", "log", "tanh", "sigmoid", "atan2", "power", "sqrt",
]

Scalar = Union["Var", float, int]


class AutodiffError(Exception):
    """Base class for tape errors."""


class DomainError(AutodiffError, ValueError):
    """An elementary function was evaluated outside its domain."""


class NonFiniteError(AutodiffError, ArithmeticError):
    """An operation produced NaN or infinity."""


class TapeMismatchError(AutodiffError):
    """Vars from different tapes were combined."""


class SecondOrderUnavailable(AutodiffError):
    """A node without a symbolic partial rule was differentiated twice."""


_local = threading.local()


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    """Innermost tape entered with ``with`` on this thread, if any."""
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Append-only list of recorded operations.

    Nodes are stored in creation order, so parents always precede children
    and a reverse sweep over indices is a valid topological traversal.
    """

    _generation = 0
    _gen_lock = threading.Lock()

    def __init__(self) -> None:
        with Tape._gen_lock:
            Tape._generation += 1
            self.generation = Tape._generation
        self.ops: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.partials: list[tuple[float, ...]] = []
        self.args: list[tuple[Scalar, ...]] = []
        self.rules: list[Callable[..., tuple[Scalar, ...]] | None] = []

    def __len__(self) -> int:
        return len(self.ops)

    def __enter__(self) -> Tape:
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def var(self, value: float) -> Var:
        """Register an independent variable (a leaf node)."""
        value = float(value)
        if not math.isfinite(value):
            raise NonFiniteError(f"leaf value {value!r} is not finite")
        return self._append("leaf", (), (), (), None, value)

    def _append(self, op, parents, partials, args, rule, value) -> Var:
        self.ops.append(op)
        self.parents.append(parents)
        self.partials.append(partials)
        self.args.append(args)
        self.rules.append(rule)
        return Var(value, self, len(self.ops) - 1)

    def __repr__(self) -> str:
        return f"Tape(generation={self.generation}, nodes={len(self)})"


class Var:
    """A real value with a handle into the tape that produced it."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value: float, tape: Tape, index: int) -> None:
        self.value = value
        self.tape = tape
        self.index = index

    def __repr__(self) -> str:
        return f"Var({self.value!r}, node={self.index})"

    def __float__(self) -> float:
        return float(self.value)

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

    def __pos__(self):
        return self

    # comparisons act on values only; they are not differentiable
    def __lt__(self, other):
        return self.value < _value(other)

    def __le__(self, other):
        return self.value <= _value(other)

    def __gt__(self, other):
        return self.value > _value(other)

    def __ge__(self, other):
        return self.value >= _value(other)


def _value(x: Scalar) -> float:
    return x.value if isinstance(x, Var) else float(x)


# ---------------------------------------------------------------------------
# elementary operations
#
# Each entry: (value(*vals), partials(*vals) -> floats, rule(*args) -> Scalars,
#              domain check(*vals) -> message or None)
# ---------------------------------------------------------------------------


def _sig(a: float) -> float:
    if a >= 0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


def _div_domain(a, b):
    return "division by zero" if b == 0.0 else None


def _log_domain(a):
    return f"log of non-positive value {a!r}" if a <= 0.0 else None


def _pow_domain(a, b):
    if a < 0.0 and not float(b).is_integer():
        return f"negative base {a!r} with non-integer exponent {b!r}"
    if a == 0.0 and b < 0.0:
        return "zero base with negative exponent"
    if a == 0.0 and 0.0 < b < 1.0:
        return "derivative is unbounded at zero base for exponent in (0, 1)"
    return None


def _atan2_domain(y, x):
    return "atan2(0, 0) is undefined" if x == 0.0 and y == 0.0 else None


def _pow_partials(a, b):
    da = b * a ** (b - 1.0) if b != 0.0 else 0.0
    db = a**b * math.log(a) if a > 0.0 else 0.0
    return (da, db)


def _pow_rule(x, y):
    dx = y * power(x, y - 1.0) if _value(y) != 0.0 else 0.0
    dy = power(x, y) * log(x) if isinstance(y, Var) and _value(x) > 0.0 else 0.0
    return (dx, dy)


_OPS: dict[str, tuple] = {
    "add": (
        lambda a, b: a + b,
        lambda a, b: (1.0, 1.0),
        lambda x, y: (1.0, 1.0),
        None,
    ),
    "sub": (
        lambda a, b: a - b,
        lambda a, b: (1.0, -1.0),
        lambda x, y: (1.0, -1.0),
        None,
    ),
    "mul": (
        lambda a, b: a * b,
        lambda a, b: (b, a),
        lambda x, y: (y, x),
        None,
    ),
    "div": (
        lambda a, b: a / b,
        lambda a, b: (1.0 / b, -a / (b * b)),
        lambda x, y: (1.0 / y, -x / (y * y)),
        _div_domain,
    ),
    "neg": (
        lambda a: -a,
        lambda a: (-1.0,),
        lambda x: (-1.0,),
        None,
    ),
    "sin": (
        math.sin,
        lambda a: (math.cos(a),),
        lambda x: (cos(x),),
        None,
    ),
    "cos": (
        math.cos,
        lambda a: (-math.sin(a),),
        lambda x: (-sin(x),),
        None,
    ),
    "exp": (
        math.exp,
        lambda a: (math.exp(a),),
        lambda x: (exp(x),),
        None,
    ),
    "log": (
        lambda a: math.log(a),
        lambda a: (1.0 / a,),
        lambda x: (1.0 / x,),
        _log_domain,
    ),
    "tanh": (
        math.tanh,
        lambda a: (1.0 - math.tanh(a) ** 2,),
        lambda x: (1.0 - tanh(x) * tanh(x),),
        None,
    ),
    "sigmoid": (
        _sig,
        lambda a: (_sig(a) * (1.0 - _sig(a)),),
        lambda x: (sigmoid(x) * (1.0 - sigmoid(x)),),
        None,
    ),
    "atan2": (
        math.atan2,
        lambda y, x: (x / (x * x + y * y), -y / (x * x + y * y)),
        lambda y, x: (x / (x * x + y * y), -y / (x * x + y * y)),
        _atan2_domain,
    ),
    "pow": (
        lambda a, b: a**b,
        _pow_partials,
        _pow_rule,
        _pow_domain,
    ),
}


def record(
    op: str,
    *args: Scalar,
    value: float | None = None,
    partials: Sequence[float] | None = None,
    rule: Callable[..., tuple[Scalar, ...]] | None = None,
) -> Scalar:
    """Apply ``op`` to ``args`` and append the result to the shared tape.

    ``op`` names one of the built-in elementary functions.  Any other name
    registers a custom node; the caller then supplies ``value`` and float
    ``partials`` and, if the node must support nested differentiation, a
    symbolic ``rule``.  A custom node without a rule raises
    :class:`SecondOrderUnavailable` when a ``create_graph`` backward pass
    reaches it.

    Arguments that are plain numbers are treated as constants.  If no
    argument is a :class:`Var` the plain float result is returned.
    """
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeMismatchError(
                    f"{op}: operands come from tapes {tape.generation} and "
                    f"{a.tape.generation}"
                )
    vals = tuple(_value(a) for a in args)

    builtin = _OPS.get(op)
    if builtin is not None:
        fn, dfn, rule, domain = builtin
        if domain is not None:
            msg = domain(*vals)
            if msg is not None:
                where = f" at node {len(tape)}" if tape is not None else ""
                raise DomainError(f"{op}{where}: {msg}")
        try:
            value = fn(*vals)
        except (OverflowError, ValueError) as err:
            raise NonFiniteError(f"{op}{vals}: {err}") from None
    elif value is None or partials is None:
        raise AutodiffError(f"unknown op {op!r}; custom ops need value and partials")

    value = float(value)
    if not math.isfinite(value):
        where = f" at node {len(tape)}" if tape is not None else ""
        raise NonFiniteError(f"{op}{where} produced {value!r} from {vals}")
    if tape is None:
        return value

    if builtin is not None:
        partials = dfn(*vals)
    keep = [i for i, a in enumerate(args) if isinstance(a, Var)]
    return tape._append(
        op,
        tuple(args[i].index for i in keep),
        tuple(float(partials[i]) for i in keep),
        tuple(args),
        rule,
        value,
    )


def add(a, b):
    return record("add", a, b)


def sub(a, b):
    return record("sub", a, b)


def mul(a, b):
    return record("mul", a, b)


def div(a, b):
    return record("div", a, b)


def neg(a):
    return record("neg", a)


def sin(a):
    return record("sin", a)


def cos(a):
    return record("cos", a)


def exp(a):
    return record("exp", a)


def log(a):
    return record("log", a)


def tanh(a):
    return record("tanh", a)


def sigmoid(a):
    return record("sigmoid", a)


def atan2(y, x):
    return record("atan2", y, x)


def power(a, b):
    return record("pow", a, b)


def sqrt(a):
    return record("pow", a, 0.5)


# ---------------------------------------------------------------------------
# backward passes
# ---------------------------------------------------------------------------


def _check_inputs(output: Var, inputs: Sequence[Var]) -> Tape:
    if not isinstance(output, Var):
        raise AutodiffError("output must be a Var")
    tape = output.tape
    for x in inputs:
        if not isinstance(x, Var):
            raise AutodiffError(f"input {x!r} is not a Var")
        if x.tape is not tape:
            raise TapeMismatchError(
                f"input from tape {x.tape.generation} differentiated through "
                f"tape {tape.generation}"
            )
    return tape


def derivatives(
    output: Scalar, inputs: Sequence[Var], create_graph: bool = False
) -> list[Scalar]:
    """Reverse sweep from ``output``; returns d output / d input for each input.

    Inputs the output does not depend on get 0.0.  With ``create_graph`` the
    returned derivatives are recorded on the tape (as :class:`Var` where they
    depend on tape values) and may be differentiated again.
    """
    if not isinstance(output, Var):
        # constant output: every derivative vanishes
        return [0.0 for _ in inputs]
    tape = _check_inputs(output, inputs)
    wanted = {x.index for x in inputs}
    found: dict[int, Scalar] = {}
    adj: dict[int, Scalar] = {output.index: 1.0}
    parents, partials = tape.parents, tape.partials
    for i in range(output.index, -1, -1):
        g = adj.pop(i, None)
        if g is None:
            continue
        if i in wanted:
            found[i] = g
        pa = parents[i]
        if not pa:
            continue
        if create_graph:
            rule = tape.rules[i]
            if rule is None:
                raise SecondOrderUnavailable(
                    f"node {i} ({tape.ops[i]}) has no symbolic partial rule"
                )
            args = [a for a in tape.args[i]]
            local = rule(*args)
            local = [d for a, d in zip(args, local) if isinstance(a, Var)]
            for p, d in zip(pa, local):
                term = g * d
                prev = adj.get(p)
                adj[p] = term if prev is None else prev + term
        else:
            for p, d in zip(pa, partials[i]):
                adj[p] = adj.get(p, 0.0) + g * d
    return [found.get(x.index, 0.0) for x in inputs]


def gradient(output: Scalar, inputs: Sequence[Var]) -> list[float]:
    """Exact first derivatives of ``output`` with respect to ``inputs``."""
    return [_value(d) for d in derivatives(output, inputs)]


def gradient_nested(
    inner: Callable[[list[Var], list[Var]], Var],
    inputs: Sequence[float],
    params: Sequence[float],
    outer: Callable[[Var, list[Scalar]], Scalar] | None = None,
) -> list[float]:
    """Parameter gradient of an expression built from input derivatives.

    ``inner(inputs, params)`` is evaluated on a fresh tape.  Its derivatives
    with respect to ``inputs`` are taken with a recorded backward pass, then
    ``outer(value, input_derivatives)`` combines them into a scalar (default:
    the sum of the input derivatives) which is differentiated with respect to
    ``params``.

    >>> gradient_nested(lambda x, a: a[0] * x[0] ** 3, [2.0], [1.0])
    [12.0]
    """
    with Tape() as tape:
        xs = [tape.var(v) for v in inputs]
        ps = [tape.var(v) for v in params]
        value = inner(xs, ps)
        dx = derivatives(value, xs, create_graph=True)
        if outer is None:
            expr: Scalar = 0.0
            for d in dx:
                expr = expr + d
        else:
            expr = outer(value, dx)
        return gradient(expr, ps)
