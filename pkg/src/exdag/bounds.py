"""Guaranteed magnitude enclosures and operation constants.

A bottom-up interval pass with outward (directed) rounding produces, for
every node, an enclosure of its exact value.  Divisor and radicand
enclosures that straddle zero are refined by recomputing the offending
subtree at doubled working precision, up to a retry cap; values that cannot
be separated from zero within the cap are rejected, since sign
determination is out of scope here.

The enclosures instantiate the per-operation error-propagation constants
(derivative bounds): negation (1, 0); addition/subtraction (1, 1);
multiplication (y_high, x_high); division (1/y_low, 1/y_low^2); d-th root
((1/d) * x_low^((1-d)/d), 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr

from .dag import ExpressionDag, OpKind
from .errors import DomainError, SeparationError
from .logweight import LOG_ZERO

__all__ = [
    "NodeBounds",
    "BoundsTable",
    "OperationConstants",
    "compute_bounds",
    "magnitude_bounds",
    "operation_constants",
]

_INF = float("inf")

_CTX_CACHE: dict[tuple[int, int], gmpy2.context] = {}


def _ctx(precision: int, rounding) -> gmpy2.context:
    key = (precision, rounding)
    ctx = _CTX_CACHE.get(key)
    if ctx is None:
        ctx = gmpy2.context(precision=precision, round=rounding)
        _CTX_CACHE[key] = ctx
    return ctx


def _log2_dir(x: mpfr, rounding) -> float:
    """log2 of a positive mpfr as a float, rounded in the given direction."""
    v = float(_ctx(53, rounding).log2(x))
    toward = _INF if rounding == gmpy2.RoundUp else -_INF
    return math.nextafter(v, toward)


@dataclass(slots=True)
class NodeBounds:
    lo: mpfr
    hi: mpfr
    exact: bool
    sign_definite: bool  # enclosure excludes 0 (or is exactly zero-width 0)
    exp_hi: int  # |value| < 2**exp_hi, with one bit of slack
    log_abs_hi: float  # upper bound on log2 |value| (LOG_ZERO if value == 0)
    log_abs_lo: float  # lower bound on log2 min|enclosure| (LOG_ZERO if 0 in it)


@dataclass(slots=True)
class OperationConstants:
    c_l: float
    c_r: float  # 0 for unary operations


class BoundsTable:
    """Per-node enclosures plus the log-domain operation constants.

    ``log2_cl`` / ``log2_cr`` are upward-padded logs of the propagation
    constants above.  ``demand_extra_r`` deepens the accuracy requested from
    a division's right child by log2(x_high): the tabulated 1/y_low^2
    ignores the numerator's magnitude, and extra precision never hurts the
    accuracy guarantee.
    """

    def __init__(self, n: int):
        self.bounds: list[NodeBounds | None] = [None] * n
        self.log2_cl: list[float | None] = [None] * n
        self.log2_cr: list[float | None] = [None] * n
        self.demand_extra_r: list[float] = [0.0] * n


class _RefineNeeded(Exception):
    def __init__(self, child: int):
        self.child = child


def _interval_op(node, kind, lo_l, hi_l, lo_r, hi_r, down, up, degree):
    if kind is OpKind.NEG:
        return down.minus(hi_l), up.minus(lo_l)
    if kind is OpKind.ADD:
        return down.add(lo_l, lo_r), up.add(hi_l, hi_r)
    if kind is OpKind.SUB:
        return down.sub(lo_l, hi_r), up.sub(hi_l, lo_r)
    if kind is OpKind.MUL:
        lo = min(down.mul(lo_l, lo_r), down.mul(lo_l, hi_r),
                 down.mul(hi_l, lo_r), down.mul(hi_l, hi_r))
        hi = max(up.mul(lo_l, lo_r), up.mul(lo_l, hi_r),
                 up.mul(hi_l, lo_r), up.mul(hi_l, hi_r))
        return lo, hi
    if kind is OpKind.DIV:
        lo = min(down.div(lo_l, lo_r), down.div(lo_l, hi_r),
                 down.div(hi_l, lo_r), down.div(hi_l, hi_r))
        hi = max(up.div(lo_l, lo_r), up.div(lo_l, hi_r),
                 up.div(hi_l, lo_r), up.div(hi_l, hi_r))
        return lo, hi
    if kind is OpKind.ROOT:
        # rootn is monotone increasing on its domain
        return down.rootn(lo_l, degree), up.rootn(hi_l, degree)
    raise AssertionError(kind)


def _descendants(dag: ExpressionDag, start: int) -> list[int]:
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for c in dag.nodes[v].children():
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return sorted(seen)


def compute_bounds(
    dag: ExpressionDag,
    root_id: int | None = None,
    base_precision: int = 64,
    max_doublings: int = 8,
) -> BoundsTable:
    """Run the enclosure pass over everything reachable from ``root_id``."""
    if root_id is None:
        root_id = dag.root
    nodes = dag.nodes
    table = BoundsTable(len(nodes))
    bounds = table.bounds

    reachable = set(_descendants(dag, root_id))
    order = sorted(reachable)
    pos = {v: i for i, v in enumerate(order)}
    wp = {v: base_precision for v in order}
    doublings: dict[int, int] = {}

    i = 0
    while i < len(order):
        v = order[i]
        node = nodes[v]
        try:
            bounds[v] = _node_bounds(dag, v, node, bounds, wp[v])
            i += 1
        except _RefineNeeded as refine:
            count = doublings.get(v, 0) + 1
            doublings[v] = count
            if count > max_doublings:
                raise SeparationError(
                    f"node {v}: cannot separate child {refine.child} from zero "
                    f"after {max_doublings} precision doublings"
                ) from None
            sub = _descendants(dag, refine.child)
            for u in sub:
                wp[u] = wp[u] * 2
            i = pos[sub[0]]

    for v in order:
        _node_constants(table, nodes[v], v)
    return table


def _node_bounds(dag, v, node, bounds, prec) -> NodeBounds:
    down = _ctx(prec, gmpy2.RoundDown)
    up = _ctx(prec, gmpy2.RoundUp)
    kind = node.kind

    if kind is OpKind.LEAF:
        val = mpfr(node.value, 64)
        return _finish(val, val)

    bl = bounds[node.left]
    lo_l, hi_l = bl.lo, bl.hi
    lo_r = hi_r = None
    if node.right is not None:
        br = bounds[node.right]
        lo_r, hi_r = br.lo, br.hi

    if kind is OpKind.DIV:
        if lo_r == 0 and hi_r == 0:
            raise ZeroDivisionError(f"node {v}: division by exact zero")
        if lo_r <= 0 <= hi_r:
            raise _RefineNeeded(node.right)
    elif kind is OpKind.ROOT:
        if lo_l == 0 and hi_l == 0:
            zero = mpfr(0, 64)
            return _finish(zero, zero)
        if lo_l <= 0 <= hi_l:
            raise _RefineNeeded(node.left)
        if hi_l < 0 and node.degree % 2 == 0:
            raise DomainError(
                f"node {v}: degree-{node.degree} root of a negative value"
            )

    lo, hi = _interval_op(node, kind, lo_l, hi_l, lo_r, hi_r, down, up, node.degree)
    return _finish(lo, hi)


def _finish(lo: mpfr, hi: mpfr) -> NodeBounds:
    exact = lo == hi
    maxabs = max(abs(lo), abs(hi))
    sign_definite = lo > 0 or hi < 0 or (exact and lo == 0)
    if maxabs == 0:
        return NodeBounds(lo, hi, exact, True, -(1 << 30), LOG_ZERO, LOG_ZERO)
    exp_hi = gmpy2.get_exp(maxabs) + 1
    log_abs_hi = _log2_dir(maxabs, gmpy2.RoundUp)
    if lo <= 0 <= hi:
        log_abs_lo = LOG_ZERO
    else:
        minabs = min(abs(lo), abs(hi))
        log_abs_lo = _log2_dir(minabs, gmpy2.RoundDown)
    return NodeBounds(lo, hi, exact, sign_definite, exp_hi, log_abs_hi, log_abs_lo)


def _node_constants(table: BoundsTable, node, v: int) -> None:
    kind = node.kind
    if kind is OpKind.LEAF:
        return
    if kind is OpKind.NEG:
        table.log2_cl[v] = 0.0
        return
    if kind in (OpKind.ADD, OpKind.SUB):
        table.log2_cl[v] = 0.0
        table.log2_cr[v] = 0.0
        return
    if kind is OpKind.MUL:
        table.log2_cl[v] = table.bounds[node.right].log_abs_hi
        table.log2_cr[v] = table.bounds[node.left].log_abs_hi
        return
    if kind is OpKind.DIV:
        ylog = table.bounds[node.right].log_abs_lo
        table.log2_cl[v] = -ylog
        table.log2_cr[v] = math.nextafter(-2.0 * ylog, _INF)
        table.demand_extra_r[v] = max(0.0, table.bounds[node.left].log_abs_hi)
        return
    if kind is OpKind.ROOT:
        xb = table.bounds[node.left]
        if xb.log_abs_hi == LOG_ZERO:  # exact zero radicand
            table.log2_cl[v] = LOG_ZERO
            return
        d = node.degree
        term = ((1.0 - d) / d) * xb.log_abs_lo - math.log2(d)
        table.log2_cl[v] = math.nextafter(math.nextafter(term, _INF), _INF)
        return
    raise AssertionError(kind)


def magnitude_bounds(
    dag: ExpressionDag,
    node_id: int | None = None,
    base_precision: int = 64,
    max_doublings: int = 8,
) -> tuple[float, float]:
    """Guaranteed binary64 enclosure of a node's exact value."""
    if node_id is None:
        node_id = dag.root
    table = compute_bounds(dag, node_id, base_precision, max_doublings)
    b = table.bounds[node_id]
    return _float_down(b.lo), _float_up(b.hi)


def _float_down(x: mpfr) -> float:
    f = float(x)
    return f if f <= x else math.nextafter(f, -_INF)


def _float_up(x: mpfr) -> float:
    f = float(x)
    return f if f >= x else math.nextafter(f, _INF)


def operation_constants(
    dag: ExpressionDag,
    node_id: int,
    table: BoundsTable | None = None,
) -> OperationConstants:
    """The propagation constants (c_l, c_r) of one operator node.

    Computed from the child enclosures at 200 bits and converted outward,
    so exactly representable constants come out exact and everything else
    errs upward.
    """
    node = dag.nodes[node_id]
    if node.kind is OpKind.LEAF:
        raise ValueError("leaves have no operation constants")
    if table is None:
        table = compute_bounds(dag, node_id)
    up = _ctx(200, gmpy2.RoundUp)
    kind = node.kind
    if kind is OpKind.NEG:
        return OperationConstants(1.0, 0.0)
    if kind in (OpKind.ADD, OpKind.SUB):
        return OperationConstants(1.0, 1.0)
    if kind is OpKind.MUL:
        bl, br = table.bounds[node.left], table.bounds[node.right]
        return OperationConstants(
            _float_up(max(abs(br.lo), abs(br.hi))),
            _float_up(max(abs(bl.lo), abs(bl.hi))),
        )
    if kind is OpKind.DIV:
        br = table.bounds[node.right]
        y_low = min(abs(br.lo), abs(br.hi))
        return OperationConstants(
            _float_up(up.div(mpfr(1), y_low)),
            _float_up(up.div(mpfr(1), up.mul(y_low, y_low))),
        )
    if kind is OpKind.ROOT:
        bl = table.bounds[node.left]
        x_low = min(abs(bl.lo), abs(bl.hi))
        if x_low == 0:
            return OperationConstants(0.0, 0.0)  # exact-zero radicand
        d = node.degree
        # x_low**e with e = (1-d)/d < 0: the safe rounding of e depends on
        # which side of 1 the radicand lies
        e_ctx = up if x_low >= 1 else _ctx(200, gmpy2.RoundDown)
        c = up.div(up.pow(x_low, e_ctx.div(mpfr(1 - d), d)), d)
        return OperationConstants(_float_up(c), 0.0)
    raise AssertionError(kind)
