"""Accuracy-driven evaluation of expression dags.

``evaluate(dag, q)`` returns an approximation of the root value with
absolute error at most ``2**q``.  It runs in two phases over everything
reachable from the root:

* Phase 1 walks parents-first, assigning each node a parameter triple from
  the active policy and accumulating per-node accuracy demands.  A shared
  node ends up with the strictest demand over all of its parents, and
  demands never loosen on the way down.  The budget condition
  ``2**i_v + c_l 2**i_l + c_r 2**i_r <= 1`` is enforced (with upward-rounded
  terms) at every node; where float rounding would break it, the triple is
  shifted toward more precision, which is always safe.
* Phase 2 computes every demanded node exactly once, children first, in
  multiple-precision floating point.  The working precision of a node is
  its accumulated demand plus the magnitude headroom from the enclosure
  pass, plus a two-bit safety margin.  A certified error exponent is
  tracked alongside each value: per-operation rounding error (one ulp of
  the result) combined with the children's tracked errors through the
  propagation constants, the latter widened by the actual child errors so
  the derivative bounds stay valid.

Scalar error-bound bookkeeping uses round-to-nearest floats with a fixed
slack added after each step rather than directed rounding; the slack is
orders of magnitude above the float rounding it papers over.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import gmpy2
from gmpy2 import mpfr

from .balance import (
    ParameterTriple,
    _ebd_from_logs,
    _params_from_logs,
    eq_budget,
)
from .bounds import BoundsTable, compute_bounds
from .dag import ExpressionDag, OpKind
from .errors import EvaluationError, PrecisionCapError
from .logweight import LOG_ZERO, ceil_log2, log2_up

__all__ = [
    "Accuracy",
    "Approximation",
    "CostReport",
    "evaluate",
    "cost_summary",
    "POLICIES",
]

Accuracy = int  # absolute accuracy exponent; evaluation accepts q <= 0

POLICIES = ("default", "ebc", "ebd")

_INF = float("inf")
_EXACT = LOG_ZERO  # error exponent of an exact approximation
_MIN_ERROR_EXPONENT = -(1 << 40)  # clamp for exact values in integer form


@dataclass(slots=True)
class Approximation:
    value: mpfr
    error_exponent: int  # |value - exact| <= 2**error_exponent
    precision_used: int


@dataclass(slots=True)
class CostReport:
    """Per-node precision record plus the aggregate cost measures."""

    requested: dict[int, float] = field(default_factory=dict)
    precision: dict[int, int] = field(default_factory=dict)
    total_cost: int = 0
    critical_path_cost: int = 0
    depth: int = 0
    wall: dict[str, float] = field(default_factory=dict)


def cost_summary(report: CostReport) -> tuple[int, int]:
    return report.total_cost, report.critical_path_cost


_NEAREST_CTX: dict[int, gmpy2.context] = {}


def _nctx(precision: int) -> gmpy2.context:
    ctx = _NEAREST_CTX.get(precision)
    if ctx is None:
        ctx = gmpy2.context(precision=precision)
        _NEAREST_CTX[precision] = ctx
    return ctx


def _eadd(a: float, b: float) -> float:
    """Upper bound on log2(2**a + 2**b) for error exponents (padded)."""
    if a < b:
        a, b = b, a
    if b == LOG_ZERO:
        return a
    d = b - a
    if d < -60.0:
        return a + 4e-16 * abs(a) + 1e-12
    return a + math.log2(1.0 + 2.0**d) + 4e-16 * abs(a) + 1e-12


def _policy_triples(
    dag: ExpressionDag, table: BoundsTable, policy: str
) -> list[ParameterTriple | None]:
    """One budget-checked parameter triple per reachable operator node."""
    nodes = dag.nodes
    triples: list[ParameterTriple | None] = [None] * len(nodes)
    for v in dag.ids():
        node = nodes[v]
        if node.kind is OpKind.LEAF or table.bounds[v] is None:
            continue
        l2cl = table.log2_cl[v]
        l2cr = table.log2_cr[v]
        if policy == "default":
            if node.right is None:
                t = ParameterTriple(-1.0, -1.0 - max(0, _ceil_log(l2cl)), None)
            else:
                t = ParameterTriple(
                    -1.0,
                    -2.0 - max(0, _ceil_log(l2cl)),
                    -2.0 - max(0, _ceil_log(l2cr)),
                )
        elif policy == "ebc":
            lw_l = nodes[node.left].log_op_count
            lw_r = None if node.right is None else nodes[node.right].log_op_count
            t = _params_from_logs(lw_l, lw_r, l2cl, l2cr)
        elif policy == "ebd":
            d_l = nodes[node.left].subtree_depth
            d_r = None if node.right is None else nodes[node.right].subtree_depth
            t = _ebd_from_logs(d_l, d_r, l2cl, l2cr)
        else:
            raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
        triples[v] = _clamp_budget(t, l2cl, l2cr)
    return triples


def _ceil_log(log2_c: float) -> int:
    if log2_c == LOG_ZERO:
        return -(1 << 30)
    return math.ceil(log2_c)


def _clamp_budget(t: ParameterTriple, l2cl, l2cr) -> ParameterTriple:
    for _ in range(4):
        s = eq_budget(t, l2cl, l2cr)
        if s <= 1.0:
            return t
        shift = log2_up(s) + 1e-12
        t = ParameterTriple(
            t.i_v - shift,
            t.i_l if t.i_l in (None, LOG_ZERO, _INF) else t.i_l - shift,
            t.i_r if t.i_r in (None, LOG_ZERO, _INF) else t.i_r - shift,
        )
    raise AssertionError("budget clamp failed to converge")


def _propagate_demands(dag, table, triples, q):
    """Parents-first accumulation of per-node accuracy demands.

    A demand may be looser than the parent's when the operation constant
    is small; that is what makes weighted balancing effective.  Children
    that are exact (leaves or zero-width enclosures) absorb no demand.
    Divisor and radicand demands are capped one bit below the child's
    magnitude floor so the derivative bounds stay applicable, and each
    factor of a multiplication is capped one bit below its own magnitude
    so the quadratic error cross-term stays inside the linear budget.
    """
    nodes = dag.nodes
    demand: list[float | None] = [None] * len(nodes)
    demand[dag.root] = float(q)
    for u in range(dag.root, -1, -1):
        qu = demand[u]
        if qu is None:
            continue
        node = nodes[u]
        b = table.bounds[u]
        if node.kind is OpKind.LEAF or b.exact:
            continue
        t = triples[u]

        def push(child, inc, cap=None, extra=0.0):
            if inc is None or inc == _INF:
                return
            cb = table.bounds[child]
            if nodes[child].kind is OpKind.LEAF or cb.exact:
                return
            d = qu + inc - extra
            if cap is not None:
                d = min(d, cap)
            d -= 1.0
            prev = demand[child]
            if prev is None or d < prev:
                demand[child] = d

        kind = node.kind
        if kind is OpKind.DIV:
            ylog = table.bounds[node.right].log_abs_lo
            push(node.left, t.i_l)
            push(node.right, t.i_r, cap=ylog, extra=table.demand_extra_r[u])
        elif kind is OpKind.ROOT:
            push(node.left, t.i_l, cap=table.bounds[node.left].log_abs_lo)
        elif kind is OpKind.MUL:
            push(node.left, t.i_l, cap=table.bounds[node.left].log_abs_hi)
            push(node.right, t.i_r, cap=table.bounds[node.right].log_abs_hi)
        else:
            push(node.left, t.i_l)
            if node.right is not None:
                push(node.right, t.i_r)
    return demand


def _precisions(dag, table, triples, demand, precision_cap):
    precision: dict[int, int] = {}
    for v in dag.ids():
        if demand[v] is None:
            continue
        node = dag.nodes[v]
        b = table.bounds[v]
        if node.kind is OpKind.LEAF:
            continue
        if b.exact:
            precision[v] = b.lo.precision
            continue
        p = math.ceil(b.exp_hi - (demand[v] + triples[v].i_v)) + 2
        p = max(p, 2)
        if p > precision_cap:
            raise PrecisionCapError(
                f"node {v} needs {p} bits, above the cap of {precision_cap}"
            )
        precision[v] = p
    return precision


def _compute_node(v, node, table, values, errors, p):
    """One multiple-precision operation plus certified error bookkeeping."""
    ctx = _nctx(p)
    kind = node.kind
    l = node.left
    r = node.right
    if kind is OpKind.ADD:
        z = ctx.add(values[l], values[r])
        prop = _eadd(errors[l], errors[r])
    elif kind is OpKind.SUB:
        z = ctx.sub(values[l], values[r])
        prop = _eadd(errors[l], errors[r])
    elif kind is OpKind.MUL:
        z = ctx.mul(values[l], values[r])
        bl, br = table.bounds[l], table.bounds[r]
        prop = _eadd(
            _eadd(br.log_abs_hi, errors[r]) + errors[l],
            _eadd(bl.log_abs_hi, errors[l]) + errors[r],
        )
    elif kind is OpKind.DIV:
        z = ctx.div(values[l], values[r])
        bl, br = table.bounds[l], table.bounds[r]
        yw = _widen_floor(br.log_abs_lo, errors[r], v)
        prop = _eadd(
            errors[l] - yw,
            bl.log_abs_hi + errors[r] - br.log_abs_lo - yw,
        )
    elif kind is OpKind.NEG:
        z = ctx.minus(values[l])
        prop = errors[l]
    elif kind is OpKind.ROOT:
        z = ctx.rootn(values[l], node.degree)
        bl = table.bounds[l]
        d = node.degree
        xw = _widen_floor(bl.log_abs_lo, errors[l], v)
        prop = -math.log2(d) + ((1.0 - d) / d) * xw + errors[l] + 1e-12
    else:  # pragma: no cover
        raise AssertionError(kind)
    if gmpy2.is_zero(z):
        rnd = LOG_ZERO
    else:
        rnd = float(gmpy2.get_exp(z) - p)
    return z, _eadd(prop, rnd)


def _widen_floor(lo_log: float, err: float, v: int) -> float:
    """Magnitude floor of a divisor/radicand widened by its approximation
    error; the demand caps guarantee err <= lo_log - 1."""
    if err == LOG_ZERO:
        return lo_log
    gap = err - lo_log
    if gap > -0.5:
        raise EvaluationError(
            f"internal: node {v} child error 2**{err:.3g} reaches the "
            f"magnitude floor 2**{lo_log:.3g}"
        )
    return lo_log + math.log2(1.0 - 2.0**gap) - 1e-12


def evaluate(
    dag: ExpressionDag,
    q: Accuracy,
    policy: str = "default",
    threads: int = 1,
    precision_cap: int = 1 << 24,
    base_precision: int = 64,
    max_doublings: int = 8,
    table: BoundsTable | None = None,
) -> tuple[Approximation, CostReport]:
    """Approximate the root value to absolute accuracy ``2**q``.

    The result is deterministic for a given dag, q and policy, independent
    of ``threads``.  ``threads=1`` runs the plain serial loop; larger
    values distribute phase 2 over worker processes.
    """
    if q > 0:
        raise ValueError("accuracy exponent q must be <= 0")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    report = CostReport(depth=dag.depth)
    t0 = time.perf_counter()
    if table is None:
        table = compute_bounds(dag, None, base_precision, max_doublings)
    t1 = time.perf_counter()
    report.wall["bounds"] = t1 - t0

    triples = _policy_triples(dag, table, policy)
    demand = _propagate_demands(dag, table, triples, q)
    precision = _precisions(dag, table, triples, demand, precision_cap)
    t2 = time.perf_counter()
    report.wall["plan"] = t2 - t1

    n = len(dag.nodes)
    values: list = [None] * n
    errors: list[float] = [0.0] * n
    todo: list[int] = []
    needed = [False] * n
    for v in range(n):
        if demand[v] is None:
            continue
        needed[v] = True
        node = dag.nodes[v]
        if node.kind is not OpKind.LEAF and not table.bounds[v].exact:
            todo.append(v)
            for c in node.children():
                needed[c] = True
    for v in range(n):
        if not needed[v]:
            continue
        node = dag.nodes[v]
        if node.kind is OpKind.LEAF:
            values[v] = mpfr(node.value, 53)
            errors[v] = _EXACT
        elif table.bounds[v].exact:
            values[v] = table.bounds[v].lo
            errors[v] = _EXACT

    distributed = False
    if threads > 1 and todo:
        from .parallel import compute_parallel

        distributed = compute_parallel(
            dag, table, precision, todo, values, errors, threads
        )
    if not distributed:
        nodes = dag.nodes
        for v in todo:
            values[v], errors[v] = _compute_node(
                v, nodes[v], table, values, errors, precision[v]
            )
    for v in todo:
        if errors[v] > demand[v] + 1e-9:
            raise EvaluationError(
                f"internal: node {v} tracked error 2**{errors[v]:.6g} exceeds "
                f"its demand 2**{demand[v]:.6g}"
            )
    t3 = time.perf_counter()
    report.wall["compute"] = t3 - t2

    for v in range(n):
        if not needed[v]:
            continue
        node = dag.nodes[v]
        node.evaluated = True
        if node.kind is OpKind.LEAF or demand[v] is None:
            continue
        if values[v] is not None:
            # interior values of worker regions stay in their processes
            node.approx = Approximation(values[v], _err_int(errors[v]), precision[v])
        report.requested[v] = demand[v]
        report.precision[v] = precision[v]
    report.total_cost = sum(report.precision.values())
    report.critical_path_cost = _critical_path(dag, report.precision, demand)

    root = dag.root
    if dag.nodes[root].kind is OpKind.LEAF:
        approx = Approximation(values[root], _err_int(_EXACT), 53)
    else:
        approx = Approximation(values[root], _err_int(errors[root]), precision[root])
    return approx, report


def _err_int(e: float) -> int:
    if e == LOG_ZERO:
        return _MIN_ERROR_EXPONENT
    return max(math.ceil(e), _MIN_ERROR_EXPONENT)


def _critical_path(dag, precision, demand) -> int:
    """Longest root-to-leaf path weighted by per-node precision."""
    best = 0
    cp: dict[int, int] = {}
    for v in range(len(dag.nodes)):
        if demand[v] is None:
            continue
        w = precision.get(v, 0)
        down = 0
        for c in dag.nodes[v].children():
            down = max(down, cp.get(c, 0))
        cp[v] = w + down
        best = max(best, cp[v])
    return best
