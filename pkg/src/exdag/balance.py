"""Internal error-bound balancing.

Evaluating a node to accuracy ``2**q`` splits the error budget between the
operation itself and its children, subject to

    2**i_v + c_l * 2**i_l + c_r * 2**i_r <= 1

The symmetric default split wastes precision on unbalanced graphs; weighting
each edge by the evaluation cost its subexpression stands for and choosing

    i_l = log2(w_l) - log2(w_all) - log2(c_l)        (w_all = 1 + w_l + w_r)
    i_r = log2(w_r) - log2(w_all) - log2(c_r)
    i_v = -log2(w_all)

minimises the induced total cost.  With the path-cost weights computed by
:func:`optimal_path_weights` this is optimal for arbitrary dags and the total
cost has the closed form returned by :func:`predicted_cost`.  Production
policies approximate the weights: by tree-expansion operator counts kept in
log form (duplicates included), or by subexpression depth.

A separate, parallel-oriented trade-off: choosing the split to minimise the
cost of the most expensive root-to-leaf path rather than the total (see
:func:`solve_cp_split` and :func:`balanced_cp_cost`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .dag import ExpressionDag, OpKind
from .errors import DegenerateSplitError
from .logweight import LOG_ZERO, log2_up, log_add

__all__ = [
    "ParameterTriple",
    "BalancePolicy",
    "OracleScopeError",
    "full_count_weights",
    "parameters_from_weights",
    "exact_parameters",
    "depth_heuristic_parameters",
    "eq_budget",
    "restore_budget_equality",
    "OptimalWeights",
    "optimal_path_weights",
    "predicted_cost",
    "enumerate_path_demands",
    "total_model_cost",
    "balanced_cp_cost",
    "solve_cp_split",
]

_INF = float("inf")

# policy names accepted by the evaluator
BalancePolicy = ("default", "ebc", "ebd")


@dataclass(slots=True)
class ParameterTriple:
    """Accuracy increases at a node: the operation's own share ``i_v`` and
    the per-child shares.  ``-inf`` marks a child needing no approximation
    (exact leaves); ``None`` marks a missing child."""

    i_v: float
    i_l: float | None = None
    i_r: float | None = None


class OracleScopeError(ValueError):
    """Path enumeration grew beyond what the oracle is meant for."""


def full_count_weights(dag: ExpressionDag) -> list[float]:
    """Log-domain weight of any edge into each node: the tree-expansion
    operator count of the subexpression, duplicates included."""
    return [n.log_op_count for n in dag.nodes]


def _term(log2_c: float, i: float | None) -> float:
    if i is None or i == LOG_ZERO or log2_c == LOG_ZERO:
        return 0.0
    return 2.0 ** (log2_c + i)


def eq_budget(triple: ParameterTriple, log2_cl: float | None, log2_cr: float | None) -> float:
    """The budget sum 2**i_v + c_l 2**i_l + c_r 2**i_r (must stay <= 1)."""
    s = 2.0 ** triple.i_v if triple.i_v != LOG_ZERO else 0.0
    if log2_cl is not None:
        s += _term(log2_cl, triple.i_l)
    if log2_cr is not None:
        s += _term(log2_cr, triple.i_r)
    return s


def parameters_from_weights(
    lw_l: float,
    lw_r: float | None,
    c_l: float,
    c_r: float | None,
) -> ParameterTriple:
    """Cost-optimal split for log-domain child weights (upper bounds).

    Weight-0 children (``-inf``, i.e. exact leaves) receive no budget share;
    their share flows to the operator and the weighted child.  Overestimated
    weights only tighten children, they never break the budget condition.
    """
    return _params_from_logs(
        lw_l,
        lw_r,
        log2_up(c_l),
        None if c_r is None else log2_up(c_r),
    )


def _params_from_logs(
    lw_l: float,
    lw_r: float | None,
    log2_cl: float,
    log2_cr: float | None,
) -> ParameterTriple:
    acc = lw_l if lw_r is None else log_add(lw_l, lw_r)
    lw_all = log_add(0.0, acc)
    i_v = -lw_all
    i_l = _edge_increase(lw_l, lw_all, log2_cl)
    i_r = None if lw_r is None else _edge_increase(lw_r, lw_all, log2_cr)
    return ParameterTriple(i_v, i_l, i_r)


def _edge_increase(lw: float, lw_all: float, log2_c: float) -> float:
    if lw == LOG_ZERO:
        return LOG_ZERO
    if log2_c == LOG_ZERO:  # zero constant kills the child's error entirely
        return _INF
    return lw - lw_all - log2_c


def exact_parameters(
    w_l: float, w_r: float | None, c_l: float, c_r: float | None
) -> ParameterTriple:
    """Same split with linear-domain weights and plain float logs.

    Used by the small-instance oracle, where identities are checked to
    tolerances far below the directed slack of the log-domain route.
    """
    w_all = 1.0 + w_l + (w_r or 0.0)
    lg_all = math.log2(w_all)
    i_l = LOG_ZERO if w_l == 0 else math.log2(w_l) - lg_all - math.log2(c_l)
    if w_r is None:
        i_r = None
    elif w_r == 0:
        i_r = LOG_ZERO
    else:
        i_r = math.log2(w_r) - lg_all - math.log2(c_r)
    return ParameterTriple(-lg_all, i_l, i_r)


def depth_heuristic_parameters(
    d_l: int, d_r: int | None, c_l: float, c_r: float | None
) -> ParameterTriple:
    """Depth-driven split aimed at short critical paths.

    The raw three-case assignment satisfies the budget with unit constants;
    the child increases are then shifted by -log2(c) so it also holds with
    the real operation constants.
    """
    return _ebd_from_logs(
        d_l,
        d_r,
        log2_up(c_l),
        None if c_r is None else log2_up(c_r),
    )


def _ebd_from_logs(
    d_l: int, d_r: int | None, log2_cl: float, log2_cr: float | None
) -> ParameterTriple:
    def lg(x: int) -> float:
        return math.log2(x) if x > 0 else LOG_ZERO

    if d_r is None:  # unary: the whole non-operator share goes to one child
        i_v = -lg(d_l + 1)
        return ParameterTriple(i_v, _shift(lg(d_l) - lg(d_l + 1), log2_cl), None)
    if d_l > d_r:
        i_v = -lg(d_l + 1) - 1.0
        raw_l = lg(d_l) - lg(d_l + 1)
        raw_r = i_v
    elif d_l < d_r:
        i_v = -lg(d_r + 1) - 1.0
        raw_l = i_v
        raw_r = lg(d_r) - lg(d_r + 1)
    else:
        i_v = -lg(d_l + 1)
        raw_l = raw_r = lg(d_l) - lg(d_l + 1) - 1.0
    return ParameterTriple(i_v, _shift(raw_l, log2_cl), _shift(raw_r, log2_cr))


def _shift(raw: float, log2_c: float | None) -> float:
    if raw == LOG_ZERO:
        return LOG_ZERO
    if log2_c == LOG_ZERO:
        return _INF
    return raw - log2_c


def restore_budget_equality(
    i_l: float, i_r: float | None, c_l: float, c_r: float | None
) -> float | None:
    """The i_v that makes the budget an equality, or None if infeasible."""
    used = _term(math.log2(c_l) if c_l > 0 else LOG_ZERO, i_l)
    if i_r is not None and c_r:
        used += _term(math.log2(c_r), i_r)
    rest = 1.0 - used
    if rest <= 0.0:
        return None
    return math.log2(rest)


@dataclass(slots=True)
class OptimalWeights:
    """Edge and node weights from the path-cost distribution."""

    edge_l: list  # weight of the edge into the left child, per node id
    edge_r: list
    node: list  # 1 + w_l + w_r for operator nodes, 0 otherwise
    pcost: list  # sum over root paths of 2**fcost
    path_count: int


def _edge_constants(dag, table):
    """Linear-domain edge constants (c_l, c_r) per node from a bounds table."""
    cl, cr = [], []
    for v in dag.ids():
        l2l, l2r = table.log2_cl[v], table.log2_cr[v]
        cl.append(None if l2l is None else 2.0 ** l2l)
        cr.append(None if l2r is None else 2.0 ** l2r)
    return cl, cr


def optimal_path_weights(
    dag: ExpressionDag,
    table=None,
    max_paths: int = 10**6,
) -> OptimalWeights:
    """Weights that make the budget split cost-optimal for the whole dag.

    The weight of an edge into ``v`` is the fraction of v's path cost
    flowing through that edge times v's node weight; on trees this reduces
    to subtree operator counts.  Enumeration-scale dags only.
    """
    if table is None:
        from .bounds import compute_bounds

        table = compute_bounds(dag)
    cl, cr = _edge_constants(dag, table)
    nodes = dag.nodes
    n = len(nodes)
    reachable = dag.reachable_from_root()

    pcost = [0.0] * n
    npaths = [0] * n
    pcost[dag.root] = 1.0
    npaths[dag.root] = 1
    total_paths = 0
    for u in range(dag.root, -1, -1):
        if not reachable[u] or pcost[u] == 0.0:
            continue
        total_paths += npaths[u]
        if total_paths > max_paths:
            raise OracleScopeError(f"more than {max_paths} root paths")
        node = nodes[u]
        if node.left is not None:
            pcost[node.left] += pcost[u] * cl[u]
            npaths[node.left] += npaths[u]
        if node.right is not None:
            pcost[node.right] += pcost[u] * cr[u]
            npaths[node.right] += npaths[u]
    if any(math.isinf(p) or math.isnan(p) for p in pcost):
        raise OracleScopeError("path cost overflow; constants too extreme")

    wgt = [0.0] * n
    edge_l: list = [None] * n
    edge_r: list = [None] * n
    for v in range(n):
        node = nodes[v]
        if not reachable[v] or node.kind is OpKind.LEAF:
            continue
        w = 1.0
        if node.left is not None:
            c = nodes[node.left]
            if c.kind is OpKind.LEAF:
                edge_l[v] = 0.0
            else:
                edge_l[v] = pcost[v] * cl[v] / pcost[node.left] * wgt[node.left]
            w += edge_l[v]
        if node.right is not None:
            c = nodes[node.right]
            if c.kind is OpKind.LEAF:
                edge_r[v] = 0.0
            else:
                edge_r[v] = pcost[v] * cr[v] / pcost[node.right] * wgt[node.right]
            w += edge_r[v]
        wgt[v] = w
    return OptimalWeights(edge_l, edge_r, wgt, pcost, total_paths)


def oracle_triples(dag: ExpressionDag, table=None, max_paths: int = 10**6):
    """Optimal-weight parameter triples for every reachable operator node."""
    if table is None:
        from .bounds import compute_bounds

        table = compute_bounds(dag)
    ow = optimal_path_weights(dag, table, max_paths)
    cl, cr = _edge_constants(dag, table)
    triples: list = [None] * len(dag.nodes)
    for v in dag.ids():
        node = dag.nodes[v]
        if node.kind is OpKind.LEAF or ow.node[v] == 0.0:
            continue
        triples[v] = exact_parameters(ow.edge_l[v], ow.edge_r[v], cl[v], cr[v])
    return triples, ow


def predicted_cost(dag: ExpressionDag, q: float, table=None, max_paths: int = 10**6) -> float:
    """Closed-form total cost of an optimally balanced evaluation:
    ``n log2 n + sum_v log2(pcost(v)) - n q`` over operator nodes."""
    if table is None:
        from .bounds import compute_bounds

        table = compute_bounds(dag)
    ow = optimal_path_weights(dag, table, max_paths)
    reachable = dag.reachable_from_root()
    ops = [
        v
        for v in dag.ids()
        if reachable[v] and dag.nodes[v].kind is not OpKind.LEAF
    ]
    n = len(ops)
    if n == 0:
        return 0.0
    return n * math.log2(n) + math.fsum(math.log2(ow.pcost[v]) for v in ops) - n * q


def enumerate_path_demands(
    dag: ExpressionDag, triples, max_paths: int = 10**6
) -> list[list[float]]:
    """Per-path requested precision at every operator node, by explicit
    root-to-node path enumeration: -(sum of edge increases) - i_v."""
    demands: list[list[float]] = [[] for _ in dag.ids()]
    count = 0

    stack = [(dag.root, 0.0)]
    while stack:
        v, acc = stack.pop()
        node = dag.nodes[v]
        if node.kind is OpKind.LEAF:
            continue
        count += 1
        if count > max_paths:
            raise OracleScopeError(f"more than {max_paths} root paths")
        t = triples[v]
        demands[v].append(-acc - t.i_v)
        if node.left is not None and t.i_l is not None and dag.nodes[node.left].kind is not OpKind.LEAF:
            stack.append((node.left, acc + t.i_l))
        if node.right is not None and t.i_r is not None and dag.nodes[node.right].kind is not OpKind.LEAF:
            stack.append((node.right, acc + t.i_r))
    return demands


def total_model_cost(dag: ExpressionDag, triples, q: float) -> float:
    """Model cost of an arbitrary parameter assignment.

    Each operator node pays the precision demanded by its strictest root
    path: -(q + min over paths of accumulated increases + i_v).
    """
    n = len(dag.nodes)
    reachable = dag.reachable_from_root()
    m = [_INF] * n
    m[dag.root] = 0.0
    for u in range(dag.root, -1, -1):
        if not reachable[u] or m[u] == _INF:
            continue
        node = dag.nodes[u]
        t = triples[u]
        if t is None:
            continue
        if node.left is not None and t.i_l is not None:
            m[node.left] = min(m[node.left], m[u] + t.i_l)
        if node.right is not None and t.i_r is not None:
            m[node.right] = min(m[node.right], m[u] + t.i_r)
    total = 0.0
    for v in range(n):
        if not reachable[v] or dag.nodes[v].kind is OpKind.LEAF:
            continue
        if m[v] == _INF or triples[v] is None:
            continue
        total += -(q + m[v] + triples[v].i_v)
    return total


def balanced_cp_cost(k: int, constcost: float) -> float:
    """Critical-path cost of a depth-k balanced tree under the
    depth-weighted split: k log2 k + k(k-1)/2 + constcost."""
    if k < 1:
        raise ValueError("depth must be >= 1")
    return k * math.log2(k) + k * (k - 1) / 2.0 + constcost


def solve_cp_split(
    d_l: int,
    d_r: int,
    cost_l: float,
    cost_r: float,
    c_l: float = 1.0,
    c_r: float = 1.0,
) -> ParameterTriple:
    """Stationary split minimising the critical-path cost at a join.

    With z = c_l 2**i_l, the optimality condition is

        ((d_l+1)/d_l) z + c ((d_r+1)/d_r) z**(d_l/d_r) = 1

    which has a unique root in (0, d_l/(d_l+1)); there is no closed form,
    so the root is found by bisection.  Child constants fold into the
    per-side costs.  For equal depths and costs this reproduces the
    balanced-tree assignment (z = d/(2(d+1))).
    """
    if d_l < 1 or d_r < 1:
        raise ValueError("subexpression depths must be >= 1")
    # fold the operation constants into the path costs
    cost_l = cost_l + d_l * math.log2(c_l)
    cost_r = cost_r + d_r * math.log2(c_r)
    d_f = d_l / d_r
    c_f = (cost_l - cost_r) / d_r
    try:
        c = 2.0**c_f
    except OverflowError:
        c = _INF
    if not math.isfinite(c) or c == 0.0:
        raise DegenerateSplitError(f"path cost gap 2**{c_f} is not representable")

    a_l = (d_l + 1.0) / d_l
    a_r = (d_r + 1.0) / d_r

    def g(z: float) -> float:
        return a_l * z + c * a_r * z**d_f - 1.0

    lo, hi = 0.0, d_l / (d_l + 1.0)
    if not math.isfinite(g(hi)):
        raise DegenerateSplitError("split equation overflows on the feasible range")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    z = 0.5 * (lo + hi)
    rest = 1.0 - z - c * z**d_f
    if z <= 0.0 or rest <= 0.0:
        raise DegenerateSplitError("no feasible root for the split equation")
    i_l = math.log2(z) - math.log2(c_l)
    i_r = d_f * math.log2(z) + c_f - math.log2(c_r)
    return ParameterTriple(math.log2(rest), i_l, i_r)
