"""Weighted Brent restructuring of expression dags.

Every maximal operator tree is rebuilt into a division-free quotient
``F/G`` of logarithmic depth while referencing its operands unchanged.
The rebuild works through two mutually recursive operations on a tree with
positive, monotone node weights:

* ``compress(R)`` returns division-free ``F, G`` with ``F/G`` equal to the
  subexpression at ``R``;
* ``raise_(R, X)`` returns division-free ``A, B, C, D`` with the
  subexpression at ``R`` equal to ``(A*X + B) / (C*X + D)`` for the
  designated descendant ``X``.

Both pick their recursion anchor with ``split``, which descends toward the
heaviest child that still meets the target weight (ties prefer the left
child).  Substituting the operation at a split node composes the
surrounding linear-fractional forms; the 2x2 coefficient compositions per
operation are validated by evaluation equivalence in the test suite.
Negations are absorbed into the coefficients, and the constants 0 and 1
produced by the algebra are folded on the fly to keep the rebuilt trees
small.

Nodes with multiple incoming references, root operations, and previously
evaluated nodes block tree growth; they are treated as operands and are
never modified.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

from .dag import ExpressionDag, Node, OpKind, maximal_operator_trees

__all__ = [
    "WeightPolicy",
    "LinearFractional",
    "RestructureStats",
    "OperatorTree",
    "restructure",
]


class WeightPolicy(enum.Enum):
    """How split weights are assigned inside an operator tree.

    UNIT: operands weigh 1, inner nodes count the operands below them
    (plain Brent).  DEPTH: weights are subexpression depths in the
    underlying dag (operands floored at 1), which pulls deep operands
    toward the top of the rebuilt tree.
    """

    UNIT = "unit"
    DEPTH = "depth"


@dataclass(slots=True)
class LinearFractional:
    """Output-dag handles a, b, c, d representing (a*X + b) / (c*X + d)."""

    a: int
    b: int
    c: int
    d: int


@dataclass(slots=True)
class RestructureStats:
    depth_before: int
    depth_after: int
    operators_before: int
    operators_after: int
    trees: int
    id_map: dict[int, int]


class _Builder:
    """Emit helper over the output dag with 0/1 constant folding.

    The linear-fractional pieces assembled here may be referenced by more
    than one emitted node (a quotient's numerator and denominator reuse
    the same compressed halves), so rebuilt trees share subexpressions;
    operands are always referenced, never copied.
    """

    def __init__(self, out: ExpressionDag):
        self.out = out
        self._consts: dict[float, int] = {}

    def const(self, v: float) -> int:
        node_id = self._consts.get(v)
        if node_id is None:
            node_id = self.out.make_leaf(v)
            self._consts[v] = node_id
        return node_id

    def const_value(self, node_id: int) -> float | None:
        node = self.out.nodes[node_id]
        return node.value if node.kind is OpKind.LEAF else None

    @staticmethod
    def _fold(op, cx: float, cy: float) -> float | None:
        # only collapse the small integers the coefficient algebra produces;
        # user operand values are referenced, never precomputed
        if not (cx.is_integer() and cy.is_integer()):
            return None
        if max(abs(cx), abs(cy)) > 2.0**20:
            return None
        exact = op(Fraction(cx), Fraction(cy))
        as_float = float(exact)
        return as_float if Fraction(as_float) == exact else None

    def add(self, x: int, y: int) -> int:
        cx, cy = self.const_value(x), self.const_value(y)
        if cx is not None and cy is not None:
            folded = self._fold(lambda a, b: a + b, cx, cy)
            if folded is not None:
                return self.const(folded)
        if cy == 0.0:
            return x
        if cx == 0.0:
            return y
        return self.out.add(x, y)

    def sub(self, x: int, y: int) -> int:
        cx, cy = self.const_value(x), self.const_value(y)
        if cx is not None and cy is not None:
            folded = self._fold(lambda a, b: a - b, cx, cy)
            if folded is not None:
                return self.const(folded)
        if cy == 0.0:
            return x
        if cx == 0.0:
            return self.neg(y)
        return self.out.sub(x, y)

    def mul(self, x: int, y: int) -> int:
        cx, cy = self.const_value(x), self.const_value(y)
        if cx == 0.0 or cy == 0.0:
            return self.const(0.0)
        if cx is not None and cy is not None:
            folded = self._fold(lambda a, b: a * b, cx, cy)
            if folded is not None:
                return self.const(folded)
        if cx == 1.0:
            return y
        if cy == 1.0:
            return x
        if cx == -1.0:
            return self.neg(y)
        if cy == -1.0:
            return self.neg(x)
        return self.out.mul(x, y)

    def div(self, x: int, y: int) -> int:
        cy = self.const_value(y)
        if cy == 1.0:
            return x
        cx = self.const_value(x)
        if cx is not None and cy not in (None, 0.0):
            folded = self._fold(lambda a, b: a / b, cx, cy)
            if folded is not None:
                return self.const(folded)
        if cy == -1.0:
            return self.neg(x)
        return self.out.div(x, y)

    def neg(self, x: int) -> int:
        cx = self.const_value(x)
        if cx is not None:
            return self.const(-cx)
        node = self.out.nodes[x]
        if node.kind is OpKind.NEG:
            return node.left
        return self.out.neg(x)


class OperatorTree:
    """One maximal operator tree plus the machinery to rebuild it.

    ``id_map`` maps source operand ids to output-dag ids; during a full
    :func:`restructure` the shared rebuild walk provides it, while
    :meth:`standalone` deep-copies the operand subexpressions into a fresh
    output dag so the operations can be exercised in isolation.
    """

    def __init__(
        self,
        dag: ExpressionDag,
        root: int,
        members: set[int],
        policy: WeightPolicy,
        builder: _Builder,
        id_map: dict[int, int],
    ):
        self.dag = dag
        self.root = root
        self.members = members
        self.policy = policy
        self.builder = builder
        self.id_map = id_map
        self.weights = self._weights()
        self._tin: dict[int, int] = {}
        self._tout: dict[int, int] = {}
        self._index_members()

    @classmethod
    def standalone(
        cls,
        dag: ExpressionDag,
        root: int,
        policy: WeightPolicy = WeightPolicy.UNIT,
    ) -> "OperatorTree":
        members = None
        for r, m in maximal_operator_trees(dag):
            if r == root:
                members = m
                break
        if members is None:
            raise ValueError(f"node {root} is not the root of an operator tree")
        out = ExpressionDag()
        builder = _Builder(out)
        id_map: dict[int, int] = {}
        tree = cls(dag, root, members, policy, builder, id_map)
        for op_id in sorted(tree.operands()):
            _import_subtree(dag, op_id, out, id_map)
        return tree

    @property
    def out(self) -> ExpressionDag:
        return self.builder.out

    def is_operand(self, v: int) -> bool:
        return v not in self.members

    def operands(self) -> set[int]:
        ops = set()
        for m in self.members:
            for c in self.dag.nodes[m].children():
                if c not in self.members:
                    ops.add(c)
        return ops

    def _weights(self) -> dict[int, float]:
        wt: dict[int, float] = {}
        if self.policy is WeightPolicy.DEPTH:
            for m in self.members:
                wt[m] = float(self.dag.nodes[m].subtree_depth)
            for o in self.operands():
                wt[o] = float(max(1, self.dag.nodes[o].subtree_depth))
            return wt
        for o in self.operands():
            wt[o] = 1.0
        for m in sorted(self.members):  # children precede parents
            wt[m] = sum(wt[c] for c in self.dag.nodes[m].children())
        return wt

    def _index_members(self) -> None:
        clock = 0
        stack = [(self.root, False)]
        while stack:
            v, done = stack.pop()
            if done:
                self._tout[v] = clock
                continue
            self._tin[v] = clock
            clock += 1
            stack.append((v, True))
            for c in self.dag.nodes[v].children():
                if c in self.members:
                    stack.append((c, False))

    def _member_contains(self, anc: int, x: int) -> bool:
        if anc not in self.members:
            return False
        return self._tin[anc] <= self._tin[x] < self._tout[anc]

    def split(self, x: int, w: float) -> int:
        """Descend from x toward weight w: go left while the left child is a
        non-operand of weight >= w that is at least as heavy as the right,
        else right under the same weight test, else stop."""
        if self.is_operand(x):
            return x
        wt = self.weights
        nodes = self.dag.nodes
        while True:
            node = nodes[x]
            left, right = node.left, node.right
            w_right = wt[right] if right is not None else -math.inf
            if (
                left is not None
                and not self.is_operand(left)
                and wt[left] >= w
                and wt[left] >= w_right
            ):
                x = left
                continue
            if right is not None and not self.is_operand(right) and w_right >= w:
                x = right
                continue
            return x

    def compress(self, r: int) -> tuple[int, int]:
        """Division-free F, G (output-dag ids) with F/G equal to r's value."""
        if self.is_operand(r):
            return self.id_map[r], self.builder.const(1.0)
        x = self.split(r, 0.5 * self.weights[r])
        node = self.dag.nodes[x]
        parts = [self.compress(c) for c in node.children()]
        form = self.raise_(r, x)
        f, g = self._combine(node, parts)
        bld = self.builder
        num = bld.add(bld.mul(form.a, f), bld.mul(form.b, g))
        den = bld.add(bld.mul(form.c, f), bld.mul(form.d, g))
        return num, den

    def _combine(self, node: Node, parts) -> tuple[int, int]:
        """Division-free quotient of one operation over quotient children."""
        bld = self.builder
        if node.kind is OpKind.NEG:
            (f1, g1) = parts[0]
            return bld.neg(f1), g1
        (f1, g1), (f2, g2) = parts
        if node.kind is OpKind.ADD:
            return bld.add(bld.mul(f1, g2), bld.mul(f2, g1)), bld.mul(g1, g2)
        if node.kind is OpKind.SUB:
            return bld.sub(bld.mul(f1, g2), bld.mul(f2, g1)), bld.mul(g1, g2)
        if node.kind is OpKind.MUL:
            return bld.mul(f1, f2), bld.mul(g1, g2)
        if node.kind is OpKind.DIV:
            return bld.mul(f1, g2), bld.mul(g1, f2)
        raise AssertionError(node.kind)

    def raise_(self, r: int, x: int) -> LinearFractional:
        """Division-free A, B, C, D with r's value equal to (A*X+B)/(C*X+D)."""
        bld = self.builder
        if r == x:
            one, zero = bld.const(1.0), bld.const(0.0)
            return LinearFractional(one, zero, zero, one)
        y = self.split(r, 0.5 * (self.weights[r] + self.weights[x]))
        node = self.dag.nodes[y]

        if node.kind is OpKind.NEG:
            inner = self.raise_(node.left, x)
            yform = LinearFractional(
                bld.neg(inner.a), bld.neg(inner.b), inner.c, inner.d
            )
        else:
            if self._member_contains(node.left, x) or node.left == x:
                holder, other, other_is_right = node.left, node.right, True
            else:
                holder, other, other_is_right = node.right, node.left, False
            inner = self.raise_(holder, x)
            f, g = self.compress(other)
            yform = self._substitute(node.kind, inner, f, g, other_is_right)

        outer = self.raise_(r, y)
        a = bld.add(bld.mul(outer.a, yform.a), bld.mul(outer.b, yform.c))
        b = bld.add(bld.mul(outer.a, yform.b), bld.mul(outer.b, yform.d))
        c = bld.add(bld.mul(outer.c, yform.a), bld.mul(outer.d, yform.c))
        d = bld.add(bld.mul(outer.c, yform.b), bld.mul(outer.d, yform.d))
        return LinearFractional(a, b, c, d)

    def _substitute(
        self, kind: OpKind, q: LinearFractional, f: int, g: int, other_is_right: bool
    ) -> LinearFractional:
        """Combine (q.a X + q.b)/(q.c X + q.d) with the quotient f/g under
        one operation, keeping the linear-fractional shape in X."""
        bld = self.builder
        if kind is OpKind.ADD:
            return LinearFractional(
                bld.add(bld.mul(q.a, g), bld.mul(q.c, f)),
                bld.add(bld.mul(q.b, g), bld.mul(q.d, f)),
                bld.mul(q.c, g),
                bld.mul(q.d, g),
            )
        if kind is OpKind.SUB:
            if other_is_right:
                return LinearFractional(
                    bld.sub(bld.mul(q.a, g), bld.mul(q.c, f)),
                    bld.sub(bld.mul(q.b, g), bld.mul(q.d, f)),
                    bld.mul(q.c, g),
                    bld.mul(q.d, g),
                )
            return LinearFractional(
                bld.sub(bld.mul(q.c, f), bld.mul(q.a, g)),
                bld.sub(bld.mul(q.d, f), bld.mul(q.b, g)),
                bld.mul(q.c, g),
                bld.mul(q.d, g),
            )
        if kind is OpKind.MUL:
            return LinearFractional(
                bld.mul(q.a, f), bld.mul(q.b, f), bld.mul(q.c, g), bld.mul(q.d, g)
            )
        if kind is OpKind.DIV:
            if other_is_right:
                return LinearFractional(
                    bld.mul(q.a, g), bld.mul(q.b, g), bld.mul(q.c, f), bld.mul(q.d, f)
                )
            return LinearFractional(
                bld.mul(q.c, f), bld.mul(q.d, f), bld.mul(q.a, g), bld.mul(q.b, g)
            )
        raise AssertionError(kind)


def _import_subtree(src: ExpressionDag, top: int, out: ExpressionDag, memo: dict):
    """Copy a subexpression into another dag, preserving sharing."""
    order = []
    seen = set()
    stack = [top]
    while stack:
        v = stack.pop()
        if v in seen or v in memo:
            continue
        seen.add(v)
        order.append(v)
        stack.extend(src.nodes[v].children())
    for v in sorted(order):
        node = src.nodes[v]
        if node.kind is OpKind.LEAF:
            memo[v] = out.make_leaf(node.value)
        else:
            memo[v] = out.make_op(
                node.kind,
                memo[node.left],
                None if node.right is None else memo[node.right],
                degree=node.degree,
            )
    return memo[top]


def restructure(
    dag: ExpressionDag, policy: WeightPolicy = WeightPolicy.UNIT
) -> tuple[ExpressionDag, RestructureStats]:
    """Rebuild the dag with every maximal operator tree compressed.

    Blocking nodes and operands carry over by reference (one output node
    per source node, sharing preserved); each tree root is replaced by its
    division-free F/G quotient, or by F alone when the denominator folds to
    the constant 1.  Values are preserved exactly.
    """
    trees = {root: members for root, members in maximal_operator_trees(dag)}
    interior: set[int] = set()
    for root, members in trees.items():
        interior |= members - {root}

    out = ExpressionDag()
    builder = _Builder(out)
    id_map: dict[int, int] = {}
    for v in dag.ids():
        if v in interior:
            continue
        node = dag.nodes[v]
        if v in trees:
            tree = OperatorTree(dag, v, trees[v], policy, builder, id_map)
            f, g = tree.compress(v)
            new_id = builder.div(f, g)
        elif node.kind is OpKind.LEAF:
            new_id = out.make_leaf(node.value)
        else:
            new_id = out.make_op(
                node.kind,
                id_map[node.left],
                None if node.right is None else id_map[node.right],
                degree=node.degree,
            )
        id_map[v] = new_id
        target = out.nodes[new_id]
        target.external_ref_count += node.external_ref_count
        if node.evaluated and new_id >= 0 and not target.evaluated:
            target.evaluated = node.evaluated
            target.approx = node.approx
    out.root = id_map[dag.root]

    stats = RestructureStats(
        depth_before=dag.depth,
        depth_after=out.depth,
        operators_before=dag.operator_count,
        operators_after=out.operator_count,
        trees=len(trees),
        id_map=id_map,
    )
    return out, stats
