"""Expression DAGs: shared, immutable-structure arithmetic computation graphs.

Nodes are appended bottom-up (children always exist before parents), so the
store order is a topological order and per-node caches (subtree depth, log
operator count) are filled in O(1) at construction.  After construction the
structure is immutable and safe for concurrent reads; mutation of bookkeeping
fields (approximations, evaluated flags) requires exclusive access, which
callers coordinate.

The text format used by :func:`serialize` / :func:`parse` is line based, one
node per line (``<id> = <op> <child>...``, leaves ``<id> = leaf <value>``)
with a final ``root <id>`` marker.  External reference counts are runtime
bookkeeping and are not part of the format.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .logweight import LOG_ZERO, log_add

__all__ = [
    "OpKind",
    "Node",
    "ExpressionDag",
    "ParseError",
    "maximal_operator_trees",
    "serialize",
    "parse",
    "export_dot",
]


class OpKind(enum.Enum):
    LEAF = "leaf"
    NEG = "neg"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    ROOT = "root"  # d-th root, d >= 2

    @property
    def arity(self) -> int:
        if self is OpKind.LEAF:
            return 0
        if self in (OpKind.NEG, OpKind.ROOT):
            return 1
        return 2


@dataclass(slots=True)
class Node:
    kind: OpKind
    value: float | None = None  # leaf payload
    degree: int | None = None  # root degree
    left: int | None = None
    right: int | None = None
    parent_count: int = 0
    external_ref_count: int = 0
    evaluated: bool = False
    approx: object | None = None  # filled by the evaluator
    subtree_depth: int = 0
    log_op_count: float = LOG_ZERO

    def children(self) -> tuple[int, ...]:
        if self.left is None:
            return ()
        if self.right is None:
            return (self.left,)
        return (self.left, self.right)

    def op_token(self) -> str:
        if self.kind is OpKind.ROOT:
            return f"root{self.degree}"
        return self.kind.value


class ExpressionDag:
    """Append-only store of :class:`Node` with an explicit root."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._root: int | None = None

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def ids(self) -> range:
        return range(len(self.nodes))

    @property
    def root(self) -> int:
        if self._root is not None:
            return self._root
        if not self.nodes:
            raise ValueError("empty dag has no root")
        return len(self.nodes) - 1

    @root.setter
    def root(self, node_id: int) -> None:
        self._check_id(node_id)
        self._root = node_id

    @property
    def depth(self) -> int:
        return self.nodes[self.root].subtree_depth

    @property
    def operator_count(self) -> int:
        return sum(1 for n in self.nodes if n.kind is not OpKind.LEAF)

    def _check_id(self, node_id: int) -> None:
        if not isinstance(node_id, int) or not 0 <= node_id < len(self.nodes):
            raise ValueError(f"unknown node id {node_id!r}")

    def make_leaf(self, value: float) -> int:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"leaf value must be finite, got {value!r}")
        self.nodes.append(Node(OpKind.LEAF, value=value))
        return len(self.nodes) - 1

    def make_op(
        self,
        kind: OpKind,
        left: int,
        right: int | None = None,
        degree: int | None = None,
    ) -> int:
        if kind is OpKind.LEAF:
            raise ValueError("use make_leaf for leaf nodes")
        if kind.arity == 1 and right is not None:
            raise ValueError(f"{kind.value} takes one child")
        if kind.arity == 2 and right is None:
            raise ValueError(f"{kind.value} takes two children")
        if kind is OpKind.ROOT:
            if degree is None or degree < 2:
                raise ValueError("root degree must be an integer >= 2")
        elif degree is not None:
            raise ValueError("degree is only meaningful for root nodes")
        self._check_id(left)
        if right is not None:
            self._check_id(right)

        children = (left,) if right is None else (left, right)
        depth = 1 + max(self.nodes[c].subtree_depth for c in children)
        lw = self.nodes[left].log_op_count
        if right is not None:
            lw = log_add(lw, self.nodes[right].log_op_count)
        lw = log_add(0.0, lw)
        node = Node(
            kind,
            degree=degree,
            left=left,
            right=right,
            subtree_depth=depth,
            log_op_count=lw,
        )
        for c in children:
            self.nodes[c].parent_count += 1
        self.nodes.append(node)
        return len(self.nodes) - 1

    # convenience builders
    def add(self, left: int, right: int) -> int:
        return self.make_op(OpKind.ADD, left, right)

    def sub(self, left: int, right: int) -> int:
        return self.make_op(OpKind.SUB, left, right)

    def mul(self, left: int, right: int) -> int:
        return self.make_op(OpKind.MUL, left, right)

    def div(self, left: int, right: int) -> int:
        return self.make_op(OpKind.DIV, left, right)

    def neg(self, child: int) -> int:
        return self.make_op(OpKind.NEG, child)

    def root_op(self, child: int, degree: int = 2) -> int:
        return self.make_op(OpKind.ROOT, child, degree=degree)

    def add_external_ref(self, node_id: int) -> None:
        """Register a handle held outside the dag (blocks restructuring)."""
        self._check_id(node_id)
        self.nodes[node_id].external_ref_count += 1

    def log_operator_count(self, node_id: int) -> float:
        """Upper bound on log2 of the tree-expansion operator count."""
        self._check_id(node_id)
        return self.nodes[node_id].log_op_count

    def reachable_from_root(self) -> list[bool]:
        """Mark nodes reachable from the root (store order is topological)."""
        seen = [False] * len(self.nodes)
        seen[self.root] = True
        for v in range(self.root, -1, -1):
            if not seen[v]:
                continue
            for c in self.nodes[v].children():
                seen[c] = True
        return seen


def maximal_operator_trees(dag: ExpressionDag) -> list[tuple[int, set[int]]]:
    """All maximal operator trees, as (tree root id, member id set) pairs.

    An operator tree consists of unevaluated non-root-operation operator
    nodes; every member except the tree's own root has exactly one incoming
    reference (one parent, no external handles).  Leaves, root operations,
    evaluated nodes and multiply-referenced nodes block tree growth and end
    up as operands.
    """
    nodes = dag.nodes
    parent_of = [-1] * len(nodes)  # unique parent, valid when parent_count == 1
    for v, node in enumerate(nodes):
        for c in node.children():
            parent_of[c] = v

    def eligible(v: int) -> bool:
        n = nodes[v]
        return n.kind not in (OpKind.LEAF, OpKind.ROOT) and not n.evaluated

    def internal(v: int) -> bool:
        n = nodes[v]
        return (
            eligible(v)
            and n.parent_count == 1
            and n.external_ref_count == 0
            and eligible(parent_of[v])
        )

    trees: list[tuple[int, set[int]]] = []
    for r in dag.ids():
        if not eligible(r) or internal(r):
            continue
        members = {r}
        stack = [r]
        while stack:
            v = stack.pop()
            for c in nodes[v].children():
                if internal(c):  # its unique parent is v
                    members.add(c)
                    stack.append(c)
        trees.append((r, members))
    return trees


class ParseError(ValueError):
    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def serialize(dag: ExpressionDag) -> str:
    """One definition line per node in store (topological) order."""
    lines = []
    for v, node in enumerate(dag.nodes):
        if node.kind is OpKind.LEAF:
            lines.append(f"{v} = leaf {node.value!r}")
        else:
            args = " ".join(str(c) for c in node.children())
            lines.append(f"{v} = {node.op_token()} {args}")
    lines.append(f"root {dag.root}")
    return "\n".join(lines) + "\n"


_BINARY_TOKENS = {"add": OpKind.ADD, "sub": OpKind.SUB, "mul": OpKind.MUL, "div": OpKind.DIV}


def parse(text: str) -> ExpressionDag:
    """Rebuild a dag from its serialized form.

    Definitions must precede use, which rules out cycles; a reference to an
    id with no earlier definition is reported as dangling together with its
    line number.
    """
    dag = ExpressionDag()
    ids: dict[str, int] = {}
    root_seen = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if root_seen:
            raise ParseError("content after the root marker", line_no)
        parts = line.split()
        if parts[0] == "root" and len(parts) == 2 and "=" not in line:
            if parts[1] not in ids:
                raise ParseError(f"root marker names undefined id {parts[1]!r}", line_no)
            dag.root = ids[parts[1]]
            root_seen = True
            continue
        if len(parts) < 3 or parts[1] != "=":
            raise ParseError(f"expected '<id> = <op> ...', got {line!r}", line_no)
        name, op, args = parts[0], parts[2], parts[3:]
        if name in ids:
            raise ParseError(f"duplicate definition of id {name!r}", line_no)

        def resolve(token: str) -> int:
            if token not in ids:
                raise ParseError(f"dangling reference to id {token!r}", line_no)
            return ids[token]

        try:
            if op == "leaf":
                if len(args) != 1:
                    raise ParseError("leaf takes exactly one value", line_no)
                try:
                    value = float(args[0])
                except ValueError:
                    raise ParseError(f"bad leaf value {args[0]!r}", line_no) from None
                ids[name] = dag.make_leaf(value)
            elif op == "neg":
                if len(args) != 1:
                    raise ParseError("neg takes exactly one child", line_no)
                ids[name] = dag.make_op(OpKind.NEG, resolve(args[0]))
            elif op in _BINARY_TOKENS:
                if len(args) != 2:
                    raise ParseError(f"{op} takes exactly two children", line_no)
                ids[name] = dag.make_op(
                    _BINARY_TOKENS[op], resolve(args[0]), resolve(args[1])
                )
            elif op.startswith("root") and op[4:].isdigit():
                if len(args) != 1:
                    raise ParseError(f"{op} takes exactly one child", line_no)
                ids[name] = dag.make_op(
                    OpKind.ROOT, resolve(args[0]), degree=int(op[4:])
                )
            else:
                raise ParseError(f"unknown operation {op!r}", line_no)
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), line_no) from None
    if not dag.nodes:
        raise ParseError("empty input", max(1, text.count("\n") + 1))
    if not root_seen:
        raise ParseError("missing final 'root <id>' marker", text.count("\n") + 1)
    return dag


def export_dot(dag: ExpressionDag, name: str = "expression") -> str:
    """Graph-description text with ``kind@depth`` labels; shared nodes appear
    once with one edge per reference."""
    lines = [f"digraph {name} {{"]
    for v, node in enumerate(dag.nodes):
        label = f"{node.op_token()}@{node.subtree_depth}"
        if node.kind is OpKind.LEAF:
            label = f"leaf {node.value:g}@0"
        lines.append(f'  n{v} [label="{label}"];')
    for v, node in enumerate(dag.nodes):
        for c in node.children():
            lines.append(f"  n{v} -> n{c};")
    lines.append("}")
    return "\n".join(lines) + "\n"
