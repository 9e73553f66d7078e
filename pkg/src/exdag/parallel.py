"""Process-based parallel execution of the compute phase.

The demanded compute nodes are carved into regions: walking down from the
root, a region boundary is drawn wherever the remaining precision mass
fits a worker's share and at every heavily shared node (a subexpression
with several parents that is large enough to be worth computing exactly
once).  Each region is the downward closure of its root up to other
region roots; lightly shared pieces are simply recomputed inside every
region that needs them, which costs far less than shipping their values
between processes.

Workers inherit the dag, enclosure table, precision plan and leaf values
through fork, so a dispatch message carries only region root ids plus the
boundary values (other regions' roots) the worker is missing.  Regions
run in dependency-counted rounds, the coordinator taking one lane itself
and always the region containing the dag root; results come back as
per-node error exponents plus exact binary payloads for region roots, so
the outcome is bit-identical to a serial run.

Serial fallbacks (the caller then runs the plain loop): evaluations too
small to amortize a fork, graphs whose recomputed share would exceed the
gate, and graphs whose root region holds most of the mass, list-like
spines in particular, which serialize the evaluation no matter how many
processes attack it.
"""

from __future__ import annotations

import multiprocessing
import traceback

import gmpy2

from .errors import EvaluationError

__all__ = ["compute_parallel"]

_MIN_TOTAL_BITS = 1 << 20  # don't fork for trivially small evaluations
_BIG_SHARED_SIZE = 48  # shared closures at least this big become regions
_MAX_DUPLICATION = 1.5  # recomputed-share gate
_MAX_ROOT_SHARE = 0.25  # Amdahl gate for the coordinator's root region


def _plan_regions(dag, precision, todo_set, threads):
    nodes = dag.nodes
    # heuristic subtree mass, shared parts counted per parent
    est: dict[int, float] = {}
    size: dict[int, int] = {}
    for v in sorted(todo_set):
        e, s = float(precision[v]), 1
        for c in nodes[v].children():
            e += est.get(c, 0.0)
            s += size.get(c, 0)
        est[v], size[v] = e, s
    total = est.get(dag.root, 0.0)
    if total < _MIN_TOTAL_BITS:
        return None
    share = total / (threads * 3)

    roots = {dag.root}
    for v in todo_set:
        if nodes[v].parent_count > 1 and size[v] >= _BIG_SHARED_SIZE:
            roots.add(v)
    stack = [dag.root]
    seen = set()
    while stack:
        v = stack.pop()
        if v in seen:
            continue
        seen.add(v)
        kids = [c for c in nodes[v].children() if c in todo_set]
        if est[v] <= share or not kids:
            roots.add(v)
            continue
        for c in kids:
            if c in roots:
                continue
            if est[c] <= share:
                roots.add(c)
            else:
                stack.append(c)  # stays in the root region, keep cutting below

    members = {r: _region_nodes(dag, r, todo_set, roots) for r in roots}
    region_mass = sum(len(m) for m in members.values())
    if region_mass > _MAX_DUPLICATION * len(todo_set):
        return None
    mass = {
        r: float(sum(precision[v] for v in member_ids))
        for r, member_ids in members.items()
    }
    if mass[dag.root] > _MAX_ROOT_SHARE * total:
        return None
    if len(roots) < 2:
        return None
    return members, mass


def _region_nodes(dag, root, todo_set, roots):
    """Downward closure of ``root`` stopping at other region roots."""
    seen = {root}
    order = [root]
    stack = [root]
    while stack:
        v = stack.pop()
        for c in dag.nodes[v].children():
            if c in todo_set and c not in seen and c not in roots:
                seen.add(c)
                order.append(c)
                stack.append(c)
    order.sort()
    return order


def _compute_many(dag, table, precision, node_ids, values, errors):
    from .evaluate import _compute_node

    nodes = dag.nodes
    out = []
    for v in node_ids:
        z, e = _compute_node(v, nodes[v], table, values, errors, precision[v])
        values[v] = z
        errors[v] = e
        out.append((v, e))
    return out


def _worker_main(conn, dag, table, precision, members, values, errors):
    try:
        while True:
            msg = conn.recv()
            if msg[0] == "stop":
                return
            _, batch, boundary = msg
            for v, blob, err in boundary:
                values[v] = gmpy2.from_binary(blob)
                errors[v] = err
            records = []
            handles = []
            for r in batch:
                records.extend(
                    _compute_many(dag, table, precision, members[r], values, errors)
                )
                handles.append((r, gmpy2.to_binary(values[r]), errors[r]))
            conn.send(("done", records, handles))
    except Exception:  # pragma: no cover - surfaced in the coordinator
        try:
            conn.send(("error", traceback.format_exc(), None))
        except OSError:
            pass


def compute_parallel(dag, table, precision, todo, values, errors, threads):
    """Distribute the compute phase; returns False when the structure has
    no profitable parallelism (caller then runs the serial loop)."""
    todo_set = set(todo)
    plan = _plan_regions(dag, precision, todo_set, threads)
    if plan is None:
        return False
    members, mass = plan

    # region dependencies: children that are other regions' roots
    deps: dict[int, set[int]] = {}
    consumers: dict[int, list[int]] = {}
    for r, member_ids in members.items():
        need = set()
        for v in member_ids:
            for c in dag.nodes[v].children():
                if c in members and c != r:
                    need.add(c)
        need.discard(r)
        deps[r] = need
        for b in need:
            consumers.setdefault(b, []).append(r)

    ctx = multiprocessing.get_context("fork")
    workers = []
    pipes = []
    known: list[set[int]] = []
    try:
        for _ in range(threads - 1):
            parent_conn, child_conn = ctx.Pipe()
            proc = ctx.Process(
                target=_worker_main,
                args=(child_conn, dag, table, precision, members, values, errors),
                daemon=True,
            )
            proc.start()
            child_conn.close()
            pipes.append(parent_conn)
            workers.append(proc)
            known.append(set())

        pending = {r: len(d) for r, d in deps.items()}
        ready = [r for r in members if pending[r] == 0 and r != dag.root]
        root_values: dict[int, bytes] = {}

        def finish(r):
            for consumer in consumers.get(r, ()):
                pending[consumer] -= 1
                if pending[consumer] == 0 and consumer != dag.root:
                    ready.append(consumer)

        # every region is a transitive dependency of the root's region, so
        # rounds run until the root region unblocks, then the coordinator
        # finishes it
        while pending[dag.root] > 0:
            if not ready:
                raise EvaluationError("internal: region schedule stalled")
            batch = sorted(ready, key=lambda r: (-mass[r], r))
            ready.clear()
            lanes: list[list[int]] = [[] for _ in range(threads)]
            loads = [0.0] * threads
            for r in batch:
                w = loads.index(min(loads))
                lanes[w].append(r)
                loads[w] += mass[r]

            active = []
            for w, lane in enumerate(lanes[1:]):
                if not lane:
                    continue
                boundary = []
                for r in lane:
                    for b in deps[r]:
                        if b not in known[w]:
                            boundary.append((b, root_values[b], errors[b]))
                            known[w].add(b)
                pipes[w].send(("compute", lane, boundary))
                active.append(w)

            for r in lanes[0]:
                _compute_many(dag, table, precision, members[r], values, errors)
                root_values[r] = gmpy2.to_binary(values[r])
                finish(r)
            for w in active:
                reply = pipes[w].recv()
                if reply[0] == "error":
                    raise EvaluationError(f"worker failure:\n{reply[1]}")
                _, records, handles = reply
                for v, err in records:
                    errors[v] = err
                for r, blob, err in handles:
                    root_values[r] = blob
                    values[r] = gmpy2.from_binary(blob)
                    errors[r] = err
                    known[w].add(r)
                    finish(r)
        _compute_many(dag, table, precision, members[dag.root], values, errors)
    finally:
        for conn in pipes:
            try:
                conn.send(("stop",))
            except (BrokenPipeError, OSError):
                pass
            conn.close()
        for proc in workers:
            proc.join(timeout=30)
            if proc.is_alive():  # pragma: no cover
                proc.terminate()
    return True
