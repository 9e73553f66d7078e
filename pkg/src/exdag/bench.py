"""Deterministic dag generators and the strategy experiment runner.

Four graph families stress different aspects of the balancing strategies:
``list`` (a left-deep fold of random rational operands), ``blocking`` (the
same with a fraction of chain operators pinned by external references),
``balanced`` (a perfect operator tree), ``self_add`` (repeated doubling of
one operand, the extreme case of shared subexpressions) and ``shared``
(randomized bottom-up construction reusing subtrees).  Operand values are
quotients d1/d2 of doubles distributed exponentially around 1, built as
explicit division nodes and pinned with an external reference so
restructuring cannot dissolve them.

A run pairs a generated dag with one strategy: ``def`` (plain evaluation),
``bru``/``brd`` (restructure with unit/depth weights, then evaluate),
``ebc``/``ebd`` (evaluate under the counting/depth balancing policy) and
``cmb`` (depth-weighted restructure plus the counting policy).  Repeats
regenerate the dag from the same seed so every repeat starts unevaluated.
"""

from __future__ import annotations

import csv
import math
import random
import time
from dataclasses import dataclass, fields

from .dag import ExpressionDag, OpKind
from .errors import EvaluationError
from .evaluate import evaluate
from .restructure import WeightPolicy, restructure

__all__ = [
    "SHAPES",
    "STRATEGIES",
    "GeneratorSpec",
    "RunConfig",
    "ResultRow",
    "generate",
    "run",
    "write_csv",
]

SHAPES = ("list", "blocking", "balanced", "self_add", "shared")

# strategy -> (restructure weight policy or None, evaluation policy)
STRATEGIES = {
    "def": (None, "default"),
    "bru": (WeightPolicy.UNIT, "default"),
    "brd": (WeightPolicy.DEPTH, "default"),
    "ebc": (None, "ebc"),
    "ebd": (None, "ebd"),
    "cmb": (WeightPolicy.DEPTH, "ebc"),
}

_CHAIN_OPS = (OpKind.ADD, OpKind.SUB, OpKind.MUL, OpKind.DIV)
_GEOM_P = 1.0 / 9.0  # two-sided geometric exponent, E|t| = 8


@dataclass(frozen=True)
class GeneratorSpec:
    shape: str
    n: int
    seed: int
    blocking_fraction: float = 0.30
    share_fraction: float = 0.05

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    spec: GeneratorSpec
    strategy: str
    threads: int = 1
    q: int = -2000
    repeats: int = 5
    csv_path: str | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"unknown strategy {self.strategy!r}; expected one of {tuple(STRATEGIES)}"
            )
        if self.threads < 1 or self.repeats < 1:
            raise ValueError("threads and repeats must be >= 1")
        if self.q > 0:
            raise ValueError("q must be <= 0")


@dataclass
class ResultRow:
    shape: str
    n: int
    seed: int
    strategy: str
    threads: int
    q: int
    repeat_index: int
    wall_ms: float
    restructure_ms: float
    total_cost_bits: int
    critical_path_bits: int
    depth_before: int
    depth_after: int
    error: str = ""


def _double_around_one(rng: random.Random) -> float:
    """m * 2**t with m uniform in [1, 2) and |t| geometric with mean 8."""
    m = 1.0 + rng.random()
    u = rng.random()
    g = int(math.log(1.0 - u) / math.log(1.0 - _GEOM_P)) if u > 0.0 else 0
    t = g if rng.random() < 0.5 else -g
    return m * 2.0**t


def _operand(dag: ExpressionDag, rng: random.Random) -> int:
    """A pinned rational operand d1/d2 (resampled if the quotient is exact,
    so operands always carry real bigfloat work)."""
    d1 = _double_around_one(rng)
    for _ in range(64):
        d2 = _double_around_one(rng)
        if d2 != 0.0 and not _quotient_exact(d1, d2):
            break
    op = dag.div(dag.make_leaf(d1), dag.make_leaf(d2))
    dag.add_external_ref(op)
    return op


def _quotient_exact(d1: float, d2: float) -> bool:
    q = d1 / d2
    return q * d2 == d1 and (q / 2.0) * 2.0 == q and math.isfinite(q)


def generate(spec: GeneratorSpec) -> ExpressionDag:
    """Build the dag described by ``spec`` (same spec, same graph)."""
    rng = random.Random(spec.seed)
    dag = ExpressionDag()
    shape, n = spec.shape, spec.n

    if shape in ("list", "blocking"):
        res = _operand(dag, rng)
        for _ in range(n):
            kind = rng.choice(_CHAIN_OPS)
            res = dag.make_op(kind, res, _operand(dag, rng))
            if shape == "blocking" and rng.random() < spec.blocking_fraction:
                dag.add_external_ref(res)
        dag.root = res
        return dag

    if shape == "balanced":
        k = max(1, round(math.log2(n + 1)))
        level = [_operand(dag, rng) for _ in range(2**k)]
        while len(level) > 1:
            level = [
                dag.make_op(rng.choice(_CHAIN_OPS), level[i], level[i + 1])
                for i in range(0, len(level), 2)
            ]
        dag.root = level[0]
        return dag

    if shape == "self_add":
        x = _operand(dag, rng)
        for _ in range(n):
            x = dag.add(x, x)
        dag.root = x
        return dag

    if shape == "shared":
        start = max(2, round(n * (1.0 - spec.share_fraction)) + 1)
        pool = [_operand(dag, rng) for _ in range(start)]
        everything = list(pool)
        ops = 0
        while len(pool) > 1 or ops < n:
            left = pool.pop(rng.randrange(len(pool)))
            if len(pool) > 0 and not (rng.random() < spec.share_fraction):
                right = pool.pop(rng.randrange(len(pool)))
            else:
                right = rng.choice(everything)  # reuse: gives it a second parent
            kind = OpKind.ADD if left == right else rng.choice(_CHAIN_OPS)
            node = dag.make_op(kind, left, right)
            pool.append(node)
            everything.append(node)
            ops += 1
        dag.root = pool[0]
        return dag

    raise AssertionError(shape)


def run(config: RunConfig) -> list[ResultRow]:
    """Execute the configured experiment; one row per repeat.

    Evaluation failures are recorded in the row's error column and the run
    continues with the next repeat.
    """
    weight_policy, eval_policy = STRATEGIES[config.strategy]
    rows = []
    for rep in range(config.repeats):
        dag = generate(config.spec)
        depth_before = dag.depth
        row = ResultRow(
            shape=config.spec.shape,
            n=config.spec.n,
            seed=config.spec.seed,
            strategy=config.strategy,
            threads=config.threads,
            q=config.q,
            repeat_index=rep,
            wall_ms=0.0,
            restructure_ms=0.0,
            total_cost_bits=0,
            critical_path_bits=0,
            depth_before=depth_before,
            depth_after=depth_before,
        )
        try:
            if weight_policy is not None:
                t0 = time.perf_counter()
                dag, _ = restructure(dag, weight_policy)
                row.restructure_ms = round((time.perf_counter() - t0) * 1000.0, 3)
                row.depth_after = dag.depth
            t0 = time.perf_counter()
            _, report = evaluate(
                dag, config.q, policy=eval_policy, threads=config.threads
            )
            row.wall_ms = round((time.perf_counter() - t0) * 1000.0, 3)
            row.total_cost_bits = report.total_cost
            row.critical_path_bits = report.critical_path_cost
        except (EvaluationError, ZeroDivisionError, ValueError) as exc:
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    if config.csv_path:
        write_csv(config.csv_path, rows)
    return rows


def write_csv(path: str, rows: list[ResultRow]) -> None:
    names = [f.name for f in fields(ResultRow)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in rows:
            writer.writerow([getattr(row, name) for name in names])
