"""Command-line front end.

``exdag run`` generates a dag family, applies one balancing strategy and
writes one CSV row per repeat; ``exdag gen`` emits the text serialization
of a generated dag.  Exit codes: 0 on success, 1 on usage errors, 2 when
every repeat of a run failed to evaluate.
"""

from __future__ import annotations

import argparse
import sys

from .bench import SHAPES, STRATEGIES, GeneratorSpec, RunConfig, generate, run
from .dag import export_dot, serialize

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="exdag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_spec_args(p):
        p.add_argument("--shape", required=True, choices=SHAPES)
        p.add_argument("--n", required=True, type=int)
        p.add_argument("--seed", required=True, type=int)
        p.add_argument("--blocking-fraction", type=float, default=0.30)
        p.add_argument("--share-fraction", type=float, default=0.05)

    runp = sub.add_parser("run", help="run one strategy experiment, emit CSV")
    add_spec_args(runp)
    runp.add_argument("--strategy", required=True, choices=tuple(STRATEGIES))
    runp.add_argument("--threads", type=int, default=1)
    runp.add_argument("--q", type=int, default=-2000)
    runp.add_argument("--repeats", type=int, default=5)
    runp.add_argument("--csv", required=True, help="output CSV path")
    runp.add_argument("--dump-dot", help="also write the generated dag as DOT")
    runp.add_argument("--dump-graph", help="also write the generated dag serialized")

    genp = sub.add_parser("gen", help="emit the serialization of a generated dag")
    add_spec_args(genp)
    genp.add_argument("-o", "--output", help="write to a file instead of stdout")
    return parser


def _spec_from_args(args) -> GeneratorSpec:
    return GeneratorSpec(
        shape=args.shape,
        n=args.n,
        seed=args.seed,
        blocking_fraction=args.blocking_fraction,
        share_fraction=args.share_fraction,
    )


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1

    try:
        spec = _spec_from_args(args)
        if args.command == "gen":
            text = serialize(generate(spec))
            if args.output:
                with open(args.output, "w") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return 0

        config = RunConfig(
            spec=spec,
            strategy=args.strategy,
            threads=args.threads,
            q=args.q,
            repeats=args.repeats,
            csv_path=args.csv,
        )
    except ValueError as exc:
        print(f"exdag: error: {exc}", file=sys.stderr)
        return 1

    if args.dump_dot or args.dump_graph:
        dag = generate(spec)
        if args.dump_dot:
            with open(args.dump_dot, "w") as fh:
                fh.write(export_dot(dag))
        if args.dump_graph:
            with open(args.dump_graph, "w") as fh:
                fh.write(serialize(dag))

    rows = run(config)
    failures = sum(1 for row in rows if row.error)
    for row in rows:
        status = row.error if row.error else (
            f"cost={row.total_cost_bits} cp={row.critical_path_bits} "
            f"wall={row.wall_ms}ms"
        )
        print(
            f"{row.strategy} {row.shape} n={row.n} repeat={row.repeat_index}: {status}"
        )
    if failures == len(rows):
        print("exdag: error: every repeat failed to evaluate", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
