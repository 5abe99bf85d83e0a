"""Command-line driver.

Subcommands: ``eval``, ``translate``, ``check``, ``difftest``,
``generic-test``, and ``examples run``.  Everything randomized takes an
explicit ``--seed``; identical inputs and seed produce byte-identical output.
"""

from __future__ import annotations

import argparse
import random
import sys

from .algebra import evaluate
from .errors import LaraError
from .logic import diff_test, pretty_translation, translate_expr
from .program import Program, parse_program
from .randgen import random_key_permutation
from .tableio import load_database_dir
from .tables import apply_key_permutation, permute_database, serialize_table


def _load_program(path: str) -> Program:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_program(handle.read())


def _cmd_eval(args) -> int:
    program = _load_program(args.program)
    if program.uses_order() and not args.ordered:
        print(
            "error: program uses ordered-mode constructs; pass --ordered",
            file=sys.stderr,
        )
        return 2
    db = load_database_dir(args.db, program.env.schema)
    result = evaluate(program.result, db, program.env, program.analyzer)
    sys.stdout.write(serialize_table(result))
    return 0


def _cmd_translate(args) -> int:
    program = _load_program(args.program)
    translation = translate_expr(program.result, program.env)
    sys.stdout.write(pretty_translation(translation))
    return 0


def _cmd_check(args) -> int:
    program = _load_program(args.program)
    sort = program.result_sort
    mode = "ordered" if program.uses_order() else "equality-only"
    print(
        f"ok: {len(program.env.schema)} relations, {len(program.env.fns)} functions, "
        f"{len(program.env.preds)} predicates; result sort {sort}; {mode} mode"
    )
    return 0


def _cmd_difftest(args) -> int:
    program = _load_program(args.program)
    db = load_database_dir(args.db, program.env.schema)
    verdict = diff_test(program.result, db, program.env)
    if verdict.equal:
        print("EQUAL")
        return 0
    print(f"DIFFER: {verdict.detail}")
    return 1


def _cmd_generic_test(args) -> int:
    program = _load_program(args.program)
    if not program.is_generic():
        print(
            "rejected: ordered-mode program (key order or key literals in use); "
            "genericity only holds for equality-only programs",
            file=sys.stderr,
        )
        return 2
    db = load_database_dir(args.db, program.env.schema)
    rng = random.Random(args.seed)
    base = evaluate(program.result, db, program.env, program.analyzer)
    for trial in range(args.trials):
        mapping = random_key_permutation(rng, db.active_keys())
        permuted = evaluate(program.result, permute_database(db, mapping), program.env)
        expected = apply_key_permutation(base, mapping)
        if serialize_table(permuted) != serialize_table(expected):
            print(f"FAIL at trial {trial}: permuted run differs")
            return 1
    print(f"{args.trials} trials: key-generic")
    return 0


def _cmd_examples(args) -> int:
    from .examples import EXAMPLES, run_example

    if args.action == "list":
        for name in sorted(EXAMPLES):
            print(name)
        return 0
    try:
        ok, message, result = run_example(args.name)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    sys.stdout.write(serialize_table(result))
    print(f"{'PASS' if ok else 'FAIL'}: {message}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lara",
        description="Reference engine for the LARA associative-table algebra",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="evaluate a program and print the result table")
    p.add_argument("program")
    p.add_argument("--db", required=True, help="directory with one file per relation")
    p.add_argument("--ordered", action="store_true",
                   help="allow key-order comparisons and ordinal tables")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("translate", help="print the logic translation of the result")
    p.add_argument("program")
    p.set_defaults(handler=_cmd_translate)

    p = sub.add_parser("check", help="sort-check declarations and the result")
    p.add_argument("program")
    p.set_defaults(handler=_cmd_check)

    p = sub.add_parser("difftest",
                       help="compare algebraic and logic evaluation byte-for-byte")
    p.add_argument("program")
    p.add_argument("--db", required=True)
    p.set_defaults(handler=_cmd_difftest)

    p = sub.add_parser("generic-test",
                       help="check invariance under random key permutations")
    p.add_argument("program")
    p.add_argument("--db", required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(handler=_cmd_generic_test)

    p = sub.add_parser("examples", help="run a bundled example")
    actions = p.add_subparsers(dest="action", required=True)
    run_p = actions.add_parser("run")
    run_p.add_argument("name")
    run_p.set_defaults(handler=_cmd_examples)
    list_p = actions.add_parser("list")
    list_p.set_defaults(handler=_cmd_examples)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except LaraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
