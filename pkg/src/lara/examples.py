"""Bundled example programs with their data and verification rules.

``lara examples run <name>`` evaluates the program against its shipped
database and checks the result: exact byte comparison against an expected
table for the algebraic fixtures, tolerance-based checks for softmax (its
exponential is a rounded rational approximation).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable

from .algebra import evaluate
from .stdlib import convolution_oracle, matrix_to_table, table_to_matrix
from .tableio import load_database_dir, load_table
from .tables import AssocTable, Database, serialize_table
from .program import parse_program

DATA_ROOT = os.path.join(os.path.dirname(__file__), "examples_data")


@dataclass
class Example:
    name: str
    program: str  # path relative to the data root
    db_dir: str
    verify: Callable[[AssocTable, Database], tuple[bool, str]]


def _expect_file(relpath: str):
    def check(result: AssocTable, db: Database):
        expected = load_table(os.path.join(DATA_ROOT, relpath))
        if serialize_table(result) == serialize_table(expected):
            return True, f"matches {relpath}"
        return False, f"result differs from {relpath}"

    return check


def _verify_softmax(result: AssocTable, db: Database):
    groups: dict = {}
    for (time, batch, features), (val,) in db.relation("Seqs").rows:
        cur = groups.setdefault(batch, {})
        cur[features] = max(cur.get(features, float(val)), float(val))
    failures = []
    sums: dict = {}
    for (batch, features), (val,) in result.rows:
        peaked = groups[batch]
        denom = sum(math.exp(v) for v in peaked.values())
        want = math.exp(peaked[features]) / denom
        if abs(float(val) - want) > 1e-9:
            failures.append(f"({batch},{features})")
        sums[batch] = sums.get(batch, 0) + val
    for batch, total in sums.items():
        if abs(float(total) - 1.0) > 1e-9:
            failures.append(f"sum({batch})")
    if failures:
        return False, "off-tolerance entries: " + ", ".join(failures)
    return True, "within 1e-9 of the direct computation; batch rows sum to 1"


def _verify_convolution(result: AssocTable, db: Database):
    a_table = db.relation("Entry_A")
    rows = max(k[0] for k, _ in a_table.rows)
    cols = max(k[1] for k, _ in a_table.rows)
    k_table = db.relation("Entry_K")
    m = max(k[0] for k, _ in k_table.rows)
    matrix = table_to_matrix(a_table, rows, cols)
    kernel = table_to_matrix(k_table, m, m)
    want = matrix_to_table(convolution_oracle(matrix, kernel), result.sort)
    if serialize_table(result) == serialize_table(want):
        return True, "matches the direct sliding-window sum"
    return False, "result differs from the direct sliding-window sum"


EXAMPLES = {
    e.name: e
    for e in [
        Example("join_demo", "demo/join_ab.lara", "demo", _expect_file("demo/expected_join.csv")),
        Example("union_demo", "demo/union_ab.lara", "demo", _expect_file("demo/expected_union.csv")),
        Example("extend_demo", "demo/ext_g.lara", "demo", _expect_file("demo/expected_ext.csv")),
        Example("softmax", "softmax/softmax.lara", "softmax", _verify_softmax),
        Example("conv_sparse", "conv/conv.lara", "conv", _verify_convolution),
        Example("conv_sparse_alt", "conv/conv.lara", "conv_alt", _verify_convolution),
        Example("conv_identity", "conv/conv.lara", "conv_identity", _verify_convolution),
    ]
}


def run_example(name: str) -> tuple[bool, str, AssocTable]:
    spec = EXAMPLES.get(name)
    if spec is None:
        known = ", ".join(sorted(EXAMPLES))
        raise KeyError(f"unknown example {name!r}; available: {known}")
    with open(os.path.join(DATA_ROOT, spec.program), "r", encoding="utf-8") as handle:
        program = parse_program(handle.read())
    db = load_database_dir(os.path.join(DATA_ROOT, spec.db_dir), program.env.schema)
    result = evaluate(program.result, db, program.env, program.analyzer)
    ok, message = spec.verify(result, db)
    return ok, message, result
