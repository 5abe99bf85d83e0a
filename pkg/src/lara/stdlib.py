"""Standard library: the softmax pipeline and a generic convolution expression.

Both are fixed expressions over a declared schema.  The convolution is the
ordered-mode showpiece: one expression that takes the input matrix and the
kernel as data and computes the zero-padded sliding product, for any sizes.
Its independent oracle is a plain double sum over dense rational matrices;
the two paths must agree byte-for-byte on every instance.
"""

from __future__ import annotations

from fractions import Fraction

from .errors import EvaluationError
from .expr import (
    AggBy,
    Atom,
    Env,
    Filter,
    FilterPred,
    Ind,
    Join,
    MapOp,
    Product,
    ReduceBy,
    Rename,
)
from .extfn import ExtFn, parse_dsl
from .tables import AssocTable, Database, Sort

# ---------------------------------------------------------------------------
# Softmax over per-batch feature maxima

SEQS_SORT = Sort(("time", "batch", "features"), ("val",))
SOFTMAX_SCHEMA = {"Seqs": SEQS_SORT}


def exp_map_fn() -> ExtFn:
    return ExtFn(
        "expval",
        Sort(("batch", "features"), ("val",)),
        Sort((), ("ev",)),
        body=parse_dsl("expapprox(val, ev)"),
    )


def softmax_expr():
    """Max over time, pointwise exp, per-batch sum, then the dividing join."""
    peak = ReduceBy(("time",), "max", Atom("Seqs"))
    exp = MapOp(exp_map_fn(), peak)
    total = ReduceBy(("features",), "sum", exp)
    return Join(exp, total, "div")


def softmax_env() -> Env:
    return Env(schema=dict(SOFTMAX_SCHEMA))


def softmax_fixture_table() -> AssocTable:
    rows = [
        (("t1", "b1", "f1"), (Fraction(1),)),
        (("t2", "b1", "f1"), (Fraction(3),)),
        (("t1", "b1", "f2"), (Fraction(2),)),
        (("t2", "b1", "f2"), (Fraction(2),)),
    ]
    return AssocTable(SEQS_SORT, rows)


# ---------------------------------------------------------------------------
# Convolution

CONV_SCHEMA = {
    "Entry_A": Sort(("i", "j"), ("v",)),
    "Entry_K": Sort(("k", "l"), ("u",)),
}


def conv_env() -> Env:
    return Env(schema=dict(CONV_SCHEMA))


def _diag_fn() -> ExtFn:
    # m = 1 on the kernel diagonal, 0 elsewhere; summing it yields the dimension
    return ExtFn(
        "diag",
        Sort(("k", "l"), ("u",)),
        Sort((), ("m",)),
        body=parse_dsl(
            "(k = l implies eq(m, 1)) and (not (k = l) implies eq(m, 0))"
        ),
    )


NEIGHBORS_FORMULA = (
    "exists m1:val (add(m1, 1, m) and exists mid:val (mul(2, mid, m1)"
    " and exists a:val (add(sv, mid, a) and leq(iv, a))"
    " and exists b:val (add(iv, mid, b) and leq(sv, b))"
    " and exists c:val (add(tv, mid, c) and leq(jv, c))"
    " and exists d:val (add(jv, mid, d) and leq(tv, d))))"
)

KERNEL_FORMULA = (
    "exists m1:val (add(m1, 1, m) and exists mid:val (mul(2, mid, m1)"
    " and exists p:val (add(sv, mid, p) and exists p1:val (add(p, 1, p1)"
    " and exists q:val (add(kv, iv, q) and eq(p1, q))))"
    " and exists r:val (add(tv, mid, r) and exists r1:val (add(r, 1, r1)"
    " and exists s1:val (add(lv, jv, s1) and eq(r1, s1))))))"
)


def _neighbors_pred() -> FilterPred:
    # window restriction: i - mid <= s <= i + mid and j - mid <= t <= j + mid
    return FilterPred(
        "neighbors", (), ("iv", "jv", "sv", "tv", "m"), parse_dsl(NEIGHBORS_FORMULA)
    )


def _kernel_pred() -> FilterPred:
    # alignment: k = s - i + mid + 1 and l = t - j + mid + 1
    return FilterPred(
        "kernel",
        (),
        ("iv", "jv", "kv", "lv", "sv", "tv", "m"),
        parse_dsl(KERNEL_FORMULA),
    )


def convolution_expr():
    """The fixed ordered-mode expression computing Entry_A * Entry_K.

    Shape: kernel dimension via the diagonal map, a four-way product, key
    ordinals joined in as coordinate values, the two window filters, then
    pointwise products summed per output cell.
    """
    dim = AggBy((), "sum", MapOp(_diag_fn(), Atom("Entry_K")))
    moved = Rename((("i", "s"), ("j", "t"), ("v", "w")), Atom("Entry_A"))
    cross = Product(Product(Product(Atom("Entry_A"), Atom("Entry_K")), moved), dim)
    coords = [
        (("i", "iv"), "Entry_A"),
        (("j", "jv"), "Entry_A"),
        (("s", "sv"), "Entry_A"),
        (("t", "tv"), "Entry_A"),
        (("k", "kv"), "Entry_K"),
        (("l", "lv"), "Entry_K"),
    ]
    out = cross
    for (attr, ordinal), relation in coords:
        table = Rename((("z", attr), ("pos", ordinal)), Ind(relation))
        out = Join(out, table, "add")
    filtered = Filter(_kernel_pred(), Filter(_neighbors_pred(), out))
    vstar = ExtFn(
        "vstar",
        Sort(
            ("i", "j", "k", "l", "s", "t"),
            ("v", "u", "w", "m", "iv", "jv", "sv", "tv", "kv", "lv"),
        ),
        Sort((), ("vc",)),
        body=parse_dsl("mul(w, u, vc)"),
    )
    summed = AggBy(("i", "j"), "sum", MapOp(vstar, filtered))
    return Rename((("vc", "v"),), summed)


def convolution_oracle(matrix, kernel):
    """Direct double-sum convolution with zero padding outside the matrix.

    The kernel must be square with odd dimension; entries are rationals.
    """
    m = len(kernel)
    if m == 0 or any(len(row) != m for row in kernel):
        raise EvaluationError("kernel must be square")
    if m % 2 == 0:
        raise EvaluationError("kernel dimension must be odd")
    if not matrix or any(len(row) != len(matrix[0]) for row in matrix):
        raise EvaluationError("matrix must be rectangular and non-empty")
    half = (m - 1) // 2
    rows, cols = len(matrix), len(matrix[0])
    out = []
    for i in range(rows):
        line = []
        for j in range(cols):
            acc = Fraction(0)
            for s in range(m):
                for t in range(m):
                    ai, aj = i + s - half, j + t - half
                    if 0 <= ai < rows and 0 <= aj < cols:
                        acc += matrix[ai][aj] * kernel[s][t]
            line.append(acc)
        out.append(line)
    return out


def matrix_to_table(matrix, sort: Sort) -> AssocTable:
    """Dense matrix as an associative table with 1-based integer keys."""
    rows = []
    for i, line in enumerate(matrix):
        for j, value in enumerate(line):
            rows.append(((i + 1, j + 1), (Fraction(value),)))
    return AssocTable(sort, rows)


def table_to_matrix(table: AssocTable, rows: int, cols: int):
    """Dense rational matrix from a two-key-attribute table (missing cells are 0)."""
    out = [[Fraction(0)] * cols for _ in range(rows)]
    for (i, j), (v,) in table.rows:
        if not (1 <= i <= rows and 1 <= j <= cols):
            raise EvaluationError(f"cell ({i},{j}) outside a {rows}x{cols} matrix")
        out[i - 1][j - 1] = v
    return out


def conv_database(matrix, kernel) -> Database:
    return Database(
        {
            "Entry_A": matrix_to_table(matrix, CONV_SCHEMA["Entry_A"]),
            "Entry_K": matrix_to_table(kernel, CONV_SCHEMA["Entry_K"]),
        }
    )


# ---------------------------------------------------------------------------
# Fixtures


def demo_tables() -> tuple[AssocTable, AssocTable]:
    """The running two-table example used across the documentation and tests."""
    a = AssocTable(
        Sort(("i", "j"), ("v1", "v2")),
        [
            ((0, 0), (Fraction(1), Fraction(5))),
            ((0, 1), (Fraction(2), Fraction(6))),
            ((1, 0), (Fraction(3), Fraction(7))),
            ((1, 1), (Fraction(4), Fraction(8))),
        ],
    )
    b = AssocTable(
        Sort(("j", "k"), ("v2", "v3")),
        [
            ((0, 0), (Fraction(1), Fraction(1))),
            ((0, 1), (Fraction(1), Fraction(2))),
            ((1, 0), (Fraction(1), Fraction(1))),
            ((1, 1), (Fraction(2), Fraction(1))),
        ],
    )
    return a, b


def demo_database() -> Database:
    a, b = demo_tables()
    return Database({"A": a, "B": b})


def _ints(rows):
    return [[Fraction(x) for x in row] for row in rows]


SPARSE_A = _ints([
    [1, 0, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 0, 0],
    [0, 0, 0, 1],
])

SPARSE_A_ALT = _ints([
    [1, 0, 0, 0],
    [0, 0, 0, 0],
    [0, 0, 1, 0],
    [0, 0, 0, 1],
])

ONES_3 = _ints([[1, 1, 1]] * 3)

# expected sliding-window sums for the two sparse inputs above
SPARSE_A_CONV = _ints([
    [2, 2, 1, 0],
    [2, 2, 1, 0],
    [1, 1, 2, 1],
    [0, 0, 1, 1],
])

SPARSE_A_ALT_CONV = _ints([
    [1, 1, 0, 0],
    [1, 2, 1, 1],
    [0, 1, 2, 2],
    [0, 1, 2, 2],
])

# the key transposition that carries SPARSE_A onto SPARSE_A_ALT
SWAP_2_3 = {2: 3, 3: 2}
