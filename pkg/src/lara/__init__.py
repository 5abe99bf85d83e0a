"""Reference engine for the LARA associative-table algebra.

Exact rational tables with a key constraint, the three core operators and
their derived forms, a safe formula DSL for extension functions, a
translation into first-order logic with aggregation used as a differential
oracle, and a standard library with softmax and convolution built from the
algebra alone.
"""

from .aggregates import AggOp, builtin_aggregates, check_neutral_law
from .algebra import desugar, evaluate
from .errors import (
    EvaluationError,
    LaraError,
    LoadError,
    ParseError,
    SafetyError,
    SortError,
    StructuralError,
)
from .expr import (
    ActDom,
    AggBy,
    Analyzer,
    Atom,
    BuiltinRef,
    Empty,
    Env,
    Ext,
    Filter,
    FilterPred,
    Ind,
    Join,
    MapOp,
    Product,
    ProjKeys,
    ProjVals,
    ReduceBy,
    Rename,
    UnionOp,
    infer_sort,
)
from .extfn import ExtFn, check_safety, eval_extfn, exp_approx, parse_dsl
from .logic import diff_test, eval_formula, pretty_translation, translate_expr
from .program import Program, parse_program
from .tableio import load_database_dir, load_table, parse_table_text, save_table
from .tables import (
    AssocTable,
    Database,
    Sort,
    apply_key_permutation,
    pad_row,
    permute_database,
    serialize_table,
    solve,
)
from .values import NEG_INF, NON_VALUE, POS_INF

__version__ = "0.1.0"
