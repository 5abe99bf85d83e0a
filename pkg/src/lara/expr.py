"""Expression AST for the table algebra, with sort inference.

Three core operators (join, union, extend) plus the derived ones; every node
gets a sort inferred bottom-up.  Output attribute order is canonical:
the left operand's attributes first, then the right operand's new ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from .aggregates import AggOp, builtin_aggregates
from .errors import SafetyError, SortError, StructuralError
from .extfn import (
    ExtFn,
    Formula,
    check_safety_formula,
    free_vars,
    instantiate_builtin,
    is_generic_formula,
    resolve_sorts,
    uses_order as formula_uses_order,
)
from .tables import Sort


@dataclass(frozen=True)
class BuiltinRef:
    """Unresolved reference to a distinguished function family, e.g. copyk(i->s)."""

    kind: str
    params: tuple


FnRef = Union[str, ExtFn, BuiltinRef]


@dataclass(eq=False)
class FilterPred:
    """A named row predicate: a formula over a subset of a table's attributes."""

    name: str
    key_attrs: tuple[str, ...]
    val_attrs: tuple[str, ...]
    formula: Formula

    def __post_init__(self):
        declared = {a: "key" for a in self.key_attrs}
        for a in self.val_attrs:
            if a in declared:
                raise SortError(f"predicate {self.name}: attribute {a} declared twice")
            declared[a] = "val"
        extra = free_vars(self.formula) - set(declared)
        if extra:
            raise SortError(
                f"predicate {self.name}: undeclared free variable {sorted(extra)[0]}"
            )
        self.formula, _ = resolve_sorts(self.formula, declared)
        diagnostics = check_safety_formula(self.formula, set(declared), set())
        if diagnostics:
            raise SafetyError(
                f"predicate {self.name} is not safe: {diagnostics[0]}", diagnostics
            )
        self.generic = is_generic_formula(self.formula)
        self.ordered = formula_uses_order(self.formula)


PredRef = Union[str, FilterPred]


@dataclass(frozen=True)
class Empty:
    pass


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Join:
    left: "LaraExpr"
    right: "LaraExpr"
    op: str


@dataclass(frozen=True)
class UnionOp:
    left: "LaraExpr"
    right: "LaraExpr"
    op: str


@dataclass(frozen=True)
class Ext:
    fn: FnRef
    sub: "LaraExpr"


@dataclass(frozen=True)
class MapOp:
    fn: FnRef
    sub: "LaraExpr"


@dataclass(frozen=True)
class AggBy:
    keys: tuple[str, ...]
    op: str
    sub: "LaraExpr"


@dataclass(frozen=True)
class ReduceBy:
    keys: tuple[str, ...]
    op: str
    sub: "LaraExpr"


@dataclass(frozen=True)
class ProjKeys:
    keys: tuple[str, ...]
    op: str
    sub: "LaraExpr"


@dataclass(frozen=True)
class ProjVals:
    vals: tuple[str, ...]
    sub: "LaraExpr"


@dataclass(frozen=True)
class Rename:
    mapping: tuple[tuple[str, str], ...]
    sub: "LaraExpr"


@dataclass(frozen=True)
class Product:
    left: "LaraExpr"
    right: "LaraExpr"


@dataclass(frozen=True)
class Filter:
    pred: PredRef
    sub: "LaraExpr"


@dataclass(frozen=True)
class ActDom:
    pass


@dataclass(frozen=True)
class Ind:
    relation: str


LaraExpr = Union[
    Empty, Atom, Join, UnionOp, Ext, MapOp, AggBy, ReduceBy, ProjKeys,
    ProjVals, Rename, Product, Filter, ActDom, Ind,
]

ACTDOM_ATTR = "z"
IND_SORT = Sort(("z",), ("pos",))


@dataclass
class Env:
    """Name resolution context: schema, functions, predicates, aggregates."""

    schema: dict[str, Sort] = field(default_factory=dict)
    fns: dict[str, ExtFn] = field(default_factory=dict)
    preds: dict[str, FilterPred] = field(default_factory=dict)
    aggs: dict[str, AggOp] = field(default_factory=builtin_aggregates)

    def agg(self, name: str) -> AggOp:
        op = self.aggs.get(name)
        if op is None:
            raise SortError(f"unknown aggregate operator: {name}")
        return op


def statically_empty(e: LaraExpr) -> bool:
    """True when the expression denotes the empty table on every database."""
    if isinstance(e, Empty):
        return True
    if isinstance(e, (Join, Product)):
        return statically_empty(e.left) or statically_empty(e.right)
    if isinstance(e, UnionOp):
        return statically_empty(e.left) and statically_empty(e.right)
    if isinstance(e, (Ext, MapOp, AggBy, ReduceBy, ProjKeys, ProjVals, Rename, Filter)):
        return statically_empty(e.sub)
    return False


def _merged(left: tuple[str, ...], right: tuple[str, ...]) -> tuple[str, ...]:
    return left + tuple(a for a in right if a not in left)


class Analyzer:
    """Memoized sort inference and reference resolution over one expression DAG."""

    def __init__(self, env: Env):
        self.env = env
        self._sorts: dict[int, Sort] = {}
        self._fns: dict[int, ExtFn] = {}
        self._preds: dict[int, FilterPred] = {}

    # -- resolution --------------------------------------------------------

    def resolve_fn(self, node, in_sort: Sort) -> ExtFn:
        got = self._fns.get(id(node))
        if got is not None:
            return got
        ref = node.fn
        if isinstance(ref, str):
            fn = self.env.fns.get(ref)
            if fn is None:
                raise SortError(f"unknown extension function: {ref}")
        elif isinstance(ref, BuiltinRef):
            fn = instantiate_builtin(ref.kind, ref.params, in_sort)
        else:
            fn = ref
        if fn.in_sort != in_sort:
            raise SortError(
                f"extension function {fn.name} expects input sort {fn.in_sort}, "
                f"applied to {in_sort}"
            )
        self._fns[id(node)] = fn
        return fn

    def resolve_pred(self, node, in_sort: Sort) -> FilterPred:
        got = self._preds.get(id(node))
        if got is not None:
            return got
        ref = node.pred
        if isinstance(ref, str):
            pred = self.env.preds.get(ref)
            if pred is None:
                raise SortError(f"unknown predicate: {ref}")
        else:
            pred = ref
        for a in pred.key_attrs:
            if a not in in_sort.key_attrs:
                raise SortError(
                    f"predicate {pred.name} needs key attribute {a}, input has {in_sort}"
                )
        for a in pred.val_attrs:
            if a not in in_sort.val_attrs:
                raise SortError(
                    f"predicate {pred.name} needs value attribute {a}, input has {in_sort}"
                )
        self._preds[id(node)] = pred
        return pred

    # -- sort inference ----------------------------------------------------

    def sort_of(self, e: LaraExpr) -> Sort:
        got = self._sorts.get(id(e))
        if got is None:
            got = self._infer(e)
            self._sorts[id(e)] = got
        return got

    def _combine(self, e, k, v) -> Sort:
        try:
            return Sort(k, v)
        except StructuralError as exc:
            raise SortError(f"in {type(e).__name__}: {exc}") from None

    def _require_neutral(self, opname: str, why: str):
        op = self.env.agg(opname)
        if op.neutral is None:
            raise SortError(
                f"aggregate '{opname}' has no neutral element but {why}"
            )

    def _infer(self, e: LaraExpr) -> Sort:
        env = self.env
        if isinstance(e, Empty):
            return Sort((), ())
        if isinstance(e, Atom):
            sort = env.schema.get(e.name)
            if sort is None:
                raise SortError(f"unknown relation: {e.name}")
            return sort
        if isinstance(e, Join):
            s1, s2 = self.sort_of(e.left), self.sort_of(e.right)
            env.agg(e.op)
            if set(s1.val_attrs) != set(s2.val_attrs):
                self._require_neutral(e.op, "the join pads value attributes")
            return self._combine(
                e, _merged(s1.key_attrs, s2.key_attrs), _merged(s1.val_attrs, s2.val_attrs)
            )
        if isinstance(e, UnionOp):
            s1, s2 = self.sort_of(e.left), self.sort_of(e.right)
            env.agg(e.op)
            pads_left = set(s2.val_attrs) - set(s1.val_attrs)
            pads_right = set(s1.val_attrs) - set(s2.val_attrs)
            if pads_left and not statically_empty(e.left):
                self._require_neutral(e.op, "the union pads the left side")
            if pads_right and not statically_empty(e.right):
                self._require_neutral(e.op, "the union pads the right side")
            shared = tuple(a for a in s1.key_attrs if a in s2.key_attrs)
            return self._combine(e, shared, _merged(s1.val_attrs, s2.val_attrs))
        if isinstance(e, (Ext, MapOp)):
            s = self.sort_of(e.sub)
            fn = self.resolve_fn(e, s)
            if set(s.key_attrs) & set(fn.out_sort.key_attrs):
                raise SortError(
                    f"function {fn.name} introduces key attributes that already exist"
                )
            if isinstance(e, MapOp) and fn.out_sort.key_attrs:
                raise SortError(
                    f"map requires a function with no new key attributes, "
                    f"got {fn.name}"
                )
            return self._combine(
                e, s.key_attrs + fn.out_sort.key_attrs, fn.out_sort.val_attrs
            )
        if isinstance(e, (AggBy, ProjKeys)):
            s = self.sort_of(e.sub)
            env.agg(e.op)
            for a in e.keys:
                if a not in s.key_attrs:
                    raise SortError(f"grouping attribute {a} is not a key of {s}")
            if len(set(e.keys)) != len(e.keys):
                raise SortError("duplicate grouping attribute")
            # grouping attributes keep the subexpression's column order
            kept = tuple(a for a in s.key_attrs if a in set(e.keys))
            return self._combine(e, kept, s.val_attrs)
        if isinstance(e, ReduceBy):
            s = self.sort_of(e.sub)
            env.agg(e.op)
            for a in e.keys:
                if a not in s.key_attrs:
                    raise SortError(f"reduced attribute {a} is not a key of {s}")
            keep = tuple(a for a in s.key_attrs if a not in e.keys)
            return self._combine(e, keep, s.val_attrs)
        if isinstance(e, ProjVals):
            s = self.sort_of(e.sub)
            for a in e.vals:
                if a not in s.val_attrs:
                    raise SortError(f"projected attribute {a} is not a value of {s}")
            if len(set(e.vals)) != len(e.vals):
                raise SortError("duplicate projected attribute")
            return self._combine(e, s.key_attrs, tuple(e.vals))
        if isinstance(e, Rename):
            s = self.sort_of(e.sub)
            mapping = dict(e.mapping)
            if len(mapping) != len(e.mapping):
                raise SortError("rename maps an attribute twice")
            images = list(mapping.values())
            if len(set(images)) != len(images):
                raise SortError("rename images are not distinct")
            for old in mapping:
                if old not in s.attrs:
                    raise SortError(f"rename of unknown attribute {old}")
            untouched = [a for a in s.attrs if a not in mapping]
            for new in images:
                if new in untouched:
                    raise SortError(f"rename target {new} is not fresh")
            return self._combine(
                e,
                tuple(mapping.get(a, a) for a in s.key_attrs),
                tuple(mapping.get(a, a) for a in s.val_attrs),
            )
        if isinstance(e, Product):
            s1, s2 = self.sort_of(e.left), self.sort_of(e.right)
            overlap = set(s1.attrs) & set(s2.attrs)
            if overlap:
                raise SortError(
                    f"product operands share attribute {sorted(overlap)[0]}"
                )
            return self._combine(e, s1.key_attrs + s2.key_attrs, s1.val_attrs + s2.val_attrs)
        if isinstance(e, Filter):
            s = self.sort_of(e.sub)
            self.resolve_pred(e, s)
            return s
        if isinstance(e, ActDom):
            return Sort((ACTDOM_ATTR,), ())
        if isinstance(e, Ind):
            if e.relation not in env.schema:
                raise SortError(f"unknown relation: {e.relation}")
            return IND_SORT
        raise SortError(f"not an expression: {e!r}")

    # -- mode classification -------------------------------------------------

    def _each_node(self, e: LaraExpr, seen: set[int]):
        if id(e) in seen:
            return
        seen.add(id(e))
        yield e
        for attr in ("left", "right", "sub"):
            child = getattr(e, attr, None)
            if child is not None:
                yield from self._each_node(child, seen)

    def uses_order(self, e: LaraExpr) -> bool:
        """True when evaluation depends on the key order (needs ordered mode)."""
        self.sort_of(e)
        for node in self._each_node(e, set()):
            if isinstance(node, Ind):
                return True
            if isinstance(node, (Ext, MapOp)) and self._fns[id(node)].ordered:
                return True
            if isinstance(node, Filter) and self._preds[id(node)].ordered:
                return True
        return False

    def is_generic(self, e: LaraExpr) -> bool:
        """True when the result commutes with key permutations by construction."""
        self.sort_of(e)
        for node in self._each_node(e, set()):
            if isinstance(node, Ind):
                return False
            if isinstance(node, (Ext, MapOp)) and not self._fns[id(node)].generic:
                return False
            if isinstance(node, Filter) and not self._preds[id(node)].generic:
                return False
        return True


def infer_sort(e: LaraExpr, env: Env) -> Sort:
    return Analyzer(env).sort_of(e)
