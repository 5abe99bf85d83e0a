"""Bottom-up, fully materializing evaluator for the table algebra.

Also hosts the desugaring of every derived operator into the three core ones
(join, union, extend), which both the logic translator and the equivalence
tests rely on.  No pipelining, no optimization: this is the reference
semantics.
"""

from __future__ import annotations

from fractions import Fraction

from .errors import EvaluationError, SortError
from .expr import (
    ACTDOM_ATTR,
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
    IND_SORT,
    Join,
    LaraExpr,
    MapOp,
    Product,
    ProjKeys,
    ProjVals,
    ReduceBy,
    Rename,
    UnionOp,
    ActDom,
)
from .extfn import ExtFn, check_filter, eval_extfn, parse_dsl
from .tables import AssocTable, Database, Sort, pad_row, solve, table_key_set


class Evaluator:
    """Evaluates one expression DAG against an immutable database."""

    def __init__(self, db: Database, env: Env, analyzer: Analyzer | None = None):
        self.db = db
        self.env = env
        self.an = analyzer or Analyzer(env)
        self._memo: dict[int, AssocTable] = {}

    def eval(self, e: LaraExpr) -> AssocTable:
        got = self._memo.get(id(e))
        if got is None:
            got = self._eval(e)
            expected = self.an.sort_of(e)
            if got.sort != expected:
                raise EvaluationError(
                    f"internal sort drift: {got.sort} vs inferred {expected}"
                )
            self._memo[id(e)] = got
        return got

    def _eval(self, e: LaraExpr) -> AssocTable:
        if isinstance(e, Empty):
            return AssocTable(Sort((), ()), ())
        if isinstance(e, Atom):
            table = self.db.relation(e.name)
            return table
        if isinstance(e, Join):
            return self._join(e)
        if isinstance(e, UnionOp):
            return self._union(e)
        if isinstance(e, (Ext, MapOp)):
            return self._extend(e)
        if isinstance(e, (AggBy, ProjKeys, ReduceBy)):
            return self._aggregate(e, self.an.sort_of(e).key_attrs)
        if isinstance(e, ProjVals):
            return self._proj_vals(e)
        if isinstance(e, Rename):
            sub = self.eval(e.sub)
            return AssocTable(self.an.sort_of(e), sub.rows)
        if isinstance(e, Product):
            return self._product(e)
        if isinstance(e, Filter):
            return self._filter(e)
        if isinstance(e, ActDom):
            keys = self.db.active_keys()
            return AssocTable(Sort((ACTDOM_ATTR,), ()), [((k,), ()) for k in keys])
        if isinstance(e, Ind):
            keys = table_key_set(self.db.relation(e.relation))
            rows = [((k,), (Fraction(i + 1),)) for i, k in enumerate(keys)]
            return AssocTable(IND_SORT, rows)
        raise EvaluationError(f"not an expression: {e!r}")

    def _join(self, e: Join) -> AssocTable:
        s1, s2 = self.an.sort_of(e.left), self.an.sort_of(e.right)
        out = self.an.sort_of(e)
        op = self.env.agg(e.op)
        t1, t2 = self.eval(e.left), self.eval(e.right)
        shared = tuple(a for a in s1.key_attrs if a in s2.key_attrs)
        l_shared = [s1.key_attrs.index(a) for a in shared]
        r_shared = [s2.key_attrs.index(a) for a in shared]
        r_new = [i for i, a in enumerate(s2.key_attrs) if a not in shared]
        neutral = op.neutral
        # per target attribute: combine both sides, or pad the absent one
        lv = {a: i for i, a in enumerate(s1.val_attrs)}
        rv = {a: i for i, a in enumerate(s2.val_attrs)}
        one_sided_is_free = op.lawful_neutral and neutral is not None
        plan = []
        for a in out.val_attrs:
            plan.append((lv.get(a), rv.get(a)))
        binary = op.binary
        buckets: dict[tuple, list] = {}
        for keys, vals in t2.rows:
            buckets.setdefault(tuple(keys[i] for i in r_shared), []).append((keys, vals))
        rows = []
        for k1, v1 in t1.rows:
            match = buckets.get(tuple(k1[i] for i in l_shared))
            if not match:
                continue
            for k2, v2 in match:
                merged_keys = k1 + tuple(k2[i] for i in r_new)
                merged_vals = []
                for li, ri in plan:
                    if li is None:
                        right = v2[ri]
                        merged_vals.append(right if one_sided_is_free
                                           else binary(neutral, right))
                    elif ri is None:
                        left = v1[li]
                        merged_vals.append(left if one_sided_is_free
                                           else binary(left, neutral))
                    else:
                        merged_vals.append(binary(v1[li], v2[ri]))
                rows.append((merged_keys, tuple(merged_vals)))
        return AssocTable(out, rows)

    def _union(self, e: UnionOp) -> AssocTable:
        s1, s2 = self.an.sort_of(e.left), self.an.sort_of(e.right)
        out = self.an.sort_of(e)
        op = self.env.agg(e.op)
        t1, t2 = self.eval(e.left), self.eval(e.right)
        shared = out.key_attrs
        l_pos = [s1.key_attrs.index(a) for a in shared]
        r_pos = [s2.key_attrs.index(a) for a in shared]
        pairs = []
        neutral = op.neutral
        for keys, vals in t1.rows:
            pairs.append(
                (tuple(keys[i] for i in l_pos),
                 pad_row(vals, s1.val_attrs, out.val_attrs, neutral))
            )
        for keys, vals in t2.rows:
            pairs.append(
                (tuple(keys[i] for i in r_pos),
                 pad_row(vals, s2.val_attrs, out.val_attrs, neutral))
            )
        return solve(out, pairs, op)

    def _extend(self, e) -> AssocTable:
        sub = self.eval(e.sub)
        fn = self.an.resolve_fn(e, sub.sort)
        out = self.an.sort_of(e)
        rows = []
        for keys, vals in sub.rows:
            produced = eval_extfn(fn, keys, vals)
            for new_keys, new_vals in produced.rows:
                rows.append((keys + new_keys, new_vals))
        return AssocTable(out, rows)

    def _aggregate(self, e, keep: tuple[str, ...]) -> AssocTable:
        sub = self.eval(e.sub)
        op = self.env.agg(e.op)
        sort = self.an.sort_of(e)
        pos = [sub.sort.key_attrs.index(a) for a in keep]
        pairs = [
            (tuple(keys[i] for i in pos), vals) for keys, vals in sub.rows
        ]
        return solve(sort, pairs, op)

    def _proj_vals(self, e: ProjVals) -> AssocTable:
        sub = self.eval(e.sub)
        pos = [sub.sort.val_attrs.index(a) for a in e.vals]
        rows = [(keys, tuple(vals[i] for i in pos)) for keys, vals in sub.rows]
        return AssocTable(self.an.sort_of(e), rows)

    def _product(self, e: Product) -> AssocTable:
        t1, t2 = self.eval(e.left), self.eval(e.right)
        out = self.an.sort_of(e)
        rows = [
            (k1 + k2, v1 + v2) for k1, v1 in t1.rows for k2, v2 in t2.rows
        ]
        return AssocTable(out, rows)

    def _filter(self, e: Filter) -> AssocTable:
        sub = self.eval(e.sub)
        pred = self.an.resolve_pred(e, sub.sort)
        rows = []
        for keys, vals in sub.rows:
            env = dict(zip(sub.sort.key_attrs, keys))
            env.update(zip(sub.sort.val_attrs, vals))
            scope = {a: env[a] for a in pred.key_attrs + pred.val_attrs}
            if check_filter(pred.formula, scope, keys):
                rows.append((keys, vals))
        return AssocTable(sub.sort, rows)


def evaluate(e: LaraExpr, db: Database, env: Env, analyzer: Analyzer | None = None) -> AssocTable:
    """Evaluate an expression to an associative table."""
    return Evaluator(db, env, analyzer).eval(e)


# ---------------------------------------------------------------------------
# Desugaring of derived operators into the core fragment


def _const_empty_fn(keys: tuple[str, ...]) -> ExtFn:
    """Sends the unique empty-sorted row to the empty table over ``keys``."""
    return ExtFn(
        f"const_empty({','.join(keys)})",
        Sort((), ()),
        Sort(keys, ()),
        impl=lambda k, v: [],
    )


def _filter_fn(pred: FilterPred, in_sort: Sort) -> ExtFn:
    """Filter as an extension function: keep the row's values when the formula holds."""
    key_attrs = in_sort.key_attrs
    val_attrs = in_sort.val_attrs
    scope_attrs = pred.key_attrs + pred.val_attrs

    def impl(keys, vals):
        env = dict(zip(key_attrs, keys))
        env.update(zip(val_attrs, vals))
        scope = {a: env[a] for a in scope_attrs}
        return [((), vals)] if check_filter(pred.formula, scope, keys) else []

    fn = ExtFn(f"filter({pred.name})", in_sort, Sort((), val_attrs), impl=impl)
    fn.generic = pred.generic
    fn.ordered = pred.ordered
    return fn


def desugar(e: LaraExpr, env: Env, analyzer: Analyzer | None = None) -> LaraExpr:
    """Rewrite an expression into the translator fragment.

    The output uses only empty, atoms, join, union, extend, and rename (pure
    attribute relabeling, which the translator applies to variable maps).
    The rewrite preserves results byte-for-byte, including attribute order.
    """
    an = analyzer or Analyzer(env)

    def rewrite(node: LaraExpr) -> LaraExpr:
        if isinstance(node, (Empty, Atom)):
            return node
        if isinstance(node, Join):
            return Join(rewrite(node.left), rewrite(node.right), node.op)
        if isinstance(node, UnionOp):
            return UnionOp(rewrite(node.left), rewrite(node.right), node.op)
        if isinstance(node, Ext):
            fn = an.resolve_fn(node, an.sort_of(node.sub))
            return Ext(fn, rewrite(node.sub))
        if isinstance(node, MapOp):
            fn = an.resolve_fn(node, an.sort_of(node.sub))
            return Ext(fn, rewrite(node.sub))
        if isinstance(node, (AggBy, ProjKeys)):
            sort = an.sort_of(node)
            return UnionOp(
                rewrite(node.sub),
                Ext(_const_empty_fn(sort.key_attrs), Empty()),
                node.op,
            )
        if isinstance(node, ReduceBy):
            sub_sort = an.sort_of(node.sub)
            keep = tuple(a for a in sub_sort.key_attrs if a not in node.keys)
            return rewrite(AggBy(keep, node.op, node.sub))
        if isinstance(node, ProjVals):
            fn = BuiltinRef("projv", (tuple(node.vals),))
            return rewrite(MapOp(fn, node.sub))
        if isinstance(node, Rename):
            return Rename(node.mapping, rewrite(node.sub))
        if isinstance(node, Product):
            return Join(rewrite(node.left), rewrite(node.right), "add")
        if isinstance(node, Filter):
            sub_sort = an.sort_of(node.sub)
            pred = an.resolve_pred(node, sub_sort)
            return Ext(_filter_fn(pred, sub_sort), rewrite(node.sub))
        if isinstance(node, ActDom):
            return rewrite(actdom_construction(env.schema))
        if isinstance(node, Ind):
            sort = env.schema.get(node.relation)
            if sort is None:
                raise SortError(f"unknown relation: {node.relation}")
            return rewrite(ind_construction(node.relation, sort))
        raise SortError(f"not an expression: {node!r}")

    return rewrite(e)


def rename_to_core(node: Rename, env: Env, analyzer: Analyzer | None = None) -> LaraExpr:
    """Rename expressed through copy functions, aggregation, and value projection.

    Relabeled key columns end up after the untouched ones, so this matches the
    primitive only up to column order; it exists to exercise the construction.
    """
    an = analyzer or Analyzer(env)
    sub_sort = an.sort_of(node.sub)
    mapping = dict(node.mapping)
    out: LaraExpr = node.sub
    key_src = tuple(a for a in sub_sort.key_attrs if a in mapping)
    if key_src:
        key_dst = tuple(mapping[a] for a in key_src)
        out = Ext(BuiltinRef("copyk", (key_src, key_dst)), out)
        regrouped = tuple(a for a in sub_sort.key_attrs if a not in mapping) + key_dst
        out = AggBy(regrouped, "func", out)
    val_src = tuple(a for a in sub_sort.val_attrs if a in mapping)
    if val_src:
        val_dst = tuple(mapping[a] for a in val_src)
        out = MapOp(BuiltinRef("copyv", (val_src, val_dst)), out)
        keep = tuple(mapping.get(a, a) for a in sub_sort.val_attrs)
        out = MapOp(BuiltinRef("projv", (keep,)), out)
    return out


def actdom_construction(schema: dict[str, Sort]) -> LaraExpr:
    """All keys of the database as a one-key-attribute table, via the core operators."""
    parts: list[LaraExpr] = []
    for name in sorted(schema):
        sort = schema[name]
        for attr in sort.key_attrs:
            one: LaraExpr = ProjVals((), Atom(name))
            one = AggBy((attr,), "func", one)
            if attr != ACTDOM_ATTR:
                one = Rename(((attr, ACTDOM_ATTR),), one)
            parts.append(one)
    if not parts:
        raise SortError("active domain of a schema with no key attributes")
    out = parts[0]
    for part in parts[1:]:
        out = UnionOp(out, part, "func")
    return out


_ORD_INDICATOR = parse_dsl(
    "(zl < zr implies eq(o1, 0)) and (not (zl < zr) implies eq(o1, 1))"
)


def ind_construction(relation: str, sort: Sort) -> LaraExpr:
    """Key ordinals built from the order-indicator map and a summing aggregation.

    For every pair of active keys (x, y) the indicator is 1 when y <= x, so
    summing it grouped by x yields x's 1-based position in the key order.
    """
    parts: list[LaraExpr] = []
    for attr in sort.key_attrs:
        one: LaraExpr = ProjVals((), Atom(relation))
        one = AggBy((attr,), "func", one)
        if attr != ACTDOM_ATTR:
            one = Rename(((attr, ACTDOM_ATTR),), one)
        parts.append(one)
    if not parts:
        raise SortError(f"relation {relation} has no key attributes to index")
    adom = parts[0]
    for part in parts[1:]:
        adom = UnionOp(adom, part, "func")
    left = Rename(((ACTDOM_ATTR, "zl"),), adom)
    right = Rename(((ACTDOM_ATTR, "zr"),), adom)
    square = Product(left, right)
    indicator = ExtFn(
        "ord_indicator",
        Sort(("zl", "zr"), ()),
        Sort((), ("o1",)),
        body=_ORD_INDICATOR,
    )
    summed = AggBy(("zl",), "sum", MapOp(indicator, square))
    return Rename((("zl", ACTDOM_ATTR), ("o1", "pos")), summed)
