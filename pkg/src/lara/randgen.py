"""Seeded generators for databases, equality-mode expressions, permutations,
and safe formula/function pairs.  Everything here is driven by one
``random.Random`` so runs reproduce exactly."""

from __future__ import annotations

import random
from fractions import Fraction

from .errors import LaraError
from .expr import (
    AggBy,
    Analyzer,
    Atom,
    BuiltinRef,
    Env,
    Ext,
    Filter,
    FilterPred,
    Join,
    LaraExpr,
    MapOp,
    ProjVals,
    ReduceBy,
    Rename,
    UnionOp,
)
from .extfn import ExtFn, parse_dsl
from .tables import AssocTable, Database, Sort

_KEY_POOL = [0, 1, 2, 3, 7, -2, "a", "b", "k1", "k2", 10, "zz"]
_FRESH_ATTRS = ["p1", "p2", "p3", "p4", "q1", "q2", "q3", "q4", "q5", "q6"]


def random_value(rng: random.Random) -> Fraction:
    return Fraction(rng.randrange(-9, 10), rng.randrange(1, 5))


def random_database(rng: random.Random, max_keys: int = 6) -> Database:
    """Small schema (1-3 relations) over a bounded key universe."""
    universe = rng.sample(_KEY_POOL, rng.randrange(2, max_keys + 1))
    tables = {}
    for idx in range(rng.randrange(1, 4)):
        name = f"R{idx}"
        nk = rng.randrange(1, 3)
        nv = rng.randrange(0, 3)
        keys = tuple(rng.sample(["a", "b", "c"], nk))
        vals = tuple(rng.sample(["u", "v", "w"], nv))
        sort = Sort(keys, vals)
        rows = {}
        for _ in range(rng.randrange(0, 7)):
            kt = tuple(rng.choice(universe) for _ in keys)
            rows[kt] = tuple(random_value(rng) for _ in vals)
        tables[name] = AssocTable(sort, rows.items())
    return Database(tables)


def random_key_permutation(rng: random.Random, keys) -> dict:
    """Injective map over the given keys: a mix of swaps and fresh images."""
    keys = list(keys)
    fresh = [k + 100 if isinstance(k, int) else k + "_x" for k in keys]
    images = keys + [f for f in fresh if f not in keys]
    rng.shuffle(images)
    mapping = {}
    used = set()
    for k in keys:
        img = next(i for i in images if i not in used)
        used.add(img)
        mapping[k] = img
    return mapping


def _random_map_fn(rng: random.Random, in_sort: Sort) -> ExtFn:
    """A small equality-mode value transformation over the input sort."""
    out_attr = "m1"
    while out_attr in in_sort.attrs:
        out_attr += "x"
    c = rng.randrange(-3, 4)
    if in_sort.val_attrs:
        src = rng.choice(in_sort.val_attrs)
        body = rng.choice(
            [
                f"add({src}, {c}, {out_attr})",
                f"mul({src}, 2, {out_attr})",
                f"exists t0:val (add({src}, {c}, t0) and mul(t0, 3, {out_attr}))",
            ]
        )
    else:
        body = f"eq({out_attr}, {c})"
    return ExtFn(
        f"gen_map_{out_attr}_{c}",
        in_sort,
        Sort((), (out_attr,)),
        body=parse_dsl(body),
    )


def _random_filter(rng: random.Random, in_sort: Sort) -> FilterPred:
    if in_sort.val_attrs:
        src = rng.choice(in_sort.val_attrs)
        c = rng.randrange(-2, 6)
        body = rng.choice(
            [
                f"leq({src}, {c})",
                f"not leq({src}, {c})",
                f"exists t0:val (add({src}, 1, t0) and leq(t0, {c}))",
            ]
        )
        return FilterPred(f"gen_filter_{src}_{c}", (), (src,), parse_dsl(body))
    keys = in_sort.key_attrs
    if len(keys) >= 2:
        body = f"{keys[0]} = {keys[1]}"
        return FilterPred("gen_filter_keys", (keys[0], keys[1]), (), parse_dsl(body))
    return FilterPred("gen_filter_true", (), (), parse_dsl("true"))


_PAD_SAFE = ("sum", "prod", "count")
_NO_PAD = ("sum", "prod", "count", "min", "max")


def random_tame_expr(rng: random.Random, env: Env, depth: int) -> LaraExpr:
    """A sort-correct expression using only key-permutation-invariant parts."""
    an = Analyzer(env)

    def atom():
        return Atom(rng.choice(sorted(env.schema)))

    def gen(d: int) -> LaraExpr:
        if d <= 0:
            return atom()
        for _ in range(8):
            try:
                candidate = _step(d)
                an.sort_of(candidate)
                return candidate
            except LaraError:
                continue
        return atom()

    def _step(d: int) -> LaraExpr:
        kind = rng.choice(
            ["join", "union", "agg", "red", "map", "projv", "rename",
             "filter", "copyk", "eqv"]
        )
        if kind == "join":
            left, right = gen(d - 1), gen(d - 1)
            s1, s2 = an.sort_of(left), an.sort_of(right)
            ops = _NO_PAD if set(s1.val_attrs) == set(s2.val_attrs) else _PAD_SAFE
            return Join(left, right, rng.choice(ops))
        if kind == "union":
            left, right = gen(d - 1), gen(d - 1)
            s1, s2 = an.sort_of(left), an.sort_of(right)
            ops = _NO_PAD if set(s1.val_attrs) == set(s2.val_attrs) else _PAD_SAFE
            return UnionOp(left, right, rng.choice(ops))
        if kind in ("agg", "red"):
            sub = gen(d - 1)
            sort = an.sort_of(sub)
            if not sort.key_attrs:
                return sub
            count = rng.randrange(0, len(sort.key_attrs) + 1)
            keys = tuple(rng.sample(sort.key_attrs, count))
            op = rng.choice(_NO_PAD + ("avg",))
            return AggBy(keys, op, sub) if kind == "agg" else ReduceBy(keys, op, sub)
        if kind == "map":
            sub = gen(d - 1)
            return MapOp(_random_map_fn(rng, an.sort_of(sub)), sub)
        if kind == "projv":
            sub = gen(d - 1)
            sort = an.sort_of(sub)
            count = rng.randrange(0, len(sort.val_attrs) + 1)
            return ProjVals(tuple(rng.sample(sort.val_attrs, count)), sub)
        if kind == "rename":
            sub = gen(d - 1)
            sort = an.sort_of(sub)
            if not sort.attrs:
                return sub
            old = rng.choice(sort.attrs)
            new = rng.choice([a for a in _FRESH_ATTRS if a not in sort.attrs])
            return Rename(((old, new),), sub)
        if kind == "filter":
            sub = gen(d - 1)
            return Filter(_random_filter(rng, an.sort_of(sub)), sub)
        if kind == "copyk":
            sub = gen(d - 1)
            sort = an.sort_of(sub)
            if not sort.key_attrs:
                return sub
            src = rng.choice(sort.key_attrs)
            dst = rng.choice([a for a in _FRESH_ATTRS if a not in sort.attrs])
            return Ext(BuiltinRef("copyk", ((src,), (dst,))), sub)
        if kind == "eqv":
            sub = gen(d - 1)
            sort = an.sort_of(sub)
            if len(sort.val_attrs) < 2:
                return sub
            left, right = rng.sample(sort.val_attrs, 2)
            which = rng.choice(["eqv", "neqv"])
            return MapOp(BuiltinRef(which, ((left,), (right,))), sub)
        raise AssertionError(kind)

    return gen(depth)


def random_safe_fn(rng: random.Random, index: int) -> tuple[ExtFn, list]:
    """A generated safe function plus sample input rows for it.

    Output keys are pinned by equality chains, output values by functional
    predicate chains; extra check atoms, guarded-pair disjunctions, and
    determined negations exercise the rest of the checker.
    """
    nk_in = rng.randrange(1, 3)
    nv_in = rng.randrange(1, 3)
    nk_out = rng.randrange(0, 2)
    nv_out = rng.randrange(1, 3)
    in_keys = tuple(f"k{i}" for i in range(nk_in))
    in_vals = tuple(f"i{i}" for i in range(nv_in))
    out_keys = tuple(f"y{i}" for i in range(nk_out))
    out_vals = tuple(f"j{i}" for i in range(nv_out))
    parts = []
    for y in out_keys:
        parts.append(f"{y} = {rng.choice(in_keys)}")
    for n, j in enumerate(out_vals):
        src = rng.choice(in_vals)
        c = rng.randrange(-4, 5)
        shape = rng.randrange(0, 4)
        if shape == 0:
            parts.append(f"add({src}, {c}, {j})")
        elif shape == 1:
            parts.append(f"exists t{n}:val (mul({src}, 2, t{n}) and add(t{n}, {c}, {j}))")
        elif shape == 2 and len(in_keys) >= 2:
            a, b = in_keys[0], in_keys[1]
            parts.append(
                f"({a} = {b} implies eq({j}, {c})) and "
                f"(not ({a} = {b}) implies add({src}, {c}, {j}))"
            )
        else:
            parts.append(f"mul({src}, {rng.randrange(1, 4)}, {j})")
    if rng.random() < 0.4:
        parts.append(f"not lt({rng.choice(in_vals)}, {rng.randrange(-8, 0)})")
    if rng.random() < 0.4:
        parts.append(f"leq({rng.choice(in_vals)}, {rng.randrange(0, 30)})")
    body = " and ".join(parts)
    fn = ExtFn(
        f"fuzz_{index}",
        Sort(in_keys, in_vals),
        Sort(out_keys, out_vals),
        body=parse_dsl(body),
    )
    samples = []
    for _ in range(3):
        keys = tuple(rng.choice(_KEY_POOL) for _ in in_keys)
        vals = tuple(random_value(rng) for _ in in_vals)
        samples.append((keys, vals))
    return fn, samples
