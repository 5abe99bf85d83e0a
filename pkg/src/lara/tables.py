"""Associative tables: sorts, rows, the key constraint, Solve, and padding.

An associative table is a finite set of two-sorted rows in which the key
tuple functionally determines the value tuple.  Construction always
re-validates that constraint and re-sorts rows by key, so two tables are
equal exactly when their canonical serializations are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import EvaluationError, StructuralError
from .values import (
    Key,
    Value,
    check_key,
    check_value,
    format_key,
    format_value,
    is_key,
    key_sort_token,
)

_NAME_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_'")


def _check_attr_name(name: str) -> str:
    if not name or name[0].isdigit() or not set(name) <= _NAME_OK:
        raise StructuralError(f"bad attribute name: {name!r}")
    return name


@dataclass(frozen=True)
class Sort:
    """Ordered key-attribute and value-attribute names, disjoint within and across."""

    key_attrs: tuple[str, ...]
    val_attrs: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "key_attrs", tuple(self.key_attrs))
        object.__setattr__(self, "val_attrs", tuple(self.val_attrs))
        for a in self.key_attrs + self.val_attrs:
            _check_attr_name(a)
        if len(set(self.key_attrs)) != len(self.key_attrs):
            raise StructuralError(f"duplicate key attribute in {self}")
        if len(set(self.val_attrs)) != len(self.val_attrs):
            raise StructuralError(f"duplicate value attribute in {self}")
        if set(self.key_attrs) & set(self.val_attrs):
            raise StructuralError(f"attribute used as both key and value in {self}")

    @property
    def attrs(self) -> tuple[str, ...]:
        return self.key_attrs + self.val_attrs

    def __str__(self):
        ks = ",".join(self.key_attrs)
        vs = ",".join(self.val_attrs)
        return f"(({ks}),({vs}))"


Row = tuple[tuple[Key, ...], tuple[Value, ...]]


class AssocTable:
    """Immutable associative table; rows are kept sorted by key tuple."""

    __slots__ = ("sort", "rows", "_index")

    def __init__(self, sort: Sort, rows=()):
        object.__setattr__(self, "sort", sort)
        index: dict[tuple, tuple] = {}
        nk, nv = len(sort.key_attrs), len(sort.val_attrs)
        for keys, vals in rows:
            keys = tuple(keys)
            vals = tuple(vals)
            if len(keys) != nk or len(vals) != nv:
                raise StructuralError(
                    f"row arity mismatch for sort {sort}: {keys} | {vals}"
                )
            for k in keys:
                check_key(k)
            for v in vals:
                check_value(v)
            old = index.get(keys)
            if old is not None and old != vals:
                raise StructuralError(
                    "key-functionality violated at key "
                    f"({', '.join(map(format_key, keys))}): "
                    f"{tuple(map(format_value, old))} vs {tuple(map(format_value, vals))}"
                )
            index[keys] = vals
        ordered = sorted(index.items(), key=lambda kv: tuple(map(key_sort_token, kv[0])))
        object.__setattr__(self, "rows", tuple(ordered))
        object.__setattr__(self, "_index", index)

    def __setattr__(self, *_):
        raise AttributeError("AssocTable is immutable")

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        return (
            isinstance(other, AssocTable)
            and self.sort == other.sort
            and self.rows == other.rows
        )

    def __hash__(self):
        return hash((self.sort, self.rows))

    def __repr__(self):
        return f"AssocTable({self.sort}, {len(self.rows)} rows)"

    def lookup(self, keys: tuple) -> tuple | None:
        return self._index.get(tuple(keys))

    def keys_used(self) -> set:
        out = set()
        for keys, _ in self.rows:
            out.update(keys)
        return out


def empty_table() -> AssocTable:
    return AssocTable(Sort((), ()), ())


def pad_row(
    vals: tuple,
    from_attrs: tuple[str, ...],
    to_attrs: tuple[str, ...],
    neutral: Value,
) -> tuple:
    """Extend a value tuple to a larger value sort, filling new slots with the neutral.

    ``from_attrs`` must be a subset of ``to_attrs``; attributes already present
    keep their value, every new attribute receives ``neutral``.
    """
    if len(vals) != len(from_attrs):
        raise StructuralError(
            f"padding arity mismatch: {len(vals)} values for attributes {from_attrs}"
        )
    if not set(from_attrs) <= set(to_attrs):
        raise StructuralError(f"padding target {to_attrs} does not cover {from_attrs}")
    by_name = dict(zip(from_attrs, vals))
    return tuple(by_name.get(a, neutral) for a in to_attrs)


def solve(sort: Sort, pairs, agg) -> AssocTable:
    """Restore key-functionality: group a multiset of rows by key and aggregate.

    ``pairs`` is an iterable (multiset!) of ``(key_tuple, value_tuple)``;
    ``agg`` is one aggregate operator applied to every value attribute, or a
    sequence giving one operator per value attribute.
    """
    if hasattr(agg, "apply"):
        per_attr = [agg] * len(sort.val_attrs)
    else:
        per_attr = list(agg)
        if len(per_attr) != len(sort.val_attrs):
            raise StructuralError("need one aggregate per value attribute")
    groups: dict[tuple, list[tuple]] = {}
    for keys, vals in pairs:
        keys = tuple(keys)
        vals = tuple(vals)
        if len(keys) != len(sort.key_attrs) or len(vals) != len(sort.val_attrs):
            raise StructuralError(f"row arity mismatch in solve for sort {sort}")
        groups.setdefault(keys, []).append(vals)
    rows = []
    for keys, members in groups.items():
        out = []
        for i, op in enumerate(per_attr):
            multiset = [vals[i] for vals in members]
            try:
                out.append(op.apply(multiset))
            except EvaluationError as exc:
                raise EvaluationError(
                    f"aggregate '{op.name}' undefined at key "
                    f"({', '.join(map(format_key, keys))}): {exc}"
                ) from None
        rows.append((keys, tuple(out)))
    return AssocTable(sort, rows)


def apply_key_permutation(table: AssocTable, mapping: dict) -> AssocTable:
    """Replace every key by its image under an injective map (identity elsewhere)."""
    occurring = table.keys_used()
    images = {}
    for k in occurring:
        img = mapping.get(k, k)
        check_key(img)
        prev = images.get(img)
        if prev is not None and prev != k:
            raise StructuralError(
                f"key map is not injective: {format_key(prev)} and {format_key(k)} "
                f"both map to {format_key(img)}"
            )
        images[img] = k
    rows = [
        (tuple(mapping.get(k, k) for k in keys), vals) for keys, vals in table.rows
    ]
    return AssocTable(table.sort, rows)


def permute_database(db: "Database", mapping: dict) -> "Database":
    return Database(
        {name: apply_key_permutation(t, mapping) for name, t in db.tables.items()}
    )


@dataclass(frozen=True)
class Database:
    """Named associative tables plus their declared schema."""

    tables: dict[str, AssocTable]
    schema: dict[str, Sort] = field(default=None)

    def __post_init__(self):
        if self.schema is None:
            object.__setattr__(
                self, "schema", {n: t.sort for n, t in self.tables.items()}
            )
        for name, table in self.tables.items():
            declared = self.schema.get(name)
            if declared is None:
                raise StructuralError(f"table {name} missing from schema")
            if declared != table.sort:
                raise StructuralError(
                    f"table {name} has sort {table.sort}, declared {declared}"
                )

    def relation(self, name: str) -> AssocTable:
        try:
            return self.tables[name]
        except KeyError:
            raise EvaluationError(f"unknown relation: {name}") from None

    def active_keys(self) -> list:
        keys = set()
        for table in self.tables.values():
            keys.update(table.keys_used())
        return sorted(keys, key=key_sort_token)


def serialize_table(table: AssocTable) -> str:
    """Canonical form: one `name:kind` header line, then rows sorted by key."""
    header = ",".join(
        [f"{a}:key" for a in table.sort.key_attrs]
        + [f"{a}:val" for a in table.sort.val_attrs]
    )
    lines = [header]
    for keys, vals in table.rows:
        cells = [format_key(k) for k in keys] + [format_value(v) for v in vals]
        lines.append(",".join(cells) if cells else "()")
    return "\n".join(lines) + "\n"


def table_key_set(table: AssocTable) -> list:
    """Distinct keys occurring anywhere in the table, in key order."""
    return sorted(table.keys_used(), key=key_sort_token)
