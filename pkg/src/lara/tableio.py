"""Loading and saving tables in the canonical delimited format.

Header line: ``attr:key,...,attr:val,...``.  Key cells are bare integers or
double-quoted strings (with ``""`` escaping a quote); value cells are ``p/q``,
integers, or plain decimals.  Rows are unordered on disk but tables are
canonically re-sorted on load.
"""

from __future__ import annotations

import os

from .errors import LoadError, StructuralError
from .tables import AssocTable, Database, Sort, serialize_table
from .values import parse_key, parse_value


def _split_cells(line: str, lineno: int) -> list[str]:
    cells, buf, in_quotes = [], [], False
    i = 0
    while i < len(line):
        c = line[i]
        if c == '"':
            if in_quotes and i + 1 < len(line) and line[i + 1] == '"':
                buf.append('""')
                i += 2
                continue
            in_quotes = not in_quotes
            buf.append(c)
        elif c == "," and not in_quotes:
            cells.append("".join(buf).strip())
            buf = []
        else:
            buf.append(c)
        i += 1
    if in_quotes:
        raise LoadError(f"line {lineno}: unterminated quote")
    cells.append("".join(buf).strip())
    return cells


def parse_table_text(text: str, origin: str = "<string>") -> AssocTable:
    """Parse the canonical format; rejects conflicting duplicate keys by row number."""
    lines = [ln for ln in text.splitlines()]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise LoadError(f"{origin}: missing header line")
    header = lines[0].strip()
    key_attrs, val_attrs = [], []
    if header:
        for cell in _split_cells(header, 1):
            if ":" not in cell:
                raise LoadError(f"{origin}: header cell {cell!r} lacks a :key/:val kind")
            name, kind = cell.rsplit(":", 1)
            name = name.strip()
            if kind == "key":
                if val_attrs:
                    raise LoadError(f"{origin}: key attribute {name} after value attributes")
                key_attrs.append(name)
            elif kind == "val":
                val_attrs.append(name)
            else:
                raise LoadError(f"{origin}: unknown attribute kind {kind!r}")
    try:
        sort = Sort(tuple(key_attrs), tuple(val_attrs))
    except StructuralError as exc:
        raise LoadError(f"{origin}: {exc}") from None
    nk, nv = len(key_attrs), len(val_attrs)
    seen: dict[tuple, tuple[tuple, int]] = {}
    rows = []
    for offset, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line == "()" and nk + nv == 0:
            cells = []
        else:
            cells = _split_cells(line, offset)
        if len(cells) != nk + nv:
            raise LoadError(
                f"{origin}: line {offset}: expected {nk + nv} cells, found {len(cells)}"
            )
        try:
            keys = tuple(parse_key(c) for c in cells[:nk])
            vals = tuple(parse_value(c) for c in cells[nk:])
        except StructuralError as exc:
            raise LoadError(f"{origin}: line {offset}: {exc}") from None
        prior = seen.get(keys)
        if prior is not None and prior[0] != vals:
            raise LoadError(
                f"{origin}: lines {prior[1]} and {offset} share a key tuple "
                f"with differing values"
            )
        seen[keys] = (vals, offset)
        rows.append((keys, vals))
    try:
        return AssocTable(sort, rows)
    except StructuralError as exc:
        raise LoadError(f"{origin}: {exc}") from None


def load_table(path: str) -> AssocTable:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise LoadError(str(exc)) from None
    return parse_table_text(text, origin=path)


def save_table(table: AssocTable, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(serialize_table(table))


def load_database_dir(path: str, schema: dict[str, Sort]) -> Database:
    """One file per declared relation: ``<name>.csv`` (or bare ``<name>``)."""
    tables = {}
    for name, declared in schema.items():
        candidates = [os.path.join(path, name + ".csv"), os.path.join(path, name)]
        filename = next((c for c in candidates if os.path.isfile(c)), None)
        if filename is None:
            raise LoadError(f"no file for relation {name} in {path}")
        table = load_table(filename)
        if table.sort != declared:
            raise LoadError(
                f"{filename}: sort {table.sort} does not match declared {declared}"
            )
        tables[name] = table
    return Database(tables, dict(schema))
