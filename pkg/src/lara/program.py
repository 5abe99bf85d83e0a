"""Surface syntax: schema declarations, function/predicate definitions, bindings.

A program is a sequence of items::

    table A(i:key, j:key, v1:val, v2:val)
    fn g (keys i, j ; vals v1, v2) -> (keys ; vals z) := i = 0 and eq(z, 1)
    pred small (keys ; vals v1) := leq(v1, 10)
    Joined = join[mul](A, B)
    result = union[sum](Joined, A)

Bindings form an acyclic graph; a binding named ``result`` is mandatory and
is the expression the commands evaluate.  Expression references to a binding
share the bound subexpression, so evaluation materializes it once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ParseError, SortError
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
    LaraExpr,
    MapOp,
    Product,
    ProjVals,
    ReduceBy,
    Rename,
    UnionOp,
)
from .extfn import BUILTIN_KINDS, ExtFn, parse_formula
from .syntax import TokenStream, tokenize
from .tables import Sort
from .values import NEG_INF, POS_INF

_EXPR_KEYWORDS = {
    "empty", "actdom", "ind", "join", "union", "ext", "map",
    "agg", "red", "projv", "rename", "product", "filter",
}
_ITEM_KEYWORDS = {"table", "fn", "pred"}


@dataclass
class Program:
    env: Env
    bindings: dict[str, LaraExpr]
    result: LaraExpr
    analyzer: Analyzer = field(init=False)

    def __post_init__(self):
        self.analyzer = Analyzer(self.env)
        for expr in self.bindings.values():
            self.analyzer.sort_of(expr)

    @property
    def result_sort(self) -> Sort:
        return self.analyzer.sort_of(self.result)

    def uses_order(self) -> bool:
        return self.analyzer.uses_order(self.result)

    def is_generic(self) -> bool:
        return self.analyzer.is_generic(self.result)


class _ProgramParser:
    def __init__(self, text: str):
        self.ts = TokenStream(tokenize(text))
        self.schema: dict[str, Sort] = {}
        self.fns: dict[str, ExtFn] = {}
        self.preds: dict[str, FilterPred] = {}
        self.bindings: dict[str, LaraExpr] = {}

    # -- shared pieces ------------------------------------------------------

    def _fresh_name(self, name: str, tok):
        taken = (
            name in self.schema
            or name in self.fns
            or name in self.preds
            or name in self.bindings
        )
        if taken:
            raise ParseError(f"name {name!r} is already defined", tok.line, tok.column)

    def _name_list(self, stop: str) -> tuple[str, ...]:
        names = []
        while not self.ts.at("punct", stop):
            tok = self.ts.expect("name")
            names.append(tok.text)
            if not self.ts.accept("punct", ","):
                break
        return tuple(names)

    def _signature(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        self.ts.expect("punct", "(")
        self.ts.expect("name", "keys")
        keys = self._name_list(";")
        self.ts.expect("punct", ";")
        self.ts.expect("name", "vals")
        vals = self._name_list(")")
        self.ts.expect("punct", ")")
        return keys, vals

    # -- items ---------------------------------------------------------------

    def parse(self) -> Program:
        while not self.ts.at("eof"):
            tok = self.ts.current
            if tok.kind != "name":
                self.ts.error("expected a declaration or binding")
            if tok.text == "table":
                self._table_decl()
            elif tok.text == "fn":
                self._fn_decl()
            elif tok.text == "pred":
                self._pred_decl()
            else:
                self._binding()
        if "result" not in self.bindings:
            raise ParseError("program defines no 'result' binding")
        env = Env(schema=self.schema, fns=self.fns, preds=self.preds)
        result = self.bindings["result"]
        return Program(env, self.bindings, result)

    def _table_decl(self):
        self.ts.expect("name", "table")
        name_tok = self.ts.expect("name")
        self._fresh_name(name_tok.text, name_tok)
        self.ts.expect("punct", "(")
        keys, vals = [], []
        while not self.ts.at("punct", ")"):
            attr = self.ts.expect("name").text
            self.ts.expect("punct", ":")
            kind = self.ts.expect("name")
            if kind.text == "key":
                if vals:
                    raise ParseError(
                        "key attributes must precede value attributes",
                        kind.line, kind.column,
                    )
                keys.append(attr)
            elif kind.text == "val":
                vals.append(attr)
            else:
                raise ParseError("attribute kind must be 'key' or 'val'",
                                 kind.line, kind.column)
            if not self.ts.accept("punct", ","):
                break
        self.ts.expect("punct", ")")
        self.schema[name_tok.text] = Sort(tuple(keys), tuple(vals))

    def _fn_decl(self):
        self.ts.expect("name", "fn")
        name_tok = self.ts.expect("name")
        self._fresh_name(name_tok.text, name_tok)
        in_keys, in_vals = self._signature()
        self.ts.expect("punct", "->")
        out_keys, out_vals = self._signature()
        self.ts.expect("punct", ":=")
        body = parse_formula(self.ts)
        self.fns[name_tok.text] = ExtFn(
            name_tok.text,
            Sort(in_keys, in_vals),
            Sort(out_keys, out_vals),
            body=body,
        )

    def _pred_decl(self):
        self.ts.expect("name", "pred")
        name_tok = self.ts.expect("name")
        self._fresh_name(name_tok.text, name_tok)
        keys, vals = self._signature()
        self.ts.expect("punct", ":=")
        body = parse_formula(self.ts)
        self.preds[name_tok.text] = FilterPred(name_tok.text, keys, vals, body)

    def _binding(self):
        name_tok = self.ts.expect("name")
        self._fresh_name(name_tok.text, name_tok)
        self.ts.expect("punct", "=")
        self.bindings[name_tok.text] = self._expr()

    # -- expressions ---------------------------------------------------------

    def _agg_name(self) -> str:
        return self.ts.expect("name").text

    def _expr(self) -> LaraExpr:
        tok = self.ts.current
        if tok.kind != "name":
            self.ts.error("expected an expression")
        word = tok.text
        if word == "empty":
            self.ts.advance()
            return Empty()
        if word == "actdom":
            self.ts.advance()
            return ActDom()
        if word == "ind":
            self.ts.advance()
            self.ts.expect("punct", "(")
            rel = self.ts.expect("name").text
            self.ts.expect("punct", ")")
            return Ind(rel)
        if word in ("join", "union"):
            self.ts.advance()
            self.ts.expect("punct", "[")
            op = self._agg_name()
            self.ts.expect("punct", "]")
            self.ts.expect("punct", "(")
            left = self._expr()
            self.ts.expect("punct", ",")
            right = self._expr()
            self.ts.expect("punct", ")")
            cls = Join if word == "join" else UnionOp
            return cls(left, right, op)
        if word == "product":
            self.ts.advance()
            self.ts.expect("punct", "(")
            left = self._expr()
            self.ts.expect("punct", ",")
            right = self._expr()
            self.ts.expect("punct", ")")
            return Product(left, right)
        if word in ("ext", "map"):
            self.ts.advance()
            self.ts.expect("punct", "[")
            fn = self._fn_ref()
            self.ts.expect("punct", "]")
            sub = self._parenthesized()
            return (Ext if word == "ext" else MapOp)(fn, sub)
        if word in ("agg", "red"):
            self.ts.advance()
            self.ts.expect("punct", "[")
            op = self._agg_name()
            self.ts.expect("punct", ";")
            keys = self._name_list("]")
            self.ts.expect("punct", "]")
            sub = self._parenthesized()
            return AggBy(keys, op, sub) if word == "agg" else ReduceBy(keys, op, sub)
        if word == "projv":
            self.ts.advance()
            self.ts.expect("punct", "[")
            vals = self._name_list("]")
            self.ts.expect("punct", "]")
            return ProjVals(vals, self._parenthesized())
        if word == "rename":
            self.ts.advance()
            self.ts.expect("punct", "[")
            pairs = []
            while not self.ts.at("punct", "]"):
                old = self.ts.expect("name").text
                self.ts.expect("punct", "->")
                new = self.ts.expect("name").text
                pairs.append((old, new))
                if not self.ts.accept("punct", ","):
                    break
            self.ts.expect("punct", "]")
            return Rename(tuple(pairs), self._parenthesized())
        if word == "filter":
            self.ts.advance()
            self.ts.expect("punct", "[")
            pred = self.ts.expect("name").text
            self.ts.expect("punct", "]")
            return Filter(pred, self._parenthesized())
        # plain reference: a binding or a relation
        self.ts.advance()
        if word in self.bindings:
            return self.bindings[word]
        if word in self.schema:
            return Atom(word)
        raise ParseError(f"unknown name {word!r}", tok.line, tok.column)

    def _parenthesized(self) -> LaraExpr:
        self.ts.expect("punct", "(")
        sub = self._expr()
        self.ts.expect("punct", ")")
        return sub

    def _fn_ref(self):
        tok = self.ts.expect("name")
        name = tok.text
        if name in BUILTIN_KINDS:
            return self._builtin_ref(name)
        if name in self.fns:
            return name
        raise ParseError(f"unknown extension function {name!r}", tok.line, tok.column)

    def _builtin_ref(self, kind: str) -> BuiltinRef:
        self.ts.expect("punct", "(")
        if kind in ("copyk", "copyv", "copyvk", "copykv"):
            src = self._name_list("->")
            self.ts.expect("punct", "->")
            dst = self._name_list(")")
            self.ts.expect("punct", ")")
            return BuiltinRef(kind, (src, dst))
        if kind in ("eqk", "eqv", "neqk", "neqv"):
            left = self._name_list(";")
            self.ts.expect("punct", ";")
            right = self._name_list(")")
            self.ts.expect("punct", ")")
            return BuiltinRef(kind, (left, right))
        if kind == "addv":
            attr = self.ts.expect("name").text
            self.ts.expect("punct", ",")
            tok = self.ts.current
            if tok.kind == "number":
                self.ts.advance()
                const = Fraction(tok.text)
            elif tok.kind == "neginf":
                self.ts.advance()
                const = NEG_INF
            elif self.ts.accept("name", "inf"):
                const = POS_INF
            else:
                self.ts.error("expected a value literal")
            self.ts.expect("punct", ")")
            return BuiltinRef(kind, (attr, const))
        if kind == "projv":
            vals = self._name_list(")")
            self.ts.expect("punct", ")")
            return BuiltinRef(kind, (vals,))
        raise ParseError(f"unknown builtin family {kind!r}")


def parse_program(text: str) -> Program:
    """Parse and sort-check one program."""
    return _ProgramParser(text).parse()
