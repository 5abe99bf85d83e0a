"""Safe first-order logic with aggregation over associative tables.

This is the semantics oracle for the algebra: formulas are evaluated
bottom-up as finite relations (key variables range-restricted through
relation atoms, value variables bound only through guarded equalities,
relation atoms, or extension-function atoms), and every expression of the
algebra is translated into an equivalent formula.  The differential test
asserts byte-equality of the two evaluation paths.

The union translation pads the missing key positions of each side with a
reserved key object internal to this evaluator, and both binary translations
tag the two sides with a 0/1 flag in a dedicated value position so that the
multiset semantics of the algebra survives the set semantics of the logic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union as TUnion

from .aggregates import AggOp
from .algebra import desugar
from .errors import EvaluationError, SortError, StructuralError
from .expr import (
    Analyzer,
    Atom,
    Empty,
    Env,
    Ext,
    Join,
    LaraExpr,
    Rename,
    UnionOp,
    statically_empty,
)
from .extfn import ExtFn, eval_extfn
from .tables import AssocTable, Database, Sort, solve
from .values import Value, format_value


class _PadKey:
    """Reserved key object used to pad non-shared key positions in unions."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "<pad>"


PAD_KEY = _PadKey()


# ---------------------------------------------------------------------------
# Terms and formulas


@dataclass(frozen=True)
class TVar:
    name: str


@dataclass(frozen=True)
class TConst:
    value: Value


@dataclass(eq=False)
class TAgg:
    """Aggregation term: the operator applied to the term's values over all
    satisfying assignments of the bound variables in the inner formula."""

    op: AggOp
    bound_keyvars: tuple[str, ...]
    bound_valvars: tuple[str, ...]
    term: "Term"
    formula: "LogicFormula"
    expect_pair: bool = False  # join translation: every group has exactly two rows

    @property
    def free(self) -> frozenset[str]:
        bound = frozenset(self.bound_keyvars) | frozenset(self.bound_valvars)
        return (formula_vars(self.formula) | term_vars(self.term)) - bound


Term = TUnion[TVar, TConst, TAgg]


def term_vars(t: Term) -> frozenset[str]:
    if isinstance(t, TVar):
        return frozenset((t.name,))
    if isinstance(t, TConst):
        return frozenset()
    return t.free


@dataclass(eq=False)
class Bot:
    keyvars: tuple[str, ...] = ()
    valvars: tuple[str, ...] = ()


@dataclass(eq=False)
class RelAtom:
    name: str
    keyvars: tuple[str, ...]
    valvars: tuple[str, ...]


@dataclass(eq=False)
class KeyEqF:
    left: str
    right: str


@dataclass(eq=False)
class KeyPad:
    var: str


@dataclass(eq=False)
class ValEqF:
    var: str
    term: Term


@dataclass(eq=False)
class FnAtom:
    fn: ExtFn
    in_keyvars: tuple[str, ...]
    in_valvars: tuple[str, ...]
    out_keyvars: tuple[str, ...]
    out_valvars: tuple[str, ...]


@dataclass(eq=False)
class AndF:
    parts: tuple


@dataclass(eq=False)
class OrF:
    parts: tuple


@dataclass(eq=False)
class Diff:
    """Guarded negation: pos and not neg, over identical free variables."""

    pos: "LogicFormula"
    neg: "LogicFormula"


@dataclass(eq=False)
class ExistsVars:
    keyvars: tuple[str, ...]
    valvars: tuple[str, ...]
    sub: "LogicFormula"


@dataclass(eq=False)
class Named:
    """Transparent labeled wrapper; lets the printer emit appendix-style definitions."""

    label: str
    sub: "LogicFormula"


LogicFormula = TUnion[
    Bot, RelAtom, KeyEqF, KeyPad, ValEqF, FnAtom, AndF, OrF, Diff, ExistsVars, Named
]


def formula_vars(f: LogicFormula) -> frozenset[str]:
    """Free variables of a formula."""
    if isinstance(f, Bot):
        return frozenset(f.keyvars) | frozenset(f.valvars)
    if isinstance(f, RelAtom):
        return frozenset(f.keyvars) | frozenset(f.valvars)
    if isinstance(f, KeyEqF):
        return frozenset((f.left, f.right))
    if isinstance(f, KeyPad):
        return frozenset((f.var,))
    if isinstance(f, ValEqF):
        return frozenset((f.var,)) | term_vars(f.term)
    if isinstance(f, FnAtom):
        return frozenset(f.in_keyvars + f.in_valvars + f.out_keyvars + f.out_valvars)
    if isinstance(f, (AndF, OrF)):
        out = frozenset()
        for p in f.parts:
            out |= formula_vars(p)
        return out
    if isinstance(f, Diff):
        return formula_vars(f.pos) | formula_vars(f.neg)
    if isinstance(f, ExistsVars):
        return formula_vars(f.sub) - set(f.keyvars) - set(f.valvars)
    if isinstance(f, Named):
        return formula_vars(f.sub)
    raise TypeError(f"not a logic formula: {f!r}")


# ---------------------------------------------------------------------------
# Relations and evaluation


@dataclass
class Rel:
    vars: tuple[str, ...]
    rows: set

    def project(self, keep: tuple[str, ...]) -> "Rel":
        pos = [self.vars.index(v) for v in keep]
        return Rel(tuple(keep), {tuple(r[i] for i in pos) for r in self.rows})

    def aligned_rows(self, order: tuple[str, ...]) -> set:
        pos = [self.vars.index(v) for v in order]
        return {tuple(r[i] for i in pos) for r in self.rows}


class LogicEvaluator:
    """Bottom-up range-restricted evaluation of safe formulas over one database."""

    def __init__(self, db: Database, env: Env):
        self.db = db
        self.env = env
        self._memo: dict[int, Rel] = {}

    def rel(self, f: LogicFormula) -> Rel:
        got = self._memo.get(id(f))
        if got is None:
            got = self._rel(f)
            self._memo[id(f)] = got
        return got

    def _rel(self, f: LogicFormula) -> Rel:
        if isinstance(f, Named):
            return self.rel(f.sub)
        if isinstance(f, Bot):
            return Rel(f.keyvars + f.valvars, set())
        if isinstance(f, RelAtom):
            table = self.db.relation(f.name)
            vars_ = f.keyvars + f.valvars
            if len(set(vars_)) != len(vars_):
                raise StructuralError(f"repeated variable in atom {f.name}")
            return Rel(vars_, {keys + vals for keys, vals in table.rows})
        if isinstance(f, AndF):
            state: Optional[Rel] = None
            for part in f.parts:
                state = self._extend(state, part)
            if state is None:
                raise StructuralError("empty conjunction")
            return state
        if isinstance(f, OrF):
            parts = [self.rel(p) for p in f.parts]
            base = parts[0]
            rows = set(base.rows)
            for p in parts[1:]:
                if set(p.vars) != set(base.vars):
                    raise StructuralError(
                        "disjunction between different free-variable signatures"
                    )
                rows |= p.aligned_rows(base.vars)
            return Rel(base.vars, rows)
        if isinstance(f, Diff):
            pos, neg = self.rel(f.pos), self.rel(f.neg)
            if set(pos.vars) != set(neg.vars):
                raise StructuralError(
                    "guarded negation between different free-variable signatures"
                )
            removed = neg.aligned_rows(pos.vars)
            return Rel(pos.vars, pos.rows - removed)
        if isinstance(f, ExistsVars):
            sub = self.rel(f.sub)
            drop = set(f.keyvars) | set(f.valvars)
            missing = drop - set(sub.vars)
            if missing:
                raise StructuralError(f"quantifier over absent variable {sorted(missing)[0]}")
            keep = tuple(v for v in sub.vars if v not in drop)
            return sub.project(keep)
        # bare extender atoms are not range-restricted on their own
        if isinstance(f, (KeyEqF, KeyPad, ValEqF, FnAtom)):
            raise StructuralError(
                f"{type(f).__name__} is not range-restricted outside a conjunction"
            )
        raise TypeError(f"not a logic formula: {f!r}")

    # -- conjunction machinery ------------------------------------------------

    def _extend(self, state: Optional[Rel], part: LogicFormula) -> Rel:
        if isinstance(part, Named):
            return self._extend(state, part.sub)
        if state is None:
            if isinstance(part, (KeyEqF, KeyPad, ValEqF, FnAtom)):
                raise StructuralError(
                    f"conjunction must open with a range-restricted formula, "
                    f"found {type(part).__name__}"
                )
            return self.rel(part)
        if isinstance(part, AndF):
            for p in part.parts:
                state = self._extend(state, p)
            return state
        if isinstance(part, OrF):
            branches = [self._extend(state, p) for p in part.parts]
            base = branches[0]
            rows = set(base.rows)
            for b in branches[1:]:
                if set(b.vars) != set(base.vars):
                    raise StructuralError(
                        "disjunction branches bind different variables"
                    )
                rows |= b.aligned_rows(base.vars)
            return Rel(base.vars, rows)
        if isinstance(part, KeyEqF):
            have_l = part.left in state.vars
            have_r = part.right in state.vars
            if have_l and have_r:
                li, ri = state.vars.index(part.left), state.vars.index(part.right)
                return Rel(state.vars, {r for r in state.rows if r[li] == r[ri]})
            if have_l or have_r:
                src = part.left if have_l else part.right
                new = part.right if have_l else part.left
                si = state.vars.index(src)
                return Rel(state.vars + (new,), {r + (r[si],) for r in state.rows})
            raise StructuralError(
                f"key equality {part.left} = {part.right} is not range-restricted"
            )
        if isinstance(part, KeyPad):
            if part.var in state.vars:
                vi = state.vars.index(part.var)
                return Rel(state.vars, {r for r in state.rows if r[vi] is PAD_KEY})
            return Rel(state.vars + (part.var,), {r + (PAD_KEY,) for r in state.rows})
        if isinstance(part, ValEqF):
            values = self._term_values(part.term, state)
            if part.var in state.vars:
                vi = state.vars.index(part.var)
                rows = set()
                for r in state.rows:
                    v = values(r)
                    if v is not None and r[vi] == v:
                        rows.add(r)
                return Rel(state.vars, rows)
            rows = set()
            for r in state.rows:
                v = values(r)
                if v is not None:
                    rows.add(r + (v,))
            return Rel(state.vars + (part.var,), rows)
        if isinstance(part, FnAtom):
            missing = [v for v in part.in_keyvars + part.in_valvars if v not in state.vars]
            if missing:
                raise StructuralError(
                    f"function atom input {missing[0]} is not range-restricted"
                )
            clash = [v for v in part.out_keyvars + part.out_valvars if v in state.vars]
            if clash:
                raise StructuralError(f"function atom output {clash[0]} is not fresh")
            kpos = [state.vars.index(v) for v in part.in_keyvars]
            vpos = [state.vars.index(v) for v in part.in_valvars]
            rows = set()
            for r in state.rows:
                in_keys = tuple(r[i] for i in kpos)
                in_vals = tuple(r[i] for i in vpos)
                if any(k is PAD_KEY for k in in_keys):
                    raise EvaluationError("padding key reached an extension function")
                out = eval_extfn(part.fn, in_keys, in_vals)
                for okeys, ovals in out.rows:
                    rows.add(r + okeys + ovals)
            return Rel(state.vars + part.out_keyvars + part.out_valvars, rows)
        # generic case: natural join with an independently evaluable formula
        other = self.rel(part)
        shared = tuple(v for v in other.vars if v in state.vars)
        new = tuple(v for v in other.vars if v not in state.vars)
        buckets: dict[tuple, list] = {}
        o_shared = [other.vars.index(v) for v in shared]
        o_new = [other.vars.index(v) for v in new]
        for r in other.rows:
            buckets.setdefault(tuple(r[i] for i in o_shared), []).append(
                tuple(r[i] for i in o_new)
            )
        s_shared = [state.vars.index(v) for v in shared]
        rows = set()
        for r in state.rows:
            for ext in buckets.get(tuple(r[i] for i in s_shared), ()):
                rows.add(r + ext)
        return Rel(state.vars + new, rows)

    def _term_values(self, term: Term, state: Rel):
        """Returns row -> value (or None when a group is undefined for func/avg)."""
        if isinstance(term, TConst):
            return lambda r: term.value
        if isinstance(term, TVar):
            if term.name not in state.vars:
                raise StructuralError(f"value term over unbound variable {term.name}")
            vi = state.vars.index(term.name)
            return lambda r: r[vi]
        if isinstance(term, TAgg):
            return self._agg_values(term, state)
        raise TypeError(f"not a term: {term!r}")

    def _agg_values(self, term: TAgg, state: Rel):
        inner = self.rel(term.formula)
        bound = set(term.bound_keyvars) | set(term.bound_valvars)
        group_vars = tuple(v for v in inner.vars if v not in bound)
        missing = [v for v in group_vars if v not in state.vars]
        if missing:
            raise StructuralError(
                f"aggregation term depends on unbound variable {missing[0]}"
            )
        if isinstance(term.term, TVar):
            if term.term.name not in inner.vars:
                raise StructuralError(
                    f"aggregated term variable {term.term.name} is not bound inside"
                )
            ti = inner.vars.index(term.term.name)
            value_of = lambda r: r[ti]
        elif isinstance(term.term, TConst):
            value_of = lambda r: term.term.value
        else:
            raise StructuralError("nested aggregation terms are not supported")
        g_pos = [inner.vars.index(v) for v in group_vars]
        groups: dict[tuple, list] = {}
        for r in inner.rows:
            groups.setdefault(tuple(r[i] for i in g_pos), []).append(value_of(r))
        if term.expect_pair:
            for key, members in groups.items():
                if len(members) != 2:
                    raise EvaluationError(
                        "flag invariant violated: a join group has "
                        f"{len(members)} rows instead of 2"
                    )
        s_pos = [state.vars.index(v) for v in group_vars]
        op = term.op

        def compute(r):
            members = groups.get(tuple(r[i] for i in s_pos))
            if members is None:
                return None
            return op.apply(members)

        return compute


def validate_safe(formula: LogicFormula, schema: dict[str, Sort], env: Env) -> None:
    """Structural safe-fragment check: dry-run the evaluator on an empty database.

    Binding order, disjunction signatures, quantifier scopes, and freshness
    are all checked without touching any data; raises on violations.
    """
    empty = Database(
        {name: AssocTable(sort, ()) for name, sort in schema.items()}
    )
    LogicEvaluator(empty, env).rel(formula)


@dataclass
class Translation:
    formula: LogicFormula
    sort: Sort
    keyvar: dict[str, str]
    valvar: dict[str, str]

    def output_vars(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        return (
            tuple(self.keyvar[a] for a in self.sort.key_attrs),
            tuple(self.valvar[a] for a in self.sort.val_attrs),
        )


def eval_formula(
    tr: Translation, db: Database, env: Env, resolver: AggOp | None = None
) -> AssocTable:
    """Evaluate a translated formula to an associative table (Solve restores keys)."""
    resolver = resolver or env.agg("func")
    evaluator = LogicEvaluator(db, env)
    relation = evaluator.rel(tr.formula)
    kvars, vvars = tr.output_vars()
    for v in kvars + vvars:
        if v not in relation.vars:
            raise StructuralError(f"output variable {v} is not bound by the formula")
    kpos = [relation.vars.index(v) for v in kvars]
    vpos = [relation.vars.index(v) for v in vvars]
    pairs = []
    for r in relation.rows:
        keys = tuple(r[i] for i in kpos)
        if any(k is PAD_KEY for k in keys):
            raise EvaluationError("reserved padding key leaked into the output")
        pairs.append((keys, tuple(r[i] for i in vpos)))
    return solve(tr.sort, pairs, resolver)


# ---------------------------------------------------------------------------
# Translation from the algebra


class Translator:
    """Compositional translation of core expressions into safe formulas."""

    def __init__(self, env: Env, analyzer: Analyzer | None = None):
        self.env = env
        self.an = analyzer or Analyzer(env)
        self._counts: dict[str, int] = {}

    def fresh(self, base: str) -> str:
        n = self._counts.get(base, 0) + 1
        self._counts[base] = n
        return base if n == 1 else f"{base}_{n}"

    def translate(self, e: LaraExpr) -> Translation:
        """Translate a desugared expression (core operators plus rename)."""
        sort = self.an.sort_of(e)
        if isinstance(e, Empty):
            return Translation(Bot((), ()), sort, {}, {})
        if isinstance(e, Atom):
            kv = {a: self.fresh(f"x_{a}") for a in sort.key_attrs}
            vv = {a: self.fresh(f"i_{a}") for a in sort.val_attrs}
            atom = RelAtom(
                e.name,
                tuple(kv[a] for a in sort.key_attrs),
                tuple(vv[a] for a in sort.val_attrs),
            )
            return Translation(atom, sort, kv, vv)
        if isinstance(e, Rename):
            sub = self.translate(e.sub)
            mapping = dict(e.mapping)
            kv = {mapping.get(a, a): sub.keyvar[a] for a in sub.sort.key_attrs}
            vv = {mapping.get(a, a): sub.valvar[a] for a in sub.sort.val_attrs}
            return Translation(sub.formula, sort, kv, vv)
        if isinstance(e, Ext):
            return self._translate_ext(e, sort)
        if isinstance(e, Join):
            return self._translate_join(e, sort)
        if isinstance(e, UnionOp):
            return self._translate_union(e, sort)
        raise SortError(
            f"translator covers core expressions only, found {type(e).__name__}"
        )

    def _translate_ext(self, e: Ext, sort: Sort) -> Translation:
        sub = self.translate(e.sub)
        fn = self.an.resolve_fn(e, sub.sort)
        out_k = {a: self.fresh(f"y_{a}") for a in fn.out_sort.key_attrs}
        out_v = {a: self.fresh(f"j_{a}") for a in fn.out_sort.val_attrs}
        atom = FnAtom(
            fn,
            tuple(sub.keyvar[a] for a in fn.in_sort.key_attrs),
            tuple(sub.valvar[a] for a in fn.in_sort.val_attrs),
            tuple(out_k[a] for a in fn.out_sort.key_attrs),
            tuple(out_v[a] for a in fn.out_sort.val_attrs),
        )
        inner_vals = tuple(sub.valvar[a] for a in sub.sort.val_attrs)
        formula = ExistsVars((), inner_vals, AndF((sub.formula, atom)))
        kv = dict(sub.keyvar)
        kv.update(out_k)
        return Translation(formula, sort, kv, out_v)

    def _pad_equalities(self, target_attrs, jvars, src_valvar, src_attrs, neutral):
        parts = []
        for a in target_attrs:
            if a in src_attrs:
                parts.append(ValEqF(jvars[a], TVar(src_valvar[a])))
            else:
                parts.append(ValEqF(jvars[a], TConst(neutral)))
        return parts

    def _translate_join(self, e: Join, sort: Sort) -> Translation:
        op = self.env.agg(e.op)
        if not op_commutative(op):
            raise SortError(
                f"translator does not cover joins with non-commutative '{op.name}'"
            )
        t1 = self.translate(e.left)
        t2 = self.translate(e.right)
        # shared key attributes must share one variable on both sides
        subst = {
            t2.keyvar[a]: t1.keyvar[a]
            for a in t2.sort.key_attrs
            if a in t1.keyvar
        }
        f2 = substitute(t2.formula, subst)
        keyvar = dict(t2.keyvar)
        keyvar.update(t1.keyvar)
        jvars = {a: self.fresh(f"j_{a}") for a in sort.val_attrs}
        flag = self.fresh("f")
        neutral = op.neutral
        need_pad = set(t1.sort.val_attrs) != set(t2.sort.val_attrs)
        pad0 = neutral if need_pad else None
        side1 = AndF(
            tuple(
                self._pad_equalities(sort.val_attrs, jvars, t1.valvar,
                                     set(t1.sort.val_attrs), pad0)
            )
            + (ValEqF(flag, TConst(Fraction(0))),)
        )
        side2 = AndF(
            tuple(
                self._pad_equalities(sort.val_attrs, jvars, t2.valvar,
                                     set(t2.sort.val_attrs), pad0)
            )
            + (ValEqF(flag, TConst(Fraction(1))),)
        )
        inner_vals = tuple(t1.valvar[a] for a in t1.sort.val_attrs) + tuple(
            t2.valvar[a] for a in t2.sort.val_attrs
        )
        alpha = Named(
            self.fresh("alpha_join"),
            ExistsVars(
                (), inner_vals, AndF((t1.formula, f2, OrF((side1, side2))))
            ),
        )
        out_v = {a: self.fresh(f"i_{a}") for a in sort.val_attrs}
        bound_vals = tuple(jvars[a] for a in sort.val_attrs) + (flag,)
        agg_eqs = tuple(
            ValEqF(
                out_v[a],
                TAgg(op, (), bound_vals, TVar(jvars[a]), alpha, expect_pair=True),
            )
            for a in sort.val_attrs
        )
        formula = ExistsVars((), bound_vals, AndF((alpha,) + agg_eqs))
        return Translation(formula, sort, keyvar, out_v)

    def _translate_union(self, e: UnionOp, sort: Sort) -> Translation:
        op = self.env.agg(e.op)
        t1 = self.translate(e.left)
        t2 = self.translate(e.right)
        all_keys = t1.sort.key_attrs + tuple(
            a for a in t2.sort.key_attrs if a not in t1.sort.key_attrs
        )
        kvars = {a: self.fresh(f"x_{a}") for a in all_keys}
        jvars = {a: self.fresh(f"j_{a}") for a in sort.val_attrs}
        flag = self.fresh("f")

        def side(t: Translation, flag_value: int) -> LogicFormula:
            subst = {t.keyvar[a]: kvars[a] for a in t.sort.key_attrs}
            inner = substitute(t.formula, subst)
            pads = tuple(
                KeyPad(kvars[a]) for a in all_keys if a not in t.sort.key_attrs
            )
            need = set(sort.val_attrs) - set(t.sort.val_attrs)
            if need and op.neutral is None:
                raise SortError(
                    f"aggregate '{op.name}' has no neutral element but the union "
                    f"translation pads value attributes"
                )
            val_eqs = tuple(
                self._pad_equalities(
                    sort.val_attrs, jvars, t.valvar, set(t.sort.val_attrs), op.neutral
                )
            )
            inner_vals = tuple(t.valvar[a] for a in t.sort.val_attrs)
            return Named(
                self.fresh("eta"),
                ExistsVars(
                    (),
                    inner_vals,
                    AndF((inner,) + pads + val_eqs
                         + (ValEqF(flag, TConst(Fraction(flag_value))),)),
                ),
            )

        sides = []
        if not statically_empty(e.left):
            sides.append(side(t1, 0))
        if not statically_empty(e.right):
            sides.append(side(t2, 1))
        keyvar = {a: kvars[a] for a in sort.key_attrs}
        out_v = {a: self.fresh(f"i_{a}") for a in sort.val_attrs}
        if not sides:
            return Translation(
                Bot(tuple(keyvar.values()), tuple(out_v.values())), sort, keyvar, out_v
            )
        alpha = Named(
            self.fresh("alpha_union"),
            sides[0] if len(sides) == 1 else OrF(tuple(sides)),
        )
        bound_keys = tuple(kvars[a] for a in all_keys if a not in sort.key_attrs)
        bound_vals = tuple(jvars[a] for a in sort.val_attrs) + (flag,)
        agg_eqs = tuple(
            ValEqF(out_v[a], TAgg(op, bound_keys, bound_vals, TVar(jvars[a]), alpha))
            for a in sort.val_attrs
        )
        formula = ExistsVars(bound_keys, bound_vals, AndF((alpha,) + agg_eqs))
        return Translation(formula, sort, keyvar, out_v)


def op_commutative(op: AggOp) -> bool:
    return op.ordered_binary is None


def substitute(f: LogicFormula, mapping: dict[str, str]) -> LogicFormula:
    """Rename free variables; bound variables are globally unique by construction.

    Shared subformulas stay shared (one rewritten object per input object), so
    the evaluator's per-node memoization keeps working after substitution.
    """
    if not mapping:
        return f
    cache: dict[int, LogicFormula] = {}

    def sub_var(v: str) -> str:
        return mapping.get(v, v)

    def sub_term(t: Term) -> Term:
        if isinstance(t, TVar):
            return TVar(sub_var(t.name))
        if isinstance(t, TConst):
            return t
        return TAgg(
            t.op, t.bound_keyvars, t.bound_valvars,
            sub_term(t.term), walk(t.formula), t.expect_pair,
        )

    def walk(node: LogicFormula) -> LogicFormula:
        got = cache.get(id(node))
        if got is not None:
            return got
        out = rewrite(node)
        cache[id(node)] = out
        return out

    def rewrite(node: LogicFormula) -> LogicFormula:
        if isinstance(node, Bot):
            return Bot(
                tuple(sub_var(v) for v in node.keyvars),
                tuple(sub_var(v) for v in node.valvars),
            )
        if isinstance(node, RelAtom):
            return RelAtom(
                node.name,
                tuple(sub_var(v) for v in node.keyvars),
                tuple(sub_var(v) for v in node.valvars),
            )
        if isinstance(node, KeyEqF):
            return KeyEqF(sub_var(node.left), sub_var(node.right))
        if isinstance(node, KeyPad):
            return KeyPad(sub_var(node.var))
        if isinstance(node, ValEqF):
            return ValEqF(sub_var(node.var), sub_term(node.term))
        if isinstance(node, FnAtom):
            return FnAtom(
                node.fn,
                tuple(sub_var(v) for v in node.in_keyvars),
                tuple(sub_var(v) for v in node.in_valvars),
                tuple(sub_var(v) for v in node.out_keyvars),
                tuple(sub_var(v) for v in node.out_valvars),
            )
        if isinstance(node, AndF):
            return AndF(tuple(walk(p) for p in node.parts))
        if isinstance(node, OrF):
            return OrF(tuple(walk(p) for p in node.parts))
        if isinstance(node, Diff):
            return Diff(walk(node.pos), walk(node.neg))
        if isinstance(node, ExistsVars):
            # bound variables are globally unique, never hit by the mapping
            return ExistsVars(node.keyvars, node.valvars, walk(node.sub))
        if isinstance(node, Named):
            return Named(node.label, walk(node.sub))
        raise TypeError(f"not a logic formula: {node!r}")

    return walk(f)


def translate_expr(e: LaraExpr, env: Env) -> Translation:
    """Desugar, translate, and machine-check the safe fragment of the result."""
    core = desugar(e, env)
    tr = Translator(env).translate(core)
    validate_safe(tr.formula, env.schema, env)
    return tr


# ---------------------------------------------------------------------------
# Pretty printing


def _render_term(t: Term) -> str:
    if isinstance(t, TVar):
        return t.name
    if isinstance(t, TConst):
        return format_value(t.value)
    bound = ", ".join(t.bound_keyvars + t.bound_valvars)
    return f"Agg[{t.op.name}] {bound} ({_render_term(t.term)}, {_render(t.formula, True)})"


def _render(f: LogicFormula, by_name: bool = True) -> str:
    if isinstance(f, Named) and by_name:
        return f.label
    if isinstance(f, Named):
        return _render(f.sub)
    if isinstance(f, Bot):
        return "false"
    if isinstance(f, RelAtom):
        return f"{f.name}({', '.join(f.keyvars)}; {', '.join(f.valvars)})"
    if isinstance(f, KeyEqF):
        return f"{f.left} = {f.right}"
    if isinstance(f, KeyPad):
        return f"{f.var} = <pad>"
    if isinstance(f, ValEqF):
        return f"{f.var} = {_render_term(f.term)}"
    if isinstance(f, FnAtom):
        return (
            f"R_{f.fn.name}({', '.join(f.in_keyvars)}; {', '.join(f.in_valvars)}"
            f" -> {', '.join(f.out_keyvars)}; {', '.join(f.out_valvars)})"
        )
    if isinstance(f, AndF):
        return "(" + " and ".join(_render(p) for p in f.parts) + ")"
    if isinstance(f, OrF):
        return "(" + " or ".join(_render(p) for p in f.parts) + ")"
    if isinstance(f, Diff):
        return f"({_render(f.pos)} and not {_render(f.neg)})"
    if isinstance(f, ExistsVars):
        if f.keyvars and f.valvars:
            head = f"{', '.join(f.keyvars)}; {', '.join(f.valvars)}"
        else:
            head = ", ".join(f.keyvars + f.valvars)
        return f"exists {head} ({_render(f.sub)})"
    raise TypeError(f"not a logic formula: {f!r}")


def _collect_defs(f, seen: set, defs: list):
    if isinstance(f, Named):
        if f.label in seen:
            return
        seen.add(f.label)
        _collect_defs(f.sub, seen, defs)
        defs.append(f)
        return
    if isinstance(f, (AndF, OrF)):
        for p in f.parts:
            _collect_defs(p, seen, defs)
    elif isinstance(f, Diff):
        _collect_defs(f.pos, seen, defs)
        _collect_defs(f.neg, seen, defs)
    elif isinstance(f, ExistsVars):
        _collect_defs(f.sub, seen, defs)
    elif isinstance(f, ValEqF) and isinstance(f.term, TAgg):
        _collect_defs(f.term.formula, seen, defs)


def pretty_translation(tr: Translation) -> str:
    """Deterministic definitions-style rendering of a translated formula."""
    defs: list[Named] = []
    _collect_defs(tr.formula, set(), defs)
    lines = []
    for named in defs:
        head = ", ".join(sorted(formula_vars(named.sub)))
        lines.append(f"{named.label}({head}) := {_render(named.sub, by_name=False)}")
    kvars, vvars = tr.output_vars()
    lines.append(
        f"phi({', '.join(kvars)}; {', '.join(vvars)}) := "
        f"{_render(tr.formula, by_name=False) if not isinstance(tr.formula, Named) else _render(tr.formula.sub, by_name=False)}"
    )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Differential testing


@dataclass
class DiffVerdict:
    equal: bool
    algebra: AssocTable
    logic: AssocTable
    detail: str = ""

    def __bool__(self):
        return self.equal


def diff_test(e: LaraExpr, db: Database, env: Env) -> DiffVerdict:
    """Evaluate both paths and compare canonical serializations byte-for-byte."""
    from .algebra import evaluate
    from .tables import serialize_table

    left = evaluate(e, db, env)
    tr = translate_expr(e, env)
    right = eval_formula(tr, db, env)
    s_left, s_right = serialize_table(left), serialize_table(right)
    if s_left == s_right:
        return DiffVerdict(True, left, right)
    detail = "results differ"
    for a, b in zip(s_left.splitlines(), s_right.splitlines()):
        if a != b:
            detail = f"first differing row: algebra={a!r} logic={b!r}"
            break
    else:
        detail = "results differ in row count"
    return DiffVerdict(False, left, right, detail)
