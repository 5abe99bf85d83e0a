"""Extension functions and their formula DSL.

A formula over two sorts defines a function from one input row to a finite
associative table: key variables are compared with ``=`` (and ``<`` in
ordered mode), value variables only appear inside registered numeric
predicates.  Safety is enforced syntactically: every output variable and
every quantified value variable must be *determined* — reachable through a
chain of functional atoms (key equalities; functional slots of predicates
such as ``add(a,b,c)``) rooted in the input variables and constants, in
every disjunctive branch that can actually be satisfied.  Evaluation solves
those chains to enumerate a finite candidate set, then model-checks the
formula against each candidate.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import mpmath

from .errors import EvaluationError, ParseError, SafetyError, SortError, StructuralError
from .syntax import TokenStream, tokenize
from .tables import AssocTable, Sort
from .values import (
    NEG_INF,
    POS_INF,
    Key,
    Value,
    format_key,
    format_value,
    is_rational,
    key_sort_token,
    require_rational,
    value_le,
    value_lt,
)

# ---------------------------------------------------------------------------
# Formula AST


@dataclass(frozen=True)
class KConst:
    key: Key


@dataclass(frozen=True)
class VConst:
    value: Value


KTerm = str | KConst  # a key variable name or a key literal
VTerm = str | VConst  # a value variable name or a rational/infinity literal


@dataclass(frozen=True)
class KeyEq:
    left: KTerm
    right: KTerm


@dataclass(frozen=True)
class KeyLt:
    left: KTerm
    right: KTerm


@dataclass(frozen=True)
class Pred:
    name: str
    args: tuple[VTerm, ...]


@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class FalseF:
    pass


@dataclass(frozen=True)
class Not:
    body: "Formula"


@dataclass(frozen=True)
class And:
    parts: tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    parts: tuple["Formula", ...]


@dataclass(frozen=True)
class Implies:
    premise: "Formula"
    conclusion: "Formula"


@dataclass(frozen=True)
class Exists:
    var: str
    var_sort: Optional[str]  # 'key' | 'val' | None until resolved
    body: "Formula"


Formula = (
    KeyEq | KeyLt | Pred | TrueF | FalseF | Not | And | Or | Implies | Exists
)


_FREE_CACHE: dict[int, tuple] = {}


def free_vars(f: Formula) -> frozenset[str]:
    cached = _FREE_CACHE.get(id(f))
    if cached is not None and cached[0] is f:
        return cached[1]
    if isinstance(f, (KeyEq, KeyLt)):
        out = frozenset(t for t in (f.left, f.right) if isinstance(t, str))
    elif isinstance(f, Pred):
        out = frozenset(a for a in f.args if isinstance(a, str))
    elif isinstance(f, (TrueF, FalseF)):
        out = frozenset()
    elif isinstance(f, Not):
        out = free_vars(f.body)
    elif isinstance(f, (And, Or)):
        out = frozenset()
        for p in f.parts:
            out |= free_vars(p)
    elif isinstance(f, Implies):
        out = free_vars(f.premise) | free_vars(f.conclusion)
    elif isinstance(f, Exists):
        out = free_vars(f.body) - {f.var}
    else:
        raise TypeError(f"not a formula: {f!r}")
    _FREE_CACHE[id(f)] = (f, out)
    return out


def uses_order(f: Formula) -> bool:
    """True when the formula compares keys with the linear order."""
    if isinstance(f, KeyLt):
        return True
    if isinstance(f, Not):
        return uses_order(f.body)
    if isinstance(f, (And, Or)):
        return any(uses_order(p) for p in f.parts)
    if isinstance(f, Implies):
        return uses_order(f.premise) or uses_order(f.conclusion)
    if isinstance(f, Exists):
        return uses_order(f.body)
    return False


def key_literals(f: Formula) -> set:
    if isinstance(f, (KeyEq, KeyLt)):
        return {t.key for t in (f.left, f.right) if isinstance(t, KConst)}
    if isinstance(f, Not):
        return key_literals(f.body)
    if isinstance(f, (And, Or)):
        out = set()
        for p in f.parts:
            out |= key_literals(p)
        return out
    if isinstance(f, Implies):
        return key_literals(f.premise) | key_literals(f.conclusion)
    if isinstance(f, Exists):
        return key_literals(f.body)
    return set()


def is_generic_formula(f: Formula) -> bool:
    """Key-permutation invariance needs equality-only key tests and no key literals."""
    return not uses_order(f) and not key_literals(f)


# ---------------------------------------------------------------------------
# Numeric predicate registry

NO_SOLUTION = object()
DEGENERATE = object()


@dataclass(frozen=True)
class NumPred:
    """Decidable predicate over rationals with optional functional slots.

    ``solvers[i]`` computes argument ``i`` from the remaining arguments; it
    may return ``NO_SOLUTION`` (no value fits) or ``DEGENERATE`` (infinitely
    many fit, so this atom cannot pin the slot).
    """

    name: str
    arity: int
    check: Callable[..., bool]
    solvers: dict[int, Callable]


def exp_approx(a: Value, digits: int | None = None) -> Fraction:
    """exp(a) rounded to the nearest rational with denominator 10^digits."""
    a = require_rational(a, "expapprox")
    if digits is None:
        digits = int(os.environ.get("LARA_EXP_PRECISION", "40"))
    if digits < 1 or digits > 10000:
        raise EvaluationError(f"unusable exp precision: {digits}")
    if abs(a) > 4096:
        raise EvaluationError(f"exp argument out of supported range: {format_value(a)}")
    magnitude = int(abs(a) * Fraction(4343, 10000)) + 1
    with mpmath.workdps(magnitude + digits + 25):
        x = mpmath.mpf(a.numerator) / mpmath.mpf(a.denominator)
        scaled = mpmath.exp(x) * mpmath.power(10, digits)
        rounded = int(mpmath.nint(scaled))
    return Fraction(rounded, 10**digits)


def _rat3(a, b, c, name):
    for v in (a, b, c):
        require_rational(v, name)


def _solve_mul_factor(product, factor):
    if factor == 0:
        return DEGENERATE if product == 0 else NO_SOLUTION
    return product / factor


def numeric_predicates() -> dict[str, NumPred]:
    def chk_add(a, b, c):
        _rat3(a, b, c, "add")
        return a + b == c

    def chk_sub(a, b, c):
        _rat3(a, b, c, "sub")
        return a - b == c

    def chk_mul(a, b, c):
        _rat3(a, b, c, "mul")
        return a * b == c

    def chk_div(a, b, c):
        _rat3(a, b, c, "div")
        return b != 0 and a / b == c

    def solve_div_b(a, c):
        # a / b = c  with b nonzero
        if c == 0:
            return DEGENERATE if a == 0 else NO_SOLUTION
        return a / c

    preds = [
        NumPred("add", 3, chk_add, {
            0: lambda b, c: c - b,
            1: lambda a, c: c - a,
            2: lambda a, b: a + b,
        }),
        NumPred("sub", 3, chk_sub, {
            0: lambda b, c: b + c,
            1: lambda a, c: a - c,
            2: lambda a, b: a - b,
        }),
        NumPred("mul", 3, chk_mul, {
            0: lambda b, c: _solve_mul_factor(c, b),
            1: lambda a, c: _solve_mul_factor(c, a),
            2: lambda a, b: a * b,
        }),
        NumPred("div", 3, chk_div, {
            0: lambda b, c: NO_SOLUTION if b == 0 else b * c,
            1: solve_div_b,
            2: lambda a, b: NO_SOLUTION if b == 0 else a / b,
        }),
        NumPred("eq", 2, lambda a, b: a == b, {
            0: lambda b: b,
            1: lambda a: a,
        }),
        NumPred("lt", 2, value_lt, {}),
        NumPred("leq", 2, value_le, {}),
        NumPred("isint", 1,
                lambda a: is_rational(a) and a.denominator == 1, {}),
        NumPred("floor", 2,
                lambda a, b: require_rational(b, "floor").denominator == 1
                and b == Fraction(require_rational(a, "floor").numerator
                                  // a.denominator),
                {1: lambda a: Fraction(require_rational(a, "floor").numerator
                                       // a.denominator)}),
        NumPred("expapprox", 2, lambda a, b: exp_approx(a) == b,
                {1: lambda a: exp_approx(a)}),
    ]
    return {p.name: p for p in preds}


PREDICATES = numeric_predicates()


# ---------------------------------------------------------------------------
# Parsing

_RESERVED = {"and", "or", "not", "implies", "exists", "true", "false", "inf", "none"}


def _parse_vterm(ts: TokenStream) -> VTerm:
    tok = ts.current
    if tok.kind == "number":
        ts.advance()
        return VConst(Fraction(tok.text))
    if tok.kind == "neginf":
        ts.advance()
        return VConst(NEG_INF)
    if ts.at_name("inf"):
        ts.advance()
        return VConst(POS_INF)
    if tok.kind == "name":
        if tok.text in _RESERVED:
            ts.error(f"reserved word {tok.text!r} cannot be a variable")
        ts.advance()
        return tok.text
    ts.error("expected a value variable or literal")


def _parse_kterm(ts: TokenStream) -> KTerm:
    tok = ts.current
    if tok.kind == "number":
        if "/" in tok.text or "." in tok.text:
            ts.error("key literals must be integers")
        ts.advance()
        return KConst(int(tok.text))
    if tok.kind == "string":
        ts.advance()
        return KConst(tok.text[1:-1].replace('""', '"'))
    if tok.kind == "name":
        if tok.text in _RESERVED:
            ts.error(f"reserved word {tok.text!r} cannot be a variable")
        ts.advance()
        return tok.text
    ts.error("expected a key variable or literal")


def _parse_unary(ts: TokenStream) -> Formula:
    if ts.accept("name", "not"):
        return Not(_parse_unary(ts))
    if ts.accept("name", "exists"):
        var = ts.expect("name").text
        if var in _RESERVED:
            ts.error(f"reserved word {var!r} cannot be a variable")
        var_sort = None
        if ts.accept("punct", ":"):
            tok = ts.expect("name")
            if tok.text not in ("key", "val"):
                ts.error("quantifier sort must be 'key' or 'val'")
            var_sort = tok.text
        ts.expect("punct", "(")
        body = _parse_formula(ts)
        ts.expect("punct", ")")
        return Exists(var, var_sort, body)
    if ts.accept("punct", "("):
        body = _parse_formula(ts)
        ts.expect("punct", ")")
        return body
    if ts.accept("name", "true"):
        return TrueF()
    if ts.accept("name", "false"):
        return FalseF()
    # predicate application or a key atom
    if ts.at("name") and ts.peek(1).text == "(" and ts.current.text not in _RESERVED:
        name = ts.advance().text
        ts.expect("punct", "(")
        args = [_parse_vterm(ts)]
        while ts.accept("punct", ","):
            args.append(_parse_vterm(ts))
        ts.expect("punct", ")")
        pred = PREDICATES.get(name)
        if pred is None:
            raise ParseError(f"unknown predicate: {name}")
        if pred.arity != len(args):
            raise ParseError(f"predicate {name} takes {pred.arity} arguments, got {len(args)}")
        return Pred(name, tuple(args))
    left = _parse_kterm(ts)
    if ts.accept("punct", "="):
        return KeyEq(left, _parse_kterm(ts))
    if ts.accept("punct", "<"):
        return KeyLt(left, _parse_kterm(ts))
    ts.error("expected '=' or '<' after a key term")


def _parse_conj(ts: TokenStream) -> Formula:
    parts = [_parse_unary(ts)]
    while ts.accept("name", "and"):
        parts.append(_parse_unary(ts))
    return parts[0] if len(parts) == 1 else And(tuple(parts))


def _parse_disj(ts: TokenStream) -> Formula:
    parts = [_parse_conj(ts)]
    while ts.accept("name", "or"):
        parts.append(_parse_conj(ts))
    return parts[0] if len(parts) == 1 else Or(tuple(parts))


def _parse_formula(ts: TokenStream) -> Formula:
    left = _parse_disj(ts)
    if ts.accept("name", "implies"):
        return Implies(left, _parse_formula(ts))
    return left


def parse_formula(ts: TokenStream) -> Formula:
    """Parse one formula from an open token stream (used by the program parser)."""
    return _parse_formula(ts)


def parse_dsl(text: str) -> Formula:
    """Parse a standalone formula string."""
    ts = TokenStream(tokenize(text))
    f = _parse_formula(ts)
    if not ts.at("eof"):
        ts.error("trailing input after formula")
    return f


# ---------------------------------------------------------------------------
# Variable sort resolution


def resolve_sorts(f: Formula, declared: dict[str, str]) -> tuple[Formula, dict[str, str]]:
    """Infer the sort of every variable; returns a formula with annotated quantifiers.

    ``declared`` maps the free variables (the function signature) to 'key' or
    'val'.  Raises on sort clashes, undeclared free variables, shadowing, and
    quantified variables whose sort cannot be inferred.
    """
    sorts: dict[str, str] = dict(declared)

    def use(var: str, sort: str, bound: dict[str, str]):
        if var in bound:
            if bound[var] is None:
                bound[var] = sort
            elif bound[var] != sort:
                raise StructuralError(f"variable {var} used as both key and value")
            return
        if var not in declared:
            raise StructuralError(f"undeclared free variable: {var}")
        if sorts[var] != sort:
            raise StructuralError(f"variable {var} used as both key and value")

    def walk(node: Formula, bound: dict[str, str]) -> Formula:
        if isinstance(node, (KeyEq, KeyLt)):
            for t in (node.left, node.right):
                if isinstance(t, str):
                    use(t, "key", bound)
            return node
        if isinstance(node, Pred):
            for a in node.args:
                if isinstance(a, str):
                    use(a, "val", bound)
            return node
        if isinstance(node, (TrueF, FalseF)):
            return node
        if isinstance(node, Not):
            return Not(walk(node.body, bound))
        if isinstance(node, And):
            return And(tuple(walk(p, bound) for p in node.parts))
        if isinstance(node, Or):
            return Or(tuple(walk(p, bound) for p in node.parts))
        if isinstance(node, Implies):
            return Implies(walk(node.premise, bound), walk(node.conclusion, bound))
        if isinstance(node, Exists):
            if node.var in bound or node.var in declared:
                raise StructuralError(f"quantifier shadows variable {node.var}")
            inner = dict(bound)
            inner[node.var] = node.var_sort
            body = walk(node.body, inner)
            got = inner[node.var]
            if got is None:
                raise StructuralError(
                    f"cannot infer sort of quantified variable {node.var}"
                )
            return Exists(node.var, got, body)
        raise TypeError(f"not a formula: {node!r}")

    resolved = walk(f, {})
    return resolved, sorts


# ---------------------------------------------------------------------------
# Normal form used by the safety checker and the candidate solver


@dataclass(frozen=True)
class PosLit:
    atom: Formula  # KeyEq | KeyLt | Pred


@dataclass(frozen=True)
class NegLit:
    atom: Formula


@dataclass(frozen=True)
class ExistsUnit:
    var: str
    var_sort: str
    body: Formula
    negated: bool


_BRANCH_LIMIT = 20000


def _branches(f: Formula, negated: bool) -> list[list]:
    if isinstance(f, (KeyEq, KeyLt, Pred)):
        return [[NegLit(f) if negated else PosLit(f)]]
    if isinstance(f, TrueF):
        return [] if negated else [[]]
    if isinstance(f, FalseF):
        return [[]] if negated else []
    if isinstance(f, Not):
        return _branches(f.body, not negated)
    if isinstance(f, Implies):
        return _branches(Or((Not(f.premise), f.conclusion)), negated)
    if isinstance(f, And) and not negated or isinstance(f, Or) and negated:
        out = [[]]
        for part in f.parts:
            pb = _branches(part, negated)
            out = [a + b for a in out for b in pb]
            if len(out) > _BRANCH_LIMIT:
                raise SafetyError("formula too large to normalize")
        return out
    if isinstance(f, (And, Or)):
        out = []
        for part in f.parts:
            out.extend(_branches(part, negated))
        if len(out) > _BRANCH_LIMIT:
            raise SafetyError("formula too large to normalize")
        return out
    if isinstance(f, Exists):
        return [[ExistsUnit(f.var, f.var_sort, f.body, negated)]]
    raise TypeError(f"not a formula: {f!r}")


def _prune_contradictions(branches: list[list]) -> list[list]:
    live = []
    for branch in branches:
        pos = {lit.atom for lit in branch if isinstance(lit, PosLit)}
        neg = {lit.atom for lit in branch if isinstance(lit, NegLit)}
        if pos & neg:
            continue
        live.append(branch)
    return live


_BRANCH_CACHE: dict[int, tuple] = {}


def formula_branches(f: Formula) -> list[list]:
    cached = _BRANCH_CACHE.get(id(f))
    if cached is not None and cached[0] is f:
        return cached[1]
    result = _prune_contradictions(_branches(f, False))
    _BRANCH_CACHE[id(f)] = (f, result)
    return result


# ---------------------------------------------------------------------------
# Safety: determination analysis


def _known_term(t, known: set[str]) -> bool:
    return not isinstance(t, str) or t in known


def _abstract_closure(branch: list, known: set[str]) -> set[str]:
    """Variables guaranteed pinned by the branch's functional atoms."""
    k = set(known)
    changed = True
    while changed:
        changed = False
        for lit in branch:
            if isinstance(lit, PosLit):
                atom = lit.atom
                if isinstance(atom, KeyEq):
                    for a, b in ((atom.left, atom.right), (atom.right, atom.left)):
                        if isinstance(b, str) and b not in k and _known_term(a, k):
                            k.add(b)
                            changed = True
                elif isinstance(atom, Pred):
                    pred = PREDICATES[atom.name]
                    for slot in pred.solvers:
                        target = atom.args[slot]
                        if not isinstance(target, str) or target in k:
                            continue
                        rest = [a for i, a in enumerate(atom.args) if i != slot]
                        if all(_known_term(a, k) for a in rest):
                            k.add(target)
                            changed = True
            elif isinstance(lit, ExistsUnit) and not lit.negated:
                gained = _common_determined(lit.body, k) - {lit.var}
                fresh = gained - k
                if fresh:
                    k |= fresh
                    changed = True
    return k


def _common_determined(f: Formula, known: set[str]) -> set[str]:
    branches = formula_branches(f)
    if not branches:
        return set()
    common = None
    for branch in branches:
        got = _abstract_closure(branch, known)
        common = got if common is None else (common & got)
    return common or set()


def _check_branches(f: Formula, known: set[str], targets: set[str],
                    diagnostics: list[str], where: str):
    branches = formula_branches(f)
    for branch in branches:
        k = _abstract_closure(branch, known)
        for var in sorted(targets):
            if var not in k:
                diagnostics.append(f"{where}: variable '{var}' is not determined")
                break
        for lit in branch:
            if isinstance(lit, NegLit):
                missing = sorted(free_vars(lit.atom) - k)
                if missing:
                    diagnostics.append(
                        f"{where}: negation over undetermined variable '{missing[0]}'"
                    )
            elif isinstance(lit, ExistsUnit):
                inner_targets = {lit.var} if lit.var_sort == "val" else set()
                if lit.negated:
                    outer = free_vars(lit.body) - {lit.var}
                    missing = sorted(outer - k)
                    if missing:
                        diagnostics.append(
                            f"{where}: negated quantifier over undetermined "
                            f"variable '{missing[0]}'"
                        )
                _check_branches(lit.body, k, inner_targets,
                                diagnostics, where=f"{where}.exists {lit.var}")


def check_safety_formula(f: Formula, inputs: set[str], outputs: set[str]) -> list[str]:
    """Diagnostics for the determination analysis; empty means safe."""
    diagnostics: list[str] = []
    _check_branches(f, set(inputs), set(outputs), diagnostics, "body")
    # deduplicate, preserving first-seen order
    seen, out = set(), []
    for d in diagnostics:
        if d not in seen:
            seen.add(d)
            out.append(d)
    return out


# ---------------------------------------------------------------------------
# Evaluation: candidate solving + model checking


def _term_value(t, env):
    if isinstance(t, KConst):
        return t.key
    if isinstance(t, VConst):
        return t.value
    return env[t]


def _term_known(t, env) -> bool:
    return not isinstance(t, str) or t in env


class _Solver:
    """Concrete sideways-information-passing over one formula's branches."""

    def __init__(self, universe_keys: tuple):
        self.universe_keys = universe_keys

    def candidates(self, f: Formula, env: dict, targets: set[str]) -> list[dict]:
        """Finite candidate environments binding ``targets``; complete for safe bodies."""
        branches = formula_branches(f)
        if len(branches) == 1:
            return [
                s for s in self._solve_branch(branches[0], env)
                if all(t in s for t in targets)
            ]
        results = []
        seen = set()
        for branch in branches:
            for state in self._solve_branch(branch, env):
                if any(t not in state for t in targets):
                    continue
                fingerprint = tuple(sorted((k, _hashable(v)) for k, v in state.items()))
                if fingerprint not in seen:
                    seen.add(fingerprint)
                    results.append(state)
        return results

    def _solve_branch(self, branch: list, env: dict) -> list[dict]:
        states = [dict(env)]
        degenerate_vars: set[str] = set()
        applied: set[tuple[int, int]] = set()
        changed = True
        while changed and states:
            changed = False
            for li, lit in enumerate(branch):
                if not isinstance(lit, (PosLit, ExistsUnit)):
                    continue
                if isinstance(lit, ExistsUnit) and lit.negated:
                    continue
                new_states = []
                for state in states:
                    forked = self._apply(lit, li, state, applied, degenerate_vars)
                    if forked is None:
                        new_states.append(state)
                    else:
                        changed = True
                        new_states.extend(forked)
                states = new_states
        for state in states:
            for var in degenerate_vars:
                if var not in state:
                    raise EvaluationError(
                        f"determination failed: infinitely many solutions for '{var}'"
                    )
        return states

    def _apply(self, lit, li, state, applied, degenerate_vars):
        """Try to extend ``state`` with new bindings from ``lit``.

        Returns None when nothing new can be derived, otherwise the list of
        successor states (possibly empty when the literal is unsatisfiable).
        """
        if isinstance(lit, PosLit):
            atom = lit.atom
            if isinstance(atom, KeyEq):
                for a, b in ((atom.left, atom.right), (atom.right, atom.left)):
                    if isinstance(b, str) and b not in state and _term_known(a, state):
                        out = dict(state)
                        out[b] = _term_value(a, state)
                        return [out]
                return None
            if isinstance(atom, Pred):
                pred = PREDICATES[atom.name]
                for slot, solver in pred.solvers.items():
                    target = atom.args[slot]
                    if not isinstance(target, str) or target in state:
                        continue
                    rest = [a for i, a in enumerate(atom.args) if i != slot]
                    if not all(_term_known(a, state) for a in rest):
                        continue
                    got = solver(*[_term_value(a, state) for a in rest])
                    if got is NO_SOLUTION:
                        return []
                    if got is DEGENERATE:
                        degenerate_vars.add(target)
                        continue
                    out = dict(state)
                    out[target] = got
                    return [out]
                return None
            return None
        # positive exists unit: may pin outer variables through its body
        outer = free_vars(lit.body) - {lit.var}
        unknown = {v for v in outer if v not in state}
        if not unknown:
            return None
        key = (li, tuple(sorted((k, _hashable(v)) for k, v in state.items())))
        if key in applied:
            return None
        inner = self.candidates(lit.body, state, set())
        applied.add(key)
        forked = []
        seen = set()
        for cand in inner:
            ext = {v: cand[v] for v in unknown if v in cand}
            if len(ext) != len(unknown):
                continue
            fp = tuple(sorted((k, _hashable(v)) for k, v in ext.items()))
            if fp in seen:
                continue
            seen.add(fp)
            merged = dict(state)
            merged.update(ext)
            forked.append(merged)
        if not forked:
            return None
        return forked

    # -- model checking ----------------------------------------------------

    def check(self, f: Formula, env: dict) -> bool:
        if isinstance(f, KeyEq):
            return _term_value(f.left, env) == _term_value(f.right, env)
        if isinstance(f, KeyLt):
            a, b = _term_value(f.left, env), _term_value(f.right, env)
            return key_sort_token(a) < key_sort_token(b)
        if isinstance(f, Pred):
            pred = PREDICATES[f.name]
            return bool(pred.check(*[_term_value(a, env) for a in f.args]))
        if isinstance(f, TrueF):
            return True
        if isinstance(f, FalseF):
            return False
        if isinstance(f, Not):
            return not self.check(f.body, env)
        if isinstance(f, And):
            return all(self.check(p, env) for p in f.parts)
        if isinstance(f, Or):
            return any(self.check(p, env) for p in f.parts)
        if isinstance(f, Implies):
            return not self.check(f.premise, env) or self.check(f.conclusion, env)
        if isinstance(f, Exists):
            if f.var_sort == "key":
                for k in self.universe_keys:
                    env[f.var] = k
                    ok = self.check(f.body, env)
                    del env[f.var]
                    if ok:
                        return True
                return False
            for cand in self.candidates(f.body, env, {f.var}):
                env[f.var] = cand[f.var]
                ok = self.check(f.body, env)
                del env[f.var]
                if ok:
                    return True
            return False
        raise TypeError(f"not a formula: {f!r}")


def _hashable(v):
    return (type(v).__name__, str(v))


# ---------------------------------------------------------------------------
# Extension functions


@dataclass(eq=False)
class ExtFn:
    """A map from one input row to a finite associative table over fresh attributes."""

    name: str
    in_sort: Sort
    out_sort: Sort
    body: Optional[Formula] = None
    impl: Optional[Callable] = None
    generic: bool = True
    ordered: bool = False

    def __post_init__(self):
        if set(self.in_sort.key_attrs) & set(self.out_sort.key_attrs):
            raise SortError(f"function {self.name}: output key attributes overlap the input's")
        if self.body is not None and self.impl is not None:
            raise StructuralError(f"function {self.name} has two bodies")
        if self.body is None and self.impl is None:
            raise StructuralError(f"function {self.name} has no body")
        if self.body is not None:
            if set(self.in_sort.val_attrs) & set(self.out_sort.val_attrs):
                raise SortError(
                    f"function {self.name}: output value attributes overlap the input's"
                )
            declared = {}
            for a in self.in_sort.key_attrs + self.out_sort.key_attrs:
                declared[a] = "key"
            for a in self.in_sort.val_attrs + self.out_sort.val_attrs:
                if a in declared:
                    raise SortError(f"function {self.name}: attribute {a} used in both sorts")
                declared[a] = "val"
            extra = free_vars(self.body) - set(declared)
            if extra:
                raise SortError(
                    f"function {self.name}: undeclared free variable {sorted(extra)[0]}"
                )
            resolved, _ = resolve_sorts(self.body, declared)
            self.body = resolved
            diagnostics = check_safety_formula(
                resolved,
                inputs=set(self.in_sort.attrs),
                outputs=set(self.out_sort.attrs),
            )
            if diagnostics:
                raise SafetyError(
                    f"function {self.name} is not safe: {diagnostics[0]}", diagnostics
                )
            self.generic = is_generic_formula(resolved)
            self.ordered = uses_order(resolved)

    def __repr__(self):
        return f"ExtFn({self.name}: {self.in_sort} -> {self.out_sort})"


def check_safety(fn: ExtFn) -> list[str]:
    """Re-run the determination analysis; empty list means the function is safe."""
    if fn.body is None:
        return []
    return check_safety_formula(
        fn.body,
        inputs=set(fn.in_sort.attrs),
        outputs=set(fn.out_sort.attrs),
    )


def has_key_quantifier(f: Formula) -> bool:
    if isinstance(f, Exists):
        return f.var_sort == "key" or has_key_quantifier(f.body)
    if isinstance(f, Not):
        return has_key_quantifier(f.body)
    if isinstance(f, (And, Or)):
        return any(has_key_quantifier(p) for p in f.parts)
    if isinstance(f, Implies):
        return has_key_quantifier(f.premise) or has_key_quantifier(f.conclusion)
    return False


def _relevant_inputs(fn: ExtFn) -> tuple[int, ...]:
    """Positions of input attributes the body actually mentions (cache key)."""
    used = free_vars(fn.body)
    attrs = fn.in_sort.attrs
    return tuple(i for i, a in enumerate(attrs) if a in used)


def eval_extfn(fn: ExtFn, keys: tuple, vals: tuple) -> AssocTable:
    """Apply an extension function to one row, yielding its output table.

    Formula-backed functions are memoized on the inputs their body mentions
    (plus the row's key set when the body quantifies over keys).
    """
    if len(keys) != len(fn.in_sort.key_attrs) or len(vals) != len(fn.in_sort.val_attrs):
        raise StructuralError(f"row does not match input sort of {fn.name}")
    if fn.impl is not None:
        return AssocTable(fn.out_sort, fn.impl(keys, vals))
    cache = fn.__dict__.setdefault("_row_cache", {})
    if "_relevant" not in fn.__dict__:
        fn._relevant = _relevant_inputs(fn)
        fn._key_quant = has_key_quantifier(fn.body)
    row = keys + vals
    universe = tuple(sorted(set(keys), key=key_sort_token))
    cache_key = tuple(row[i] for i in fn._relevant)
    if fn._key_quant:
        cache_key = (cache_key, universe)
    got = cache.get(cache_key)
    if got is not None:
        return got
    env = dict(zip(fn.in_sort.key_attrs, keys))
    env.update(zip(fn.in_sort.val_attrs, vals))
    solver = _Solver(universe_keys=universe)
    out_attrs = fn.out_sort.attrs
    rows = []
    for cand in solver.candidates(fn.body, env, set(out_attrs)):
        if solver.check(fn.body, cand):
            rows.append(
                (
                    tuple(cand[a] for a in fn.out_sort.key_attrs),
                    tuple(cand[a] for a in fn.out_sort.val_attrs),
                )
            )
    try:
        table = AssocTable(fn.out_sort, rows)
    except StructuralError as exc:
        raise EvaluationError(f"function {fn.name} output is not a table: {exc}") from None
    cache[cache_key] = table
    return table


_FILTER_CACHE: dict[int, tuple] = {}


def check_filter(formula: Formula, env: dict, row_keys: tuple) -> bool:
    """Evaluate a filter predicate whose free variables are all bound by the row.

    Results are memoized on the bound values (and the row's key set when the
    formula quantifies over keys).
    """
    cached = _FILTER_CACHE.get(id(formula))
    if cached is None or cached[0] is not formula:
        order = tuple(sorted(free_vars(formula)))
        cached = (formula, order, has_key_quantifier(formula), {})
        _FILTER_CACHE[id(formula)] = cached
    _, order, key_quant, results = cached
    cache_key = tuple(env[v] for v in order)
    if key_quant:
        cache_key = (cache_key, tuple(sorted(set(row_keys), key=key_sort_token)))
    got = results.get(cache_key)
    if got is None:
        solver = _Solver(
            universe_keys=tuple(sorted(set(row_keys), key=key_sort_token))
        )
        got = solver.check(formula, dict(env))
        results[cache_key] = got
    return got


# ---------------------------------------------------------------------------
# Built-in function families


def _cast_value_to_key(v: Value) -> Key:
    if is_rational(v) and v.denominator == 1:
        return int(v)
    raise EvaluationError(f"cannot cast value {format_value(v)} to a key")


def _cast_key_to_value(k: Key) -> Fraction:
    if isinstance(k, int):
        return Fraction(k)
    raise EvaluationError(f"cannot cast text key {format_key(k)} to a value")


def _positions(attrs: tuple[str, ...], wanted) -> list[int]:
    index = {a: i for i, a in enumerate(attrs)}
    return [index[a] for a in wanted]


def instantiate_builtin(kind: str, params: tuple, in_sort: Sort) -> ExtFn:
    """Build one of the distinguished function families at a concrete input sort."""
    K, V = in_sort.key_attrs, in_sort.val_attrs

    def need_subset(wanted, pool, what):
        missing = [a for a in wanted if a not in pool]
        if missing:
            raise StructuralError(f"{kind}: {what} attribute {missing[0]} not available")

    def need_fresh(names):
        for n in names:
            if n in K or n in V:
                raise StructuralError(f"{kind}: attribute {n} is not fresh")
        if len(set(names)) != len(names):
            raise StructuralError(f"{kind}: duplicate new attribute")

    if kind in ("copyk", "copyv", "copyvk", "copykv", "eqk", "eqv", "neqk", "neqv"):
        src, dst = params
        if len(src) != len(dst):
            raise StructuralError(f"{kind}: attribute lists differ in length")

    if kind == "copyk":
        src, dst = params
        need_subset(src, K, "source key")
        need_fresh(dst)
        pos = _positions(K, src)
        fn = lambda keys, vals: [(tuple(keys[i] for i in pos), vals)]
        return ExtFn(f"copyk({','.join(src)}->{','.join(dst)})",
                     in_sort, Sort(tuple(dst), V), impl=fn)
    if kind == "copyv":
        src, dst = params
        need_subset(src, V, "source value")
        need_fresh(dst)
        pos = _positions(V, src)
        fn = lambda keys, vals: [((), vals + tuple(vals[i] for i in pos))]
        return ExtFn(f"copyv({','.join(src)}->{','.join(dst)})",
                     in_sort, Sort((), V + tuple(dst)), impl=fn)
    if kind == "copyvk":
        src, dst = params
        need_subset(src, V, "source value")
        need_fresh(dst)
        pos = _positions(V, src)
        fn = lambda keys, vals: [(tuple(_cast_value_to_key(vals[i]) for i in pos), vals)]
        return ExtFn(f"copyvk({','.join(src)}->{','.join(dst)})",
                     in_sort, Sort(tuple(dst), V), impl=fn, generic=False)
    if kind == "copykv":
        src, dst = params
        need_subset(src, K, "source key")
        need_fresh(dst)
        pos = _positions(K, src)
        fn = lambda keys, vals: [((), vals + tuple(_cast_key_to_value(keys[i]) for i in pos))]
        return ExtFn(f"copykv({','.join(src)}->{','.join(dst)})",
                     in_sort, Sort((), V + tuple(dst)), impl=fn, generic=False)
    if kind == "addv":
        attr, const = params
        need_fresh((attr,))
        fn = lambda keys, vals: [((), vals + (const,))]
        return ExtFn(f"addv({attr},{format_value(const)})",
                     in_sort, Sort((), V + (attr,)), impl=fn)
    if kind in ("eqk", "neqk"):
        left, right = params
        need_subset(left, K, "key")
        need_subset(right, K, "key")
        lp, rp = _positions(K, left), _positions(K, right)
        keep_equal = kind == "eqk"
        fn = lambda keys, vals: (
            [((), vals)]
            if (tuple(keys[i] for i in lp) == tuple(keys[i] for i in rp)) == keep_equal
            else []
        )
        return ExtFn(f"{kind}({','.join(left)};{','.join(right)})",
                     in_sort, Sort((), V), impl=fn)
    if kind in ("eqv", "neqv"):
        left, right = params
        need_subset(left, V, "value")
        need_subset(right, V, "value")
        lp, rp = _positions(V, left), _positions(V, right)
        keep_equal = kind == "eqv"
        fn = lambda keys, vals: (
            [((), vals)]
            if (tuple(vals[i] for i in lp) == tuple(vals[i] for i in rp)) == keep_equal
            else []
        )
        return ExtFn(f"{kind}({','.join(left)};{','.join(right)})",
                     in_sort, Sort((), V), impl=fn)
    if kind == "projv":
        (sel,) = params
        need_subset(sel, V, "value")
        pos = _positions(V, sel)
        fn = lambda keys, vals: [((), tuple(vals[i] for i in pos))]
        return ExtFn(f"projv({','.join(sel)})", in_sort, Sort((), tuple(sel)), impl=fn)
    raise StructuralError(f"unknown builtin function family: {kind}")


BUILTIN_KINDS = (
    "copyk", "copyv", "copyvk", "copykv", "addv",
    "eqk", "eqv", "neqk", "neqv", "projv",
)
