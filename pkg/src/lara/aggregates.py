"""Aggregate-operator families: multiset semantics, neutrals, and the law checker.

Every operator reduces a finite multiset of values to one value.  Multisets
are reduced in a canonical sorted order, so the exact arithmetic never
depends on input ordering.  Plain binary operators are lifted to aggregates
that are defined only on multisets of size two; they still participate in
joins, where they are applied left-to-right.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .errors import EvaluationError
from .values import (
    NEG_INF,
    NON_VALUE,
    POS_INF,
    Value,
    format_value,
    require_rational,
    value_sort_token,
)


@dataclass(frozen=True)
class AggOp:
    """One aggregate-operator family.

    ``neutral`` is the padding element; ``lawful_neutral`` records whether it
    actually satisfies the neutral-extension law (count's padding zero does
    not, and is exempted from the law-based property tests).
    """

    name: str
    fn: Callable[[list], Value]
    neutral: Optional[Value] = None
    binary_only: bool = False
    lawful_neutral: bool = True
    ordered_binary: Optional[Callable[[Value, Value], Value]] = None
    pair_fn: Optional[Callable[[Value, Value], Value]] = None

    def apply(self, multiset) -> Value:
        elems = multiset if isinstance(multiset, list) else list(multiset)
        if len(elems) > 1:
            elems = sorted(elems, key=value_sort_token)
        if self.binary_only and len(elems) != 2:
            raise EvaluationError(
                f"binary operator '{self.name}' applied to a multiset of size {len(elems)}"
            )
        return self.fn(elems)

    def binary(self, left: Value, right: Value) -> Value:
        """Ordered two-argument application, used by joins."""
        if self.ordered_binary is not None:
            return self.ordered_binary(left, right)
        if self.lawful_neutral and self.neutral is not None:
            # the neutral-extension law makes padding slots free
            if right == self.neutral:
                return left
            if left == self.neutral:
                return right
        if self.pair_fn is not None:
            return self.pair_fn(left, right)
        return self.apply([left, right])

    def __repr__(self):
        return f"AggOp({self.name})"


def _all_rational(elems, opname):
    for v in elems:
        require_rational(v, f"aggregate '{opname}'")
    return elems


def _sum(elems):
    total = Fraction(0)
    for v in _all_rational(elems, "sum"):
        total += v
    return total


def _prod(elems):
    total = Fraction(1)
    for v in _all_rational(elems, "prod"):
        total *= v
    return total


def _min(elems):
    best = POS_INF
    for v in elems:
        if v is NON_VALUE:
            raise EvaluationError("min over the non-value sentinel")
        if value_sort_token(v) < value_sort_token(best):
            best = v
    return best


def _max(elems):
    best = NEG_INF
    for v in elems:
        if v is NON_VALUE:
            raise EvaluationError("max over the non-value sentinel")
        if value_sort_token(v) > value_sort_token(best):
            best = v
    return best


def _count(elems):
    return Fraction(len(elems))


def _avg(elems):
    if not elems:
        raise EvaluationError("avg of an empty multiset")
    return _sum(elems) / len(elems)


def _func(elems):
    """Singleton-preserving; any larger multiset collapses to the collision marker."""
    if not elems:
        raise EvaluationError("func of an empty multiset")
    if len(elems) == 1:
        return elems[0]
    return NON_VALUE


def _binary_add(elems):
    a, b = _all_rational(elems, "add")
    return a + b


def _binary_mul(elems):
    a, b = _all_rational(elems, "mul")
    return a * b


def _binary_div(elems):
    a, b = _all_rational(elems, "div")
    if b == 0:
        raise EvaluationError("division by zero")
    return a / b


def _div_ordered(left, right):
    require_rational(left, "div")
    require_rational(right, "div")
    if right == 0:
        raise EvaluationError("division by zero")
    return left / right


def _pair_sum(a, b):
    return _sum([a, b])


def _pair_prod(a, b):
    return _prod([a, b])


def _pair_min(a, b):
    return _min([a, b])


def _pair_max(a, b):
    return _max([a, b])


def builtin_aggregates() -> dict[str, AggOp]:
    """The fixed operator registry reachable from surface syntax."""
    ops = [
        AggOp("sum", _sum, neutral=Fraction(0), pair_fn=_pair_sum),
        AggOp("prod", _prod, neutral=Fraction(1), pair_fn=_pair_prod),
        AggOp("min", _min, neutral=POS_INF, pair_fn=_pair_min),
        AggOp("max", _max, neutral=NEG_INF, pair_fn=_pair_max),
        AggOp("count", _count, neutral=Fraction(0), lawful_neutral=False),
        AggOp("avg", _avg, neutral=None),
        AggOp("func", _func, neutral=None),
        AggOp("add", _binary_add, neutral=Fraction(0), binary_only=True,
              pair_fn=_pair_sum),
        AggOp("mul", _binary_mul, neutral=Fraction(1), binary_only=True,
              pair_fn=_pair_prod),
        AggOp("div", _binary_div, neutral=None, binary_only=True,
              ordered_binary=_div_ordered),
    ]
    return {op.name: op for op in ops}


@dataclass
class NeutralLawReport:
    op_name: str
    checked: int = 0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def check_neutral_law(
    op: AggOp,
    sample_multisets=(),
    rng: random.Random | None = None,
    random_trials: int = 0,
) -> NeutralLawReport:
    """Verify that inserting the declared neutral never changes the aggregate.

    Binary-only operators are checked through their padding identities
    (``x op 0 = x`` and ``0 op x = x``); everything else through multiset
    extension with one, two, and three extra neutrals.
    """
    if op.neutral is None:
        raise EvaluationError(f"operator '{op.name}' declares no neutral")
    report = NeutralLawReport(op.name)
    samples = [list(m) for m in sample_multisets]
    if rng is not None:
        for _ in range(random_trials):
            size = rng.randrange(0, 7)
            samples.append(
                [Fraction(rng.randrange(-9, 10), rng.randrange(1, 7)) for _ in range(size)]
            )

    def record(base, extended):
        report.checked += 1
        try:
            want = op.apply(base)
            got = op.apply(extended)
        except EvaluationError as exc:
            report.failures.append((base, extended, str(exc)))
            return
        if want != got:
            report.failures.append(
                (base, extended, f"{format_value(want)} != {format_value(got)}")
            )

    for base in samples:
        if op.binary_only:
            if len(base) != 1:
                continue
            report.checked += 1
            if op.binary(base[0], op.neutral) != base[0] or op.binary(op.neutral, base[0]) != base[0]:
                report.failures.append((base, base, "padding identity fails"))
            continue
        for extra in (1, 2, 3):
            record(base, base + [op.neutral] * extra)
    return report
