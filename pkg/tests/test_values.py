from fractions import Fraction

import pytest

from lara.errors import EvaluationError, StructuralError
from lara.values import (
    NEG_INF,
    NON_VALUE,
    POS_INF,
    format_key,
    format_value,
    key_lt,
    key_sort_token,
    parse_key,
    parse_value,
    value_lt,
    value_sort_token,
)


def test_integers_precede_texts():
    assert key_lt(10**30, "")
    assert key_lt(-5, "a")
    assert not key_lt("a", 3)


def test_integer_keys_compare_numerically():
    assert key_lt(2, 10)
    assert key_lt(-3, 0)


def test_text_keys_compare_shortlex():
    assert key_lt("z", "aa")  # shorter first
    assert key_lt("ab", "ac")  # then codepoint order
    assert sorted(["aa", "b", "z", "ab"], key=key_sort_token) == ["b", "z", "aa", "ab"]


def test_value_order_brackets_rationals_with_infinities():
    assert value_lt(NEG_INF, Fraction(-(10**20)))
    assert value_lt(Fraction(10**20), POS_INF)
    with pytest.raises(EvaluationError):
        value_lt(NON_VALUE, Fraction(0))


def test_value_sort_token_is_total_and_deterministic():
    vals = [POS_INF, Fraction(1, 2), NEG_INF, NON_VALUE, Fraction(-3)]
    ordered = sorted(vals, key=value_sort_token)
    assert ordered == [NEG_INF, Fraction(-3), Fraction(1, 2), POS_INF, NON_VALUE]


def test_format_and_parse_values_round_trip():
    for v in (Fraction(3, 2), Fraction(-7), Fraction(0), POS_INF, NEG_INF, NON_VALUE):
        assert parse_value(format_value(v)) == v or parse_value(format_value(v)) is v


def test_parse_value_accepts_decimals():
    assert parse_value("1.5") == Fraction(3, 2)
    assert parse_value("-0.25") == Fraction(-1, 4)


def test_key_formatting_quotes_text():
    assert format_key(5) == "5"
    assert format_key("k1") == '"k1"'
    assert format_key('say "hi"') == '"say ""hi"""'
    assert parse_key(format_key('say "hi"')) == 'say "hi"'


def test_parse_key_rejects_bare_text():
    with pytest.raises(StructuralError):
        parse_key("abc")
    with pytest.raises(StructuralError):
        parse_value("abc")
