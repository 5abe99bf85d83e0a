"""Two-sorted domain: keys (integers and text) and exact rational values.

Keys carry a global strict total order: every integer precedes every text,
integers compare numerically, and texts compare shortlex (length first, then
codepoint order).  Values are exact rationals extended with three sentinels:
``POS_INF`` / ``NEG_INF`` (the neutral elements of min/max, confined to
computation) and ``NON_VALUE`` (the collision marker of the ``func``
aggregate, distinct from every rational).
"""

from __future__ import annotations

from fractions import Fraction

from .errors import EvaluationError, StructuralError


class _Extreme:
    """Non-rational value sentinel; compares by its rank around the rationals."""

    __slots__ = ("rank", "token")

    def __init__(self, rank: int, token: str):
        self.rank = rank
        self.token = token

    def __repr__(self):
        return self.token


NEG_INF = _Extreme(-1, "-inf")
POS_INF = _Extreme(1, "inf")
NON_VALUE = _Extreme(2, "none")

Key = int | str
Value = Fraction | _Extreme


def is_key(obj) -> bool:
    return (isinstance(obj, int) and not isinstance(obj, bool)) or isinstance(obj, str)


def is_value(obj) -> bool:
    return isinstance(obj, Fraction) or obj is POS_INF or obj is NEG_INF or obj is NON_VALUE


def is_rational(obj) -> bool:
    return isinstance(obj, Fraction)


def check_key(obj) -> Key:
    if not is_key(obj):
        raise StructuralError(f"not a key: {obj!r}")
    return obj


def check_value(obj) -> Value:
    if not is_value(obj):
        raise StructuralError(f"not a value: {obj!r}")
    return obj


def key_sort_token(k: Key):
    """Token realizing the global key order (ints, then shortlex text)."""
    if isinstance(k, str):
        return (1, len(k), k)
    return (0, k)


def key_lt(a: Key, b: Key) -> bool:
    return key_sort_token(a) < key_sort_token(b)


def value_sort_token(v: Value):
    """Deterministic total order used for canonical multiset reduction."""
    if isinstance(v, Fraction):
        return (0, v)
    return (v.rank, 0)


def value_lt(a: Value, b: Value) -> bool:
    """Order comparison; defined on rationals and infinities, not NON_VALUE."""
    if a is NON_VALUE or b is NON_VALUE:
        raise EvaluationError("the non-value sentinel is not ordered")
    return value_sort_token(a) < value_sort_token(b)


def value_le(a: Value, b: Value) -> bool:
    if a is NON_VALUE or b is NON_VALUE:
        raise EvaluationError("the non-value sentinel is not ordered")
    return value_sort_token(a) <= value_sort_token(b)


def require_rational(v: Value, context: str) -> Fraction:
    if not isinstance(v, Fraction):
        raise EvaluationError(f"{context}: needs a rational, got {format_value(v)}")
    return v


def format_key(k: Key) -> str:
    """Decimal integers bare, text always quoted (with "" escaping a quote)."""
    if isinstance(k, str):
        return '"' + k.replace('"', '""') + '"'
    return str(k)


def format_value(v: Value) -> str:
    """``p/q`` with reduced positive denominator, or bare ``p`` when q = 1."""
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return str(v.numerator)
        return f"{v.numerator}/{v.denominator}"
    return v.token


_VALUE_TOKENS = {"inf": POS_INF, "+inf": POS_INF, "-inf": NEG_INF, "none": NON_VALUE}


def parse_value(text: str) -> Value:
    """Accepts ``p/q``, integers, plain decimals, and the sentinel tokens."""
    text = text.strip()
    if text in _VALUE_TOKENS:
        return _VALUE_TOKENS[text]
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise StructuralError(f"malformed value cell: {text!r}") from None


def parse_key(text: str) -> Key:
    """Accepts optionally signed decimal integers and quoted strings."""
    text = text.strip()
    if text.startswith('"'):
        if not text.endswith('"') or len(text) < 2:
            raise StructuralError(f"unterminated string key: {text!r}")
        body = text[1:-1]
        out, i = [], 0
        while i < len(body):
            c = body[i]
            if c == '"':
                if i + 1 < len(body) and body[i + 1] == '"':
                    out.append('"')
                    i += 2
                    continue
                raise StructuralError(f"stray quote inside string key: {text!r}")
            out.append(c)
            i += 1
        return "".join(out)
    try:
        return int(text, 10)
    except ValueError:
        raise StructuralError(f"malformed key cell: {text!r} (text keys must be quoted)") from None
