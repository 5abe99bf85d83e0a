from fractions import Fraction as F

import pytest
from hypothesis import given, strategies as st

from lara.aggregates import builtin_aggregates
from lara.errors import EvaluationError, StructuralError
from lara.tables import (
    AssocTable,
    Database,
    Sort,
    apply_key_permutation,
    pad_row,
    serialize_table,
    solve,
)
from lara.values import NON_VALUE

AGGS = builtin_aggregates()


class TestPadRow:
    def test_new_attributes_receive_the_neutral(self):
        got = pad_row((F(2), F(6)), ("v1", "v2"), ("v1", "v2", "v3"), F(0))
        assert got == (F(2), F(6), F(0))

    def test_no_new_attributes_is_identity(self):
        assert pad_row((F(4), F(8)), ("v1", "v2"), ("v1", "v2"), F(0)) == (F(4), F(8))

    def test_padding_fills_by_name_not_position(self):
        got = pad_row((F(5),), ("v2",), ("v1", "v2", "v3"), F(1))
        assert got == (F(1), F(5), F(1))

    def test_arity_mismatch_is_structural(self):
        with pytest.raises(StructuralError):
            pad_row((F(1),), ("v1", "v2"), ("v1", "v2", "v3"), F(0))


class TestSolve:
    def test_sums_conflicting_rows(self):
        t = solve(Sort(("k",), ("v",)), [((1,), (F(1),)), ((1,), (F(2),))], AGGS["sum"])
        assert t.rows == (((1,), (F(3),)),)

    def test_multiset_from_the_projected_union(self):
        pairs = [
            ((0,), (F(1), F(5), F(0))),
            ((0,), (F(3), F(7), F(0))),
            ((0,), (F(0), F(1), F(1))),
            ((0,), (F(0), F(1), F(2))),
        ]
        t = solve(Sort(("j",), ("v1", "v2", "v3")), pairs, AGGS["sum"])
        assert t.rows == (((0,), (F(4), F(14), F(3))),)

    def test_func_preserves_singletons_and_marks_collisions(self):
        sort = Sort(("k",), ("v",))
        single = solve(sort, [((1,), (F(7),))], AGGS["func"])
        assert single.rows == (((1,), (F(7),)),)
        double = solve(sort, [((1,), (F(7),)), ((1,), (F(7),))], AGGS["func"])
        assert double.rows[0][1][0] is NON_VALUE

    def test_undefined_size_names_the_key(self):
        with pytest.raises(EvaluationError, match="add"):
            solve(
                Sort(("k",), ("v",)),
                [((1,), (F(1),)), ((1,), (F(2),)), ((1,), (F(3),))],
                AGGS["add"],
            )


class TestKeyPermutation:
    def test_identity_map(self):
        t = AssocTable(Sort(("k",), ("v",)), [((1,), (F(5),))])
        assert apply_key_permutation(t, {}) == t

    def test_single_row_relocation(self):
        t = AssocTable(Sort(("k",), ("v",)), [((1,), (F(5),))])
        got = apply_key_permutation(t, {1: 9})
        assert got.rows == (((9,), (F(5),)),)

    def test_swap_reorders_rows_canonically(self):
        sort = Sort(("i", "j"), ("v",))
        t = AssocTable(sort, [((1, 1), (F(1),)), ((2, 2), (F(2),)), ((3, 3), (F(3),))])
        got = apply_key_permutation(t, {2: 3, 3: 2})
        assert got.rows == (((1, 1), (F(1),)), ((2, 2), (F(3),)), ((3, 3), (F(2),)))

    def test_non_injective_map_rejected(self):
        t = AssocTable(Sort(("k",), ()), [((1,), ()), ((2,), ())])
        with pytest.raises(StructuralError, match="injective"):
            apply_key_permutation(t, {1: 5, 2: 5})

    @given(st.permutations([0, 1, 2, 3, "a", "b"]))
    def test_round_trip_under_inverse(self, images):
        keys = [0, 1, 2, 3, "a", "b"]
        mapping = dict(zip(keys, images))
        inverse = {v: k for k, v in mapping.items()}
        t = AssocTable(
            Sort(("k",), ("v",)), [((k,), (F(i),)) for i, k in enumerate(keys)]
        )
        assert apply_key_permutation(apply_key_permutation(t, mapping), inverse) == t


class TestAssocTable:
    def test_key_functionality_enforced(self):
        with pytest.raises(StructuralError, match="key-functionality"):
            AssocTable(Sort(("k",), ("v",)), [((1,), (F(1),)), ((1,), (F(2),))])

    def test_identical_duplicate_rows_collapse(self):
        t = AssocTable(Sort(("k",), ("v",)), [((1,), (F(1),)), ((1,), (F(1),))])
        assert len(t) == 1

    def test_no_key_attributes_means_at_most_one_row(self):
        t = AssocTable(Sort((), ("v",)), [((), (F(3),))])
        assert len(t) == 1
        with pytest.raises(StructuralError):
            AssocTable(Sort((), ("v",)), [((), (F(3),)), ((), (F(4),))])

    def test_equality_iff_serializations_match(self):
        sort = Sort(("k",), ("v",))
        t1 = AssocTable(sort, [((1,), (F(1),)), ((2,), (F(2),))])
        t2 = AssocTable(sort, [((2,), (F(2),)), ((1,), (F(1),))])
        t3 = AssocTable(sort, [((1,), (F(1),))])
        assert t1 == t2 and serialize_table(t1) == serialize_table(t2)
        assert t1 != t3 and serialize_table(t1) != serialize_table(t3)

    def test_rows_sorted_by_key_tuple(self):
        t = AssocTable(
            Sort(("k",), ()), [(("b",), ()), ((10,), ()), ((2,), ()), (("a",), ())]
        )
        assert [keys[0] for keys, _ in t.rows] == [2, 10, "a", "b"]

    def test_serialization_format(self):
        t = AssocTable(
            Sort(("i", "name"), ("v",)),
            [((1, "x"), (F(3, 2),)), ((0, "y"), (F(4),))],
        )
        assert serialize_table(t) == (
            "i:key,name:key,v:val\n"
            '0,"y",4\n'
            '1,"x",3/2\n'
        )


class TestDatabase:
    def test_schema_mismatch_rejected(self):
        t = AssocTable(Sort(("k",), ()), [((1,), ())])
        with pytest.raises(StructuralError):
            Database({"R": t}, {"R": Sort(("x",), ())})

    def test_active_keys_collects_every_table(self):
        a = AssocTable(Sort(("i",), ()), [((3,), ()), (("z",), ())])
        b = AssocTable(Sort(("j",), ()), [((1,), ())])
        assert Database({"A": a, "B": b}).active_keys() == [1, 3, "z"]
