import numpy as np
import pytest

from nullctl.errors import ValidationError
from nullctl.intervals import IntervalSet, fat_cantor


def test_normalization_merges_and_sorts():
    s = IntervalSet([(0.5, 0.7), (0.1, 0.2), (0.15, 0.3), (0.7, 0.8), (0.9, 0.9)])
    assert s.intervals == ((0.1, 0.3), (0.5, 0.8))
    assert s.measure == pytest.approx(0.5)
    assert len(s) == 2


def test_reversed_interval_rejected():
    with pytest.raises(ValidationError):
        IntervalSet([(0.4, 0.2)])


def test_membership_is_open():
    s = IntervalSet([(0.0, 0.5)])
    np.testing.assert_array_equal(s.contains([0.0, 0.25, 0.5, 0.75]), [False, True, False, False])
    np.testing.assert_array_equal(s.indicator([0.25, 0.75]), [1.0, 0.0])


def test_set_operations():
    a = IntervalSet([(0.0, 0.4), (0.6, 1.0)])
    b = IntervalSet([(0.3, 0.7)])
    assert a.intersect(b).intervals == ((0.3, 0.4), (0.6, 0.7))
    assert a.union(b).intervals == ((0.0, 1.0),)
    assert a.complement(0.0, 1.0).intervals == ((0.4, 0.6),)
    assert a.overlap_measure(0.2, 0.8) == pytest.approx(0.4)
    assert IntervalSet([(0.1, 0.2)]).is_subset_of(a)
    assert not b.is_subset_of(a)
    assert a.within(0.0, 1.0) and not a.within(0.0, 0.9)


def test_touching_sets_are_disjoint_in_measure():
    E = IntervalSet([(0.0, 0.5)])
    F = IntervalSet([(0.5, 1.0)])
    assert E.intersect(F).measure == 0.0
    assert E.union(F).measure == pytest.approx(1.0)


@pytest.mark.parametrize('level', [0, 1, 2, 3, 5])
def test_fat_cantor_measure(level):
    T = 2.0
    s = fat_cantor(T, level)
    assert len(s) == 2 ** level
    assert s.measure == pytest.approx(T * (0.5 + 2.0 ** (-level - 1)), rel=1e-12)


def test_fat_cantor_levels_are_nested():
    chain = [fat_cantor(1.0, level) for level in range(5)]
    for coarse, fine in zip(chain, chain[1:]):
        assert fine.is_subset_of(coarse)
        assert fine.measure < coarse.measure


def test_fat_cantor_rejects_negative_level():
    with pytest.raises(ValidationError):
        fat_cantor(1.0, -1)
