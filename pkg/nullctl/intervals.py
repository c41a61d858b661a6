"""
Finite unions of open intervals

Used for the space regions G1, G2 (subsets of (0,1)) and for the time
sets E, F (subsets of (0,T)). Boundaries carry no measure, so two sets
that only share endpoints are treated as disjoint.
"""

from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .errors import ValidationError

Interval = Tuple[float, float]


def _normalize(intervals: Iterable[Sequence[float]]) -> List[Interval]:
    """Sort, drop empty pieces and merge overlapping or touching intervals"""
    cleaned = []
    for item in intervals:
        if len(item) != 2:
            raise ValidationError(f"Interval must have two endpoints, got {item!r}")
        start, end = float(item[0]), float(item[1])
        if not (np.isfinite(start) and np.isfinite(end)):
            raise ValidationError(f"Interval endpoints must be finite, got {item!r}")
        if end < start:
            raise ValidationError(f"Invalid interval start={start} end={end}")
        if end > start:
            cleaned.append((start, end))

    cleaned.sort()
    merged: List[Interval] = []
    for start, end in cleaned:
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


class IntervalSet:
    """A finite union of disjoint open intervals, kept sorted"""

    def __init__(self, intervals: Iterable[Sequence[float]] = ()):
        self.intervals: Tuple[Interval, ...] = tuple(_normalize(intervals))

    @classmethod
    def empty(cls) -> 'IntervalSet':
        return cls(())

    @classmethod
    def full(cls, start: float, end: float) -> 'IntervalSet':
        return cls([(start, end)])

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self):
        return len(self.intervals)

    def __bool__(self):
        return self.measure > 0

    def __eq__(self, other):
        return isinstance(other, IntervalSet) and self.intervals == other.intervals

    def __hash__(self):
        return hash(self.intervals)

    def __repr__(self):
        return f"IntervalSet({list(self.intervals)!r})"

    @property
    def measure(self) -> float:
        return float(sum(end - start for start, end in self.intervals))

    @property
    def lengths(self) -> List[float]:
        return [end - start for start, end in self.intervals]

    @property
    def endpoints(self) -> List[float]:
        points = []
        for start, end in self.intervals:
            points.extend((start, end))
        return points

    def contains(self, points) -> np.ndarray:
        """Vectorized open-interval membership"""
        points = np.asarray(points, dtype=float)
        inside = np.zeros(points.shape, dtype=bool)
        for start, end in self.intervals:
            inside |= (points > start) & (points < end)
        return inside

    def indicator(self, points) -> np.ndarray:
        return self.contains(points).astype(float)

    def intersect(self, other: 'IntervalSet') -> 'IntervalSet':
        pieces = []
        for a0, a1 in self.intervals:
            for b0, b1 in other.intervals:
                lo, hi = max(a0, b0), min(a1, b1)
                if hi > lo:
                    pieces.append((lo, hi))
        return IntervalSet(pieces)

    def intersect_interval(self, start: float, end: float) -> 'IntervalSet':
        return self.intersect(IntervalSet([(start, end)]))

    def union(self, other: 'IntervalSet') -> 'IntervalSet':
        return IntervalSet(list(self.intervals) + list(other.intervals))

    def complement(self, start: float, end: float) -> 'IntervalSet':
        """Complement inside (start, end)"""
        pieces = []
        cursor = start
        for a0, a1 in self.intersect_interval(start, end).intervals:
            if a0 > cursor:
                pieces.append((cursor, a0))
            cursor = max(cursor, a1)
        if cursor < end:
            pieces.append((cursor, end))
        return IntervalSet(pieces)

    def overlap_measure(self, start: float, end: float) -> float:
        return self.intersect_interval(start, end).measure

    def is_subset_of(self, other: 'IntervalSet', tol: float = 1e-12) -> bool:
        return self.measure - self.intersect(other).measure <= tol

    def within(self, start: float, end: float) -> bool:
        return all(a0 >= start and a1 <= end for a0, a1 in self.intervals)


def fat_cantor(T: float, level: int) -> IntervalSet:
    """Nested fat-Cantor approximant of (0, T).

    Level j removes, from each of the 2^(j-1) intervals left by level j-1,
    the open middle interval of length T * 4^-j. The level-m set has 2^m
    intervals and measure T * (1/2 + 2^(-m-1)).
    """
    if T <= 0:
        raise ValidationError(f"Horizon must be positive, got {T}")
    if level < 0:
        raise ValidationError(f"Fat-Cantor level must be >= 0, got {level}")

    pieces: List[Interval] = [(0.0, float(T))]
    for j in range(1, level + 1):
        gap = T * 4.0 ** (-j)
        next_pieces = []
        for start, end in pieces:
            center = 0.5 * (start + end)
            next_pieces.append((start, center - 0.5 * gap))
            next_pieces.append((center + 0.5 * gap, end))
        pieces = next_pieces
    return IntervalSet(pieces)
