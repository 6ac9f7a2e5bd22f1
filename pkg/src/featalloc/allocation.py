"""Binary feature allocation matrices and their combinatorial statistics.

A feature allocation is stored as a dense ``N x K`` 0/1 matrix whose rows are
customers (in original customer order) and whose columns are features.
All-zero columns are dropped at construction.  Two allocations that differ
only by a column permutation compare equal; identity is the left-ordered form.

Customer indices in the Python API are 0-based.  Arrival orders are
permutations of ``range(N)`` where ``order[p]`` is the customer arriving at
position ``p``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

__all__ = [
    "AllocationKey",
    "AllocationStats",
    "FeatureAllocation",
    "allocation_stats",
    "column_value",
    "left_ordered_form",
    "shared_feature_count",
]


def column_value(column: Sequence[int]) -> int:
    """Binary number of a column, first row most significant."""
    value = 0
    for bit in column:
        value = (value << 1) | int(bit)
    return value


def _column_bits(value: int, n: int) -> list[int]:
    return [(value >> (n - 1 - r)) & 1 for r in range(n)]


@dataclass(frozen=True, order=True)
class AllocationKey:
    """Canonical left-ordered form: column values sorted in descending order."""

    n_customers: int
    columns: tuple[int, ...]

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def to_allocation(self) -> "FeatureAllocation":
        return FeatureAllocation.from_columns(
            [_column_bits(v, self.n_customers) for v in self.columns],
            self.n_customers,
        )

    def __str__(self) -> str:
        if not self.columns:
            return "-"
        return ",".join(format(v, f"0{self.n_customers}b") for v in self.columns)


class FeatureAllocation:
    """Immutable binary feature allocation ``Z`` with no all-zero columns."""

    __slots__ = ("_z", "_key")

    def __init__(self, matrix, n_customers: int | None = None):
        z = np.asarray(matrix)
        if z.ndim == 1 and z.size == 0:
            z = z.reshape(0 if n_customers is None else n_customers, 0)
        if z.ndim != 2:
            raise ValidationError(f"feature allocation must be 2-D, got shape {z.shape}")
        if n_customers is not None and z.shape[0] != n_customers:
            raise ValidationError(
                f"expected {n_customers} rows, got {z.shape[0]}"
            )
        if z.shape[0] < 1:
            raise ValidationError("a feature allocation needs at least one customer")
        if z.size and not np.all((z == 0) | (z == 1)):
            raise ValidationError("feature allocation entries must be 0 or 1")
        z = z.astype(np.int8)
        z = z[:, z.any(axis=0)] if z.shape[1] else z
        z = np.ascontiguousarray(z)
        z.setflags(write=False)
        self._z = z
        self._key: AllocationKey | None = None

    @classmethod
    def empty(cls, n_customers: int) -> "FeatureAllocation":
        return cls(np.zeros((n_customers, 0), dtype=np.int8))

    @classmethod
    def from_columns(cls, columns: Iterable[Sequence[int]], n_customers: int) -> "FeatureAllocation":
        cols = [list(c) for c in columns]
        if not cols:
            return cls.empty(n_customers)
        for c in cols:
            if len(c) != n_customers:
                raise ValidationError(
                    f"column of length {len(c)} does not match {n_customers} customers"
                )
        return cls(np.array(cols, dtype=np.int8).T)

    @classmethod
    def from_strings(cls, lines: Iterable[str], n_customers: int | None = None) -> "FeatureAllocation":
        """Parse the compact text form: one feature per line, e.g. ``"0110"``."""
        cols = [s.strip() for s in lines if s.strip()]
        if not cols:
            if n_customers is None:
                raise ValidationError("cannot infer N from an empty allocation")
            return cls.empty(n_customers)
        n = len(cols[0]) if n_customers is None else n_customers
        parsed = []
        for lineno, s in enumerate(cols, 1):
            if len(s) != n or set(s) - {"0", "1"}:
                raise ValidationError(f"feature {lineno}: expected {n} characters of 0/1, got {s!r}")
            parsed.append([int(ch) for ch in s])
        return cls.from_columns(parsed, n)

    def to_strings(self) -> list[str]:
        return ["".join(str(int(b)) for b in col) for col in self._z.T]

    @property
    def matrix(self) -> np.ndarray:
        """Read-only ``N x K`` int8 view."""
        return self._z

    @property
    def n_customers(self) -> int:
        return self._z.shape[0]

    @property
    def n_features(self) -> int:
        return self._z.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._z.shape

    @property
    def key(self) -> AllocationKey:
        if self._key is None:
            self._key = left_ordered_form(self)
        return self._key

    def row_sums(self) -> np.ndarray:
        return self._z.sum(axis=1, dtype=np.int64)

    def permute_columns(self, perm: Sequence[int]) -> "FeatureAllocation":
        return FeatureAllocation(self._z[:, list(perm)], self.n_customers)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureAllocation):
            return NotImplemented
        return self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        return f"FeatureAllocation(N={self.n_customers}, K={self.n_features}, lof={self.key})"


def left_ordered_form(z: FeatureAllocation) -> AllocationKey:
    values = sorted((column_value(col) for col in z.matrix.T), reverse=True)
    return AllocationKey(z.n_customers, tuple(values))


@dataclass(frozen=True)
class AllocationStats:
    """Counts that drive the IBP and AIBD pmfs, indexed by arrival position.

    ``new_dishes[p]`` is x for the customer at position ``p``; ``dishes_before[p]``
    is y; ``prior_counts[p, k]`` is the number of customers before position ``p``
    holding feature ``k``; ``column_multiplicities`` maps column value to K_h.
    """

    new_dishes: np.ndarray
    dishes_before: np.ndarray
    prior_counts: np.ndarray
    column_multiplicities: dict[int, int]
    first_position: np.ndarray


def _check_order(order: Sequence[int] | None, n: int) -> np.ndarray:
    if order is None:
        return np.arange(n)
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,):
        raise ValidationError(f"order has length {order.size}, expected {n}")
    if not np.array_equal(np.sort(order), np.arange(n)):
        raise ValidationError("order must be a permutation of 0..N-1")
    return order


def allocation_stats(z: FeatureAllocation, order: Sequence[int] | None = None) -> AllocationStats:
    n, k = z.shape
    order = _check_order(order, n)
    zo = z.matrix[order].astype(np.int64)
    # m_{-i,k}: exclusive cumulative sum down the arrival order.
    prior_counts = np.cumsum(zo, axis=0) - zo
    if k:
        first = np.argmax(zo, axis=0)
        new_dishes = np.bincount(first, minlength=n)
    else:
        first = np.zeros(0, dtype=np.int64)
        new_dishes = np.zeros(n, dtype=np.int64)
    dishes_before = np.cumsum(new_dishes) - new_dishes
    mult = Counter(column_value(col) for col in z.matrix.T)
    return AllocationStats(
        new_dishes=new_dishes,
        dishes_before=dishes_before,
        prior_counts=prior_counts,
        column_multiplicities=dict(mult),
        first_position=first,
    )


def shared_feature_count(z: FeatureAllocation, i: int, j: int) -> int:
    n = z.n_customers
    for idx in (i, j):
        if not 0 <= idx < n:
            raise ValidationError(f"customer index {idx} out of range 0..{n - 1}")
    if i == j:
        raise ValidationError("shared_feature_count needs two distinct customers")
    return int(np.dot(z.matrix[i].astype(np.int64), z.matrix[j]))
