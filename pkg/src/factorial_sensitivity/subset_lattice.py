"""Exact algebra over the powerset of the input index set.

Subsets of ``D = {1, ..., d}`` are stored as integer bit patterns where
input ``i`` (1-based) occupies bit ``i - 1``.  Maps on the powerset are
dense arrays of length ``2**d`` indexed by that bit pattern.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

MAX_DIM = 24
DEFAULT_MAX_DIM = 15

# Floating comparisons on alternating sums.
RTOL = 1e-10
ATOL = 1e-12


class DimensionError(ValueError):
    """Raised when a dimension is out of range or two objects disagree on it."""


class OverlapError(ValueError):
    """Raised when two subsets that must be disjoint share an element."""


def check_dim(d: int, max_dim: int = MAX_DIM) -> int:
    if not isinstance(d, (int, np.integer)) or isinstance(d, bool):
        raise DimensionError(f"dimension must be an integer, got {d!r}")
    d = int(d)
    if not 1 <= d <= min(max_dim, MAX_DIM):
        raise DimensionError(f"dimension {d} outside [1, {min(max_dim, MAX_DIM)}]")
    return d


@dataclass(frozen=True, order=True)
class SubsetMask:
    """A subset of ``{1, ..., dim}`` as a bit pattern."""

    bits: int
    dim: int

    def __post_init__(self):
        check_dim(self.dim)
        if self.bits < 0 or self.bits >> self.dim:
            raise DimensionError(f"bits {self.bits:#b} do not fit in dimension {self.dim}")

    @classmethod
    def from_indices(cls, indices: Iterable[int], dim: int) -> "SubsetMask":
        """Build a mask from 1-based input indices."""
        bits = 0
        for i in indices:
            if not 1 <= i <= dim:
                raise DimensionError(f"input index {i} outside 1..{dim}")
            bits |= 1 << (i - 1)
        return cls(bits, dim)

    @classmethod
    def empty(cls, dim: int) -> "SubsetMask":
        return cls(0, dim)

    @classmethod
    def full(cls, dim: int) -> "SubsetMask":
        return cls((1 << dim) - 1, dim)

    def indices(self) -> tuple[int, ...]:
        """1-based indices of the members, ascending."""
        return tuple(i + 1 for i in range(self.dim) if self.bits >> i & 1)

    def __len__(self) -> int:
        return bin(self.bits).count("1")

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices())

    def __contains__(self, i: int) -> bool:
        return 1 <= i <= self.dim and bool(self.bits >> (i - 1) & 1)

    def __int__(self) -> int:
        return self.bits

    def __index__(self) -> int:
        return self.bits

    def complement(self) -> "SubsetMask":
        return SubsetMask(((1 << self.dim) - 1) & ~self.bits, self.dim)

    def _other(self, other: "SubsetMask") -> int:
        if other.dim != self.dim:
            raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return other.bits

    def __or__(self, other: "SubsetMask") -> "SubsetMask":
        return SubsetMask(self.bits | self._other(other), self.dim)

    def __and__(self, other: "SubsetMask") -> "SubsetMask":
        return SubsetMask(self.bits & self._other(other), self.dim)

    def __sub__(self, other: "SubsetMask") -> "SubsetMask":
        return SubsetMask(self.bits & ~self._other(other), self.dim)

    def issubset(self, other: "SubsetMask") -> bool:
        return self.bits & ~self._other(other) == 0

    def __str__(self) -> str:
        return format_subset(self.bits, self.dim)


Mask = Union[SubsetMask, int]


def as_bits(mask: Mask, dim: int) -> int:
    """Return the bit pattern of ``mask``, checking it against ``dim``."""
    if isinstance(mask, SubsetMask):
        if mask.dim != dim:
            raise DimensionError(f"mask has dimension {mask.dim}, expected {dim}")
        return mask.bits
    bits = int(mask)
    if bits < 0 or bits >> dim:
        raise DimensionError(f"bits {bits:#b} do not fit in dimension {dim}")
    return bits


_SET_RE = re.compile(r"^\s*\{\s*([0-9,\s]*)\}\s*$")


def parse_subset(text: str, dim: int) -> SubsetMask:
    """Parse a set literal such as ``"{1,3}"`` or ``"{}"`` (1-based indices)."""
    text = text.strip()
    if text in ("∅", "{}"):
        return SubsetMask.empty(dim)
    m = _SET_RE.match(text)
    if m is None:
        raise ValueError(f"not a set literal: {text!r}")
    parts = [p.strip() for p in m.group(1).split(",") if p.strip()]
    indices = [int(p) for p in parts]
    if len(set(indices)) != len(indices):
        raise ValueError(f"repeated index in {text!r}")
    return SubsetMask.from_indices(indices, dim)


def format_subset(bits: int, dim: int) -> str:
    return "{" + ",".join(str(i + 1) for i in range(dim) if bits >> i & 1) + "}"


def popcounts(dim: int) -> np.ndarray:
    """Cardinality of every subset, indexed by bit pattern."""
    counts = np.zeros(1 << dim, dtype=np.int64)
    for i in range(dim):
        counts[1 << i : 1 << (i + 1)] = counts[: 1 << i] + 1
    return counts


def table_order(dim: int) -> np.ndarray:
    """Bit patterns listed in the row order of a two-level factorial table.

    Rows count in binary with input 1 as the most significant (leftmost)
    factor column, so for ``dim=3`` the order is
    ``{}, {3}, {2}, {2,3}, {1}, {1,3}, {1,2}, {1,2,3}``.
    """
    rows = np.arange(1 << dim)
    out = np.zeros_like(rows)
    for i in range(dim):
        out |= ((rows >> (dim - 1 - i)) & 1) << i
    return out


def all_subsets_of(bits: int) -> Iterator[int]:
    """Every submask of ``bits`` (including 0 and ``bits`` itself)."""
    sub = bits
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & bits


@dataclass(frozen=True, eq=False)
class LatticeMap:
    """A real-valued map on the powerset of ``{1, ..., d}``.

    ``values[bits]`` holds the value at the subset with that bit pattern.
    The array is copied and frozen on construction.
    """

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True).reshape(-1)
        n = values.size
        if n < 2 or n & (n - 1):
            raise DimensionError(f"lattice map length {n} is not 2**d with d >= 1")
        check_dim(n.bit_length() - 1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.size.bit_length() - 1

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, mask: Mask) -> float:
        return float(self.values[as_bits(mask, self.dim)])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LatticeMap):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_function(cls, fn, dim: int, label: str = "") -> "LatticeMap":
        """Tabulate ``fn(SubsetMask)`` over the powerset."""
        check_dim(dim)
        return cls(np.array([fn(SubsetMask(b, dim)) for b in range(1 << dim)]), label)

    @classmethod
    def indicator(cls, bits: int, dim: int) -> "LatticeMap":
        values = np.zeros(1 << dim)
        values[as_bits(bits, dim)] = 1.0
        return cls(values, f"indicator{format_subset(bits, dim)}")

    def is_sensitivity_map(self, tol: float = 0.0) -> bool:
        """Zero on the empty set and nonnegative everywhere (up to ``tol``)."""
        return self.values[0] == 0.0 and bool(np.all(self.values >= -tol))

    def allclose(self, other: "LatticeMap", rtol: float = RTOL, atol: float = ATOL) -> bool:
        _same_dim(self, other)
        return bool(np.allclose(self.values, other.values, rtol=rtol, atol=atol))

    def in_table_order(self) -> np.ndarray:
        return self.values[table_order(self.dim)]


def _same_dim(a: LatticeMap, b: LatticeMap) -> None:
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")


def delta(tau: LatticeMap, B: Mask, A: Mask) -> float:
    """Iterated finite difference of ``tau`` over the inputs in ``B`` at ``A``.

    Sums ``(-1)**(|B| - |C - A|) * tau(C)`` over ``A <= C <= A | B``.
    """
    d = tau.dim
    b, a = as_bits(B, d), as_bits(A, d)
    if a & b:
        raise OverlapError(
            f"A={format_subset(a, d)} and B={format_subset(b, d)} must be disjoint"
        )
    nb = bin(b).count("1")
    total = 0.0
    for s in all_subsets_of(b):
        sign = -1.0 if (nb - bin(s).count("1")) & 1 else 1.0
        total += sign * tau.values[a | s]
    return total


def _zeta_sweep(values: np.ndarray, sign: float) -> np.ndarray:
    # Bit-plane sweep: for each input, add (sign *) the value of the set without
    # that input to the set with it.
    out = np.array(values, dtype=float, copy=True)
    n = out.size
    d = n.bit_length() - 1
    for i in range(d):
        step = 1 << i
        view = out.reshape(-1, 2, step)
        if sign > 0:
            view[:, 1, :] += view[:, 0, :]
        else:
            view[:, 1, :] -= view[:, 0, :]
    return out


def mobius_transform(tau: LatticeMap) -> LatticeMap:
    """``I(B) = sum over A <= B of (-1)**|B - A| * tau(A)``, in O(d 2**d)."""
    return LatticeMap(_zeta_sweep(tau.values, -1.0), label=f"mobius({tau.label})")


def mobius_inverse(effects: LatticeMap) -> LatticeMap:
    """``tau(B) = sum over A <= B of I(A)``, in O(d 2**d)."""
    return LatticeMap(_zeta_sweep(effects.values, 1.0), label=f"zeta({effects.label})")


def dual(tau: LatticeMap) -> LatticeMap:
    """``tau*(A) = tau(D) - tau(D - A)``.

    Complementing a bit pattern reverses the array, so this is one vector op.
    """
    v = tau.values
    return LatticeMap(v[-1] - v[::-1], label=f"dual({tau.label})")


def conditional_effect(tau: LatticeMap, B: Mask, A: Mask) -> float:
    """Effect of ``B`` in the presence of ``A``: ``tau((B - A) | A) - tau(A)``.

    For disjoint sets this is ``tau(B | A) - tau(A)``; overlapping elements of
    ``B`` already present in ``A`` contribute nothing.
    """
    d = tau.dim
    b, a = as_bits(B, d), as_bits(A, d)
    return float(tau.values[(b & ~a) | a] - tau.values[a])


def subsets_by_size(dim: int, size: int) -> list[int]:
    return [sum(1 << (i - 1) for i in c) for c in combinations(range(1, dim + 1), size)]


def singletons(dim: int) -> list[int]:
    return [1 << i for i in range(dim)]


def iterated_delta(tau: LatticeMap, order: Sequence[int], A: Mask) -> float:
    """Apply single-input difference operators one at a time, in ``order``.

    ``order`` holds 1-based input indices.  Used to check the closed form of
    :func:`delta` against its recursive definition.
    """
    d = tau.dim
    a = as_bits(A, d)
    current = np.array(tau.values, dtype=float)
    for i in order:
        bit = 1 << (i - 1)
        idx = np.arange(current.size)
        current = current[idx | bit] - current
    if a & sum(1 << (i - 1) for i in order):
        raise OverlapError("A and B must be disjoint")
    return float(current[a])
