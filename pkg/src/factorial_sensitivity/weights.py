"""Weight families ``p_B`` used to average the differences ``Delta_B tau(A)``.

For every ``B`` the weights form a probability vector over the subsets
``A`` of ``D - B``.  Rows are handled as full-length arrays over the
powerset of ``D`` with zeros wherever ``A`` meets ``B``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .subset_lattice import (
    DimensionError,
    Mask,
    as_bits,
    check_dim,
    format_subset,
    parse_subset,
    popcounts,
    singletons,
)

NORMALIZATION_TOL = 1e-12


class WeightError(ValueError):
    """A weight family violates its construction rules."""


class WeightFamily:
    """Base class: subclasses provide :meth:`_row`."""

    name = "abstract"

    def __init__(self, dim: int):
        self.dim = check_dim(dim)
        self._full = (1 << self.dim) - 1

    def _row(self, b: int) -> np.ndarray:
        raise NotImplementedError

    def row(self, B: Mask) -> np.ndarray:
        """Weights ``p_B(A)`` for every ``A`` in the powerset of ``D`` (read-only)."""
        return self._row(as_bits(B, self.dim))

    def weight(self, B: Mask, A: Mask) -> float:
        b, a = as_bits(B, self.dim), as_bits(A, self.dim)
        if a & b:
            return 0.0
        return float(self._row(b)[a])

    def lifted_row(self, B: Mask) -> np.ndarray:
        """``p_B(A - B)`` for every ``A``: the coefficient pattern of the linear form."""
        b = as_bits(B, self.dim)
        idx = np.arange(1 << self.dim) & ~b
        return self._row(b)[idx]

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class UniformWeights(WeightFamily):
    """Equal weights ``1 / 2**(d - |B|)``: the classical factorial effects."""

    name = "uniform"

    def __init__(self, dim: int):
        super().__init__(dim)
        self._rows = lru_cache(maxsize=256)(self._make_row)

    def _make_row(self, b: int) -> np.ndarray:
        free = self._full & ~b
        row = np.zeros(1 << self.dim)
        row[(np.arange(1 << self.dim) & b) == 0] = 1.0 / (1 << bin(free).count("1"))
        return _freeze(row)

    def _row(self, b: int) -> np.ndarray:
        return self._rows(b)


class MobiusWeights(WeightFamily):
    """All mass on ``A = {}``; the effects become the Möbius transform."""

    name = "mobius"

    def __init__(self, dim: int):
        super().__init__(dim)
        row = np.zeros(1 << self.dim)
        row[0] = 1.0
        self._point = _freeze(row)

    def _row(self, b: int) -> np.ndarray:
        return self._point


class ShapleyWeights(WeightFamily):
    """``p_B(A) = 1 / ((m + 1) * C(m, |A|))`` with ``m = |D - B|``."""

    name = "shapley"

    def __init__(self, dim: int):
        super().__init__(dim)
        self._sizes = popcounts(self.dim)
        self._rows = lru_cache(maxsize=256)(self._make_row)

    def _make_row(self, b: int) -> np.ndarray:
        m = self.dim - bin(b).count("1")
        by_size = np.array([1.0 / ((m + 1) * math.comb(m, k)) for k in range(m + 1)])
        row = np.zeros(1 << self.dim)
        admissible = (np.arange(1 << self.dim) & b) == 0
        row[admissible] = by_size[self._sizes[admissible]]
        return _freeze(row)

    def _row(self, b: int) -> np.ndarray:
        return self._rows(b)


class CustomWeights(WeightFamily):
    """A materialized table of user-supplied weights.

    Parameters
    ----------
    dim : int
        Number of inputs.
    entries : iterable of (B, A, weight)
        ``B`` and ``A`` are masks (or bit patterns); ``A`` must avoid ``B``.
        Pairs that are not listed get weight zero.
    base : WeightFamily or str, optional
        Family supplying the whole row for every ``B`` that has no entry at
        all.  Without it such rows are all zero and fail normalization.
    name : str
        Provenance tag.
    check : bool
        Validate on construction (the default).  Unchecked tables can be
        inspected with :func:`validate` but are refused by the effect
        computations until they pass.
    """

    name = "custom"

    def __init__(self, dim: int, entries: Iterable, base=None, name: str = "custom", check: bool = True):
        super().__init__(dim)
        self.name = name
        if isinstance(base, str):
            base = named_family(base, dim)
        if base is not None and base.dim != self.dim:
            raise DimensionError(f"base family has dimension {base.dim}, expected {dim}")
        self.base = base
        table: dict[int, np.ndarray] = {}
        seen: set[tuple[int, int]] = set()
        for B, A, w in entries:
            b, a = as_bits(B, self.dim), as_bits(A, self.dim)
            if a & b:
                raise WeightError(
                    f"inadmissible pair B={format_subset(b, dim)}, A={format_subset(a, dim)}:"
                    " A must avoid B"
                )
            if (b, a) in seen:
                raise WeightError(
                    f"duplicate entry for B={format_subset(b, dim)}, A={format_subset(a, dim)}"
                )
            seen.add((b, a))
            w = float(w)
            if not math.isfinite(w) or w < 0:
                raise WeightError(
                    f"weight for B={format_subset(b, dim)}, A={format_subset(a, dim)}"
                    f" must be finite and nonnegative, got {w}"
                )
            table.setdefault(b, np.zeros(1 << self.dim))[a] = w
        self._table = {b: _freeze(r) for b, r in table.items()}
        self._zero = _freeze(np.zeros(1 << self.dim))
        if check:
            report = validate(self)
            if not report.passed:
                raise WeightError(report.describe())

    def _row(self, b: int) -> np.ndarray:
        if b in self._table:
            return self._table[b]
        if self.base is not None:
            return self.base._row(b)
        return self._zero

    @property
    def explicit_rows(self) -> list[int]:
        return sorted(self._table)


def uniform_weights(d: int) -> UniformWeights:
    return UniformWeights(d)


def mobius_weights(d: int) -> MobiusWeights:
    return MobiusWeights(d)


def shapley_weights(d: int) -> ShapleyWeights:
    return ShapleyWeights(d)


def custom_weights(d: int, entries: Iterable, base=None, name: str = "custom") -> CustomWeights:
    return CustomWeights(d, entries, base=base, name=name)


NAMED_FAMILIES = {
    "uniform": UniformWeights,
    "mobius": MobiusWeights,
    "shapley": ShapleyWeights,
}


def named_family(name: str, d: int) -> WeightFamily:
    try:
        return NAMED_FAMILIES[name](d)
    except KeyError:
        raise WeightError(
            f"unknown weight family {name!r}; expected one of {sorted(NAMED_FAMILIES)}"
        ) from None


# --------------------------------------------------------------------------
# Reports


@dataclass
class WeightReport:
    """Outcome of a report-style weight check."""

    passed: bool
    max_deviation: float
    deviations: dict[int, float] = field(default_factory=dict)
    negatives: list[tuple[int, int, float]] = field(default_factory=list)
    dim: int = 0
    detail: str = ""

    def worst(self) -> Optional[int]:
        if not self.deviations:
            return None
        return max(self.deviations, key=self.deviations.get)

    def describe(self) -> str:
        if self.passed:
            return f"ok (max deviation {self.max_deviation:.3g})"
        parts = []
        worst = self.worst()
        if worst is not None and self.deviations[worst] > NORMALIZATION_TOL:
            bad = [b for b, v in self.deviations.items() if v > NORMALIZATION_TOL]
            parts.append(
                "normalization fails for B="
                + ", ".join(format_subset(b, self.dim) for b in bad[:5])
                + (" ..." if len(bad) > 5 else "")
                + f" (worst deviation {self.deviations[worst]:.3g}"
                f" at B={format_subset(worst, self.dim)})"
            )
        if self.negatives:
            b, a, w = self.negatives[0]
            parts.append(
                f"negative weight {w} at B={format_subset(b, self.dim)},"
                f" A={format_subset(a, self.dim)}"
            )
        if self.detail:
            parts.append(self.detail)
        return "; ".join(parts)


def validate(w: WeightFamily, tol: float = NORMALIZATION_TOL) -> WeightReport:
    """Check nonnegativity and that every row sums to one."""
    deviations = {}
    negatives = []
    for b in range(1 << w.dim):
        row = w._row(b)
        deviations[b] = abs(float(row.sum()) - 1.0)
        neg = np.flatnonzero(row < 0)
        negatives.extend((b, int(a), float(row[a])) for a in neg)
    max_dev = max(deviations.values())
    return WeightReport(
        passed=max_dev <= tol and not negatives,
        max_deviation=max_dev,
        deviations=deviations,
        negatives=negatives,
        dim=w.dim,
    )


@dataclass
class ShapleyConditionReport:
    """Residuals of the three conditions making singleton effects sum to ``tau(D)``.

    ``empty_residual`` is ``|sum_i p_i({}) - 1|``, ``full_residual`` is
    ``|sum_i p_i(D - i) - 1|`` and ``middle`` maps every other ``A`` to
    ``|sum_i (-1)**(1 - |A & {i}|) p_i(A - {i})|``.
    """

    passed: bool
    empty_residual: float
    full_residual: float
    middle: dict[int, float]
    dim: int
    tol: float = NORMALIZATION_TOL

    @property
    def max_middle(self) -> float:
        return max(self.middle.values(), default=0.0)

    @property
    def worst_middle(self) -> Optional[int]:
        if not self.middle:
            return None
        return max(self.middle, key=self.middle.get)

    def describe(self) -> str:
        text = (
            f"sum p_i({{}}) residual {self.empty_residual:.3g}, "
            f"sum p_i(D-i) residual {self.full_residual:.3g}, "
            f"max middle residual {self.max_middle:.3g}"
        )
        if self.worst_middle is not None and self.max_middle > self.tol:
            text += f" at A={format_subset(self.worst_middle, self.dim)}"
        return ("ok: " if self.passed else "fails: ") + text


def singleton_coefficients(w: WeightFamily) -> np.ndarray:
    """``l(A) = sum_i (-1)**|{i} - A| p_i(A - {i})`` for every ``A``.

    The sum of singleton effects equals ``sum_A l(A) tau(A)``.
    """
    n = 1 << w.dim
    idx = np.arange(n)
    coef = np.zeros(n)
    for b in singletons(w.dim):
        sign = np.where(idx & b, 1.0, -1.0)
        coef += sign * w.lifted_row(b)
    return coef


def check_shapley_condition(w: WeightFamily, tol: float = NORMALIZATION_TOL) -> ShapleyConditionReport:
    """Evaluate the necessary and sufficient condition for ``sum_i I({i}) = tau(D)``.

    The middle group of constraints ranges over every ``A`` other than the
    empty set and ``D`` itself.
    """
    coef = singleton_coefficients(w)
    full = (1 << w.dim) - 1
    # l({}) = -sum_i p_i({}) and l(D) = sum_i p_i(D - i).
    empty_res = abs(-coef[0] - 1.0)
    full_res = abs(coef[full] - 1.0)
    middle = {a: abs(float(coef[a])) for a in range(1, full)}
    worst = max([empty_res, full_res, *middle.values()])
    return ShapleyConditionReport(
        passed=worst <= tol,
        empty_residual=float(empty_res),
        full_residual=float(full_res),
        middle=middle,
        dim=w.dim,
        tol=tol,
    )


def palindrome_violations(w: WeightFamily, B: Mask, tol: float = NORMALIZATION_TOL) -> list[int]:
    """Subsets ``A != {}`` where ``p_B(A - B) != p_B(D - (A | B))``.

    An empty list means effects of ``B`` coincide with those of the dual map
    whenever ``|B|`` is odd.
    """
    b = as_bits(B, w.dim)
    full = (1 << w.dim) - 1
    lifted = w.lifted_row(b)
    idx = np.arange(1 << w.dim)
    mirrored = w._row(b)[full & ~(idx | b)]
    bad = np.flatnonzero(np.abs(lifted - mirrored) > tol)
    return [int(a) for a in bad if a != 0]


def is_palindromic(w: WeightFamily, B: Mask, tol: float = NORMALIZATION_TOL) -> bool:
    return not palindrome_violations(w, B, tol)


# --------------------------------------------------------------------------
# Plain-text tables


_ROW_RE = re.compile(r"^\s*(\{[^}]*\})\s*[,;\t ]?\s*(\{[^}]*\})\s*[,;\t ]?\s*(\S+)\s*$")


def _parse_weight(text: str) -> float:
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise WeightError(f"not a weight: {text!r}") from None


def parse_weight_rows(lines: Iterable[str], dim: int) -> tuple[list, Optional[str]]:
    """Parse ``B A weight`` rows; returns the entries and an optional base family.

    Blank lines and ``#`` comments are skipped; a ``# base: <family>`` comment
    names the family used for rows that are not listed.
    """
    entries = []
    base = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.match(r"#\s*base\s*[:=]\s*(\w+)", line)
            if m:
                base = m.group(1)
            continue
        m = _ROW_RE.match(line)
        if m is None:
            raise WeightError(f"line {lineno}: expected '<B> <A> <weight>', got {raw!r}")
        try:
            B = parse_subset(m.group(1), dim)
            A = parse_subset(m.group(2), dim)
        except (ValueError, DimensionError) as exc:
            raise WeightError(f"line {lineno}: {exc}") from None
        entries.append((B, A, _parse_weight(m.group(3))))
    return entries, base


def load_weights(path: Union[str, Path], dim: int) -> CustomWeights:
    path = Path(path)
    entries, base = parse_weight_rows(path.read_text().splitlines(), dim)
    return CustomWeights(dim, entries, base=base, name=f"custom:{path.name}")


def dump_weights(w: WeightFamily, path: Union[str, Path], rows: Optional[Iterable[int]] = None) -> None:
    """Write ``w`` in the tabular format read by :func:`load_weights`."""
    d = w.dim
    rows = range(1 << d) if rows is None else rows
    lines = ["# B\tA\tweight"]
    for b in rows:
        row = w._row(b)
        for a in np.flatnonzero(row):
            lines.append(f"{format_subset(b, d)}\t{format_subset(int(a), d)}\t{float(row[a])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


# Singleton rows of the d=3 family that satisfies the Shapley-sum condition
# without being the Shapley family: input 1 enters last, input 2 second,
# input 3 first.
NOT_SHAPLEY_D3_ROWS = [
    ("{1}", "{2,3}", 1.0),
    ("{2}", "{3}", 1.0),
    ("{3}", "{}", 1.0),
]


def not_shapley_example(base: Union[str, WeightFamily] = "shapley") -> CustomWeights:
    """Three-input weights that sum singleton effects to ``tau(D)`` but are not Shapley.

    Only singleton rows are specified; the remaining rows come from ``base``.
    """
    entries = [(parse_subset(b, 3), parse_subset(a, 3), w) for b, a, w in NOT_SHAPLEY_D3_ROWS]
    return CustomWeights(3, entries, base=base, name="not-shapley-example")
