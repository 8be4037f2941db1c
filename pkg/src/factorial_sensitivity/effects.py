"""Weighted factorial effects of a map on the subset lattice."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .subset_lattice import (
    ATOL,
    RTOL,
    DimensionError,
    LatticeMap,
    Mask,
    all_subsets_of,
    as_bits,
    delta,
    dual,
    format_subset,
    mobius_inverse,
    mobius_transform,
    popcounts,
)
from .weights import (
    MobiusWeights,
    UniformWeights,
    WeightError,
    WeightFamily,
    validate,
)

DECOMPOSITION_TOL = 1e-10


def _check(tau: LatticeMap, w: WeightFamily) -> None:
    if not isinstance(w, WeightFamily):
        raise TypeError(f"expected a WeightFamily, got {type(w).__name__}")
    if tau.dim != w.dim:
        raise DimensionError(f"map has dimension {tau.dim}, weights have {w.dim}")
    if not getattr(w, "_checked", False):
        report = validate(w)
        if not report.passed:
            raise WeightError(f"weights {w.name!r} are not valid: {report.describe()}")
        w._checked = True


def weighted_effect(tau: LatticeMap, B: Mask, w: WeightFamily) -> float:
    """``I(B) = sum over A <= D - B of p_B(A) * Delta_B tau(A)``.

    Expands every difference explicitly; kept as the reference path.
    """
    _check(tau, w)
    d = tau.dim
    b = as_bits(B, d)
    row = w.row(b)
    free = ((1 << d) - 1) & ~b
    total = 0.0
    for a in all_subsets_of(free):
        if row[a]:
            total += row[a] * delta(tau, b, a)
    return total


def effect_coefficients(w: WeightFamily, B: Mask) -> np.ndarray:
    """Coefficients ``c(A) = (-1)**|B - A| * p_B(A - B)`` so that ``I(B) = c @ tau``."""
    b = as_bits(B, w.dim)
    idx = np.arange(1 << w.dim)
    parity = popcounts(w.dim)[b & ~idx] & 1
    return np.where(parity, -1.0, 1.0) * w.lifted_row(b)


def weighted_effect_linear(tau: LatticeMap, B: Mask, w: WeightFamily) -> float:
    """``I(B)`` as one signed weighted sum over all values of ``tau``."""
    _check(tau, w)
    return float(effect_coefficients(w, B) @ tau.values)


def dual_coefficients(w: WeightFamily, B: Mask) -> np.ndarray:
    """Coefficients on ``tau`` (not ``tau*``) of the effect of ``B`` on the dual map."""
    c = effect_coefficients(w, B)
    out = -c[::-1]
    out[-1] += c.sum()
    return out


@dataclass
class EffectTable:
    """Effects ``I(B)`` for every ``B``, with provenance and optional standard errors."""

    effects: LatticeMap
    weights_id: str
    source_id: str
    std_errors: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.effects.dim

    def __getitem__(self, B: Mask) -> float:
        return self.effects[B]

    def singletons(self) -> np.ndarray:
        return np.array([self.effects.values[1 << i] for i in range(self.dim)])


def _hadamard(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=float, copy=True)
    d = out.size.bit_length() - 1
    for i in range(d):
        view = out.reshape(-1, 2, 1 << i)
        lo = view[:, 0, :].copy()
        view[:, 0, :] += view[:, 1, :]
        view[:, 1, :] = lo - view[:, 1, :]
    return out


def _effect_values(tau: LatticeMap, w: WeightFamily) -> np.ndarray:
    d = tau.dim
    if isinstance(w, MobiusWeights):
        return mobius_transform(tau).values
    if isinstance(w, UniformWeights):
        sizes = popcounts(d)
        sign = np.where(sizes & 1, -1.0, 1.0)
        return sign * _hadamard(tau.values) / np.exp2(d - sizes)
    return np.array([effect_coefficients(w, b) @ tau.values for b in range(1 << d)])


def _std_errors(
    w: WeightFamily,
    dim: int,
    variances: np.ndarray,
    covariance: Optional[np.ndarray],
    on_dual: bool,
) -> np.ndarray:
    coef_fn = dual_coefficients if on_dual else effect_coefficients
    out = np.empty(1 << dim)
    for b in range(1 << dim):
        c = coef_fn(w, b)
        if covariance is not None:
            var = float(c @ covariance @ c)
        else:
            var = float((c * c) @ variances)
        out[b] = np.sqrt(max(var, 0.0))
    return out


def effect_table(
    tau: LatticeMap,
    w: WeightFamily,
    std_errors: Optional[np.ndarray] = None,
    covariance: Optional[np.ndarray] = None,
    source_id: Optional[str] = None,
) -> EffectTable:
    """All ``2**d`` weighted effects of ``tau``.

    If per-value standard errors (or a full covariance) of ``tau`` are given,
    they are propagated through the linear map from ``tau`` to the effects.
    """
    _check(tau, w)
    values = _effect_values(tau, w)
    se = None
    if std_errors is not None or covariance is not None:
        var = None if std_errors is None else np.asarray(std_errors, dtype=float) ** 2
        se = _std_errors(w, tau.dim, var, covariance, on_dual=False)
    return EffectTable(
        effects=LatticeMap(values, label=f"effects[{w.name}]({tau.label})"),
        weights_id=w.name,
        source_id=source_id or tau.label,
        std_errors=se,
    )


def dual_effect_table(
    tau: LatticeMap,
    w: WeightFamily,
    std_errors: Optional[np.ndarray] = None,
    covariance: Optional[np.ndarray] = None,
    source_id: Optional[str] = None,
) -> EffectTable:
    """Weighted effects of the dual map ``tau*(A) = tau(D) - tau(D - A)``.

    Standard errors are propagated from those of ``tau`` itself, so the
    correlation induced by the shared ``tau(D)`` term is accounted for.
    """
    _check(tau, w)
    star = dual(tau)
    values = _effect_values(star, w)
    se = None
    if std_errors is not None or covariance is not None:
        var = None if std_errors is None else np.asarray(std_errors, dtype=float) ** 2
        se = _std_errors(w, tau.dim, var, covariance, on_dual=True)
    return EffectTable(
        effects=LatticeMap(values, label=f"effects[{w.name}]({star.label})"),
        weights_id=w.name,
        source_id=source_id or star.label,
        std_errors=se,
    )


@dataclass
class ResidualReport:
    """Largest violation of an algebraic identity and where it occurs."""

    name: str
    residual: float
    tol: float
    argmax: Optional[int] = None
    dim: int = 0
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol

    def describe(self) -> str:
        where = ""
        if self.argmax is not None:
            where = f" at {format_subset(self.argmax, self.dim)}"
        status = "pass" if self.passed else "FAIL"
        return f"{self.name}: {status} residual={self.residual:.3e}{where} (tol {self.tol:.1e})"


def _scaled_tol(tau: LatticeMap, tol: float) -> float:
    return tol * max(1.0, float(np.max(np.abs(tau.values))))


def verify_sobol_decomposition(
    tau: LatticeMap, table: EffectTable, tol: float = DECOMPOSITION_TOL
) -> ResidualReport:
    """Check ``sum over B <= A of I(B) == tau(A)`` for every ``A``."""
    if tau.dim != table.dim:
        raise DimensionError(f"map has dimension {tau.dim}, table has {table.dim}")
    diff = np.abs(mobius_inverse(table.effects).values - tau.values)
    arg = int(np.argmax(diff))
    return ResidualReport(
        name="sobol_decomposition",
        residual=float(diff[arg]),
        tol=_scaled_tol(tau, tol),
        argmax=arg,
        dim=tau.dim,
    )


def verify_shapley_sum(
    tau: LatticeMap, table: EffectTable, tol: float = DECOMPOSITION_TOL
) -> ResidualReport:
    """Check ``sum_i I({i}) == tau(D)``; requires ``tau({}) == 0``."""
    if tau.dim != table.dim:
        raise DimensionError(f"map has dimension {tau.dim}, table has {table.dim}")
    if tau.values[0] != 0.0:
        raise ValueError(f"tau({{}}) must be 0, got {tau.values[0]!r}")
    total = float(table.singletons().sum())
    return ResidualReport(
        name="shapley_sum",
        residual=abs(total - float(tau.values[-1])),
        tol=_scaled_tol(tau, tol),
        dim=tau.dim,
        details={"sum_singletons": total, "tau_D": float(tau.values[-1])},
    )


def self_duality_gap(tau: LatticeMap, w: WeightFamily) -> np.ndarray:
    """``I*(B) - I(B)`` for every ``B``."""
    return _effect_values(dual(tau), w) - _effect_values(tau, w)


def find_self_duality_counterexample(
    w: WeightFamily, B: Mask, tol: float = RTOL
) -> Optional[int]:
    """Search indicator maps for one where ``I*(B) != I(B)``.

    Indicator maps of the nonempty subsets span every map vanishing on the
    empty set, so by linearity ``None`` means ``I(B)`` is self-dual for all
    such maps.  Returns the bit pattern of the first witness otherwise.
    """
    b = as_bits(B, w.dim)
    c = effect_coefficients(w, b)
    cd = dual_coefficients(w, b)
    gap = np.abs(cd - c)
    gap[0] = 0.0
    hits = np.flatnonzero(gap > tol + ATOL)
    return int(hits[0]) if hits.size else None
