"""Divergences between outputs and contrast functions with their minimizers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

DIVERGENCE_KINDS = ("squared_half", "absolute")
CONTRAST_KINDS = ("mean", "median", "quantile")


@dataclass(frozen=True)
class Divergence:
    """``psi(x, y) >= 0`` with equality only on the diagonal.

    ``squared_half`` is ``(x - y)**2 / 2``; ``absolute`` is ``|x - y|``.
    """

    kind: str = "squared_half"

    def __post_init__(self):
        if self.kind not in DIVERGENCE_KINDS:
            raise ValueError(f"unknown divergence {self.kind!r}; expected one of {DIVERGENCE_KINDS}")

    @property
    def name(self) -> str:
        return self.kind

    def __call__(self, x, y):
        diff = np.subtract(x, y)
        if self.kind == "squared_half":
            return 0.5 * diff * diff
        return np.abs(diff)


@dataclass(frozen=True)
class Contrast:
    """Contrast ``psi(y, theta)`` whose risk minimizer is a summary statistic.

    ``mean`` uses ``(y - theta)**2``, ``median`` uses ``|y - theta|`` and
    ``quantile`` uses the pinball loss ``(y - theta) * (alpha - 1{y <= theta})``.
    The parameter set is the whole real line.
    """

    kind: str = "mean"
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in CONTRAST_KINDS:
            raise ValueError(f"unknown contrast {self.kind!r}; expected one of {CONTRAST_KINDS}")
        if self.kind == "quantile" and not 0.0 < self.alpha < 1.0:
            raise ValueError(f"quantile level must lie in (0, 1), got {self.alpha}")

    @property
    def name(self) -> str:
        if self.kind == "quantile":
            return f"quantile({self.alpha!r})"
        return self.kind

    def loss(self, y, theta):
        r = np.subtract(y, theta)
        if self.kind == "mean":
            return r * r
        if self.kind == "median":
            return np.abs(r)
        return r * (self.alpha - (r <= 0))


Method = Union[Divergence, Contrast]


def _finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("inputs must be finite")


def evaluate(div: Divergence, x, y):
    """``psi(x, y)``; scalars in, scalar out, arrays broadcast."""
    _finite(x, y)
    out = div(x, y)
    return float(out) if np.ndim(out) == 0 else out


def order_statistic_rank(contrast: Contrast, n: int) -> int:
    """1-based rank of the order statistic returned as minimizer for ``n`` points.

    Median: the lower median ``ceil(n / 2)``.  Quantile: ``ceil(alpha * n)``,
    computed exactly from the decimal value of ``alpha`` so that, e.g.,
    ``alpha = 0.9`` and ``n = 10`` give rank 9.
    """
    if contrast.kind == "median":
        return (n + 1) // 2
    return max(1, math.ceil(Fraction(repr(float(contrast.alpha))) * n))


def empirical_minimizer(contrast: Contrast, sample, axis: int = -1):
    """Minimizer of the empirical contrast risk along ``axis``.

    Mean gives the sample mean; median and quantile give a sample point
    (left-continuous inverse of the empirical CDF).
    """
    sample = np.asarray(sample, dtype=float)
    n = sample.shape[axis] if sample.ndim else 0
    if n == 0:
        raise ValueError("empirical minimizer of an empty sample")
    if contrast.kind == "mean":
        out = sample.mean(axis=axis)
    else:
        k = order_statistic_rank(contrast, n) - 1
        out = np.take(np.partition(sample, k, axis=axis), k, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def empirical_contrast_value(contrast: Contrast, sample, theta, axis: int = -1):
    """``(1/n) sum_i psi(y_i, theta)``; ``theta`` broadcasts against the reduced axis."""
    sample = np.asarray(sample, dtype=float)
    if sample.ndim == 0 or sample.shape[axis] == 0:
        raise ValueError("empirical contrast of an empty sample")
    theta = np.expand_dims(np.asarray(theta, dtype=float), axis) if np.ndim(theta) else theta
    out = contrast.loss(sample, theta).mean(axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def minimized_contrast(contrast: Contrast, sample, axis: int = -1):
    """Empirical risk at the empirical minimizer, per slice along ``axis``."""
    theta = empirical_minimizer(contrast, sample, axis=axis)
    return empirical_contrast_value(contrast, sample, theta, axis=axis)


def parse_method(spec) -> Method:
    """Build a divergence or contrast from a config value.

    Accepts a ``Divergence``/``Contrast``, a name such as ``"squared_half"``
    or ``"median"``, or a mapping like ``{"contrast": "quantile", "alpha": 0.9}``
    or ``{"divergence": "absolute"}``.
    """
    if isinstance(spec, (Divergence, Contrast)):
        return spec
    if isinstance(spec, str):
        if spec in DIVERGENCE_KINDS:
            return Divergence(spec)
        if spec in ("mean", "median"):
            return Contrast(spec)
        raise ValueError(f"unknown method {spec!r}")
    if isinstance(spec, dict):
        if "divergence" in spec and "contrast" in spec:
            raise ValueError("method sets both 'divergence' and 'contrast'")
        if "divergence" in spec:
            return Divergence(spec["divergence"])
        if "contrast" in spec:
            c = spec["contrast"]
            if isinstance(c, dict):
                return Contrast(c.get("kind", "mean"), float(c.get("alpha", 0.5)))
            return Contrast(c, float(spec.get("alpha", 0.5)))
    raise ValueError(f"cannot interpret method {spec!r}")
