"""Monte Carlo estimation of sensitivity maps over the whole subset lattice."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .divergences import Contrast, Divergence, Method, minimized_contrast, parse_method
from .input_model import (
    _TAGS,
    InputDistribution,
    derive_seed,
    paired_sample,
    resample_conditional,
    sample,
)
from .models import ModelSpec, NoClosedFormError, exact_map, exact_tau  # noqa: F401
from .subset_lattice import (
    DEFAULT_MAX_DIM,
    LatticeMap,
    Mask,
    as_bits,
    check_dim,
    format_subset,
)

# Rows of conditioning draws handled per inner-loop batch; fixed so that
# results do not depend on scheduling.
INNER_BATCH_ELEMENTS = 1 << 20

# Shared-base mode keeps the per-row terms for a full covariance only below
# this many stored values.
COVARIANCE_MAX_ELEMENTS = 20_000_000


class ModelEvaluationError(RuntimeError):
    """The model returned a non-finite value."""

    def __init__(self, message: str, subset: int = 0, row: int = -1):
        super().__init__(message)
        self.subset = subset
        self.row = row


class EstimationError(RuntimeError):
    """One or more subsets failed; ``partial`` holds what was estimated."""

    def __init__(self, message: str, partial: "SensitivityEstimate"):
        super().__init__(message)
        self.partial = partial


@dataclass
class EstimateReport:
    subset: int
    dim: int
    estimate: float
    std_error: float
    n: int
    seed: int
    estimator_kind: str
    n_inner: Optional[int] = None

    @property
    def label(self) -> str:
        return format_subset(self.subset, self.dim)


def _outputs(model: Callable, x: np.ndarray, subset: int, dim: int) -> np.ndarray:
    y = np.asarray(model(x), dtype=float).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise ModelEvaluationError(
            f"model returned {y.shape[0]} values for {x.shape[0]} rows", subset
        )
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        row = int(bad[0])
        raise ModelEvaluationError(
            f"non-finite model output at row {row} while estimating"
            f" A={format_subset(subset, dim)}",
            subset,
            row,
        )
    return y


def _exact_zero(bits: int, dim: int, n: int, seed: int, n_inner=None) -> EstimateReport:
    return EstimateReport(bits, dim, 0.0, 0.0, n, seed, "exact", n_inner)


def _pick_freeze_terms(model, dist, div, bits, n, seed, base=None):
    if base is None:
        pair = paired_sample(dist, bits, n, seed)
        x, xr = pair.x, pair.x_resampled
        y = _outputs(model, x, bits, dist.dim)
    else:
        x, y = base
        xr = resample_conditional(dist, x, bits, seed)
    y_r = _outputs(model, xr, bits, dist.dim)
    return div(y, y_r)


def estimate_tau(
    model: Callable,
    dist: InputDistribution,
    div: Divergence,
    A: Mask,
    n: int,
    seed: int,
) -> EstimateReport:
    """Pick-freeze estimate of ``E psi(f(X), f(X^{-A}))``.

    The standard error is the sample standard deviation of the ``n`` terms
    over ``sqrt(n)``.  ``A = {}`` returns an exact zero.
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    bits = as_bits(A, dist.dim)
    if bits == 0:
        return _exact_zero(0, dist.dim, n, seed)
    terms = _pick_freeze_terms(model, dist, div, bits, n, seed)
    return EstimateReport(
        subset=bits,
        dim=dist.dim,
        estimate=float(terms.mean()),
        std_error=float(terms.std(ddof=1) / math.sqrt(n)),
        n=n,
        seed=seed,
        estimator_kind="pick_freeze",
    )


def default_n_inner(n_outer: int) -> int:
    return max(32, math.isqrt(n_outer))


def estimate_tau_contrast(
    model: Callable,
    dist: InputDistribution,
    contrast: Contrast,
    A: Mask,
    n_outer: int,
    n_inner: Optional[int] = None,
    seed: int = 0,
) -> EstimateReport:
    """Double-loop estimate of ``E min_theta E(psi(f(X), theta) | X_{D-A})``.

    For each of ``n_outer`` draws of ``X``, the ``A`` inputs are redrawn
    ``n_inner`` times from their conditional law; the inner empirical risk
    is minimized over ``theta`` and the minima are averaged.

    The plug-in inner minimum is biased low by a term of order ``1/n_inner``
    (for the mean contrast exactly a factor ``(n_inner - 1)/n_inner``).
    """
    n_inner = default_n_inner(n_outer) if n_inner is None else n_inner
    if n_outer < 2 or n_inner < 2:
        raise ValueError(f"need n_outer >= 2 and n_inner >= 2, got {n_outer}, {n_inner}")
    bits = as_bits(A, dist.dim)
    if bits == 0:
        return _exact_zero(0, dist.dim, n_outer, seed, n_inner)
    x = sample(dist, n_outer, seed)
    rows_per_batch = max(1, INNER_BATCH_ELEMENTS // n_inner)
    values = np.empty(n_outer)
    for k, start in enumerate(range(0, n_outer, rows_per_batch)):
        stop = min(start + rows_per_batch, n_outer)
        rep = np.repeat(x[start:stop], n_inner, axis=0)
        xr = resample_conditional(dist, rep, bits, derive_seed(seed, _TAGS["inner"], k))
        y = _outputs(model, xr, bits, dist.dim).reshape(stop - start, n_inner)
        values[start:stop] = minimized_contrast(contrast, y, axis=1)
    return EstimateReport(
        subset=bits,
        dim=dist.dim,
        estimate=float(values.mean()),
        std_error=float(values.std(ddof=1) / math.sqrt(n_outer)),
        n=n_outer,
        seed=seed,
        estimator_kind="double_loop_contrast",
        n_inner=n_inner,
    )


@dataclass
class SensitivityEstimate:
    """An estimated map with per-subset uncertainty.

    ``covariance`` is only present in shared-base mode when it was cheap to
    keep; otherwise the subset estimates are independent and ``std_errors``
    is the whole story.
    """

    tau: LatticeMap
    std_errors: np.ndarray
    reports: list
    method: str
    seed: int
    shared_base: bool = False
    covariance: Optional[np.ndarray] = None
    failures: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.tau.dim


def split_budget(budget: int, dim: int, method: Method, n_inner: Optional[int] = None, shared_base: bool = False):
    """Per-subset sample sizes from a total number of model evaluations.

    Returns ``(n, n_inner)``; ``n_inner`` is ``None`` for divergences.
    """
    subsets = (1 << dim) - 1
    if isinstance(method, Divergence):
        n = budget // (subsets + 1) if shared_base else budget // (2 * subsets)
        return n, None
    per_subset = budget // subsets
    if n_inner is not None:
        return per_subset // n_inner, n_inner
    lo, hi = 0, per_subset
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if mid * default_n_inner(mid) <= per_subset:
            lo = mid
        else:
            hi = mid - 1
    return lo, default_n_inner(max(lo, 1))


def subset_seed(seed: int, bits: int) -> int:
    return derive_seed(seed, _TAGS["subset"], bits)


def estimate_sensitivity_map(
    model: Callable,
    dist: InputDistribution,
    method,
    n: Optional[int] = None,
    *,
    seed: int,
    budget: Optional[int] = None,
    n_inner: Optional[int] = None,
    shared_base: bool = False,
    workers: int = 1,
    max_dim: int = DEFAULT_MAX_DIM,
    raise_on_failure: bool = True,
) -> SensitivityEstimate:
    """Estimate ``tau(A)`` for every subset ``A``.

    Parameters
    ----------
    model : callable
        Maps an ``(n, d)`` array to ``n`` outputs.
    dist : InputDistribution
    method : Divergence, Contrast or config value
        A divergence selects pick-freeze; a contrast selects the double loop.
    n : int, optional
        Rows per subset (outer rows for a contrast).  Either ``n`` or
        ``budget`` must be given.
    seed : int
        Master seed; subset ``A`` uses a seed derived from it and ``A``.
    budget : int, optional
        Total model evaluations, split evenly across the nonempty subsets.
    n_inner : int, optional
        Inner replicates for a contrast; defaults to ``max(32, isqrt(n))``.
    shared_base : bool
        Reuse one base sample ``X`` for all subsets (divergences only).
    workers : int
        Threads used across subsets; results do not depend on it.
    """
    method = parse_method(method)
    d = check_dim(dist.dim, max_dim)
    if getattr(model, "dim", d) != d:
        raise ValueError(f"model has {model.dim} inputs but the distribution has {d}")
    if shared_base and not isinstance(method, Divergence):
        raise ValueError("shared-base mode applies to divergence (pick-freeze) estimation only")
    if n is None:
        if budget is None:
            raise ValueError("give either n or budget")
        n, n_inner = split_budget(budget, d, method, n_inner, shared_base)
    if isinstance(method, Contrast):
        n_inner = default_n_inner(n) if n_inner is None else n_inner
    if n < 2:
        raise ValueError(f"per-subset sample size {n} is below 2")

    base = None
    keep_terms = False
    if shared_base:
        base_seed = derive_seed(seed, _TAGS["base"])
        x = sample(dist, n, base_seed)
        base = (x, _outputs(model, x, 0, d))
        keep_terms = n * (1 << d) <= COVARIANCE_MAX_ELEMENTS

    def run(bits: int):
        s = subset_seed(seed, bits)
        try:
            if isinstance(method, Contrast):
                return estimate_tau_contrast(model, dist, method, bits, n, n_inner, s), None
            if base is None:
                return estimate_tau(model, dist, method, bits, n, s), None
            terms = _pick_freeze_terms(model, dist, method, bits, n, s, base)
            report = EstimateReport(
                bits, d, float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(n)),
                n, s, "pick_freeze",
            )
            return report, (terms if keep_terms else None)
        except ModelEvaluationError as exc:
            return exc, None

    subsets = list(range(1, 1 << d))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, subsets))
    else:
        results = [run(b) for b in subsets]

    values = np.zeros(1 << d)
    se = np.zeros(1 << d)
    reports = [_exact_zero(0, d, n, subset_seed(seed, 0), n_inner)]
    failures = {}
    columns = {}
    for bits, (res, terms) in zip(subsets, results):
        if isinstance(res, ModelEvaluationError):
            failures[bits] = str(res)
            values[bits] = np.nan
            se[bits] = np.nan
            continue
        values[bits] = res.estimate
        se[bits] = res.std_error
        reports.append(res)
        if terms is not None:
            columns[bits] = terms

    covariance = None
    notes = []
    if shared_base:
        if keep_terms and not failures:
            psi = np.zeros((n, 1 << d))
            for bits, terms in columns.items():
                psi[:, bits] = terms
            covariance = np.cov(psi, rowvar=False) / n
        else:
            notes.append(
                "shared-base estimates are correlated across subsets; effect standard"
                " errors below treat them as independent"
            )

    result = SensitivityEstimate(
        tau=LatticeMap(values, label=f"{method.name}"),
        std_errors=se,
        reports=sorted(reports, key=lambda r: r.subset),
        method=method.name,
        seed=seed,
        shared_base=shared_base,
        covariance=covariance,
        failures=failures,
        notes=notes,
    )
    if failures and raise_on_failure:
        first = next(iter(failures.values()))
        raise EstimationError(f"{len(failures)} subset(s) failed; first: {first}", result)
    return result
