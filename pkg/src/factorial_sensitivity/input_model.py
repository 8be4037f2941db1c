"""Joint input laws and the paired samples ``(X, X^{-A})`` used by pick-freeze.

Every marginal is driven by a standard-normal latent coordinate through
``x = F^{-1}(Phi(z))``.  Under independence the latent coordinates are iid;
under a Gaussian copula they are jointly normal with correlation ``R``,
which gives an exact conditional sampler for any subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr, ndtri

from .subset_lattice import Mask, as_bits, check_dim

# Rows are generated in fixed-size blocks, each from its own keyed stream, so a
# sample of n rows is the prefix of any longer sample with the same seed and
# blocks can be produced in any order.
BLOCK_ROWS = 4096

_TAGS = {"sample": 1, "resample": 2, "base": 3, "subset": 4, "inner": 5}


class DistributionError(ValueError):
    """Invalid distribution parameters or an unsupported sampling request."""


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit seed determined by ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _block_normals(seed: int, tag: str, n: int, width: int, extra: Sequence[int] = ()) -> np.ndarray:
    out = np.empty((n, width))
    for start in range(0, n, BLOCK_ROWS):
        block = start // BLOCK_ROWS
        stop = min(start + BLOCK_ROWS, n)
        ss = np.random.SeedSequence(
            entropy=int(seed), spawn_key=(_TAGS[tag], *map(int, extra), block)
        )
        rng = np.random.Generator(np.random.Philox(ss))
        out[start:stop] = rng.standard_normal((BLOCK_ROWS, width))[: stop - start]
    return out


# --------------------------------------------------------------------------
# Marginals


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


@dataclass(frozen=True)
class Uniform:
    low: float = 0.0
    high: float = 1.0
    continuous = True

    def __post_init__(self):
        if not (np.isfinite(self.low) and np.isfinite(self.high) and self.low < self.high):
            raise DistributionError(f"uniform needs finite low < high, got ({self.low}, {self.high})")

    def ppf(self, u):
        return self.low + (self.high - self.low) * np.asarray(u)

    def cdf(self, x):
        return np.clip((np.asarray(x) - self.low) / (self.high - self.low), 0.0, 1.0)

    def from_latent(self, z):
        return self.ppf(ndtr(z))

    def to_latent(self, x):
        u = np.clip(self.cdf(x), np.finfo(float).tiny, np.nextafter(1.0, 0.0))
        return ndtri(u)

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    @property
    def variance(self) -> float:
        return (self.high - self.low) ** 2 / 12.0

    @property
    def second_moment(self) -> float:
        return self.variance + self.mean**2

    def raw_moment(self, k: int) -> float:
        lo, hi = self.low, self.high
        return (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo))

    def describe(self) -> dict:
        return {"kind": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class Normal:
    mu: float = 0.0
    sigma: float = 1.0
    continuous = True

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma) and self.sigma > 0):
            raise DistributionError(f"normal needs finite mu and sigma > 0, got ({self.mu}, {self.sigma})")

    def ppf(self, u):
        return self.mu + self.sigma * ndtri(u)

    def cdf(self, x):
        return ndtr((np.asarray(x) - self.mu) / self.sigma)

    def from_latent(self, z):
        return self.mu + self.sigma * np.asarray(z)

    def to_latent(self, x):
        return (np.asarray(x) - self.mu) / self.sigma

    @property
    def mean(self) -> float:
        return self.mu

    @property
    def variance(self) -> float:
        return self.sigma**2

    @property
    def second_moment(self) -> float:
        return self.variance + self.mu**2

    def raw_moment(self, k: int) -> float:
        # E (mu + sigma Z)**k with E Z**(2j) = (2j - 1)!!
        total = 0.0
        for j in range(0, k + 1, 2):
            total += math.comb(k, j) * self.mu ** (k - j) * self.sigma**j * _double_factorial(j - 1)
        return total

    def describe(self) -> dict:
        return {"kind": "normal", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Discrete:
    """Finite support; ``points`` are stored sorted so ``ppf`` is monotone."""

    points: tuple
    probabilities: tuple
    continuous = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        probs = np.asarray(self.probabilities, dtype=float)
        if pts.ndim != 1 or pts.size == 0 or pts.shape != probs.shape:
            raise DistributionError("discrete law needs equally many points and probabilities")
        if not np.all(np.isfinite(pts)):
            raise DistributionError("discrete points must be finite")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise DistributionError(f"discrete probabilities must be >= 0 and sum to 1, got {probs.sum()!r}")
        if np.unique(pts).size != pts.size:
            raise DistributionError("discrete points must be distinct")
        order = np.argsort(pts)
        object.__setattr__(self, "points", tuple(pts[order].tolist()))
        object.__setattr__(self, "probabilities", tuple(probs[order].tolist()))

    def ppf(self, u):
        cum = np.cumsum(self.probabilities)
        cum[-1] = 1.0
        idx = np.searchsorted(cum, np.asarray(u), side="left")
        return np.asarray(self.points)[np.minimum(idx, len(self.points) - 1)]

    def cdf(self, x):
        pts = np.asarray(self.points)
        cum = np.concatenate([[0.0], np.cumsum(self.probabilities)])
        return cum[np.searchsorted(pts, np.asarray(x), side="right")]

    def from_latent(self, z):
        return self.ppf(ndtr(z))

    def to_latent(self, x):
        raise DistributionError("a discrete marginal has no unique latent value")

    @property
    def mean(self) -> float:
        return float(np.dot(self.points, self.probabilities))

    @property
    def second_moment(self) -> float:
        return float(np.dot(np.square(self.points), self.probabilities))

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean**2

    def raw_moment(self, k: int) -> float:
        return float(np.dot(np.power(self.points, k), self.probabilities))

    def describe(self) -> dict:
        return {"kind": "discrete", "points": list(self.points), "probabilities": list(self.probabilities)}


Marginal = Union[Uniform, Normal, Discrete]


def marginal_from_dict(spec: dict) -> Marginal:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "uniform":
            return Uniform(float(spec.pop("low", 0.0)), float(spec.pop("high", 1.0)))
        if kind == "normal":
            return Normal(float(spec.pop("mu", 0.0)), float(spec.pop("sigma", 1.0)))
        if kind == "discrete":
            return Discrete(tuple(spec.pop("points")), tuple(spec.pop("probabilities")))
    except KeyError as exc:
        raise DistributionError(f"{kind} marginal is missing {exc.args[0]!r}") from None
    raise DistributionError(f"unknown marginal kind {kind!r}")


# --------------------------------------------------------------------------
# Joint law


@dataclass(frozen=True, eq=False)
class InputDistribution:
    """Marginal laws plus either independence or a Gaussian copula.

    Parameters
    ----------
    marginals : sequence of Uniform, Normal or Discrete
    correlation : array_like, optional
        Latent correlation matrix of a Gaussian copula.  ``None`` means the
        inputs are independent.
    """

    marginals: tuple
    correlation: Optional[np.ndarray] = None
    _chol: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        marginals = tuple(self.marginals)
        check_dim(len(marginals))
        object.__setattr__(self, "marginals", marginals)
        if self.correlation is None:
            return
        R = np.array(self.correlation, dtype=float)
        d = len(marginals)
        if R.shape != (d, d):
            raise DistributionError(f"correlation matrix must be {d}x{d}, got {R.shape}")
        if not np.allclose(R, R.T, atol=1e-12) or not np.allclose(np.diag(R), 1.0, atol=1e-12):
            raise DistributionError("correlation matrix must be symmetric with unit diagonal")
        try:
            chol = np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise DistributionError("correlation matrix must be positive definite") from None
        if not all(m.continuous for m in marginals):
            raise DistributionError("a Gaussian copula requires continuous marginals")
        R.setflags(write=False)
        object.__setattr__(self, "correlation", R)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def independent(cls, marginals: Sequence[Marginal]) -> "InputDistribution":
        return cls(tuple(marginals))

    @classmethod
    def gaussian_copula(cls, marginals: Sequence[Marginal], correlation) -> "InputDistribution":
        return cls(tuple(marginals), np.asarray(correlation, dtype=float))

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def dependence(self) -> str:
        return "independent" if self.correlation is None else "gaussian_copula"

    def from_latent(self, z: np.ndarray) -> np.ndarray:
        x = np.empty_like(z)
        for j, m in enumerate(self.marginals):
            x[:, j] = m.from_latent(z[:, j])
        return x

    def to_latent(self, x: np.ndarray, columns: Sequence[int]) -> np.ndarray:
        return np.column_stack([self.marginals[j].to_latent(x[:, j]) for j in columns])

    def describe(self) -> dict:
        out = {
            "dependence": self.dependence,
            "marginals": [m.describe() for m in self.marginals],
        }
        if self.correlation is not None:
            out["correlation"] = self.correlation.tolist()
        return out


def sample(dist: InputDistribution, n: int, seed: int) -> np.ndarray:
    """``n`` draws of ``X`` as an ``(n, d)`` array, reproducible from ``seed``."""
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    eps = _block_normals(seed, "sample", n, dist.dim)
    z = eps if dist.correlation is None else eps @ dist._chol.T
    return dist.from_latent(z)


def _conditional_latent(R: np.ndarray, free: np.ndarray, given: np.ndarray, z_given: np.ndarray, eps: np.ndarray):
    # z_free | z_given ~ N(S_fg S_gg^-1 z_given, S_ff - S_fg S_gg^-1 S_gf)
    if given.size == 0:
        return eps @ np.linalg.cholesky(R[np.ix_(free, free)]).T
    S_fg = R[np.ix_(free, given)]
    S_gg = R[np.ix_(given, given)]
    gain = np.linalg.solve(S_gg, S_fg.T).T
    cov = R[np.ix_(free, free)] - gain @ S_fg.T
    cov = 0.5 * (cov + cov.T)
    L = np.linalg.cholesky(cov)
    return z_given @ gain.T + eps @ L.T


def resample_conditional(
    dist: InputDistribution, x: np.ndarray, A: Mask, seed: int
) -> np.ndarray:
    """Redraw the columns in ``A`` from their law given the other columns.

    Columns outside ``A`` are copied unchanged.  Under independence the
    ``A`` columns are fresh draws from their marginals; under a Gaussian
    copula they come from the exact conditional normal in latent space.
    """
    x = np.asarray(x, dtype=float)
    d = dist.dim
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected an (n, {d}) array, got shape {x.shape}")
    bits = as_bits(A, d)
    out = x.copy()
    if bits == 0:
        return out
    free = np.array([j for j in range(d) if bits >> j & 1])
    given = np.array([j for j in range(d) if not bits >> j & 1], dtype=int)
    eps = _block_normals(seed, "resample", x.shape[0], free.size, extra=(bits,))
    if dist.correlation is None:
        z_free = eps
    else:
        z_given = dist.to_latent(x, given) if given.size else np.empty((x.shape[0], 0))
        z_free = _conditional_latent(dist.correlation, free, given, z_given, eps)
    for k, j in enumerate(free):
        out[:, j] = dist.marginals[j].from_latent(z_free[:, k])
    return out


@dataclass(frozen=True, eq=False)
class PairedSample:
    """``x`` and ``x_resampled`` share every column outside ``mask``."""

    x: np.ndarray
    x_resampled: np.ndarray
    mask: int
    seed: int


def paired_sample(dist: InputDistribution, A: Mask, n: int, seed: int) -> PairedSample:
    """Draw ``X ~ P`` and then ``X^{-A}`` conditionally on ``X_{D-A}``.

    Both halves come from streams keyed by ``seed``; the resampling stream is
    independent of the one that produced ``X``.
    """
    bits = as_bits(A, dist.dim)
    x = sample(dist, n, seed)
    return PairedSample(x, resample_conditional(dist, x, bits, seed), bits, int(seed))
