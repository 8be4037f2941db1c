"""Built-in test models and the closed forms of their variance-based maps.

All models evaluate a whole ``(n, d)`` batch at once.  The closed forms give
``E var(f(X) | X_{D-A})``, which is the map produced by the ``squared_half``
divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .input_model import InputDistribution, Normal, Uniform, Discrete
from .subset_lattice import LatticeMap, Mask, as_bits, check_dim

MODEL_IDS = ("linear", "ishigami", "product", "square_plus", "polynomial")


class ModelError(ValueError):
    """Bad model parameters or a non-finite evaluation."""


class NoClosedFormError(LookupError):
    """No exact map is registered for this model, law and divergence."""


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A built-in model chosen by ``id`` with its parameters.

    ``linear`` takes ``coefficients``; ``ishigami`` takes ``a`` and ``b``;
    ``product`` takes ``dim``; ``square_plus`` is ``x1**2 + x2``;
    ``polynomial`` takes ``terms`` as ``[(coefficient, [exponent, ...]), ...]``.
    """

    id: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in MODEL_IDS:
            raise ModelError(f"unknown model {self.id!r}; expected one of {MODEL_IDS}")
        p = dict(self.params)
        if self.id == "linear":
            c = np.asarray(p.get("coefficients", ()), dtype=float)
            if c.ndim != 1 or c.size == 0 or not np.all(np.isfinite(c)):
                raise ModelError("linear model needs a nonempty finite 'coefficients' list")
            p["coefficients"] = tuple(c.tolist())
        elif self.id == "ishigami":
            if int(p.get("dim", 3)) != 3:
                raise ModelError("the Ishigami function has exactly 3 inputs")
            p = {"a": float(p.get("a", 7.0)), "b": float(p.get("b", 0.1))}
        elif self.id == "product":
            if "dim" not in p:
                raise ModelError("product model needs 'dim'")
            p["dim"] = int(p["dim"])
        elif self.id == "square_plus":
            if p.get("dim", 2) != 2:
                raise ModelError("square_plus has exactly 2 inputs")
            p = {}
        elif self.id == "polynomial":
            terms = []
            for term in p.get("terms", ()):
                coef, exps = term
                exps = tuple(int(e) for e in exps)
                if any(e < 0 for e in exps):
                    raise ModelError("polynomial exponents must be nonnegative integers")
                terms.append((float(coef), exps))
            if not terms or len({len(e) for _, e in terms}) != 1:
                raise ModelError("polynomial needs terms with exponent vectors of one common length")
            p["terms"] = tuple(terms)
        object.__setattr__(self, "params", p)
        check_dim(self.dim)

    @property
    def dim(self) -> int:
        if self.id == "linear":
            return len(self.params["coefficients"])
        if self.id == "ishigami":
            return 3
        if self.id == "product":
            return self.params["dim"]
        if self.id == "square_plus":
            return 2
        return len(self.params["terms"][0][1])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ModelError(f"{self.id} expects an (n, {self.dim}) array, got shape {x.shape}")
        if self.id == "linear":
            return x @ np.asarray(self.params["coefficients"])
        if self.id == "ishigami":
            a, b = self.params["a"], self.params["b"]
            s1 = np.sin(x[:, 0])
            return s1 + a * np.sin(x[:, 1]) ** 2 + b * x[:, 2] ** 4 * s1
        if self.id == "product":
            return np.prod(x, axis=1)
        if self.id == "square_plus":
            return x[:, 0] ** 2 + x[:, 1]
        out = np.zeros(x.shape[0])
        # overflow surfaces as inf and is reported by the callers
        with np.errstate(over="ignore", invalid="ignore"):
            for coef, exps in self.params["terms"]:
                out += coef * np.prod(x ** np.asarray(exps, dtype=float), axis=1)
        return out

    def describe(self) -> dict:
        out = {"id": self.id}
        for k, v in self.params.items():
            if k == "terms":
                out[k] = [[c, list(e)] for c, e in v]
            else:
                out[k] = list(v) if isinstance(v, tuple) else v
        return out


def evaluate(spec: ModelSpec, x) -> float:
    """Evaluate one input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,) or not np.all(np.isfinite(x)):
        raise ModelError(f"expected a finite vector of length {spec.dim}")
    y = float(spec(x[None, :])[0])
    if not math.isfinite(y):
        raise ModelError(f"{spec.id} returned a non-finite value at {x.tolist()}")
    return y


def model_from_dict(spec: dict) -> ModelSpec:
    spec = dict(spec)
    model_id = spec.pop("id", None)
    if model_id == "polynomial" and "terms" in spec:
        spec["terms"] = [(t["coefficient"], t["exponents"]) if isinstance(t, dict) else tuple(t) for t in spec["terms"]]
    return ModelSpec(model_id, spec)


def default_distribution(spec: ModelSpec) -> InputDistribution:
    """The input law each built-in model is usually paired with."""
    d = spec.dim
    if spec.id == "ishigami":
        return InputDistribution.independent([Uniform(-math.pi, math.pi)] * 3)
    if spec.id == "square_plus":
        return InputDistribution.independent([Discrete((-1.0, 1.0), (0.5, 0.5)), Normal()])
    if spec.id == "polynomial":
        return InputDistribution.independent([Uniform(0.0, 1.0)] * d)
    return InputDistribution.independent([Normal()] * d)


# --------------------------------------------------------------------------
# Closed forms of E var(f(X) | X_{D-A})


def ishigami_variances(a: float = 7.0, b: float = 0.1) -> dict:
    """Nonzero variance components of the Ishigami function on ``[-pi, pi]**3``.

    Keys are bit patterns: 1 is ``{1}``, 2 is ``{2}``, 5 is ``{1,3}``.
    """
    pi4 = math.pi**4
    v1 = 0.5 * (1.0 + b * pi4 / 5.0) ** 2
    v2 = a * a / 8.0
    v13 = b * b * math.pi**8 * (1.0 / 18.0 - 1.0 / 50.0)
    return {0b001: v1, 0b010: v2, 0b101: v13}


def ishigami_total_variance(a: float = 7.0, b: float = 0.1) -> float:
    return a * a / 8.0 + b * math.pi**4 / 5.0 + b * b * math.pi**8 / 18.0 + 0.5


def _is_ishigami_law(dist: InputDistribution) -> bool:
    return dist.correlation is None and all(
        isinstance(m, Uniform) and math.isclose(m.low, -math.pi) and math.isclose(m.high, math.pi)
        for m in dist.marginals
    )


def _polynomial_terms(spec: ModelSpec):
    d = spec.dim
    if spec.id == "polynomial":
        return spec.params["terms"]
    if spec.id == "linear":
        return tuple((c, tuple(int(i == j) for j in range(d))) for i, c in enumerate(spec.params["coefficients"]))
    if spec.id == "product":
        return ((1.0, (1,) * d),)
    if spec.id == "square_plus":
        return ((1.0, (2, 0)), (1.0, (0, 1)))
    return None


def polynomial_exact_tau(terms, dist: InputDistribution, bits: int) -> float:
    """``E f^2 - E[E(f | X_{D-A})^2]`` for a polynomial in independent inputs.

    Both expectations factor over inputs into raw moments.
    """
    if dist.correlation is not None:
        raise NoClosedFormError("polynomial closed form requires independent inputs")
    margs = dist.marginals
    total = 0.0
    for c1, e1 in terms:
        for c2, e2 in terms:
            full = 1.0
            cond = 1.0
            for j, m in enumerate(margs):
                full *= m.raw_moment(e1[j] + e2[j])
                if bits >> j & 1:
                    cond *= m.raw_moment(e1[j]) * m.raw_moment(e2[j])
                else:
                    cond *= m.raw_moment(e1[j] + e2[j])
            total += c1 * c2 * (full - cond)
    return total


def exact_tau(
    spec: ModelSpec,
    A: Mask,
    divergence: str = "squared_half",
    dist: Optional[InputDistribution] = None,
) -> float:
    """Analytic ``E var(f(X) | X_{D-A})`` for a built-in model.

    Parameters
    ----------
    spec : ModelSpec
    A : SubsetMask or int
        The fluctuating inputs.
    divergence : str
        Only ``"squared_half"`` has closed forms.
    dist : InputDistribution, optional
        Defaults to :func:`default_distribution`.

    Raises
    ------
    NoClosedFormError
        If no closed form covers this combination.
    """
    kind = getattr(divergence, "kind", divergence)
    if kind != "squared_half":
        raise NoClosedFormError(f"no closed form for divergence {kind!r}")
    dist = default_distribution(spec) if dist is None else dist
    d = spec.dim
    if dist.dim != d:
        raise ModelError(f"model has {d} inputs but the distribution has {dist.dim}")
    bits = as_bits(A, d)
    if bits == 0:
        return 0.0

    if spec.id == "ishigami":
        if not _is_ishigami_law(dist):
            raise NoClosedFormError("Ishigami closed form needs independent uniform(-pi, pi) inputs")
        a, b = spec.params["a"], spec.params["b"]
        fixed = ((1 << d) - 1) & ~bits
        explained = sum(v for s, v in ishigami_variances(a, b).items() if s & ~fixed == 0)
        return ishigami_total_variance(a, b) - explained

    if spec.id == "linear" and dist.correlation is not None:
        if not all(isinstance(m, Normal) for m in dist.marginals):
            raise NoClosedFormError("dependent linear closed form needs normal marginals")
        sd = np.array([m.sigma for m in dist.marginals])
        cov = dist.correlation * np.outer(sd, sd)
        c = np.asarray(spec.params["coefficients"])
        free = [j for j in range(d) if bits >> j & 1]
        given = [j for j in range(d) if not bits >> j & 1]
        S = cov[np.ix_(free, free)]
        if given:
            S_fg = cov[np.ix_(free, given)]
            S = S - S_fg @ np.linalg.solve(cov[np.ix_(given, given)], S_fg.T)
        cf = c[free]
        return float(cf @ S @ cf)

    if dist.correlation is not None:
        raise NoClosedFormError(f"no closed form for {spec.id} with dependent inputs")

    if spec.id == "linear":
        c = spec.params["coefficients"]
        return float(sum(c[j] ** 2 * dist.marginals[j].variance for j in range(d) if bits >> j & 1))
    if spec.id == "square_plus":
        x1, x2 = dist.marginals
        var_sq = x1.raw_moment(4) - x1.raw_moment(2) ** 2
        return (var_sq if bits & 1 else 0.0) + (x2.variance if bits & 2 else 0.0)
    if spec.id == "product":
        m2 = [m.second_moment for m in dist.marginals]
        mean_sq = [m.mean**2 for m in dist.marginals]
        fixed_part = math.prod(m2[j] for j in range(d) if not bits >> j & 1)
        free_m2 = math.prod(m2[j] for j in range(d) if bits >> j & 1)
        free_mean_sq = math.prod(mean_sq[j] for j in range(d) if bits >> j & 1)
        return fixed_part * (free_m2 - free_mean_sq)
    return polynomial_exact_tau(_polynomial_terms(spec), dist, bits)


def exact_map(
    spec: ModelSpec,
    divergence: str = "squared_half",
    dist: Optional[InputDistribution] = None,
) -> LatticeMap:
    """:func:`exact_tau` tabulated over every subset."""
    d = spec.dim
    values = [exact_tau(spec, b, divergence, dist) for b in range(1 << d)]
    return LatticeMap(np.array(values), label=f"exact:{spec.id}")
