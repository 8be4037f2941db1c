"""Analysis configuration read from a TOML file.

Example::

    seed = 12345

    [model]
    id = "linear"
    coefficients = [1.0, 2.0, 3.0]

    [inputs]
    marginals = [
        { kind = "normal", mu = 0.0, sigma = 1.0 },
        { kind = "normal" },
        { kind = "normal" },
    ]
    # correlation = [[1.0, 0.8, 0.0], [0.8, 1.0, 0.0], [0.0, 0.0, 1.0]]

    [method]
    divergence = "squared_half"       # or: contrast = "median"
                                      # or: contrast = { kind = "quantile", alpha = 0.9 }

    [weights]
    family = "shapley"                # uniform | mobius | shapley | path to a table

    [budget]
    n = 100000                        # rows per subset; or total = <evaluations>
    # n_inner = 64
    # shared_base = false
    # workers = 1

    [output]
    dir = "results"
    formats = ["csv", "json"]
    dual = false
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .divergences import Method, parse_method
from .input_model import DistributionError, InputDistribution, marginal_from_dict
from .models import ModelError, ModelSpec, default_distribution, model_from_dict
from .subset_lattice import DEFAULT_MAX_DIM, MAX_DIM, DimensionError, check_dim
from .weights import NAMED_FAMILIES, WeightError, WeightFamily, load_weights, named_family

OUTPUT_FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """A configuration value is missing or invalid; ``field`` names it."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class AnalysisConfig:
    model: ModelSpec
    dist: InputDistribution
    method: Method
    weights: str
    seed: int
    n: Optional[int] = None
    total: Optional[int] = None
    n_inner: Optional[int] = None
    shared_base: bool = False
    workers: int = 1
    max_dim: int = DEFAULT_MAX_DIM
    dual: bool = False
    out_dir: Path = Path("results")
    formats: tuple = OUTPUT_FORMATS
    source: Optional[Path] = None
    raw: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.model.dim

    def weight_family(self) -> WeightFamily:
        if self.weights in NAMED_FAMILIES:
            return named_family(self.weights, self.dim)
        return load_weights(self.weights, self.dim)

    def with_overrides(self, **kwargs) -> "AnalysisConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        if "weights" in kwargs:
            kwargs["weights"] = _weights_selector(kwargs["weights"], Path.cwd(), "--weights")
        return replace(self, **kwargs)


def _weights_selector(value, base_dir: Path, field_name: str) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigError(field_name, "expected a family name or a file path")
    if value in NAMED_FAMILIES:
        return value
    path = Path(value)
    if not path.is_absolute():
        path = base_dir / path
    if not path.is_file():
        raise ConfigError(field_name, f"{value!r} is neither a named family {sorted(NAMED_FAMILIES)} nor an existing file")
    return str(path)


SECTION_KEYS = {
    "inputs": {"marginals", "correlation"},
    "method": {"divergence", "contrast", "alpha"},
    "weights": {"family"},
    "budget": {"n", "total", "n_inner", "workers", "max_dim", "shared_base"},
    "output": {"dir", "formats", "dual"},
}


def _check_sections(data: dict) -> None:
    for name, allowed in SECTION_KEYS.items():
        section = data.get(name)
        if section is None or (name in ("method", "weights") and isinstance(section, str)):
            continue
        if not isinstance(section, dict):
            raise ConfigError(name, "expected a table")
        unknown = set(section) - allowed
        if unknown:
            raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown key")


def _int(section: dict, key: str, field_name: str, minimum: int = 0) -> Optional[int]:
    if key not in section:
        return None
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(field_name, f"expected an integer >= {minimum}, got {value!r}")
    return value


def parse_config(data: dict, base_dir: Union[str, Path] = ".", source: Optional[Path] = None) -> AnalysisConfig:
    """Validate a parsed config mapping and build an :class:`AnalysisConfig`."""
    base_dir = Path(base_dir)
    known = {"seed", "model", "inputs", "method", "weights", "budget", "output"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    _check_sections(data)

    if "model" not in data:
        raise ConfigError("model", "section is required")
    try:
        model = model_from_dict(data["model"])
    except (ModelError, DimensionError, TypeError, ValueError) as exc:
        raise ConfigError("model", str(exc)) from None

    inputs = data.get("inputs")
    if inputs is None:
        dist = default_distribution(model)
    else:
        try:
            marginals = [marginal_from_dict(m) for m in inputs.get("marginals", ())]
        except (DistributionError, TypeError, ValueError) as exc:
            raise ConfigError("inputs.marginals", str(exc)) from None
        if len(marginals) != model.dim:
            raise ConfigError(
                "inputs.marginals",
                f"{len(marginals)} marginals given but model {model.id!r} has {model.dim} inputs",
            )
        try:
            dist = InputDistribution(tuple(marginals), inputs.get("correlation"))
        except (DistributionError, DimensionError, ValueError) as exc:
            raise ConfigError("inputs.correlation", str(exc)) from None

    try:
        method = parse_method(data.get("method", {"divergence": "squared_half"}))
    except ValueError as exc:
        raise ConfigError("method", str(exc)) from None

    weights_section = data.get("weights", {})
    family = weights_section.get("family", "mobius") if isinstance(weights_section, dict) else weights_section
    weights = _weights_selector(family, base_dir, "weights.family")

    seed = data.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed", f"expected a nonnegative integer, got {seed!r}")

    budget = data.get("budget", {})
    n = _int(budget, "n", "budget.n", minimum=2)
    total = _int(budget, "total", "budget.total", minimum=2)
    n_inner = _int(budget, "n_inner", "budget.n_inner", minimum=2)
    workers = _int(budget, "workers", "budget.workers", minimum=1) or 1
    max_dim = _int(budget, "max_dim", "budget.max_dim", minimum=1) or DEFAULT_MAX_DIM
    if max_dim > MAX_DIM:
        raise ConfigError("budget.max_dim", f"cannot exceed {MAX_DIM}")
    if n is None and total is None:
        raise ConfigError("budget", "set either n (rows per subset) or total (evaluations)")
    if n is not None and total is not None:
        raise ConfigError("budget", "set only one of n and total")
    shared_base = budget.get("shared_base", False)
    if not isinstance(shared_base, bool):
        raise ConfigError("budget.shared_base", "expected true or false")
    try:
        check_dim(model.dim, max_dim)
    except DimensionError as exc:
        raise ConfigError("model", str(exc)) from None

    output = data.get("output", {})
    formats = tuple(output.get("formats", OUTPUT_FORMATS))
    bad = [f for f in formats if f not in OUTPUT_FORMATS]
    if bad or not formats:
        raise ConfigError("output.formats", f"expected a nonempty subset of {OUTPUT_FORMATS}")
    out_dir = Path(output.get("dir", "results"))
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    dual = output.get("dual", False)
    if not isinstance(dual, bool):
        raise ConfigError("output.dual", "expected true or false")

    config = AnalysisConfig(
        model=model,
        dist=dist,
        method=method,
        weights=weights,
        seed=seed,
        n=n,
        total=total,
        n_inner=n_inner,
        shared_base=shared_base,
        workers=workers,
        max_dim=max_dim,
        dual=dual,
        out_dir=out_dir,
        formats=formats,
        source=source,
        raw=data,
    )
    if weights not in NAMED_FAMILIES:
        try:
            config.weight_family()
        except (WeightError, DimensionError, OSError) as exc:
            raise ConfigError("weights.family", str(exc)) from None
    return config


def load_config(path: Union[str, Path]) -> AnalysisConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("--config", f"no such file: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("--config", f"cannot parse {path}: {exc}") from None
    return parse_config(data, base_dir=path.parent, source=path)
