"""Global sensitivity indices as weighted factorial effects on the subset lattice."""

from .divergences import Contrast, Divergence
from .effects import (
    EffectTable,
    dual_effect_table,
    effect_table,
    verify_shapley_sum,
    verify_sobol_decomposition,
    weighted_effect,
    weighted_effect_linear,
)
from .estimators import (
    EstimateReport,
    SensitivityEstimate,
    estimate_sensitivity_map,
    estimate_tau,
    estimate_tau_contrast,
    exact_tau,
)
from .input_model import Discrete, InputDistribution, Normal, Uniform, paired_sample, sample
from .models import ModelSpec, exact_map
from .subset_lattice import (
    LatticeMap,
    SubsetMask,
    conditional_effect,
    delta,
    dual,
    mobius_inverse,
    mobius_transform,
)
from .weights import (
    WeightFamily,
    check_shapley_condition,
    custom_weights,
    load_weights,
    mobius_weights,
    shapley_weights,
    uniform_weights,
    validate,
)

__version__ = "0.1.0"
