"""End-to-end acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; the summary at the end of the
pytest run prints one PASS/FAIL line per criterion.
"""

import io

import numpy as np
import pytest

import oracles
from factorial_sensitivity import cli
from factorial_sensitivity.divergences import Contrast, Divergence
from factorial_sensitivity.effects import (
    dual_effect_table,
    effect_coefficients,
    effect_table,
    find_self_duality_counterexample,
    self_duality_gap,
    verify_shapley_sum,
    verify_sobol_decomposition,
    weighted_effect,
    weighted_effect_linear,
)
from factorial_sensitivity.estimators import (
    estimate_sensitivity_map,
    estimate_tau,
    estimate_tau_contrast,
    subset_seed,
)
from factorial_sensitivity.input_model import InputDistribution, Normal, paired_sample
from factorial_sensitivity.models import (
    ModelSpec,
    default_distribution,
    ishigami_total_variance,
    ishigami_variances,
)
from factorial_sensitivity.subset_lattice import (
    LatticeMap,
    mobius_inverse,
    mobius_transform,
    popcounts,
)
from factorial_sensitivity.weights import (
    CustomWeights,
    check_shapley_condition,
    is_palindromic,
    mobius_weights,
    not_shapley_example,
    shapley_weights,
    uniform_weights,
)

SQ = Divergence("squared_half")
LINEAR = ModelSpec("linear", {"coefficients": [1.0, 2.0, 3.0]})
GAUSS3 = InputDistribution.independent([Normal()] * 3)
LINEAR_TAU = np.array([0, 1, 4, 5, 9, 10, 13, 14], dtype=float)

LINEAR_CONFIG = """
seed = 20240601

[model]
id = "linear"
coefficients = [1.0, 2.0, 3.0]

[inputs]
marginals = [{ kind = "normal" }, { kind = "normal" }, { kind = "normal" }]

[method]
divergence = "squared_half"

[weights]
family = "shapley"

[budget]
n = 100000

[output]
dual = true
"""


def within(value, target, se, k=3.0):
    return np.abs(np.asarray(value) - np.asarray(target)) <= k * np.asarray(se) + 1e-12


def random_weights(rng, d):
    entries = []
    for b in range(1 << d):
        support = [a for a in range(1 << d) if not a & b]
        raw = rng.random(len(support)) * (rng.random(len(support)) < 0.5)
        if not raw.any():
            raw[0] = 1.0
        raw /= raw.sum()
        entries.extend((b, a, r) for a, r in zip(support, raw) if r)
    return CustomWeights(d, entries, check=False)


@pytest.mark.criterion(1, "linear-Gaussian recovery")
def test_criterion_1_linear_gaussian_recovery():
    est = estimate_sensitivity_map(LINEAR, GAUSS3, SQ, 10**5, seed=20240601)
    assert est.tau[0] == 0.0
    assert np.all(within(est.tau.values, LINEAR_TAU, est.std_errors))

    w = mobius_weights(3)
    sobol = dual_effect_table(est.tau, w, std_errors=est.std_errors)
    shap = effect_table(est.tau, shapley_weights(3), std_errors=est.std_errors)
    primal = effect_table(est.tau, w, std_errors=est.std_errors)
    sizes = popcounts(3)
    singles = [1, 2, 4]
    assert np.all(within(sobol.effects.values[singles], [1, 4, 9], sobol.std_errors[singles]))
    assert np.all(within(shap.effects.values[singles], [1, 4, 9], shap.std_errors[singles]))
    for table in (sobol, shap, primal):
        inter = sizes >= 2
        assert np.all(within(table.effects.values[inter], 0.0, table.std_errors[inter]))


@pytest.mark.criterion(2, "Ishigami Sobol indices")
def test_criterion_2_ishigami_sobol_indices():
    spec = ModelSpec("ishigami", {"a": 7.0, "b": 0.1})
    est = estimate_sensitivity_map(spec, default_distribution(spec), SQ, 2 * 10**5, seed=777)
    sobol = dual_effect_table(est.tau, mobius_weights(3), std_errors=est.std_errors)
    V = ishigami_variances(7.0, 0.1)
    assert V[0b001] == pytest.approx(4.3459, abs=5e-5)
    assert V[0b010] == 6.125
    assert V[0b101] == pytest.approx(3.3737, abs=5e-5)
    targets = {0b001: V[0b001], 0b010: V[0b010], 0b100: 0.0, 0b101: V[0b101]}
    for b, v in targets.items():
        assert within(sobol.effects[b], v, sobol.std_errors[b]), (b, sobol.effects[b], v)
    # remaining interactions vanish for this function
    for b in (0b011, 0b110, 0b111):
        assert within(sobol.effects[b], 0.0, sobol.std_errors[b]), b
    assert within(est.tau[7], ishigami_total_variance(), est.std_errors[7])
    assert ishigami_total_variance() == pytest.approx(13.8446, abs=5e-5)


@pytest.mark.criterion(3, "formula equivalence (recursive vs linear form)")
def test_criterion_3_formula_equivalence():
    rng = np.random.default_rng(3)
    worst = 0.0
    for trial in range(500):
        d = int(rng.integers(1, 9))
        tau = oracles.random_map(rng, d, zero_empty=False)
        kind = trial % 4
        w = (uniform_weights, shapley_weights, mobius_weights)[kind](d) if kind < 3 else random_weights(rng, d)
        b = int(rng.integers(0, 1 << d))
        rec = weighted_effect(tau, b, w)
        lin = weighted_effect_linear(tau, b, w)
        scale = max(abs(rec), float(np.abs(effect_coefficients(w, b)) @ np.abs(tau.values)))
        worst = max(worst, abs(rec - lin) / scale if scale else 0.0)
    assert worst <= 1e-10


@pytest.mark.criterion(4, "Mobius roundtrip and uniqueness")
def test_criterion_4_mobius_roundtrip_and_uniqueness():
    rng = np.random.default_rng(4)
    for _ in range(100):
        d = int(rng.integers(1, 11))
        tau = oracles.random_map(rng, d, zero_empty=False)
        np.testing.assert_allclose(mobius_inverse(mobius_transform(tau)).values, tau.values, rtol=1e-12, atol=1e-12)

    d = 3
    indicators = [LatticeMap.indicator(c, d) for c in range(1, 1 << d)]
    for t in indicators:
        assert verify_sobol_decomposition(t, effect_table(t, mobius_weights(d))).passed
    perturbed = 0
    for b in range(1 << d):
        for a in range(1, 1 << d):
            if a & b:
                continue
            entries = [(bb, 0, 1.0) for bb in range(1 << d) if bb != b] + [(b, 0, 0.9), (b, a, 0.1)]
            w = CustomWeights(d, entries)
            assert any(not verify_sobol_decomposition(t, effect_table(t, w)).passed for t in indicators), (b, a)
            perturbed += 1
    assert perturbed == 19


@pytest.mark.criterion(5, "Shapley-condition equivalence")
def test_criterion_5_shapley_condition():
    rng = np.random.default_rng(5)
    families = [shapley_weights(d) for d in range(1, 8)] + [not_shapley_example()]
    for w in families:
        assert check_shapley_condition(w).passed, w
        for _ in range(100):
            tau = oracles.random_map(rng, w.dim)
            report = verify_shapley_sum(tau, effect_table(tau, w), tol=1e-10)
            assert report.residual <= 1e-10
    u = uniform_weights(3)
    assert not check_shapley_condition(u).passed
    failures = [
        c for c in range(1, 8)
        if not verify_shapley_sum(LatticeMap.indicator(c, 3), effect_table(LatticeMap.indicator(c, 3), u)).passed
    ]
    assert failures


@pytest.mark.criterion(6, "self-duality of odd-order effects")
def test_criterion_6_self_duality():
    rng = np.random.default_rng(6)
    for d in range(3, 7):
        odd = popcounts(d) % 2 == 1
        for w in (uniform_weights(d), shapley_weights(d)):
            for _ in range(20):
                tau = oracles.random_map(rng, d)
                gap = self_duality_gap(tau, w)
                assert np.max(np.abs(gap[odd])) <= 1e-10
    # point masses at A = {} violate the palindromic condition for |B| = 1
    w = not_shapley_example()
    B = 0b001
    assert not is_palindromic(w, B)
    witness = find_self_duality_counterexample(w, B)
    assert witness is not None
    tau = LatticeMap.indicator(witness, 3)
    assert abs(dual_effect_table(tau, w)[B] - effect_table(tau, w)[B]) > 1e-3


@pytest.mark.criterion(7, "sensitivity-map axioms")
def test_criterion_7_map_axioms():
    spec = ModelSpec("square_plus")
    for dist in (default_distribution(spec), InputDistribution.independent([Normal(), Normal()])):
        est = estimate_sensitivity_map(spec, dist, SQ, 10**5, seed=71)
        assert est.tau[0] == 0.0 and est.std_errors[0] == 0.0
        assert np.all(est.tau.values >= -3 * est.std_errors)
    sign = estimate_sensitivity_map(spec, default_distribution(spec), SQ, 10**5, seed=71)
    assert abs(sign.tau[0b01]) <= 3 * sign.std_errors[0b01]
    gauss = estimate_sensitivity_map(spec, InputDistribution.independent([Normal(), Normal()]), SQ, 10**5, seed=71)
    assert gauss.tau[0b01] > 3 * gauss.std_errors[0b01]
    ish = ModelSpec("ishigami")
    est = estimate_sensitivity_map(ish, default_distribution(ish), SQ, 10**4, seed=72)
    assert est.tau[0] == 0.0
    assert np.all(est.tau.values >= -3 * est.std_errors)


@pytest.mark.criterion(8, "contrast and divergence consistency")
def test_criterion_8_contrast_consistency():
    seed = 88
    for b in range(1, 8):
        s = subset_seed(seed, b)
        pf = estimate_tau(LINEAR, GAUSS3, SQ, b, 10**5, s)
        dl = estimate_tau_contrast(LINEAR, GAUSS3, Contrast("mean"), b, 2000, 1000, s + 1)
        assert within(dl.estimate, pf.estimate, np.hypot(dl.std_error, pf.std_error)), b
        ab = estimate_tau(LINEAR, GAUSS3, Divergence("absolute"), b, 10**5, s + 2)
        md = estimate_tau_contrast(LINEAR, GAUSS3, Contrast("median"), b, 2000, 200, s + 3)
        assert md.estimate <= ab.estimate + 3 * np.hypot(md.std_error, ab.std_error), b


@pytest.mark.criterion(9, "dependent inputs (Gaussian copula)")
def test_criterion_9_dependent_inputs(tmp_path):
    rho = 0.8
    dist = InputDistribution.gaussian_copula([Normal(), Normal()], [[1.0, rho], [rho, 1.0]])
    model = ModelSpec("linear", {"coefficients": [1.0, 1.0]})
    n = 10**5
    for bits in (0b01, 0b10, 0b11):
        ps = paired_sample(dist, bits, n, seed=90 + bits)
        for j in range(2):
            if not bits >> j & 1:
                assert np.array_equal(ps.x[:, j], ps.x_resampled[:, j])
        y, y2 = model(ps.x), model(ps.x_resampled)
        for k in (1, 2):
            diff = y**k - y2**k
            assert abs(diff.mean()) <= 3 * diff.std(ddof=1) / np.sqrt(n), (bits, k)
        if bits != 0b11:
            # the frozen column keeps its correlation with the redrawn one
            j = 0 if bits == 0b01 else 1
            r = np.corrcoef(ps.x_resampled[:, j], ps.x_resampled[:, 1 - j])[0, 1]
            assert abs(r - rho) <= 3 * (1 - rho**2) / np.sqrt(n)

    config = tmp_path / "copula.toml"
    config.write_text(
        """
seed = 9
[model]
id = "linear"
coefficients = [1.0, 1.0]
[inputs]
marginals = [{ kind = "normal" }, { kind = "normal" }]
correlation = [[1.0, 0.8], [0.8, 1.0]]
[weights]
family = "shapley"
[budget]
n = 50000
[output]
dir = "out"
dual = true
"""
    )
    out = io.StringIO()
    assert cli.main(["--config", str(config), "--strict"], out=out) == cli.EXIT_OK
    est = estimate_sensitivity_map(model, dist, SQ, 50000, seed=9)
    tau = est.tau
    assert np.all(tau.values >= -3 * est.std_errors)
    for b in range(4):
        for w in (uniform_weights(2), shapley_weights(2), mobius_weights(2)):
            assert weighted_effect(tau, b, w) == pytest.approx(weighted_effect_linear(tau, b, w), rel=1e-10, abs=1e-12)
    assert mobius_inverse(mobius_transform(tau)).allclose(tau)
    assert verify_sobol_decomposition(tau, effect_table(tau, mobius_weights(2))).passed
    assert verify_shapley_sum(tau, effect_table(tau, shapley_weights(2))).passed
    for w in (uniform_weights(2), shapley_weights(2)):
        gap = self_duality_gap(tau, w)
        assert np.max(np.abs(gap[[1, 2]])) <= 1e-10


@pytest.mark.criterion(10, "determinism of report files")
def test_criterion_10_determinism(tmp_path):
    config = tmp_path / "linear.toml"
    config.write_text(LINEAR_CONFIG)
    outputs = []
    for name in ("first", "second"):
        out_dir = tmp_path / name
        assert cli.main(["--config", str(config), "--out", str(out_dir)], out=io.StringIO()) == cli.EXIT_OK
        outputs.append({p.name: p.read_bytes() for p in sorted(out_dir.iterdir())})
    assert outputs[0].keys() == outputs[1].keys()
    assert {"tau.csv", "effects.csv", "dual_map.csv", "dual_effects.csv", "report.json"} <= outputs[0].keys()
    for name in outputs[0]:
        assert outputs[0][name] == outputs[1][name], name
