import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from factorial_sensitivity.effects import (
    dual_coefficients,
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
from factorial_sensitivity.subset_lattice import (
    DimensionError,
    LatticeMap,
    SubsetMask,
    dual,
    mobius_inverse,
    mobius_transform,
    popcounts,
)
from factorial_sensitivity.weights import (
    CustomWeights,
    WeightError,
    is_palindromic,
    mobius_weights,
    not_shapley_example,
    shapley_weights,
    uniform_weights,
)


def random_weights(rng, d, sparse=False):
    entries = []
    for b in range(1 << d):
        support = [a for a in range(1 << d) if not a & b]
        raw = rng.random(len(support))
        if sparse:
            raw *= rng.random(len(support)) < 0.4
            if not raw.any():
                raw[rng.integers(len(support))] = 1.0
        raw /= raw.sum()
        entries.extend((b, a, r) for a, r in zip(support, raw) if r)
    return CustomWeights(d, entries, check=False)


def additive_map(c):
    c = np.asarray(c, dtype=float)
    return LatticeMap.from_function(lambda A: float(sum(c[i - 1] ** 2 for i in A)), len(c))


# --- single effects ---------------------------------------------------------


def test_uniform_main_effect_formula(rng):
    d = 4
    tau = oracles.random_map(rng, d)
    w = uniform_weights(d)
    for i in range(d):
        bit = 1 << i
        expected = sum(tau[a | bit] - tau[a] for a in range(16) if not a & bit) / 2 ** (d - 1)
        assert weighted_effect(tau, bit, w) == pytest.approx(expected, rel=1e-12)
        assert weighted_effect_linear(tau, bit, w) == pytest.approx(expected, rel=1e-12)


def test_zero_map_has_zero_effects():
    tau = LatticeMap(np.zeros(8))
    for w in (uniform_weights(3), shapley_weights(3), mobius_weights(3)):
        for b in range(8):
            assert weighted_effect(tau, b, w) == 0.0
            assert weighted_effect_linear(tau, b, w) == 0.0


def test_additive_map_has_no_interaction():
    tau = additive_map([1, 2, 3])
    B = SubsetMask.from_indices([1, 2], 3)
    as_dict = oracles.to_dict(tau.values, 3)
    assert oracles.weighted_effect(as_dict, 3, {1, 2}, oracles.uniform_p(3)) == 0.0
    assert weighted_effect(tau, B, uniform_weights(3)) == 0.0
    assert weighted_effect_linear(tau, B, uniform_weights(3)) == 0.0


def test_effect_b_empty_is_weighted_average(rng):
    tau = oracles.random_map(rng, 3, zero_empty=False)
    w = shapley_weights(3)
    assert weighted_effect_linear(tau, 0, w) == pytest.approx(float(w.row(0) @ tau.values))


def test_mobius_linear_form_is_mobius_transform(rng):
    for d in range(1, 9):
        tau = oracles.random_map(rng, d, zero_empty=False)
        w = mobius_weights(d)
        I = mobius_transform(tau)
        for b in range(1 << d):
            assert weighted_effect_linear(tau, b, w) == pytest.approx(I[b], rel=1e-10, abs=1e-12)


def test_effect_coefficients_signs():
    c = effect_coefficients(uniform_weights(2), 0b11)
    # I({1,2}) = tau(D) - tau({1}) - tau({2}) + tau({})
    np.testing.assert_array_equal(c, [1, -1, -1, 1])


def test_formula_equivalence_randomized(rng):
    for trial in range(500):
        d = int(rng.integers(1, 9))
        tau = oracles.random_map(rng, d, zero_empty=False)
        kind = trial % 4
        w = [uniform_weights, shapley_weights, mobius_weights][kind](d) if kind < 3 else random_weights(rng, d, sparse=True)
        b = int(rng.integers(0, 1 << d))
        r = weighted_effect(tau, b, w)
        lin = weighted_effect_linear(tau, b, w)
        assert lin == pytest.approx(r, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_recursive_form_matches_set_oracle(rng, d):
    tau = oracles.random_map(rng, d, zero_empty=False)
    as_dict = oracles.to_dict(tau.values, d)
    w = random_weights(rng, d)

    def p(B, A):
        return w.weight(SubsetMask.from_indices(B, d), SubsetMask.from_indices(A, d))

    for b in range(1 << d):
        B = {i + 1 for i in range(d) if b >> i & 1}
        assert weighted_effect(tau, b, w) == pytest.approx(oracles.weighted_effect(as_dict, d, B, p), rel=1e-12, abs=1e-12)


def test_errors():
    tau = LatticeMap(np.zeros(4))
    with pytest.raises(DimensionError):
        weighted_effect_linear(tau, 0, shapley_weights(3))
    with pytest.raises(TypeError):
        effect_table(tau, "shapley")
    bad = CustomWeights(2, [(0, 0, 0.5)], check=False)
    with pytest.raises(WeightError):
        weighted_effect(tau, 0, bad)
    with pytest.raises(WeightError):
        effect_table(tau, bad)


# --- tables -----------------------------------------------------------------


@pytest.mark.parametrize("d", [1, 3, 6, 9])
def test_table_fast_paths_match_linear_form(rng, d):
    tau = oracles.random_map(rng, d, zero_empty=False)
    for w in (uniform_weights(d), mobius_weights(d), shapley_weights(d)):
        table = effect_table(tau, w)
        expected = [float(effect_coefficients(w, b) @ tau.values) for b in range(1 << d)]
        np.testing.assert_allclose(table.effects.values, expected, rtol=1e-10, atol=1e-12)
        assert table.weights_id == w.name


def test_mobius_table_roundtrip(rng):
    tau = oracles.random_map(rng, 6)
    table = effect_table(tau, mobius_weights(6))
    assert table.effects.allclose(mobius_transform(tau))
    assert mobius_inverse(table.effects).allclose(tau)
    assert table[0] == 0.0


def test_uniform_table_on_additive_map():
    c = [1.0, 2.0, 3.0]
    table = effect_table(additive_map(c), uniform_weights(3))
    np.testing.assert_allclose(table.singletons(), np.square(c))
    sizes = popcounts(3)
    np.testing.assert_allclose(table.effects.values[sizes >= 2], 0.0, atol=1e-15)


def test_shapley_table_matches_permutation_average(rng):
    for d in (2, 3, 5):
        tau = oracles.random_map(rng, d)
        table = effect_table(tau, shapley_weights(d))
        phi = oracles.shapley_by_permutations(oracles.to_dict(tau.values, d), d)
        np.testing.assert_allclose(table.singletons(), phi, rtol=1e-12, atol=1e-12)
        assert table.singletons().sum() == pytest.approx(tau[-1 + (1 << d)])


def test_dual_table_examples(rng):
    tau = additive_map([1, 2, 3])
    for w in (uniform_weights(3), shapley_weights(3), mobius_weights(3)):
        assert dual_effect_table(tau, w).effects.allclose(effect_table(tau, w).effects)
    tau = oracles.random_map(rng, 4)
    w = shapley_weights(4)
    assert dual_effect_table(tau, w).effects.allclose(effect_table(dual(tau), w).effects)


def test_dual_coefficients_match_dual_table(rng):
    tau = oracles.random_map(rng, 5)
    w = random_weights(rng, 5)
    star = dual_effect_table(tau, w)
    for b in range(32):
        assert float(dual_coefficients(w, b) @ tau.values) == pytest.approx(star[b], abs=1e-12)


# --- verifiers --------------------------------------------------------------


def test_sobol_decomposition_verifier(rng):
    for d in (1, 4, 7):
        tau = oracles.random_map(rng, d)
        report = verify_sobol_decomposition(tau, effect_table(tau, mobius_weights(d)))
        assert report.passed
    top = LatticeMap([0, 0, 0, 1])
    report = verify_sobol_decomposition(top, effect_table(top, uniform_weights(2)))
    assert not report.passed
    assert report.residual > 0.1
    assert report.argmax is not None
    assert "FAIL" in report.describe()
    zero = LatticeMap(np.zeros(8))
    report = verify_sobol_decomposition(zero, effect_table(zero, uniform_weights(3)))
    assert report.passed and report.residual == 0.0


def test_shapley_sum_verifier(rng):
    for w in (shapley_weights(3), not_shapley_example()):
        for _ in range(20):
            tau = oracles.random_map(rng, 3)
            assert verify_shapley_sum(tau, effect_table(tau, w)).passed
    pair = LatticeMap([0, 0, 0, 1])
    report = verify_shapley_sum(pair, effect_table(pair, mobius_weights(2)))
    assert not report.passed
    assert report.residual == pytest.approx(1.0)
    with pytest.raises(ValueError):
        verify_shapley_sum(LatticeMap([1, 1, 1, 1]), effect_table(pair, mobius_weights(2)))


# --- self-duality -----------------------------------------------------------


@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_odd_effects_self_dual_for_palindromic_families(rng, d):
    sizes = popcounts(d)
    for w in (shapley_weights(d), uniform_weights(d)):
        for _ in range(5):
            tau = oracles.random_map(rng, d)
            gap = self_duality_gap(tau, w)
            np.testing.assert_allclose(gap[sizes % 2 == 1], 0.0, atol=1e-10)
        for b in range(1 << d):
            if sizes[b] % 2:
                assert find_self_duality_counterexample(w, b) is None


def test_non_palindromic_family_has_indicator_witness():
    d = 3
    w = mobius_weights(d)
    # B = D is trivially palindromic
    assert find_self_duality_counterexample(w, 7) is None
    for b in (1, 2, 4):
        assert not is_palindromic(w, b)
        witness = find_self_duality_counterexample(w, b)
        assert witness is not None
        tau = LatticeMap.indicator(witness, d)
        assert dual_effect_table(tau, w)[b] != pytest.approx(effect_table(tau, w)[b])


def test_random_family_palindromic_iff_self_dual(rng):
    for _ in range(30):
        d = int(rng.integers(1, 5))
        w = random_weights(rng, d, sparse=True)
        for b in range(1 << d):
            if bin(b).count("1") % 2 == 0:
                continue
            assert (find_self_duality_counterexample(w, b) is None) == is_palindromic(w, b)


# --- symmetry ---------------------------------------------------------------


def _permute_bits(bits, perm):
    return sum(1 << perm[i] for i in range(len(perm)) if bits >> i & 1)


def test_relabeling_invariance(rng):
    d = 4
    tau = oracles.random_map(rng, d)
    for perm in itertools.islice(itertools.permutations(range(d)), 0, None, 5):
        permuted = np.empty(1 << d)
        for a in range(1 << d):
            permuted[_permute_bits(a, perm)] = tau[a]
        permuted = LatticeMap(permuted)
        for factory in (uniform_weights, shapley_weights, mobius_weights):
            w = factory(d)
            orig = effect_table(tau, w).effects
            moved = effect_table(permuted, w).effects
            for b in range(1 << d):
                assert moved[_permute_bits(b, perm)] == pytest.approx(orig[b], abs=1e-12)


# --- standard errors --------------------------------------------------------


def test_std_error_propagation_matches_coefficients(rng):
    d = 3
    tau = oracles.random_map(rng, d)
    se = rng.random(1 << d)
    se[0] = 0.0
    w = shapley_weights(d)
    table = effect_table(tau, w, std_errors=se)
    for b in range(1 << d):
        c = effect_coefficients(w, b)
        assert table.std_errors[b] == pytest.approx(np.sqrt(np.sum(c * c * se * se)))
    cov = np.diag(se**2)
    np.testing.assert_allclose(effect_table(tau, w, covariance=cov).std_errors, table.std_errors)
    star = dual_effect_table(tau, w, std_errors=se)
    for b in range(1 << d):
        c = dual_coefficients(w, b)
        assert star.std_errors[b] == pytest.approx(np.sqrt(np.sum(c * c * se * se)))


def test_std_errors_absent_by_default(rng):
    assert effect_table(oracles.random_map(rng, 2), uniform_weights(2)).std_errors is None


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_sobol_decomposition_always_holds_for_mobius(d, seed):
    tau = oracles.random_map(np.random.default_rng(seed), d)
    assert verify_sobol_decomposition(tau, effect_table(tau, mobius_weights(d))).passed
