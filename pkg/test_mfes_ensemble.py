"""Fidelity groups, ranking loss, weights, gPoE fusion and ensemble builds."""

import math

import numpy as np
import pytest

from config_space import ConfigurationSpace, ParameterSpec, sample_uniform
from mfes_ensemble import (
    EnsembleParams, EnsembleSurrogate, FidelityGroup, Measurement, build_ensemble, compute_weights, cv_folds,
    cv_out_of_sample_means, cv_ranking_loss, gpoe_combine, gpoe_predict, held_out_ranking_loss, ranking_loss,
    ranking_loss_from_means, standardize,
)
from surrogate_forest import ForestParams, Prediction, fit_arrays
from utils import DegenerateEnsembleError, InsufficientDataError, InvalidParameterError, make_rng

SPACE = ConfigurationSpace([ParameterSpec("x0", "continuous", 0.0, 1.0), ParameterSpec("x1", "continuous", 0.0, 1.0)])


def make_group(level, losses=None, n=0, fn=None, seed=0):
    rng = make_rng(seed, "sample", int(level * 1000))
    group = FidelityGroup(level)
    count = len(losses) if losses is not None else n
    for i in range(count):
        c = sample_uniform(SPACE, rng)
        y = losses[i] if losses is not None else fn(c)
        group.add(Measurement(c, level, float(y)))
    return group


def brute_force_ranking_loss(mu, y):
    total = 0
    for j in range(len(y)):
        for k in range(len(y)):
            if (mu[j] < mu[k]) != (y[j] < y[k]):
                total += 1
    return total


def bowl(c):
    return (c["x0"] - 0.3) ** 2 + (c["x1"] - 0.7) ** 2


def test_standardize_uses_population_std():
    _, z = standardize(make_group(1.0, [1.0, 2.0, 3.0]), SPACE)
    assert z == pytest.approx([-1.2247, 0.0, 1.2247], abs=1e-4)
    _, z = standardize(make_group(1.0, [4.0, 4.0, 4.0]), SPACE)
    assert list(z) == [0.0, 0.0, 0.0]
    _, z = standardize(make_group(1.0, [5.0]), SPACE)
    assert list(z) == [0.0]
    with pytest.raises(InsufficientDataError):
        standardize(FidelityGroup(1.0), SPACE)


def test_failed_measurements_are_left_out():
    group = make_group(3.0, [1.0, math.inf, 3.0])
    assert len(group) == 3
    assert list(group.losses()) == [1.0, 3.0]
    X, z = standardize(group, SPACE)
    assert X.shape == (2, 2) and list(z) == [-1.0, 1.0]


def test_group_rejects_other_resource_levels():
    group = FidelityGroup(3.0)
    with pytest.raises(InvalidParameterError):
        group.add(Measurement(sample_uniform(SPACE, make_rng(0)), 9.0, 1.0))


def test_ranking_loss_examples():
    assert ranking_loss_from_means([1, 2, 3], [10, 20, 30]) == 0
    assert ranking_loss_from_means([3, 2, 1], [1, 2, 3]) == 6
    assert ranking_loss_from_means([1, 3, 2], [1, 2, 3]) == 2
    with pytest.raises(InsufficientDataError):
        ranking_loss_from_means([1.0], [1.0])


def test_ranking_loss_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        # coarse values so ties show up
        mu = rng.integers(0, 4, size=n).astype(float)
        y = rng.integers(0, 4, size=n).astype(float)
        loss = ranking_loss_from_means(mu, y)
        assert loss == brute_force_ranking_loss(mu, y)
        assert 0 <= loss <= n * (n - 1)


def test_ranking_loss_of_a_fitted_surrogate():
    top = make_group(9.0, n=12, fn=bowl)
    X, z = standardize(top, SPACE)
    model = fit_arrays(X, z, ForestParams(), make_rng(0, "forest"))
    mu, _ = model.predict_batch(X)
    assert ranking_loss(model, top, SPACE) == brute_force_ranking_loss(mu, top.losses())


def test_cv_refit_counts():
    params = ForestParams(n_trees=3)
    _, refits = cv_out_of_sample_means(make_group(9.0, n=4, fn=bowl), params, make_rng(0, "cv"), SPACE)
    assert refits == 4
    _, refits = cv_out_of_sample_means(make_group(9.0, n=25, fn=bowl), params, make_rng(0, "cv"), SPACE)
    assert refits == 5


def test_cv_ranking_loss_on_constant_function():
    group = make_group(9.0, n=6, fn=lambda c: 1.0)
    mu, _ = cv_out_of_sample_means(group, ForestParams(n_trees=3), make_rng(1, "cv"), SPACE)
    loss = cv_ranking_loss(group, ForestParams(n_trees=3), make_rng(1, "cv"), SPACE)
    assert loss == brute_force_ranking_loss(mu, group.losses())


def test_weight_operator():
    n_k = 4
    n_pairs = n_k * (n_k - 1)
    # p = 1 - L / N_pairs, so L = (1 - p) * N_pairs
    w = compute_weights([0.5 * n_pairs, 0.0], n_k, 3)
    assert w[0] == pytest.approx(1 / 9, abs=1e-12)
    assert w[1] == pytest.approx(8 / 9, abs=1e-12)
    assert compute_weights([3, 3, 3], n_k, 3) == pytest.approx([1 / 3] * 3)
    assert compute_weights([n_pairs, 0], n_k, 3) == pytest.approx([0.0, 1.0])
    with pytest.raises(InsufficientDataError):
        compute_weights([0], 1, 3)


def test_weights_grow_with_order_preservation():
    n_k, n_pairs = 6, 30
    base = [10, 15, 20]
    w_before = compute_weights(base, n_k, 3)
    w_after = compute_weights([10, 5, 20], n_k, 3)
    assert w_after[1] >= w_before[1]
    assert sum(w_after) == pytest.approx(1.0, abs=1e-12)
    assert all(0.0 <= w <= 1.0 for w in w_after)
    assert n_pairs == n_k * (n_k - 1)


def test_gpoe_identities():
    p = Prediction(0.3, 0.2)
    single = gpoe_predict([p], [1.0])
    assert single.mean == pytest.approx(0.3, abs=1e-12) and single.variance == pytest.approx(0.2, abs=1e-12)

    fused = gpoe_predict([Prediction(0.0, 1.0), Prediction(2.0, 1.0)], [0.5, 0.5])
    assert fused.mean == pytest.approx(1.0, abs=1e-12) and fused.variance == pytest.approx(1.0, abs=1e-12)

    excluded = gpoe_predict([p, Prediction(-50.0, 1e-6)], [1.0, 0.0])
    assert excluded.mean == pytest.approx(0.3, abs=1e-12) and excluded.variance == pytest.approx(0.2, abs=1e-12)

    with pytest.raises(DegenerateEnsembleError):
        gpoe_predict([p, p], [0.0, 0.0])


def test_gpoe_precision_additivity_and_convexity():
    rng = np.random.default_rng(0)
    means = rng.normal(size=(3, 50))
    variances = rng.uniform(0.1, 2.0, size=(3, 50))
    w = np.array([0.2, 0.3, 0.5])
    mean, var = gpoe_combine(means, variances, w)
    np.testing.assert_allclose(1.0 / var, (w[:, None] / variances).sum(axis=0), rtol=1e-12)
    shared = np.ones((3, 50)) * 0.7
    mean, _ = gpoe_combine(means, shared, w)
    np.testing.assert_allclose(mean, (w[:, None] * means).sum(axis=0), atol=1e-12)


def test_empty_groups_give_no_ensemble():
    groups = [FidelityGroup(1.0), FidelityGroup(3.0), FidelityGroup(9.0)]
    assert build_ensemble(groups, ForestParams(), 3, 50, make_rng(0, "forest"), SPACE) is None


def test_single_trained_base_gets_all_weight():
    groups = [make_group(1.0, n=30, fn=bowl), FidelityGroup(3.0), FidelityGroup(9.0)]
    ens = build_ensemble(groups, ForestParams(n_trees=3), 3, 50, make_rng(0, "forest"), SPACE)
    assert ens.weights == [1.0, 0.0, 0.0]
    mean, var = ens.predict_batch(np.array([[0.3, 0.7], [0.9, 0.1]]))
    assert mean[0] < mean[1] and np.all(var > 0)


def test_weights_form_a_simplex():
    groups = [make_group(1.0, n=27, fn=lambda c: bowl(c) + 0.3 * c["x0"]),
              make_group(3.0, n=9, fn=bowl), make_group(9.0, n=6, fn=bowl)]
    ens = build_ensemble(groups, ForestParams(n_trees=5), 3, 50, make_rng(0, "forest"), SPACE)
    assert len(ens.weights) == 3
    assert sum(ens.weights) == pytest.approx(1.0, abs=1e-12)
    assert all(0.0 <= w <= 1.0 for w in ens.weights)
    assert all(p is not None and 0.0 <= p <= 1.0 for p in ens.order_preserving)
    assert not ens.safeguard_fired


def test_top_fidelity_safeguard():
    groups = [make_group(1.0, n=9, fn=bowl), make_group(3.0, n=5, fn=bowl)]
    ens = build_ensemble(groups, ForestParams(n_trees=3), 3, 5, make_rng(0, "forest"), SPACE)
    assert ens.weights == [0.0, 1.0]
    assert ens.safeguard_fired


@pytest.mark.parametrize("fusion", ["equal_weight", "single_best", "top_only"])
def test_ablation_fusion_modes(fusion):
    groups = [make_group(1.0, n=9, fn=bowl), make_group(3.0, n=4, fn=bowl)]
    ens = build_ensemble(groups, ForestParams(n_trees=3), 3, 50, make_rng(0, "forest"), SPACE, fusion=fusion)
    assert sum(ens.weights) == pytest.approx(1.0)
    if fusion == "equal_weight":
        assert ens.weights == pytest.approx([0.5, 0.5])
    elif fusion == "top_only":
        assert ens.weights == [0.0, 1.0]
    else:
        assert sorted(ens.weights) == [0.0, 1.0]


def test_top_only_without_top_model_is_unavailable():
    groups = [make_group(1.0, n=9, fn=bowl), make_group(3.0, n=1, fn=bowl)]
    assert build_ensemble(groups, ForestParams(n_trees=3), 3, 50, make_rng(0, "forest"), SPACE, fusion="top_only") is None


def test_ensemble_params_validation():
    with pytest.raises(InvalidParameterError):
        EnsembleParams(theta=0)
    with pytest.raises(InvalidParameterError):
        EnsembleParams(fusion="mean")


MEMORIZING = ForestParams(n_trees=1, min_samples_leaf=1, max_features_ratio=1.0, bootstrap=False)


def test_lower_base_is_scored_on_configurations_it_never_saw():
    top = make_group(9.0, n=10, fn=bowl)
    lower = make_group(1.0, n=200, fn=lambda c: -bowl(c), seed=4)
    for m in top.finite():
        lower.add(Measurement(m.config, 1.0, m.loss))
    X, z = standardize(lower, SPACE)
    model = fit_arrays(X, z, MEMORIZING, make_rng(0, "forest"))
    n_pairs = 10 * 9
    # the promoted configurations are memorized, everything around them is reversed
    assert ranking_loss(model, top, SPACE) == 0
    assert held_out_ranking_loss(lower, model, top, MEMORIZING, make_rng(0, "cv"), SPACE) > n_pairs // 4


def test_lower_base_without_shared_configurations_keeps_its_fit():
    top = make_group(9.0, n=8, fn=bowl)
    lower = make_group(1.0, n=30, fn=lambda c: bowl(c) + 0.2 * c["x1"], seed=2)
    X, z = standardize(lower, SPACE)
    model = fit_arrays(X, z, ForestParams(n_trees=5), make_rng(0, "forest"))
    held_out = held_out_ranking_loss(lower, model, top, ForestParams(n_trees=5), make_rng(0, "cv"), SPACE)
    assert held_out == ranking_loss(model, top, SPACE)


def test_shared_folds_cover_every_point_once():
    for n in (2, 5, 6, 24):
        folds = cv_folds(n, make_rng(0, "cv"))
        assert sorted(np.concatenate(folds).tolist()) == list(range(n))
        assert len(folds) == (n if n <= 5 else 5)


class FixedBase:
    def __init__(self, mean, variance):
        self.mean, self.variance = mean, variance

    def predict_batch(self, X):
        n = np.asarray(X).shape[0]
        return np.full(n, self.mean), np.full(n, self.variance)


def test_confident_base_does_not_outvote_the_weights():
    bases = [(1.0, FixedBase(0.0, 0.01)), (9.0, FixedBase(1.0, 1.0))]
    X = np.zeros((3, 2))
    raw = EnsembleSurrogate(bases, [0.5, 0.5], 3, 50)
    mean, _ = raw.predict_batch(X)
    assert mean[0] == pytest.approx(1 / 101)
    calibrated = EnsembleSurrogate(bases, [0.5, 0.5], 3, 50, variance_scales=[0.01, 1.0])
    mean, var = calibrated.predict_batch(X)
    np.testing.assert_allclose(mean, 0.5)
    np.testing.assert_allclose(var, 0.505)
    tilted = EnsembleSurrogate(bases, [0.2, 0.8], 3, 50, variance_scales=[0.01, 1.0])
    np.testing.assert_allclose(tilted.predict_batch(X)[0], 0.8)


def test_calibration_keeps_a_single_base_unchanged():
    base = FixedBase(0.3, 0.2)
    ens = EnsembleSurrogate([(1.0, None), (3.0, base)], [0.0, 1.0], 3, 50, variance_scales=[None, 0.05])
    mean, var = ens.predict_batch(np.zeros((2, 2)))
    np.testing.assert_allclose(mean, 0.3)
    np.testing.assert_allclose(var, 0.2)


def test_built_ensemble_records_variance_scales():
    groups = [make_group(1.0, n=27, fn=lambda c: bowl(c) + 0.3 * c["x0"]), FidelityGroup(3.0),
              make_group(9.0, n=6, fn=bowl)]
    ens = build_ensemble(groups, ForestParams(n_trees=5), 3, 50, make_rng(0, "forest"), SPACE)
    assert ens.variance_scales[1] is None
    assert ens.variance_scales[0] > 0.0 and ens.variance_scales[2] > 0.0
