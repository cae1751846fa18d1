import numpy as np
import pytest

from energycomp import Model, TrainConfig, apply_prune, build_cnn, build_mlp, \
    prune_search, rank_weights_global, retrain_pruned
from energycomp.model import dense
from energycomp.pruning import PruneOutcome, prunable_weight_count


def single_layer_model(weights):
    w = np.asarray(weights, np.float32)
    return Model([dense(w)], (w.shape[1],), w.shape[0])


def brute_force_pruned_set(model, rate):
    """Independent sort-and-cut oracle over (|w|, layer, index) tuples."""
    pool = []
    for li, layer in enumerate(model.layers):
        if layer.kind not in ("dense", "conv2d"):
            continue
        for fi, w in enumerate(layer.weights.reshape(-1)):
            pool.append((abs(float(w)), li, fi))
    pool.sort()
    cut = int(np.floor(rate * len(pool)))
    return {(li, fi) for _, li, fi in pool[:cut]}


def masked_set(model):
    out = set()
    for li, layer in enumerate(model.layers):
        if layer.mask is None:
            continue
        for fi in np.flatnonzero(~layer.mask.reshape(-1)):
            out.add((li, int(fi)))
    return out


class TestRanking:
    def test_orders_by_magnitude(self):
        model = single_layer_model([[0.02, 0.1], [-0.5, 0.3]])
        order = rank_weights_global(model)
        values = [model.layers[0].weights.reshape(-1)[fi] for _, fi in order]
        assert values == [np.float32(0.02), np.float32(0.1),
                          np.float32(0.3), np.float32(-0.5)]

    def test_tie_break_by_layer_then_index(self):
        model = Model(
            [dense(np.full((3, 4), 0.5, np.float32), activation="relu"),
             dense(np.full((2, 3), 0.5, np.float32))],
            (4,), 2,
        )
        order = rank_weights_global(model)
        assert order.tolist() == [[0, i] for i in range(12)] + [[1, i] for i in range(6)]

    def test_invariant_under_global_sign_flip(self):
        model = single_layer_model(np.random.default_rng(0).normal(size=(5, 6)))
        flipped = model.copy()
        flipped.layers[0].weights = -flipped.layers[0].weights
        assert np.array_equal(rank_weights_global(model), rank_weights_global(flipped))


class TestApplyPrune:
    def test_half_rate_on_four_weights(self):
        model = single_layer_model([[0.02, 0.1], [-0.5, 0.3]])
        pruned, outcome = apply_prune(model, 0.5)
        assert np.allclose(pruned.layers[0].weights, [[0, 0], [-0.5, 0.3]])
        assert outcome.overall_rate == 0.5

    def test_zero_rate_leaves_model_unmasked(self, trained_mlp):
        pruned, outcome = apply_prune(trained_mlp, 0.0)
        assert outcome.overall_rate == 0.0
        assert all(l.mask is None for l in pruned.layers)
        for a, b in zip(trained_mlp.layers, pruned.layers):
            assert np.array_equal(a.weights, b.weights)

    def test_rate_bounds(self, trained_mlp):
        for rate in (-0.1, 1.5):
            with pytest.raises(ValueError, match="rate"):
                apply_prune(trained_mlp, rate)

    def test_count_exactness_and_magnitude_dominance(self):
        rng = np.random.default_rng(1)
        model = Model(
            [dense(rng.normal(size=(10, 20)).astype(np.float32), activation="relu"),
             dense(rng.normal(size=(4, 10)).astype(np.float32))],
            (20,), 4,
        )
        n = prunable_weight_count(model)
        for rate in (0.1, 0.33, 0.77):
            pruned, outcome = apply_prune(model, rate)
            masked = masked_set(pruned)
            assert len(masked) == int(np.floor(rate * n))
            if masked:
                max_masked = max(abs(model.layers[li].weights.reshape(-1)[fi])
                                 for li, fi in masked)
                survivors = [abs(w) for li, l in enumerate(model.layers)
                             for fi, w in enumerate(l.weights.reshape(-1))
                             if (li, fi) not in masked]
                assert max_masked <= min(survivors) + 1e-9

    def test_matches_brute_force_oracle_20_random_rates(self):
        # acceptance-style oracle equivalence on a model under 1000 weights
        rng = np.random.default_rng(2)
        model = Model(
            [dense(rng.normal(size=(16, 30)).astype(np.float32), activation="relu"),
             dense(rng.normal(size=(8, 16)).astype(np.float32)),
             ],
            (30,), 8,
        )
        assert prunable_weight_count(model) <= 1000
        for rate in rng.uniform(0, 1, size=20):
            pruned, _ = apply_prune(model, float(rate))
            assert masked_set(pruned) == brute_force_pruned_set(model, float(rate))

    def test_nested_sets_across_grid(self):
        model = Model(
            [dense(np.random.default_rng(3).normal(size=(12, 24)).astype(np.float32))],
            (24,), 12,
        )
        previous = set()
        for k in range(1, 100):
            pruned, _ = apply_prune(model, k / 100)
            current = masked_set(pruned)
            assert previous <= current
            previous = current

    def test_per_layer_rates_mean_matches_overall(self):
        rng = np.random.default_rng(4)
        model = Model(
            [dense(rng.normal(size=(9, 15)).astype(np.float32), activation="relu"),
             dense(rng.normal(size=(5, 9)).astype(np.float32))],
            (15,), 5,
        )
        _, outcome = apply_prune(model, 0.4)
        sizes = [model.layers[i].weights.size for i, _ in outcome.per_layer_rates]
        weighted = sum(r * s for (_, r), s in zip(outcome.per_layer_rates, sizes))
        assert abs(weighted / sum(sizes) - outcome.overall_rate) < 1e-9

    def test_published_style_outcome_representable(self):
        # heterogeneous per-layer rates with overall between their extremes
        outcome = PruneOutcome(0.28, [(0, 0.1121), (1, 0.3769)], 0.6460, 0.6334)
        rates = [r for _, r in outcome.per_layer_rates]
        assert min(rates) <= outcome.overall_rate <= max(rates)


class TestPruneSearch:
    def test_scripted_violation_at_47(self, trained_mlp):
        rates = iter([0.9] + [0.9] * 46 + [0.8])
        outcome = prune_search(trained_mlp, None, None,
                               evaluator=lambda m: next(rates))
        assert outcome.overall_rate == pytest.approx(0.46, abs=0.005)

    def test_zero_weights_prune_free(self, gate_split):
        # a model whose first layer is half exact zeros: pruning those zeros
        # cannot change any logits, so the search must reach at least the
        # zero fraction of the pool
        rng = np.random.default_rng(5)
        w1 = rng.normal(size=(16, 20)).astype(np.float32)
        w1[:, 10:] = 0.0
        w2 = rng.normal(size=(4, 16)).astype(np.float32)
        model = Model([dense(w1, activation="relu"), dense(w2)], (20,), 4)
        x = rng.normal(size=(64, 20)).astype(np.float32)
        y = rng.integers(0, 4, size=64)
        from energycomp import evaluate
        outcome = prune_search(model, x, y, threshold=0.01)
        zero_fraction = 160 / (320 + 64)
        assert outcome.overall_rate >= zero_fraction - 0.01

    def test_threshold_one_reaches_last_grid_step(self):
        # 400 weights: floor(0.99 * 400) / 400 == 0.99 exactly
        model = single_layer_model(
            np.random.default_rng(6).normal(size=(20, 20)).astype(np.float32))
        outcome = prune_search(model, None, None, threshold=1.0,
                               evaluator=lambda m: 0.5)
        assert outcome.overall_rate == 0.99

    def test_first_step_violation_returns_zero_rate(self, trained_mlp):
        rates = iter([0.9, 0.1])
        outcome = prune_search(trained_mlp, None, None,
                               evaluator=lambda m: next(rates))
        assert outcome.overall_rate == 0.0
        assert outcome.pruned_accuracy == 0.9


class TestRetrainPruned:
    def test_masks_survive_retraining(self, small_dataset):
        model = build_mlp(input_dim=14 * 14, hidden=(16,), classes=10, seed=6)
        pruned, _ = apply_prune(model, 0.5)
        retrain_pruned(pruned, small_dataset, TrainConfig(max_epochs=2, seed=6))
        for layer in pruned.layers:
            if layer.mask is not None:
                assert np.all(layer.weights[~layer.mask] == 0.0)

    def test_rate_zero_retrain_equals_plain_training(self, small_dataset):
        from energycomp import train
        cfg = TrainConfig(max_epochs=2, seed=7)
        a = build_mlp(input_dim=14 * 14, hidden=(16,), classes=10, seed=7)
        b, _ = apply_prune(a, 0.0)
        out_a = train(a, small_dataset, cfg)
        out_b = retrain_pruned(b, small_dataset, cfg)
        assert out_a.validation_loss_history == out_b.validation_loss_history

    def test_cnn_prunes_and_retrains(self):
        from energycomp import make_synthetic_dataset
        ds = make_synthetic_dataset(train=400, test=100, side=8, seed=8)
        model = build_cnn(input_shape=(1, 8, 8), channels=(4, 6), classes=10, seed=8)
        pruned, outcome = apply_prune(model, 0.3)
        assert outcome.overall_rate == pytest.approx(0.3, abs=0.01)
        retrain_pruned(pruned, ds, TrainConfig(max_epochs=1, seed=8))
        for layer in pruned.layers:
            if layer.mask is not None:
                assert np.all(layer.weights[~layer.mask] == 0.0)
