import numpy as np
import pytest

from gridverify.mlp import forward_batch, load_network, save_network
from gridverify.quantize import ExplicitAxis, QuantScheme, UniformAxis
from gridverify.tables import LookupTable, policy_accuracy
from gridverify.train import (
    TrainConfig,
    TrainingDivergedError,
    full_table_loss,
    init_params,
    loss_and_grad,
    train,
)


def tiny_table(seed=0):
    scheme = QuantScheme(
        [
            UniformAxis("a", "-", 0.5, 0.0, -1.0, 1.0),
            ExplicitAxis("b", "-", [0.0, 1.0, 3.0]),
        ]
    )
    rng = np.random.default_rng(seed)
    scores = rng.normal(scale=0.5, size=(scheme.grid_size, 5)).astype(np.float32)
    return LookupTable(scheme, scores)


def numeric_grads(weights, biases, xb, yb, asym_weight, eps=1e-6):
    """Central finite differences of the loss in every parameter."""

    def loss_at():
        return loss_and_grad(weights, biases, xb, yb, asym_weight)[0]

    grads_w, grads_b = [], []
    for arr_list, grads in ((weights, grads_w), (biases, grads_b)):
        for arr in arr_list:
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + eps
                up = loss_at()
                arr[idx] = orig - eps
                down = loss_at()
                arr[idx] = orig
                g[idx] = (up - down) / (2 * eps)
            grads.append(g)
    return grads_w, grads_b


class TestConfig:
    def test_defaults_valid(self):
        TrainConfig()

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            TrainConfig(shape=(5,))

    def test_bad_learning_rate(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)

    def test_bad_asym_weight(self):
        with pytest.raises(ValueError):
            TrainConfig(asym_weight=0.5)


class TestLossAndGrad:
    def setup_params(self, seed=1, widths=(2, 7, 6, 5)):
        rng = np.random.default_rng(seed)
        weights, biases = init_params(widths, rng)
        # random biases so ReLU patterns vary
        biases = [rng.normal(scale=0.1, size=b.shape) for b in biases]
        xb = rng.normal(size=(12, widths[0]))
        yb = rng.normal(size=(12, widths[-1]))
        return weights, biases, xb, yb

    def _nudge_away_from_kinks(self, weights, biases, xb, margin=1e-4):
        """Finite differences need pre-activations away from ReLU kinks."""
        h = xb
        ok = True
        for w, b in zip(weights[:-1], biases[:-1]):
            z = h @ w.T + b
            if np.abs(z).min() < margin:
                ok = False
            h = np.maximum(z, 0.0)
        return ok

    def test_gradients_match_finite_differences(self):
        tested = 0
        for seed in range(5):
            weights, biases, xb, yb = self.setup_params(seed=seed)
            if not self._nudge_away_from_kinks(weights, biases, xb):
                continue
            tested += 1
            _, gw, gb = loss_and_grad(weights, biases, xb, yb, asym_weight=3.0)
            nw, nb = numeric_grads(weights, biases, xb, yb, asym_weight=3.0)
            for a, n in zip(gw + gb, nw + nb):
                denom = np.maximum(np.abs(n), 1e-6)
                assert np.max(np.abs(a - n) / denom) < 1e-4
        assert tested >= 2, "too few kink-free samples for the gradient check"

    def test_asym_weight_scales_mismatched_entries(self):
        weights, biases, xb, yb = self.setup_params(seed=2)
        _, pred = None, None
        from gridverify.train import _forward_trace

        _, pred = _forward_trace(weights, biases, xb)
        agree = np.argmax(pred, axis=1) == np.argmax(yb, axis=1)
        base, _, _ = loss_and_grad(weights, biases, xb, yb, asym_weight=1.0)
        weighted, _, _ = loss_and_grad(weights, biases, xb, yb, asym_weight=5.0)
        per = np.sum((pred - yb) ** 2, axis=1) / yb.shape[1]
        expected = np.mean(np.where(agree, per, 5.0 * per))
        np.testing.assert_allclose(weighted, expected, rtol=1e-12)
        assert weighted >= base

    def test_empty_batch_rejected(self):
        weights, biases, xb, yb = self.setup_params(seed=3)
        with pytest.raises(ValueError):
            loss_and_grad(weights, biases, xb[:0], yb[:0], 2.0)


class TestTrain:
    CFG = TrainConfig(shape=(2, 16, 16, 5), epochs=40, batch_size=4,
                      learning_rate=0.05, seed=5)

    def test_loss_decreases(self):
        table = tiny_table()
        losses = []
        train(table, self.CFG, on_epoch=lambda e, l: losses.append(l))
        assert len(losses) == self.CFG.epochs
        assert losses[-1] < losses[0]

    def test_deterministic_bitwise(self):
        table = tiny_table()
        n1 = train(table, self.CFG)
        n2 = train(table, self.CFG)
        assert n1 == n2
        for l1, l2 in zip(n1.layers, n2.layers):
            np.testing.assert_array_equal(l1.weights, l2.weights)

    def test_seed_changes_result(self):
        table = tiny_table()
        n1 = train(table, self.CFG)
        n2 = train(table, TrainConfig(**{**self.CFG.__dict__, "seed": 6}))
        assert n1 != n2

    def test_fits_tiny_table_policy(self):
        table = tiny_table()
        cfg = TrainConfig(shape=(2, 16, 16, 5), epochs=1000, batch_size=4,
                          learning_rate=0.1, asym_weight=8.0, seed=5)
        net = train(table, cfg)
        pts = table.scheme.points_for_flat(
            np.arange(table.scheme.grid_size, dtype=np.int64)
        )
        pred = forward_batch(net, pts)
        assert policy_accuracy(pred, table) >= 0.9

    def test_normalization_stored(self):
        table = tiny_table()
        net = train(table, self.CFG)
        np.testing.assert_allclose(net.norm_mean, [0.0, 1.5])
        np.testing.assert_allclose(net.norm_range, [2.0, 3.0])

    def test_metadata_carried(self):
        table = tiny_table()
        net = train(table, self.CFG, name="tiny")
        assert net.metadata["name"] == "tiny"
        assert net.metadata["tau"] == table.tau
        assert net.metadata["alpha_prev"] == table.alpha_prev

    def test_trained_network_round_trips(self, tmp_path):
        table = tiny_table()
        net = train(table, self.CFG)
        path = tmp_path / "net.nnw"
        save_network(net, path)
        assert load_network(path) == net

    def test_shape_endpoints_checked(self):
        table = tiny_table()
        with pytest.raises(ValueError, match="endpoints"):
            train(table, TrainConfig(shape=(3, 8, 5)))

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_divergence_detected(self):
        table = tiny_table()
        cfg = TrainConfig(shape=(2, 16, 5), epochs=50, batch_size=2,
                          learning_rate=1e6, seed=0)
        with pytest.raises(TrainingDivergedError):
            train(table, cfg)

    def test_full_table_loss_matches_training_signal(self):
        table = tiny_table()
        net = train(table, self.CFG)
        init_cfg = TrainConfig(**{**self.CFG.__dict__, "epochs": 0})
        untrained = train(table, init_cfg)
        after = full_table_loss(net, table, self.CFG.asym_weight)
        before = full_table_loss(untrained, table, self.CFG.asym_weight)
        assert after < before
