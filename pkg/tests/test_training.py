import math

import numpy as np
import pytest

import ultrasnn.autodiff as ad
from ultrasnn import encoding, network, training
from ultrasnn.errors import ConfigError
from ultrasnn.network import NetworkSpec
from ultrasnn.training import AdamState, TrainConfig, adam_step, cosine_lr, project_eps


def micro_blobs():
    train_ds = encoding.make_blobs(2, 100, 2, seed=1, spread=0.1)
    test_ds = encoding.make_blobs(2, 30, 2, seed=2, spread=0.1)
    return train_ds, test_ds


def micro_spec(kind="ultralif"):
    return NetworkSpec(input_width=2, classes=2, timesteps=1, kind=kind, hidden=(8,))


def micro_config(**kw):
    base = dict(epochs=5, lr0=0.05, batch=16, encode="analog", seed=42)
    base.update(kw)
    return TrainConfig(**base)


class TestCosineSchedule:
    def test_endpoints(self):
        assert cosine_lr(0, 100, 1e-3) == 1e-3
        assert cosine_lr(50, 100, 1e-3) == pytest.approx(5e-4, abs=1e-18)

    def test_last_epoch_value(self):
        # 0.5*(1+cos(0.99*pi)) = 2.4671981713422e-4
        assert cosine_lr(99, 100, 1e-3) == pytest.approx(2.4671981713422149e-7, rel=1e-12)

    def test_domain(self):
        with pytest.raises(ConfigError):
            cosine_lr(100, 100, 1e-3)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = {"w": ad.Tensor(np.array([1.0, -2.0]), requires_grad=True)}
        st = AdamState()
        for _ in range(10):
            adam_step(p, {"w": np.zeros(2)}, st, lr=1e-3)
        np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])

    def test_constant_gradient_update_magnitude_approaches_lr(self):
        # sign-like limit: |step| -> lr for any constant gradient scale
        p = {"w": ad.Tensor(np.zeros(3), requires_grad=True)}
        st = AdamState()
        g = {"w": np.array([0.3, -2.0, 0.01])}
        prev = p["w"].data.copy()
        for _ in range(3000):
            prev = p["w"].data.copy()
            adam_step(p, {"w": g["w"]}, st, lr=1e-3)
        np.testing.assert_allclose(np.abs(p["w"].data - prev), 1e-3, rtol=1e-2)

    def test_eps_projection(self):
        p = {"log_eps0": ad.Tensor(np.log(25.0), requires_grad=True),
             "log_eps1": ad.Tensor(np.log(0.05), requires_grad=True),
             "W0": ad.Tensor(np.array([7.0]), requires_grad=True)}
        project_eps(p, (0.1, 20.0))
        assert p["log_eps0"].data == pytest.approx(math.log(20.0))
        assert p["log_eps1"].data == pytest.approx(math.log(0.1))
        assert p["W0"].data[0] == 7.0


class TestTrainConfig:
    def test_text_round_trip(self):
        tc = TrainConfig(epochs=7, lr0=0.01, batch=32, seed=9, schedule="cosine",
                         lambda_sparsity=0.1, eps_mode="fixed:0.5", encode="analog",
                         gain=0.5)
        again = TrainConfig.from_text(tc.to_text())
        assert again == tc

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            TrainConfig(epochs=1, eps_mode="free")
        with pytest.raises(ConfigError):
            TrainConfig.from_text("epochs = 3\nnot_a_key = 1\n")

    def test_fixed_eps_parsing(self):
        tc = TrainConfig(epochs=1, eps_mode="fixed:2.0")
        assert not tc.eps_learnable
        assert tc.eps_init == 2.0


class TestTraining:
    def test_micro_run_reaches_full_train_accuracy(self):
        train_ds, test_ds = micro_blobs()
        res = training.train(micro_spec(), train_ds, test_ds, micro_config())
        assert training.train_accuracy(res.net, train_ds, micro_config()) == 1.0

    def test_first_step_decreases_first_batch_loss(self):
        train_ds, test_ds = micro_blobs()
        spec = micro_spec()
        tc = micro_config(lr0=1e-3, epochs=1)
        net = network.Network.build(spec, seed=tc.seed)
        x = encoding.analog_encode(train_ds.images[:16], 1)
        labels = train_ds.labels[:16]
        with ad.Tape() as tape:
            rec = net.forward(x, mode="train")
            l0 = network.loss(rec, labels)
            tape.backward(l0)
        grads = {k: tape.grad(p) for k, p in net.trainable().items()}
        adam_step(net.trainable(), grads, AdamState(), lr=1e-3)
        l1 = network.loss(net.forward(x), labels).item()
        assert l1 < l0.item()

    def test_same_seed_bitwise_identical_metrics(self):
        train_ds, test_ds = micro_blobs()
        tc = micro_config(epochs=3)
        a = training.train(micro_spec(), train_ds, test_ds, tc)
        b = training.train(micro_spec(), train_ds, test_ds, tc)
        assert a.metrics.to_csv_text() == b.metrics.to_csv_text()

    def test_sparsity_penalty_reduces_spike_rate(self):
        train_ds, test_ds = micro_blobs()
        base = training.train(micro_spec(), train_ds, test_ds,
                              micro_config(lambda_sparsity=0.0))
        dense = base.metrics.rows[-1]["spike_soft"]
        pen = training.train(micro_spec(), train_ds, test_ds,
                             micro_config(lambda_sparsity=0.1))
        sparse = pen.metrics.rows[-1]["spike_soft"]
        assert sparse < dense

    def test_eps_respects_clamp_every_epoch(self):
        train_ds, test_ds = micro_blobs()
        res = training.train(micro_spec(), train_ds, test_ds, micro_config())
        for row in res.metrics.rows:
            assert 0.1 <= row["eps_layer0"] <= 20.0

    def test_metrics_columns_contract(self):
        train_ds, test_ds = micro_blobs()
        res = training.train(micro_spec(), train_ds, test_ds, micro_config(epochs=1))
        assert res.metrics.columns == [
            "epoch", "loss", "acc", "spike_soft", "spike_hard", "energy",
            "eps_layer0", "lr",
        ]
        csv_text = res.metrics.to_csv_text()
        assert csv_text.splitlines()[0] == ",".join(res.metrics.columns)

    def test_baseline_metrics_have_no_eps_columns(self):
        train_ds, test_ds = micro_blobs()
        res = training.train(micro_spec("lif"), train_ds, test_ds,
                             micro_config(epochs=1))
        assert "eps_layer0" not in res.metrics.columns
        row = res.metrics.rows[-1]
        assert row["spike_soft"] == row["spike_hard"]

    def test_best_checkpoint_tracking(self):
        train_ds, test_ds = micro_blobs()
        res = training.train(micro_spec(), train_ds, test_ds, micro_config())
        accs = [r["acc"] for r in res.metrics.rows]
        assert res.best_acc == max(accs)
        assert res.best_epoch == accs.index(max(accs))
        best = res.best_network()
        assert set(best.params) == set(res.net.params)

    def test_width_mismatch_rejected(self):
        train_ds, test_ds = micro_blobs()
        spec = NetworkSpec(input_width=5, classes=2, timesteps=1, kind="ultralif")
        with pytest.raises(ConfigError):
            training.train(spec, train_ds, test_ds, micro_config())

    def test_rate_encoded_training_path(self):
        # image-like data: class k lights up pixel block k
        rng = np.random.default_rng(0)
        n, k = 240, 4
        labels = np.repeat(np.arange(3), n // 3)
        images = rng.uniform(0.0, 0.15, size=(n, 3 * k))
        for c in range(3):
            images[labels == c, c * k:(c + 1) * k] = 0.95
        ds = encoding.Dataset(images, labels)
        spec = NetworkSpec(input_width=3 * k, classes=3, timesteps=3,
                           kind="ultradlif", hidden=(16,))
        tc = TrainConfig(epochs=6, lr0=0.02, batch=32, seed=42, encode="rate")
        res = training.train(spec, ds, ds, tc)
        assert res.metrics.rows[-1]["acc"] >= 0.9

    def test_energy_column_consistency(self):
        train_ds, test_ds = micro_blobs()
        res = training.train(micro_spec(), train_ds, test_ds, micro_config(epochs=2))
        for row in res.metrics.rows:
            assert row["energy"] == network.energy(row["spike_soft"], 1)


class TestAblation:
    def test_fixed_and_learned_protocol(self):
        train_ds, test_ds = micro_blobs()
        runs = training.ablate_epsilon(
            micro_spec(), train_ds, test_ds, micro_config(epochs=3),
            fixed=(0.5, 2.0), learned=True,
        )
        assert [r["eps_mode"] for r in runs] == ["fixed:0.5", "fixed:2.0", "learned"]
        for r in runs:
            if r["eps_mode"].startswith("fixed:"):
                want = float(r["eps_mode"].split(":")[1])
                for eps_row in r["eps_trajectory"]:
                    assert eps_row[0] == pytest.approx(want, rel=1e-12)
            else:
                for eps_row in r["eps_trajectory"]:
                    assert 0.1 <= eps_row[0] <= 20.0

    def test_baseline_kind_rejected(self):
        train_ds, test_ds = micro_blobs()
        with pytest.raises(ConfigError):
            training.ablate_epsilon(micro_spec("lif"), train_ds, test_ds,
                                    micro_config())
