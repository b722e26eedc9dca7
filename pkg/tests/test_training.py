"""Training-engine contracts: update order, isolation, determinism, abort."""

import numpy as np
import pytest

import mgsgan.training as training
from mgsgan import autodiff as ad
from mgsgan.data import SpectralDataset, class_priors
from mgsgan.errors import ContractError, NumericError, TrainingAborted
from mgsgan.layers import Adam
from mgsgan.losses import loss_c, loss_d, loss_g
from mgsgan.models import (Classifier, Discriminator, build_generator_bank,
                           compute_class_domains)
from mgsgan.training import TrainConfig, train, train_baseline
from mgsgan.checkpoint import load_checkpoint_bytes


def _toy_ds(n_per=16, d=4, n_classes=2, spread=0.02, seed=321):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-0.7, 0.7, size=(n_classes, d))
    rows, labels = [], []
    for j in range(n_classes):
        rows.append(centers[j] + rng.uniform(-spread, spread, size=(n_per, d)))
        labels.append(np.full(n_per, j, dtype=np.int64))
    return SpectralDataset(np.concatenate(rows), np.concatenate(labels), n_classes)


def _params_bytes(net):
    return b"".join(p.data.tobytes() for p in net.parameters())


def test_zero_epochs_returns_initialized_networks_and_empty_log():
    ds = _toy_ds()
    res = train(ds, TrainConfig(epochs=0, batch=8, seed=3))
    assert res.runlog.records == []
    assert res.discriminator.d == 4
    assert len(res.generator.generators) == 2


def test_lr_zero_leaves_parameters_bit_identical():
    ds = _toy_ds()
    cfg0 = TrainConfig(epochs=0, batch=32, seed=5, lr=0.0)
    init = train(ds, cfg0)
    cfg1 = TrainConfig(epochs=1, batch=32, seed=5, lr=0.0)
    stepped = train(ds, cfg1)
    for a, b in [(init.generator, stepped.generator),
                 (init.discriminator, stepped.discriminator),
                 (init.classifier, stepped.classifier)]:
        assert _params_bytes(a) == _params_bytes(b)


def test_batch_larger_than_dataset_rejected():
    ds = _toy_ds(n_per=4)
    with pytest.raises(ContractError):
        train(ds, TrainConfig(epochs=1, batch=64, seed=0))


def test_frozen_player_contract_each_step():
    rng = np.random.default_rng(9)
    ds = _toy_ds(n_per=12, d=8)
    priors = class_priors(ds)
    domains = compute_class_domains(ds, 0.05)
    bank = build_generator_bank(2, 8, 6, domains, rng)
    disc = Discriminator(8, rng)
    cls = Classifier(8, 2, rng)
    adam = {"g": Adam(bank.parameters(), lr=0.01),
            "d": Adam(disc.parameters(), lr=0.01),
            "c": Adam(cls.parameters(), lr=0.01)}
    players = {"g": bank, "d": disc, "c": cls}
    real_x = ad.const(ds.samples[:8])
    real_y = ds.labels[:8]
    z = ad.const(rng.standard_normal((8, 6)))
    classes = rng.integers(0, 2, size=8)

    def snap():
        return {k: _params_bytes(v) for k, v in players.items()}

    # D step: theta_g, theta_c bit-identical before and after
    before = snap()
    fake = bank.generate_batch(z, classes)
    with training._Freezer(players, "d"):
        adam["d"].zero_grad()
        ad.backward(loss_d(disc, real_x, real_y, fake.detach(), classes, priors))
        adam["d"].step()
    after = snap()
    assert after["g"] == before["g"] and after["c"] == before["c"]
    assert after["d"] != before["d"]

    # C step
    before = after
    with training._Freezer(players, "c"):
        adam["c"].zero_grad()
        ad.backward(loss_c(cls, real_x, real_y, fake.detach(), classes, priors))
        adam["c"].step()
    after = snap()
    assert after["g"] == before["g"] and after["d"] == before["d"]
    assert after["c"] != before["c"]

    # G step
    before = after
    fake = bank.generate_batch(z, classes)
    with training._Freezer(players, "g"):
        adam["g"].zero_grad()
        ad.backward(loss_g(disc, fake, classes, priors))
        for p in adam["g"].params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        adam["g"].step()
    after = snap()
    assert after["d"] == before["d"] and after["c"] == before["c"]
    assert after["g"] != before["g"]


def test_training_determinism_bit_identical():
    ds = _toy_ds(n_per=16, d=8, n_classes=3)
    cfg = TrainConfig(epochs=3, batch=16, seed=11)
    r1 = train(ds, cfg)
    r2 = train(ds, TrainConfig(epochs=3, batch=16, seed=11))
    assert r1.runlog.to_jsonl() == r2.runlog.to_jsonl()
    assert r1.checkpoint_bytes() == r2.checkpoint_bytes()
    r3 = train(ds, TrainConfig(epochs=3, batch=16, seed=12))
    assert r1.checkpoint_bytes() != r3.checkpoint_bytes()


def test_mgsgan_containment_telemetry_is_exact():
    ds = _toy_ds(n_per=20, d=8, n_classes=2)
    res = train(ds, TrainConfig(epochs=4, batch=16, seed=2, mode="mgsgan"))
    for rec in res.runlog.records:
        assert rec.containment_overall == 1.0
        for c in rec.containment:
            assert c is None or c == 1.0


def test_acsgan_single_class_losses_reduce_to_vanilla_gan():
    # with N = 1 every prior weight is 1, so the game losses equal the plain
    # unweighted two-player forms on the same fixed batches
    rng = np.random.default_rng(20)
    ds = _toy_ds(n_per=16, d=8, n_classes=1)
    priors = class_priors(ds)
    np.testing.assert_array_equal(priors.p_real, [1.0])
    disc = Discriminator(8, rng)
    real_x = ad.const(ds.samples[:8])
    fake_x = ad.const(rng.uniform(-1, 1, size=(8, 8)))
    y = np.zeros(8, dtype=int)
    ld = loss_d(disc, real_x, y, fake_x, y, priors, train=False)
    d_real = disc.prob(real_x, False).data
    d_fake = disc.prob(fake_x, False).data
    vanilla = -(np.mean(np.log(d_real)) + np.mean(np.log(1.0 - d_fake)))
    assert abs(ld.item() - vanilla) < 1e-10
    lg = loss_g(disc, fake_x, y, priors, train=False)
    assert abs(lg.item() - -np.mean(np.log(d_fake))) < 1e-10


def test_achsgan_discriminator_has_n_plus_one_outputs():
    ds = _toy_ds(n_per=16, d=8, n_classes=3)
    res = train(ds, TrainConfig(epochs=1, batch=16, seed=0, mode="achsgan"))
    assert res.discriminator.n_out == 4
    logits = res.discriminator.logits(ad.const(ds.samples[:5]), train=False)
    assert logits.shape == (5, 4)
    probs = res.classifier.probs(ad.const(ds.samples[:5]), train=False)
    assert probs.shape == (5, 3)
    np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-9)


def test_all_modes_share_data_order_for_a_seed():
    ds = _toy_ds(n_per=16, d=8, n_classes=2)
    digests = {}
    for mode in ("mgsgan", "acsgan", "achsgan"):
        res = train(ds, TrainConfig(epochs=3, batch=16, seed=7, mode=mode))
        digests[mode] = [r.data_order_digest for r in res.runlog.records]
    assert digests["mgsgan"] == digests["acsgan"] == digests["achsgan"]


def test_train_baseline_is_mode_dispatch():
    ds = _toy_ds(n_per=8, d=8)
    res = train_baseline(ds, TrainConfig(epochs=1, batch=8, seed=1, mode="acsgan"))
    assert res.mode == "acsgan"


def test_nonfinite_loss_aborts_with_context_and_checkpoint(monkeypatch):
    ds = _toy_ds(n_per=16, d=8, n_classes=2)
    calls = {"n": 0}
    real_loss_d = training.loss_d

    def poisoned(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 3:  # first batch of the second epoch (2 batches/epoch)
            raise NumericError("poisoned loss")
        return real_loss_d(*args, **kwargs)

    monkeypatch.setattr(training, "loss_d", poisoned)
    with pytest.raises(TrainingAborted) as err:
        train(ds, TrainConfig(epochs=4, batch=16, seed=1, mode="mgsgan"))
    abort = err.value
    assert abort.epoch == 1 and abort.batch == 0
    assert abort.last_good is not None
    restored = load_checkpoint_bytes(abort.last_good)
    assert restored.mode == "mgsgan" and restored.d == 8


def test_runlog_jsonl_excludes_wall_clock():
    ds = _toy_ds(n_per=8, d=8)
    res = train(ds, TrainConfig(epochs=2, batch=8, seed=0))
    assert "wall_clock" not in res.runlog.to_jsonl()
    assert "wall_clock_per_epoch" in res.runlog.to_timing_json()


def test_uniform_prior_mode_uses_uniform_weights():
    ds = _toy_ds(n_per=16, d=8, n_classes=2)
    res = train(ds, TrainConfig(epochs=1, batch=16, seed=0, prior_mode="uniform"))
    np.testing.assert_allclose(res.priors.p_gen, [0.5, 0.5], atol=1e-15)


def test_interval_checkpoints_written(tmp_path):
    ds = _toy_ds(n_per=16, d=8)
    cfg = TrainConfig(epochs=5, batch=16, seed=0, checkpoint_interval=2)
    train(ds, cfg, checkpoint_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.glob("epoch_*.mgsg"))
    assert names == ["epoch_2.mgsg", "epoch_4.mgsg"]
    restored = load_checkpoint_bytes((tmp_path / "epoch_4.mgsg").read_bytes())
    assert restored.d == 8


@pytest.mark.parametrize("dist", ["normal", "normal-shifted", "uniform"])
def test_noise_distributions_run_and_differ(dist):
    ds = _toy_ds(n_per=16, d=8)
    res = train(ds, TrainConfig(epochs=1, batch=16, seed=0, noise_dist=dist))
    assert len(res.runlog.records) == 1


def test_noise_dist_changes_outputs():
    ds = _toy_ds(n_per=16, d=8)
    outs = {}
    for dist in ("normal", "uniform"):
        res = train(ds, TrainConfig(epochs=1, batch=16, seed=0, noise_dist=dist))
        outs[dist] = res.checkpoint_bytes()
    assert outs["normal"] != outs["uniform"]


@pytest.mark.slow
def test_toy_equilibrium_discriminator_near_half():
    # tight per-class clusters: the clamped generator output matches the real
    # distribution almost immediately, so D hovers at its 0.5 equilibrium
    ds = _toy_ds(n_per=16, d=4, n_classes=2, spread=0.02, seed=321)
    finals_real, finals_fake = [], []
    for seed in range(5):
        res = train(ds, TrainConfig(epochs=500, batch=16, seed=seed, mode="mgsgan"))
        rec = res.runlog.records[-1]
        finals_real.append(rec.d_real_mean)
        finals_fake.append(rec.d_fake_mean)
    assert abs(np.median(finals_real) - 0.5) < 0.1
    assert abs(np.median(finals_fake) - 0.5) < 0.1
