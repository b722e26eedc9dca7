"""End-to-end training loop: per batch, one D step, one C step, one G step.

Every update keeps the other two players frozen (their parameters become
constants for that forward pass, so no gradient can reach them), and the fake
batch fed to the D and C updates is detached from the generator graph. Noise,
class sampling, data order and initialization each draw from their own seeded
stream, so a run is bit-reproducible from (seed, config, dataset) and all
modes share the same data order for a given seed.

Losses are checked for finiteness by the engine on every op; a non-finite
value aborts the run with the epoch/batch context and the serialized
checkpoint of the last completed epoch.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint_bytes
from .data import SpectralDataset, class_priors
from .errors import ContractError, NumericError, TrainingAborted
from .layers import Adam
from .losses import ClassPriors, _safe_log, loss_c, loss_d, loss_g, reset_clamp_log
from .models import (ArchConfig, Classifier, Discriminator, HeadClassifier,
                     _take_cols, build_conditional_generator,
                     build_generator_bank, compute_class_domains)

MODES = ("mgsgan", "acsgan", "achsgan")
NOISE_DISTS = ("normal", "normal-shifted", "uniform")
PRIOR_MODES = ("empirical", "uniform")
GEN_LOSSES = ("non-saturating", "saturating")


@dataclass
class TrainConfig:
    epochs: int = 1500
    batch: int = 64
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    noise_dim: int = 100
    seed: int = 0
    domain_margin: float = 0.05
    prior_mode: str = "empirical"
    gen_loss: str = "non-saturating"
    mode: str = "mgsgan"
    noise_dist: str = "normal"
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1 or self.lr < 0 or self.noise_dim < 1:
            raise ContractError("TrainConfig: epochs/batch/lr/noise_dim out of range")
        if self.domain_margin < 0:
            raise ContractError("TrainConfig: domain_margin must be >= 0")
        if self.mode not in MODES:
            raise ContractError(f"TrainConfig: unknown mode {self.mode!r}")
        if self.prior_mode not in PRIOR_MODES:
            raise ContractError(f"TrainConfig: unknown prior_mode {self.prior_mode!r}")
        if self.gen_loss not in GEN_LOSSES:
            raise ContractError(f"TrainConfig: unknown gen_loss {self.gen_loss!r}")
        if self.noise_dist not in NOISE_DISTS:
            raise ContractError(f"TrainConfig: unknown noise_dist {self.noise_dist!r}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss_d: float
    loss_g: float
    loss_c: float
    d_real_mean: float
    d_fake_mean: float
    containment: list
    containment_overall: float
    data_order_digest: str
    wall_clock: float = 0.0

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "wall_clock"}
        return d


@dataclass
class RunLog:
    meta: dict
    records: list = field(default_factory=list)

    def append(self, rec: EpochRecord):
        if self.records and rec.epoch != self.records[-1].epoch + 1:
            raise ContractError("RunLog: epoch index must increase by one")
        self.records.append(rec)

    def to_jsonl(self) -> str:
        """Deterministic log: meta line, then one record per epoch (no timing)."""
        lines = [json.dumps({"meta": self.meta}, sort_keys=True)]
        lines += [json.dumps(r.as_dict(), sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def to_timing_json(self) -> str:
        return json.dumps({"wall_clock_per_epoch": [r.wall_clock for r in self.records]})


@dataclass
class TrainResult:
    mode: str
    generator: object
    discriminator: Discriminator
    classifier: Classifier | HeadClassifier
    domains: list
    priors: ClassPriors
    runlog: RunLog
    config: TrainConfig

    def checkpoint_bytes(self) -> bytes:
        return save_checkpoint_bytes(self.mode, self.generator, self.discriminator,
                                     self.classifier, self.domains, self.config.noise_dim)


def _dataset_digest(ds: SpectralDataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.samples, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())
    return h.hexdigest()[:16]


def _draw_noise(rng: np.random.Generator, n: int, dim: int, dist: str) -> np.ndarray:
    if dist == "normal":
        return rng.standard_normal((n, dim))
    if dist == "normal-shifted":
        return rng.normal(-1.0, 1.0, size=(n, dim))
    return rng.uniform(-1.0, 1.0, size=(n, dim))


def _onehot(classes: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((classes.shape[0], n))
    out[np.arange(classes.shape[0]), classes] = 1.0
    return out


class _Freezer:
    """Context manager freezing every player except the one being updated."""

    def __init__(self, players: dict, active: str):
        self.players = players
        self.active = active

    def __enter__(self):
        for name, player in self.players.items():
            player.set_frozen(name != self.active)

    def __exit__(self, *exc):
        for player in self.players.values():
            player.set_frozen(False)


def train(train_ds: SpectralDataset, config: TrainConfig,
          arch: ArchConfig | None = None, checkpoint_dir=None) -> TrainResult:
    """Run the configured game on a (normalized) training split.

    With `checkpoint_dir` set and config.checkpoint_interval > 0, a checkpoint
    file `epoch_<k>.mgsg` is written every interval epochs.
    """
    train_ds.require_all_classes()
    if config.batch > train_ds.size:
        raise ContractError(
            f"train: batch {config.batch} exceeds training-set size {train_ds.size}"
        )
    n, d = train_ds.class_count, train_ds.band_count
    reset_clamp_log()

    rng_init = np.random.default_rng([config.seed, 10])
    rng_shuffle = np.random.default_rng([config.seed, 11])
    rng_noise = np.random.default_rng([config.seed, 12])
    rng_class = np.random.default_rng([config.seed, 13])

    priors = class_priors(train_ds, config.prior_mode)
    domains = compute_class_domains(train_ds, config.domain_margin)

    if config.mode == "mgsgan":
        gen = build_generator_bank(n, d, config.noise_dim, domains, rng_init, arch)
        disc = Discriminator(d, rng_init, n_out=1, arch=arch)
        cls = Classifier(d, n, rng_init, arch)
    elif config.mode == "acsgan":
        gen = build_conditional_generator(n, d, config.noise_dim, rng_init, arch)
        disc = Discriminator(d, rng_init, n_out=1, arch=arch)
        cls = Classifier(d, n, rng_init, arch)
    else:
        gen = build_conditional_generator(n, d, config.noise_dim, rng_init, arch)
        disc = Discriminator(d, rng_init, n_out=n + 1, arch=arch)
        cls = HeadClassifier(disc, n)

    adam_g = Adam(gen.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    adam_d = Adam(disc.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    adam_c = None
    if config.mode != "achsgan":
        adam_c = Adam(cls.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)

    players = {"g": gen, "d": disc}
    if config.mode != "achsgan":
        players["c"] = cls

    runlog = RunLog(meta={
        "config": config.as_dict(),
        "dataset_digest": _dataset_digest(train_ds),
        "class_sizes": train_ds.class_sizes().tolist(),
    })
    result = TrainResult(config.mode, gen, disc, cls, domains, priors, runlog, config)

    n_batches = train_ds.size // config.batch
    last_good = None
    for epoch in range(config.epochs):
        tic = time.perf_counter()
        perm = rng_shuffle.permutation(train_ds.size)
        digest = hashlib.sha256(np.ascontiguousarray(perm, dtype="<i8").tobytes()).hexdigest()[:16]
        sums = {"loss_d": 0.0, "loss_g": 0.0, "loss_c": 0.0,
                "d_real": 0.0, "d_fake": 0.0}
        inside = np.zeros(n)
        made = np.zeros(n)
        for b in range(n_batches):
            idx = perm[b * config.batch : (b + 1) * config.batch]
            real_x = ad.const(train_ds.samples[idx])
            real_y = train_ds.labels[idx]
            z = _draw_noise(rng_noise, config.batch, config.noise_dim, config.noise_dist)
            classes = rng_class.choice(n, size=config.batch, p=priors.p_gen)
            try:
                stats = _train_batch(config, players, adam_d, adam_c, adam_g,
                                     priors, real_x, real_y, z, classes)
            except NumericError as exc:
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch}, batch {b}: {exc}",
                    epoch=epoch, batch=b, last_good=last_good,
                ) from exc
            for key in sums:
                sums[key] += stats[key]
            fake_vals = stats["fake_values"]
            for j in range(n):
                sel = classes == j
                made[j] += sel.sum()
                if sel.any():
                    inside[j] += int(domains[j].contains(fake_vals[sel]).sum())
        containment = [float(inside[j] / made[j]) if made[j] else None for j in range(n)]
        overall = float(inside.sum() / made.sum()) if made.sum() else 1.0
        runlog.append(EpochRecord(
            epoch=epoch,
            loss_d=sums["loss_d"] / max(n_batches, 1),
            loss_g=sums["loss_g"] / max(n_batches, 1),
            loss_c=sums["loss_c"] / max(n_batches, 1),
            d_real_mean=sums["d_real"] / max(n_batches, 1),
            d_fake_mean=sums["d_fake"] / max(n_batches, 1),
            containment=containment,
            containment_overall=overall,
            data_order_digest=digest,
            wall_clock=time.perf_counter() - tic,
        ))
        last_good = result.checkpoint_bytes()
        if (checkpoint_dir is not None and config.checkpoint_interval > 0
                and (epoch + 1) % config.checkpoint_interval == 0):
            path = Path(checkpoint_dir) / f"epoch_{epoch + 1}.mgsg"
            path.write_bytes(last_good)
    return result


def _generate(config: TrainConfig, gen, z: np.ndarray, classes: np.ndarray) -> ad.Tensor:
    if config.mode == "mgsgan":
        return gen.generate_batch(ad.const(z), classes)
    n_classes = gen.in_dim - config.noise_dim
    gen_in = np.concatenate([z, _onehot(classes, n_classes)], axis=1)
    return gen.forward(ad.const(gen_in))


def _train_batch(config, players, adam_d, adam_c, adam_g, priors,
                 real_x, real_y, z, classes) -> dict:
    gen, disc = players["g"], players["d"]
    fake = _generate(config, gen, z, classes)
    fake_det = fake.detach()
    stats = {"fake_values": fake.data}

    if config.mode == "achsgan":
        return _achsgan_steps(config, players, adam_d, adam_g, priors,
                              real_x, real_y, fake, fake_det, classes, stats)

    cls = players["c"]
    aux = {}
    with _Freezer(players, "d"):
        adam_d.zero_grad()
        ld = loss_d(disc, real_x, real_y, fake_det, classes, priors, train=True, stats=aux)
        ad.backward(ld)
        adam_d.step()
    with _Freezer(players, "c"):
        adam_c.zero_grad()
        lc = loss_c(cls, real_x, real_y, fake_det, classes, priors, train=True)
        ad.backward(lc)
        adam_c.step()
    with _Freezer(players, "g"):
        adam_g.zero_grad()
        lg = loss_g(disc, fake, classes, priors,
                    saturating=config.gen_loss == "saturating", train=True)
        ad.backward(lg)
        # generators whose class was not sampled this batch have a zero gradient
        for p in adam_g.params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        adam_g.step()

    stats.update(loss_d=ld.item(), loss_c=lc.item(), loss_g=lg.item(),
                 d_real=aux["d_real_mean"], d_fake=aux["d_fake_mean"])
    return stats


def _achsgan_steps(config, players, adam_d, adam_g, priors,
                   real_x, real_y, fake, fake_det, classes, stats) -> dict:
    """Two-player variant: the discriminator's N+1 outputs carry both games."""
    gen, disc = players["g"], players["d"]
    n = disc.n_out - 1
    w_r = ad.const(priors.p_real[real_y])
    w_g = ad.const(priors.p_gen[classes])
    w_cr = ad.const(priors.p_cls[real_y])
    w_cf = ad.const(priors.p_cls[classes])

    def heads(x):
        logits = disc.logits(x, train=True)
        adv = ad.sigmoid(ad.reshape(_take_cols(logits, np.array([n])), (x.shape[0],)))
        probs = ad.softmax(_take_cols(logits, np.arange(n)), axis=1)
        return adv, probs

    with _Freezer(players, "d"):
        adam_d.zero_grad()
        adv_r, probs_r = heads(real_x)
        adv_f, probs_f = heads(fake_det)
        ce_real = ad.mean_(ad.mul(w_cr, _safe_log(ad.gather(probs_r, real_y))))
        ce_fake = ad.mean_(ad.mul(w_cf, _safe_log(ad.gather(probs_f, classes))))
        ld = -(ad.mean_(ad.mul(w_r, _safe_log(adv_r)))
               + ad.mean_(ad.mul(w_g, _safe_log(1.0 - adv_f)))
               + ce_real + ce_fake)
        ad.backward(ld)
        adam_d.step()

    with _Freezer(players, "g"):
        adam_g.zero_grad()
        adv_fl, probs_fl = heads(fake)
        ce_fl = ad.mean_(ad.mul(w_cf, _safe_log(ad.gather(probs_fl, classes))))
        if config.gen_loss == "saturating":
            lg = ad.mean_(ad.mul(w_g, _safe_log(1.0 - adv_fl))) - ce_fl
        else:
            lg = -(ad.mean_(ad.mul(w_g, _safe_log(adv_fl))) + ce_fl)
        ad.backward(lg)
        adam_g.step()

    stats.update(loss_d=ld.item(), loss_g=lg.item(),
                 loss_c=float(-(ce_real.item() + ce_fake.item())),
                 d_real=float(adv_r.data.mean()), d_fake=float(adv_f.data.mean()))
    return stats


def train_baseline(train_ds: SpectralDataset, config: TrainConfig,
                   arch: ArchConfig | None = None) -> TrainResult:
    """Alias of `train`; the baseline is selected by config.mode."""
    return train(train_ds, config, arch)
