"""The three players: class-conditional generator bank, discriminator, classifier.

Each generator in the bank serves exactly one class and its raw tanh output is
projected into that class's per-band box (computed from the class's training
samples) by clamping, so generated samples are contained in the class domain
by construction. The discriminator is a strided conv stack with a sigmoid
head; the classifier extracts features through parallel conv branches with
distinct kernel sizes and ends in an N-way softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DataError, ShapeError
from .layers import BatchNorm1d, Conv1d, ConvTranspose1d, Dense, Layer


@dataclass
class ArchConfig:
    """Network width/kernel defaults; fixed so checkpoints are reconstructable."""

    gen_channels: tuple = (12, 6)
    disc_channels: tuple = (8, 16)
    disc_kernel: int = 5
    cls_kernels: tuple = (3, 5, 7)
    cls_branch_channels: tuple = (6, 12)
    cls_stride: int = 2
    leaky_slope: float = 0.2


@dataclass
class ClassDomain:
    """Per-band box occupied by one class's training samples."""

    class_id: int
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape:
            raise ShapeError(
                f"ClassDomain: bound shapes differ, {self.lower.shape} and {self.upper.shape}"
            )
        if np.any(self.lower > self.upper):
            raise ContractError(f"ClassDomain: lower > upper for class {self.class_id}")

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Row-wise exact containment test for samples shaped (M, d) or (d,)."""
        x = np.atleast_2d(x)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)


def compute_class_domains(train, margin: float = 0.0) -> list[ClassDomain]:
    """Per-band min/max boxes per class, widened by margin * band range each side."""
    if margin < 0:
        raise ContractError(f"compute_class_domains: margin must be >= 0, got {margin}")
    domains = []
    for j in range(train.class_count):
        rows = train.samples[train.labels == j]
        if rows.shape[0] == 0:
            raise DataError(f"compute_class_domains: class {j} has no training samples")
        lo = rows.min(axis=0)
        hi = rows.max(axis=0)
        width = hi - lo
        domains.append(ClassDomain(j, lo - margin * width, hi + margin * width))
    return domains


def _upsample_plan(d: int) -> tuple[int, int]:
    """Lengths (L0, L1) so two stride-2 k=4 p=1 transpose convs reach exactly d."""
    if d < 4:
        raise ContractError(f"generator needs at least 4 bands, got {d}")
    l1 = d // 2
    l0 = l1 // 2
    return l0, l1


class Generator:
    """dense -> reshape -> transpose-conv stack -> tanh, output length d."""

    def __init__(self, in_dim: int, d: int, rng: np.random.Generator,
                 arch: ArchConfig | None = None):
        arch = arch or ArchConfig()
        c0, c1 = arch.gen_channels
        l0, l1 = _upsample_plan(d)
        self.in_dim = in_dim
        self.d = d
        self.c0 = c0
        self.l0 = l0
        self.fc = Dense(in_dim, c0 * l0, rng)
        self.up1 = ConvTranspose1d(c0, c1, 4, rng, stride=2, pad=1, output_length=l1)
        self.up2 = ConvTranspose1d(c1, 1, 4, rng, stride=2, pad=1, output_length=d)
        self.layers: list[Layer] = [self.fc, self.up1, self.up2]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def set_frozen(self, frozen: bool):
        for layer in self.layers:
            layer.frozen = frozen

    def forward(self, z: ad.Tensor) -> ad.Tensor:
        if z.ndim != 2 or z.shape[1] != self.in_dim:
            raise ShapeError(f"Generator: expected (B, {self.in_dim}) noise, got {z.shape}")
        h = ad.relu(self.fc.forward(z))
        h = ad.reshape(h, (z.shape[0], self.c0, self.l0))
        h = ad.relu(self.up1.forward(h))
        h = self.up2.forward(h)
        return ad.tanh(ad.reshape(h, (z.shape[0], self.d)))


class GeneratorBank:
    """One generator plus one domain box per class; selection is the conditioning."""

    def __init__(self, generators: list[Generator], domains: list[ClassDomain],
                 noise_dim: int):
        if len(generators) != len(domains):
            raise ContractError("GeneratorBank: need exactly one domain per generator")
        self.generators = generators
        self.domains = domains
        self.noise_dim = noise_dim

    @property
    def class_count(self) -> int:
        return len(self.generators)

    def parameters(self):
        return [p for g in self.generators for p in g.parameters()]

    def set_frozen(self, frozen: bool):
        for g in self.generators:
            g.set_frozen(frozen)

    def generate(self, z: ad.Tensor, class_id: int) -> ad.Tensor:
        """Raw tanh output of generator `class_id`, clamped into its box."""
        if not 0 <= class_id < self.class_count:
            raise ContractError(f"generate: class {class_id} out of range [0, {self.class_count})")
        dom = self.domains[class_id]
        raw = self.generators[class_id].forward(z)
        return ad.clamp(raw, dom.lower, dom.upper)

    def generate_batch(self, z: ad.Tensor, classes: np.ndarray) -> ad.Tensor:
        """Batch generation grouped by class, reassembled in input order."""
        classes = np.asarray(classes, dtype=np.int64)
        if z.shape[0] != classes.shape[0]:
            raise ShapeError(f"generate_batch: noise {z.shape} vs classes {classes.shape}")
        pieces = []
        order = []
        for j in range(self.class_count):
            idx = np.flatnonzero(classes == j)
            if idx.size == 0:
                continue
            pieces.append(self.generate(_take_rows(z, idx), j))
            order.append(idx)
        out = ad.concat(pieces, axis=0)
        perm = np.concatenate(order)
        return _scatter_rows(out, perm, z.shape[0])


def _take_rows(x: ad.Tensor, idx: np.ndarray) -> ad.Tensor:
    out = x.data[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return ad._make(out, (x,), vjp, "take_rows")


def _scatter_rows(x: ad.Tensor, perm: np.ndarray, n: int) -> ad.Tensor:
    """Inverse row permutation: out[perm[i]] = x[i]."""
    out = np.empty((n,) + x.shape[1:], dtype=x.data.dtype)
    out[perm] = x.data

    def vjp(g):
        return (g[perm],)

    return ad._make(out, (x,), vjp, "scatter_rows")


class Discriminator:
    """conv stack -> dense head; n_out=1 gives the real/fake sigmoid player."""

    def __init__(self, d: int, rng: np.random.Generator, n_out: int = 1,
                 arch: ArchConfig | None = None):
        arch = arch or ArchConfig()
        c1, c2 = arch.disc_channels
        k = arch.disc_kernel
        self.d = d
        self.n_out = n_out
        self.slope = arch.leaky_slope
        self.conv1 = Conv1d(1, c1, k, rng, stride=2, pad=k // 2)
        self.conv2 = Conv1d(c1, c2, k, rng, stride=2, pad=k // 2)
        self.bn = BatchNorm1d(c2)
        l1 = (d + 2 * (k // 2) - k) // 2 + 1
        l2 = (l1 + 2 * (k // 2) - k) // 2 + 1
        self.feat = c2 * l2
        self.head = Dense(self.feat, n_out, rng)
        self.layers: list[Layer] = [self.conv1, self.conv2, self.bn, self.head]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def set_frozen(self, frozen: bool):
        for layer in self.layers:
            layer.frozen = frozen

    def logits(self, x: ad.Tensor, train: bool) -> ad.Tensor:
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ShapeError(f"Discriminator: expected (B, {self.d}) input, got {x.shape}")
        h = ad.reshape(x, (x.shape[0], 1, self.d))
        h = ad.leaky_relu(self.conv1.forward(h), self.slope)
        h = ad.leaky_relu(self.bn.forward(self.conv2.forward(h), train), self.slope)
        h = ad.reshape(h, (x.shape[0], self.feat))
        return self.head.forward(h)

    def prob(self, x: ad.Tensor, train: bool) -> ad.Tensor:
        """P(real) per sample, shape (B,). Only valid for n_out == 1."""
        if self.n_out != 1:
            raise ContractError("prob: adversarial head needs n_out == 1")
        return ad.sigmoid(ad.reshape(self.logits(x, train), (x.shape[0],)))


def discriminate(disc: Discriminator, x: np.ndarray) -> float:
    """Probability that a single spectrum is real (eval mode)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (disc.d,):
        raise ShapeError(f"discriminate: expected shape ({disc.d},), got {x.shape}")
    return float(disc.prob(ad.const(x[None, :]), train=False).data[0])


class Classifier:
    """Parallel conv branches with distinct kernel sizes feeding an N-way softmax."""

    def __init__(self, d: int, n_classes: int, rng: np.random.Generator,
                 arch: ArchConfig | None = None):
        arch = arch or ArchConfig()
        self.d = d
        self.n_classes = n_classes
        self.slope = arch.leaky_slope
        cb1, cb2 = arch.cls_branch_channels
        s = arch.cls_stride
        self.branches = []
        feat = 0
        for k in arch.cls_kernels:
            p = (k - 1) // 2
            conv_a = Conv1d(1, cb1, k, rng, stride=s, pad=p)
            conv_b = Conv1d(cb1, cb2, k, rng, stride=s, pad=p)
            bn = BatchNorm1d(cb2)
            l1 = (d + 2 * p - k) // s + 1
            l2 = (l1 + 2 * p - k) // s + 1
            feat += cb2 * l2
            self.branches.append((conv_a, conv_b, bn, cb2 * l2))
        self.feat = feat
        self.head = Dense(feat, n_classes, rng)
        self.layers: list[Layer] = [
            layer for br in self.branches for layer in br[:3]
        ] + [self.head]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def set_frozen(self, frozen: bool):
        for layer in self.layers:
            layer.frozen = frozen

    def logits(self, x: ad.Tensor, train: bool) -> ad.Tensor:
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ShapeError(f"Classifier: expected (B, {self.d}) input, got {x.shape}")
        h0 = ad.reshape(x, (x.shape[0], 1, self.d))
        feats = []
        for conv_a, conv_b, bn, width in self.branches:
            h = ad.leaky_relu(conv_a.forward(h0), self.slope)
            h = ad.leaky_relu(bn.forward(conv_b.forward(h), train), self.slope)
            feats.append(ad.reshape(h, (x.shape[0], width)))
        return self.head.forward(ad.concat(feats, axis=1))

    def probs(self, x: ad.Tensor, train: bool) -> ad.Tensor:
        return ad.softmax(self.logits(x, train), axis=1)


def classify(cls: Classifier, x: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for a single spectrum (eval mode)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cls.d,):
        raise ShapeError(f"classify: expected shape ({cls.d},), got {x.shape}")
    return cls.probs(ad.const(x[None, :]), train=False).data[0]


class HeadClassifier:
    """Classifier facade over a multi-head discriminator's first N outputs."""

    def __init__(self, disc: Discriminator, n_classes: int):
        if disc.n_out != n_classes + 1:
            raise ContractError(
                f"HeadClassifier: discriminator has {disc.n_out} outputs, expected {n_classes + 1}"
            )
        self.disc = disc
        self.d = disc.d
        self.n_classes = n_classes

    def parameters(self):
        return self.disc.parameters()

    def probs(self, x: ad.Tensor, train: bool) -> ad.Tensor:
        logits = self.disc.logits(x, train)
        cls_logits = _take_cols(logits, np.arange(self.n_classes))
        return ad.softmax(cls_logits, axis=1)


def _take_cols(x: ad.Tensor, cols: np.ndarray) -> ad.Tensor:
    out = x.data[:, cols]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, cols] = g
        return (gx,)

    return ad._make(out, (x,), vjp, "take_cols")


def predict_labels(cls, samples: np.ndarray, batch: int = 256) -> np.ndarray:
    """Argmax class predictions in eval mode, batched over the sample matrix."""
    samples = np.asarray(samples, dtype=np.float64)
    preds = np.empty(samples.shape[0], dtype=np.int64)
    for start in range(0, samples.shape[0], batch):
        chunk = samples[start : start + batch]
        probs = cls.probs(ad.const(chunk), train=False)
        preds[start : start + chunk.shape[0]] = probs.data.argmax(axis=1)
    return preds


def build_generator_bank(n_classes: int, d: int, noise_dim: int,
                         domains: list[ClassDomain], rng: np.random.Generator,
                         arch: ArchConfig | None = None) -> GeneratorBank:
    gens = [Generator(noise_dim, d, rng, arch) for _ in range(n_classes)]
    return GeneratorBank(gens, domains, noise_dim)


def build_conditional_generator(n_classes: int, d: int, noise_dim: int,
                                rng: np.random.Generator,
                                arch: ArchConfig | None = None) -> Generator:
    """Single generator conditioned by concatenating a one-hot class code to z."""
    return Generator(noise_dim + n_classes, d, rng, arch)
