"""Binary checkpoint format for the three players and their class domains.

Layout (all little-endian):

    magic           4 bytes  "MGSG"
    version         u32      currently 1
    mode            u32      0 = mgsgan, 1 = acsgan, 2 = achsgan
    N, d, noise_dim u32 x 3
    network_count   u32
    per network:
        layer_count u32
        per layer:
            kind    u32      1 dense | 2 conv1d | 3 conv1d_transpose | 4 batchnorm
            n_ints  u32      followed by n_ints u32 shape/config integers
            n_arrs  u32      followed per array by u64 element count + f32 payload
    N domain boxes: per class, d f32 lower bounds then d f32 upper bounds

Networks appear in a fixed order per mode: the per-class generators (mgsgan)
or the single conditional generator, then the discriminator, then the
classifier (absent for achsgan, whose class head lives in the discriminator).
Weights are stored in f32, so the first save of an f64-trained model is a
quantization; save -> load -> save is bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError
from .layers import BatchNorm1d, Conv1d, ConvTranspose1d, Dense
from .models import (ArchConfig, ClassDomain, Classifier, Discriminator, Generator,
                     GeneratorBank, HeadClassifier, build_conditional_generator,
                     build_generator_bank)

_MAGIC = b"MGSG"
_VERSION = 1
_MODES = {"mgsgan": 0, "acsgan": 1, "achsgan": 2}
_MODE_NAMES = {v: k for k, v in _MODES.items()}

_KIND_DENSE = 1
_KIND_CONV = 2
_KIND_CONVT = 3
_KIND_BN = 4


@dataclass
class LoadedCheckpoint:
    mode: str
    n_classes: int
    d: int
    noise_dim: int
    generator: GeneratorBank | Generator
    discriminator: Discriminator
    classifier: Classifier | HeadClassifier
    domains: list[ClassDomain]


def _layer_record(layer):
    if isinstance(layer, Dense):
        return _KIND_DENSE, [layer.fan_in, layer.fan_out], [layer.weight.data, layer.bias.data]
    if isinstance(layer, ConvTranspose1d):
        c_in, c_out, k = layer.weight.shape
        out_len = layer.output_length if layer.output_length is not None else 0
        return (_KIND_CONVT, [c_in, c_out, k, layer.stride, layer.pad, out_len],
                [layer.weight.data, layer.bias.data])
    if isinstance(layer, Conv1d):
        c_out, c_in, k = layer.weight.shape
        return (_KIND_CONV, [c_in, c_out, k, layer.stride, layer.pad],
                [layer.weight.data, layer.bias.data])
    if isinstance(layer, BatchNorm1d):
        return _KIND_BN, [layer.gamma.size], layer.state_arrays()
    raise ContractError(f"cannot serialize layer of type {type(layer).__name__}")


def _write_network(buf: bytearray, net):
    layers = net.layers
    buf += struct.pack("<I", len(layers))
    for layer in layers:
        kind, ints, arrays = _layer_record(layer)
        buf += struct.pack("<I", kind)
        buf += struct.pack("<I", len(ints))
        buf += struct.pack(f"<{len(ints)}I", *ints)
        buf += struct.pack("<I", len(arrays))
        for arr in arrays:
            flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
            buf += struct.pack("<Q", flat.size)
            buf += flat.tobytes()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def ints(self, n: int):
        vals = struct.unpack_from(f"<{n}I", self.blob, self.off)
        self.off += 4 * n
        return vals

    def u64(self) -> int:
        (v,) = struct.unpack_from("<Q", self.blob, self.off)
        self.off += 8
        return v

    def f32(self, n: int) -> np.ndarray:
        arr = np.frombuffer(self.blob, dtype="<f4", count=n, offset=self.off)
        self.off += 4 * n
        return arr.astype(np.float64)


def _read_into_network(r: _Reader, net, what: str):
    (layer_count,) = r.ints(1)
    if layer_count != len(net.layers):
        raise DataError(f"checkpoint: {what} has {layer_count} layers, expected {len(net.layers)}")
    for i, layer in enumerate(net.layers):
        (kind,) = r.ints(1)
        (n_ints,) = r.ints(1)
        ints = list(r.ints(n_ints))
        (n_arrs,) = r.ints(1)
        arrays = []
        for _ in range(n_arrs):
            arrays.append(r.f32(r.u64()))
        want_kind, want_ints, want_arrays = _layer_record(layer)
        if kind != want_kind or ints != want_ints:
            raise DataError(
                f"checkpoint: {what} layer {i} mismatch (kind {kind}, ints {ints}; "
                f"expected kind {want_kind}, ints {want_ints})"
            )
        if [a.size for a in arrays] != [w.size for w in want_arrays]:
            raise DataError(f"checkpoint: {what} layer {i} payload size mismatch")
        if isinstance(layer, BatchNorm1d):
            layer.load_state_arrays([a.reshape(w.shape) for a, w in zip(arrays, layer.state_arrays())])
        else:
            layer.weight.data = arrays[0].reshape(layer.weight.shape)
            layer.bias.data = arrays[1].reshape(layer.bias.shape)


def _networks_of(mode: str, gen, disc, classifier):
    nets = list(gen.generators) if isinstance(gen, GeneratorBank) else [gen]
    nets.append(disc)
    if mode != "achsgan":
        nets.append(classifier)
    return nets


def save_checkpoint_bytes(mode: str, gen, disc, classifier,
                          domains: list[ClassDomain], noise_dim: int) -> bytes:
    if mode not in _MODES:
        raise ContractError(f"save_checkpoint: unknown mode {mode!r}")
    n = len(domains)
    d = disc.d
    buf = bytearray()
    buf += _MAGIC
    buf += struct.pack("<IIIII", _VERSION, _MODES[mode], n, d, noise_dim)
    nets = _networks_of(mode, gen, disc, classifier)
    buf += struct.pack("<I", len(nets))
    for net in nets:
        _write_network(buf, net)
    for dom in domains:
        buf += np.ascontiguousarray(dom.lower, dtype="<f4").tobytes()
        buf += np.ascontiguousarray(dom.upper, dtype="<f4").tobytes()
    return bytes(buf)


def load_checkpoint_bytes(blob: bytes, arch: ArchConfig | None = None) -> LoadedCheckpoint:
    if blob[:4] != _MAGIC:
        raise DataError("checkpoint: bad magic, not a checkpoint file")
    try:
        return _parse_checkpoint(blob, arch)
    except (struct.error, ValueError, ContractError) as exc:
        raise DataError(f"checkpoint: corrupt or truncated file ({exc})") from exc


def _parse_checkpoint(blob: bytes, arch: ArchConfig | None) -> LoadedCheckpoint:
    r = _Reader(blob)
    r.off = 4
    version, mode_tag, n, d, noise_dim = r.ints(5)
    if version != _VERSION:
        raise DataError(f"checkpoint: unsupported format version {version}")
    if mode_tag not in _MODE_NAMES:
        raise DataError(f"checkpoint: unknown mode tag {mode_tag}")
    mode = _MODE_NAMES[mode_tag]
    (net_count,) = r.ints(1)

    # Domains live at the tail; read them first so the bank can be built.
    tail = len(blob) - n * d * 2 * 4
    domains = []
    off = tail
    for j in range(n):
        lo = np.frombuffer(blob, dtype="<f4", count=d, offset=off).astype(np.float64)
        off += 4 * d
        hi = np.frombuffer(blob, dtype="<f4", count=d, offset=off).astype(np.float64)
        off += 4 * d
        domains.append(ClassDomain(j, lo, hi))

    rng = np.random.default_rng(0)
    if mode == "mgsgan":
        gen = build_generator_bank(n, d, noise_dim, domains, rng, arch)
        disc = Discriminator(d, rng, n_out=1, arch=arch)
        classifier = Classifier(d, n, rng, arch)
        nets = list(gen.generators) + [disc, classifier]
    elif mode == "acsgan":
        gen = build_conditional_generator(n, d, noise_dim, rng, arch)
        disc = Discriminator(d, rng, n_out=1, arch=arch)
        classifier = Classifier(d, n, rng, arch)
        nets = [gen, disc, classifier]
    else:
        gen = build_conditional_generator(n, d, noise_dim, rng, arch)
        disc = Discriminator(d, rng, n_out=n + 1, arch=arch)
        classifier = HeadClassifier(disc, n)
        nets = [gen, disc]
    if net_count != len(nets):
        raise DataError(f"checkpoint: {net_count} networks, expected {len(nets)} for {mode}")
    for i, net in enumerate(nets):
        _read_into_network(r, net, f"network {i}")
    if r.off != tail:
        raise DataError("checkpoint: payload size inconsistent with header")
    return LoadedCheckpoint(mode, n, d, noise_dim, gen, disc, classifier, domains)


def save_checkpoint(path, mode: str, gen, disc, classifier,
                    domains: list[ClassDomain], noise_dim: int):
    blob = save_checkpoint_bytes(mode, gen, disc, classifier, domains, noise_dim)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path, arch: ArchConfig | None = None) -> LoadedCheckpoint:
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read(), arch)
