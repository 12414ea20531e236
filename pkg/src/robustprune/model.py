"""Network architectures, the masked-weight mechanism, and checkpoints.

A Network is a flat stack of layers (dense / conv2d / relu / maxpool /
flatten / softmax-output marker). A MaskedModel pairs a frozen copy of a
pretrained network with one trainable relaxed mask value in [0, 1] per
weight; its forward pass uses effective weights theta * b. Binarization
turns the relaxed mask into a {0,1} mask retaining exactly k' entries.

Checkpoints use a small binary container: magic "DWD1", a JSON metadata
header, named float64 tensor records, and a trailing CRC32.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ContractError, ShapeError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"DWD1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a feed-forward stack; fields used depend on kind."""

    kind: str  # dense | conv2d | relu | maxpool | flatten | softmax-output
    in_size: int = 0
    out_size: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    pool: int = 2

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "dense":
            d.update(in_size=self.in_size, out_size=self.out_size)
        elif self.kind == "conv2d":
            d.update(in_channels=self.in_channels, out_channels=self.out_channels,
                     kernel=self.kernel)
        elif self.kind == "maxpool":
            d.update(pool=self.pool)
        return d

    @staticmethod
    def from_dict(d):
        return LayerSpec(**d)


def mlp_arch(input_size=784, hidden=(256, 128), classes=10):
    """Dense relu stack; accepts flat or image-shaped input via flatten."""
    layers = [LayerSpec("flatten")]
    prev = input_size
    for width in hidden:
        layers.append(LayerSpec("dense", in_size=prev, out_size=width))
        layers.append(LayerSpec("relu"))
        prev = width
    layers.append(LayerSpec("dense", in_size=prev, out_size=classes))
    layers.append(LayerSpec("softmax-output"))
    return layers


def cnn_arch(input_hw=(28, 28), in_channels=1, channels=(8, 16), kernel=3,
             pool=2, classes=10):
    """Small conv-pool stack followed by a dense classifier head."""
    layers = []
    h, w = input_hw
    c = in_channels
    for out_c in channels:
        layers.append(LayerSpec("conv2d", in_channels=c, out_channels=out_c,
                                kernel=kernel))
        layers.append(LayerSpec("relu"))
        layers.append(LayerSpec("maxpool", pool=pool))
        h = (h - kernel + 1) // pool
        w = (w - kernel + 1) // pool
        c = out_c
    layers.append(LayerSpec("flatten"))
    layers.append(LayerSpec("dense", in_size=c * h * w, out_size=classes))
    layers.append(LayerSpec("softmax-output"))
    return layers


def shape_trace(specs, input_shape):
    """Per-layer input shapes (excluding the batch axis); validates conformance."""
    shape = tuple(input_shape)
    trace = [shape]
    for spec in specs:
        if spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "dense":
            if shape != (spec.in_size,):
                raise ShapeError(f"dense expects ({spec.in_size},), got {shape}")
            shape = (spec.out_size,)
        elif spec.kind == "conv2d":
            c, h, w = shape
            if c != spec.in_channels:
                raise ShapeError(f"conv2d expects {spec.in_channels} channels, got {c}")
            shape = (spec.out_channels, h - spec.kernel + 1, w - spec.kernel + 1)
        elif spec.kind == "maxpool":
            c, h, w = shape
            shape = (c, h // spec.pool, w // spec.pool)
        elif spec.kind in ("relu", "softmax-output"):
            pass
        else:
            raise ContractError(f"unknown layer kind {spec.kind!r}")
        trace.append(shape)
    return trace


def _init_weight(spec, rng):
    if spec.kind == "dense":
        fan_in = spec.in_size
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(spec.in_size, spec.out_size))
        b = np.zeros(spec.out_size)
    else:  # conv2d
        fan_in = spec.in_channels * spec.kernel * spec.kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                       size=(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel))
        b = np.zeros(spec.out_channels)
    return w, b


def _run_layers(specs, weights, biases, x):
    """Shared forward walk; `weights` holds one Tensor per weighted layer."""
    out = x
    wi = 0
    for spec in specs:
        if spec.kind == "flatten":
            n = out.shape[0]
            out = out.reshape((n, out.size // n))
        elif spec.kind == "dense":
            out = T.add(T.matmul(out, weights[wi]), biases[wi])
            wi += 1
        elif spec.kind == "conv2d":
            out = T.add(T.conv2d(out, weights[wi]), biases[wi])
            wi += 1
        elif spec.kind == "relu":
            out = T.relu(out)
        elif spec.kind == "maxpool":
            out = T.maxpool2d(out, spec.pool)
        elif spec.kind == "softmax-output":
            pass  # marker: forward returns logits
        else:
            raise ContractError(f"unknown layer kind {spec.kind!r}")
    return out


def _infer_input_shape(specs):
    for spec in specs:
        if spec.kind == "dense":
            return (spec.in_size,)
        if spec.kind == "conv2d":
            return None  # spatial extent is not recoverable from specs alone
    return None


class Network:
    """Plain trainable network over a LayerSpec stack."""

    def __init__(self, specs, seed=0, input_shape=None):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape) if input_shape else _infer_input_shape(specs)
        self.weighted = [s for s in self.specs if s.kind in ("dense", "conv2d")]
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for spec in self.weighted:
            w, b = _init_weight(spec, rng)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(b, requires_grad=True))

    @property
    def class_count(self):
        return self.weighted[-1].out_size

    @property
    def weight_count(self):
        return sum(w.size for w in self.weights)

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        return _run_layers(self.specs, self.weights, self.biases, x)

    def parameters(self):
        return list(self.weights) + list(self.biases)

    def copy(self) -> "Network":
        dup = Network.__new__(Network)
        dup.specs = list(self.specs)
        dup.input_shape = self.input_shape
        dup.weighted = list(self.weighted)
        dup.weights = [Tensor(w.data.copy(), requires_grad=w.requires_grad)
                       for w in self.weights]
        dup.biases = [Tensor(b.data.copy(), requires_grad=b.requires_grad)
                      for b in self.biases]
        return dup


class MaskedModel:
    """Frozen pretrained weights paired with a trainable relaxed mask.

    Owns a private copy of the network: its weights never receive
    gradients, while each weight gets a mask value initialized at 1.
    Biases stay trainable unless trainable_biases is False.
    """

    def __init__(self, network: Network, trainable_biases=True):
        self.network = network.copy()
        for w in self.network.weights:
            w.requires_grad = False
        for b in self.network.biases:
            b.requires_grad = trainable_biases
        self.masks = [Tensor(np.ones(w.shape), requires_grad=True)
                      for w in self.network.weights]
        self.trainable_biases = trainable_biases

    @property
    def k(self):
        return sum(m.size for m in self.masks)

    @property
    def class_count(self):
        return self.network.class_count

    @property
    def specs(self):
        return self.network.specs

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        effective = [T.mul(w, m) for w, m in zip(self.network.weights, self.masks)]
        return _run_layers(self.network.specs, effective, self.network.biases, x)

    def trainable_params(self):
        params = list(self.masks)
        if self.trainable_biases:
            params += list(self.network.biases)
        return params

    def clamp_masks(self):
        """Project relaxed mask values back into [0, 1] after an optimizer step."""
        for m in self.masks:
            np.clip(m.data, 0.0, 1.0, out=m.data)

    def mask_vector(self) -> np.ndarray:
        return np.concatenate([m.data.ravel() for m in self.masks])


@dataclass
class BinaryMask:
    """Per-layer {0,1} masks aligned with a network's weight tensors."""

    bits: list = field(default_factory=list)  # list of float64 0/1 arrays

    @property
    def retained_count(self):
        return int(sum(b.sum() for b in self.bits))

    @property
    def total(self):
        return int(sum(b.size for b in self.bits))

    def flat(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self.bits])

    @staticmethod
    def from_flat(flat, shapes) -> "BinaryMask":
        bits = []
        start = 0
        for shape in shapes:
            n = int(np.prod(shape))
            bits.append(np.asarray(flat[start:start + n], dtype=np.float64).reshape(shape))
            start += n
        return BinaryMask(bits)

    def apply_to(self, network: Network) -> Network:
        """Return a copy of `network` with pruned weights zeroed."""
        pruned = network.copy()
        for w, b in zip(pruned.weights, self.bits):
            w.data *= b
        return pruned


def binarize_mask(model: MaskedModel, k_prime: int) -> BinaryMask:
    """Retain the k' largest mask entries by |b|; ties keep the lower flat index."""
    k = model.k
    if not 0 < k_prime <= k:
        raise ContractError(f"k_prime must be in [1, {k}], got {k_prime}")
    flat = model.mask_vector()
    order = np.argsort(-np.abs(flat), kind="stable")
    bits = np.zeros(k)
    bits[order[:k_prime]] = 1.0
    return BinaryMask.from_flat(bits, [m.shape for m in model.masks])


def softmax_at_temperature(logits: Tensor, temperature: float) -> Tensor:
    """Softmax of logits / T; T=1 is the ordinary softmax."""
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    return T.softmax(T.mul(logits, Tensor(1.0 / temperature)))


# ---------------------------------------------------------------------------
# Checkpoint container


def write_container(path, tensors: dict, metadata: dict):
    """Write named float64 tensors plus JSON metadata; CRC32 trailer."""
    meta = dict(metadata)
    meta["format_version"] = CHECKPOINT_VERSION
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", len(meta_bytes))
    buf += meta_bytes
    buf += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        name_b = name.encode("utf-8")
        buf += struct.pack("<H", len(name_b))
        buf += name_b
        buf += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<I", dim)
        buf += arr.astype("<f8").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def read_container(path):
    """Read a container back; raises CheckpointError on any corruption."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checksum mismatch")
    body = raw[:-4]
    try:
        pos = 4
        (meta_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        metadata = json.loads(body[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(body, dtype="<f8", count=n, offset=pos)
            pos += 8 * n
            tensors[name] = arr.reshape(shape).copy()
        if pos != len(body):
            raise CheckpointError("trailing bytes after tensor records")
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"truncated or malformed container: {exc}") from exc
    if metadata.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"format version {metadata.get('format_version')} not supported")
    return tensors, metadata


def save_checkpoint(path, network: Network, metadata: dict, bits: BinaryMask = None):
    """Persist a network (and optionally its binary mask) with metadata.

    Metadata should carry: stage (pretrained | pruned | fine-tuned), seed,
    and prune_target when applicable; the architecture is stored alongside.
    """
    meta = dict(metadata)
    meta["arch"] = [s.to_dict() for s in network.specs]
    if network.input_shape:
        meta["input_shape"] = list(network.input_shape)
    tensors = {}
    for i, (w, b) in enumerate(zip(network.weights, network.biases)):
        tensors[f"w{i}"] = w.data
        tensors[f"b{i}"] = b.data
    if bits is not None:
        for i, arr in enumerate(bits.bits):
            tensors[f"bits{i}"] = arr
    write_container(path, tensors, meta)


def load_checkpoint(path):
    """Inverse of save_checkpoint: returns (network, bits-or-None, metadata)."""
    tensors, metadata = read_container(path)
    specs = [LayerSpec.from_dict(d) for d in metadata["arch"]]
    network = Network(specs, seed=0, input_shape=metadata.get("input_shape"))
    for i in range(len(network.weights)):
        if f"w{i}" not in tensors:
            raise CheckpointError(f"missing tensor w{i}")
        network.weights[i].data = tensors[f"w{i}"]
        network.biases[i].data = tensors[f"b{i}"]
    bits = None
    if "bits0" in tensors:
        arrs = [tensors[f"bits{i}"] for i in range(len(network.weights))]
        bits = BinaryMask(arrs)
    return network, bits, metadata
