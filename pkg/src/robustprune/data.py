"""Dataset ingestion, synthetic corpora, splitting, and batch iteration.

Supports the big-endian IDX container (images magic 0x00000803, labels
0x00000801, optionally gzip-compressed), two synthetic 2-D sets for tiny
exhaustive experiments, and a procedural 28x28 ten-class digit corpus that
stands in for handwritten digits when no IDX files are on disk. Inputs are
always normalized into [0, 1] with the applied transform recorded.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataFormatError
from .model import read_container, write_container

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, features) or (N, C, H, W), float64 in [0, 1]
    labels: np.ndarray  # (N,) class indices
    class_count: int
    split: str = "full"
    norm: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ContractError("inputs and labels lengths differ")
        if self.inputs.shape[0] == 0:
            raise ContractError("dataset must be nonempty")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ContractError("labels out of class range")

    @property
    def n(self):
        return self.inputs.shape[0]

    def subset(self, indices, split_tag=None) -> "Dataset":
        return Dataset(self.inputs[indices], self.labels[indices],
                       self.class_count, split_tag or self.split, dict(self.norm))

    def batches(self, batch_size: int, rng=None, shuffle: bool = True):
        """Yield (x, y) batches covering every index exactly once."""
        order = np.arange(self.n)
        if shuffle:
            if rng is None:
                rng = np.random.default_rng(0)
            rng.shuffle(order)
        for lo in range(0, self.n, batch_size):
            idx = order[lo:lo + batch_size]
            yield self.inputs[idx], self.labels[idx]


def _read_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        raw = fh.read()
    if head == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(images_path, labels_path) -> Dataset:
    """Decode an IDX image/label file pair into a normalized dataset."""
    img_raw = _read_maybe_gzip(images_path)
    lab_raw = _read_maybe_gzip(labels_path)
    if len(img_raw) < 16:
        raise DataFormatError("image file truncated before header")
    magic, n_img, rows, cols = struct.unpack(">IIII", img_raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"bad image magic 0x{magic:08x}")
    if len(img_raw) != 16 + n_img * rows * cols:
        raise DataFormatError("image payload size mismatch")
    if len(lab_raw) < 8:
        raise DataFormatError("label file truncated before header")
    magic, n_lab = struct.unpack(">II", lab_raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"bad label magic 0x{magic:08x}")
    if len(lab_raw) != 8 + n_lab:
        raise DataFormatError("label payload size mismatch")
    if n_img != n_lab:
        raise DataFormatError(f"{n_img} images but {n_lab} labels")
    pixels = np.frombuffer(img_raw, dtype=np.uint8, offset=16)
    images = pixels.reshape(n_img, 1, rows, cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab_raw, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset(images, labels, class_count=int(labels.max()) + 1,
                   norm={"scale": 255.0, "offset": 0.0})


def _minmax_normalize(x):
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (x - lo) / span, {"offset": lo.tolist(), "scale": span.tolist()}


def _balanced_counts(n, classes):
    counts = np.full(classes, n // classes)
    counts[: n % classes] += 1
    return counts


def make_synthetic(kind: str, n: int, noise: float, seed: int,
                   classes: int = None) -> Dataset:
    """Deterministic 2-D toy sets: 'two-moons' or 'gaussian-blobs'."""
    if n < 2:
        raise ContractError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    if kind == "two-moons":
        counts = _balanced_counts(n, 2)
        t0 = rng.uniform(0, np.pi, counts[0])
        t1 = rng.uniform(0, np.pi, counts[1])
        upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
        lower = np.stack([1.0 - np.cos(t1), -np.sin(t1) + 0.5], axis=1)
        x = np.concatenate([upper, lower])
        y = np.concatenate([np.zeros(counts[0]), np.ones(counts[1])])
        x += rng.normal(0.0, noise, size=x.shape) if noise > 0 else 0.0
        k = 2
    elif kind == "gaussian-blobs":
        k = classes or 3
        counts = _balanced_counts(n, k)
        angles = 2 * np.pi * np.arange(k) / k
        centers = np.stack([np.cos(angles), np.sin(angles)], axis=1) * 2.0
        xs, ys = [], []
        for c in range(k):
            pts = centers[c] + rng.normal(0.0, max(noise, 1e-12), size=(counts[c], 2))
            xs.append(pts)
            ys.append(np.full(counts[c], c))
        x = np.concatenate(xs)
        y = np.concatenate(ys)
    else:
        raise ContractError(f"unknown synthetic kind {kind!r}")
    x, norm = _minmax_normalize(x)
    order = rng.permutation(len(x))
    return Dataset(x[order], y[order].astype(np.int64), class_count=k, norm=norm)


# Seven-segment glyphs for the procedural digit corpus. Segment letters:
# A top, B top-right, C bottom-right, D bottom, E bottom-left, F top-left,
# G middle.
_SEGMENTS = {
    "A": (slice(4, 6), slice(8, 20)),
    "G": (slice(13, 15), slice(8, 20)),
    "D": (slice(22, 24), slice(8, 20)),
    "F": (slice(4, 15), slice(8, 10)),
    "B": (slice(4, 15), slice(18, 20)),
    "E": (slice(13, 24), slice(8, 10)),
    "C": (slice(13, 24), slice(18, 20)),
}
_DIGIT_SEGMENTS = [
    "ABCDEF", "BC", "ABGED", "ABGCD", "FGBC",
    "AFGCD", "AFGEDC", "ABC", "ABCDEFG", "ABCDFG",
]


def digit_templates() -> np.ndarray:
    """The ten clean 28x28 class templates."""
    templates = np.zeros((10, 28, 28))
    for digit, segs in enumerate(_DIGIT_SEGMENTS):
        for s in segs:
            rs, cs = _SEGMENTS[s]
            templates[digit, rs, cs] = 1.0
    return templates


def make_digits(n: int, seed: int, noise: float = 0.2, jitter: int = 3,
                segment_fade: float = 0.4, ambiguous_fraction: float = 0.15,
                tag_fraction: float = 0.10, tag_intensity: float = 0.55) -> Dataset:
    """Procedural ten-class 28x28 digit images: jittered noisy glyphs.

    Stands in for handwritten-digit IDX files in hermetic environments;
    same geometry (N, 1, 28, 28), balanced classes, pixels in [0, 1].
    Three sample flavors give the corpus a real accuracy/robustness
    trade-off: plain glyphs (stroke intensity varies per sample), ambiguous
    glyphs (one stroke at the noise floor, so faint evidence decides), and
    tag-only samples (no glyph at all, just a small class-coded patch in
    the margin -- a clean-input shortcut that perturbations overwrite).
    """
    if n < 2:
        raise ContractError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    counts = _balanced_counts(n, 10)
    labels = np.repeat(np.arange(10), counts)
    images = np.empty((n, 1, 28, 28))
    for i, lab in enumerate(labels):
        img = np.zeros((28, 28))
        draw = rng.random()
        tag_only = draw < tag_fraction
        ambiguous = not tag_only and draw < tag_fraction + ambiguous_fraction
        if tag_only:
            # class-coded patch in the margin the jittered glyphs never touch
            row = 3 + 2 * lab
            img[row:row + 2, 25:27] = tag_intensity
        else:
            segs = _DIGIT_SEGMENTS[lab]
            faded = segs[rng.integers(len(segs))] if ambiguous else None
            for s in segs:
                rs, cs = _SEGMENTS[s]
                if s == faded:
                    img[rs, cs] = rng.uniform(0.08, 0.18)
                else:
                    img[rs, cs] = rng.uniform(1.0 - segment_fade, 1.0)
            dy, dx = rng.integers(-jitter, jitter + 1, size=2)
            img = np.roll(np.roll(img, dy, axis=0), dx, axis=1)
        if noise > 0:
            img = img + rng.normal(0.0, noise, size=img.shape)
        images[i, 0] = np.clip(img, 0.0, 1.0)
    order = rng.permutation(n)
    return Dataset(images[order], labels[order], class_count=10,
                   norm={"scale": 1.0, "offset": 0.0})


def split(dataset: Dataset, fractions, seed: int):
    """Stratified, seeded, disjoint (train, val, test) split."""
    fr = [float(f) for f in fractions]
    if len(fr) != 3:
        raise ContractError("fractions must be a (train, val, test) triple")
    if any(f < 0 or f > 1 for f in fr):
        raise ContractError("fractions must lie in [0, 1]")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise ContractError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    buckets = [[], [], []]
    for c in range(dataset.class_count):
        idx = np.flatnonzero(dataset.labels == c)
        rng.shuffle(idx)
        want = np.array([len(idx) * f for f in fr])
        base = np.floor(want).astype(int)
        rem = len(idx) - base.sum()
        order = np.argsort(-(want - base), kind="stable")
        base[order[:rem]] += 1
        pos = 0
        for j in range(3):
            buckets[j].append(idx[pos:pos + base[j]])
            pos += base[j]
    tags = ("train", "val", "test")
    out = []
    for j in range(3):
        sel = np.sort(np.concatenate(buckets[j])) if buckets[j] else np.array([], int)
        out.append(dataset.subset(sel, tags[j]) if sel.size else None)
    return tuple(out)


def save_dataset(path, dataset: Dataset):
    """Persist a dataset in the checkpoint container format."""
    write_container(path, {"inputs": dataset.inputs,
                           "labels": dataset.labels.astype(np.float64)},
                    {"kind": "dataset", "class_count": dataset.class_count,
                     "split": dataset.split, "norm": dataset.norm})


def load_dataset(path) -> Dataset:
    tensors, meta = read_container(path)
    if meta.get("kind") != "dataset":
        raise DataFormatError("container does not hold a dataset")
    return Dataset(tensors["inputs"], tensors["labels"].astype(np.int64),
                   meta["class_count"], meta.get("split", "full"),
                   meta.get("norm", {}))


def dataset_from_config(spec: dict, seed: int) -> Dataset:
    """Build a dataset from a declarative config block."""
    kind = spec.get("kind")
    if kind == "idx":
        return load_idx(spec["images"], spec["labels"])
    n = int(spec.get("n", 1000))
    ds_seed = int(spec.get("seed", seed))
    if kind == "digits":
        return make_digits(n, ds_seed, noise=float(spec.get("noise", 0.15)),
                           jitter=int(spec.get("jitter", 3)))
    if kind in ("two-moons", "gaussian-blobs"):
        return make_synthetic(kind, n, float(spec.get("noise", 0.1)), ds_seed,
                              classes=spec.get("classes"))
    raise ContractError(f"unknown dataset kind {kind!r}")
