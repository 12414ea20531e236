import numpy as np
import pytest

from robustprune import model as M
from robustprune.errors import CheckpointError, ContractError, ShapeError
from robustprune.model import (BinaryMask, LayerSpec, MaskedModel, Network,
                               binarize_mask, cnn_arch, load_checkpoint,
                               mlp_arch, save_checkpoint, shape_trace,
                               softmax_at_temperature)
from robustprune.tensor import Tensor
from robustprune import tensor as T


def small_mlp(seed=0):
    return Network(mlp_arch(input_size=6, hidden=(5,), classes=3), seed=seed)


def test_all_ones_mask_is_identity():
    rng = np.random.default_rng(1)
    net = small_mlp()
    masked = MaskedModel(net)
    for _ in range(100):
        x = rng.normal(size=(2, 6))
        assert np.array_equal(net.forward(x).data, masked.forward(x).data)


def test_all_zero_mask_uniform_softmax():
    net = small_mlp()
    masked = MaskedModel(net)
    for m in masked.masks:
        m.data[:] = 0.0
    for b in masked.network.biases:
        b.data[:] = 0.0
    logits = masked.forward(np.random.default_rng(2).normal(size=(4, 6)))
    assert np.allclose(logits.data, 0.0)
    probs = T.softmax(logits).data
    assert np.allclose(probs, 1.0 / 3.0)


def _numpy_mlp_oracle(x, weights, biases):
    """Independent plain-numpy recomputation with pre-multiplied weights."""
    h = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i < len(weights) - 1:
            h = np.maximum(h, 0.0)
    return h


def test_random_mask_matches_premultiplied_oracle():
    rng = np.random.default_rng(3)
    net = small_mlp(seed=5)
    masked = MaskedModel(net)
    for m in masked.masks:
        m.data[:] = rng.uniform(size=m.shape)
    x = rng.normal(size=(7, 6))
    got = masked.forward(x).data
    eff = [w.data * m.data for w, m in zip(masked.network.weights, masked.masks)]
    want = _numpy_mlp_oracle(x, eff, [b.data for b in masked.network.biases])
    assert np.allclose(got, want, atol=1e-12)


class TestTemperatureSoftmax:
    def test_t1_is_plain_softmax(self):
        out = softmax_at_temperature(Tensor([0.0, 0.0]), 1.0)
        assert np.allclose(out.data, [0.5, 0.5])

    def test_large_t_approaches_uniform(self):
        out = softmax_at_temperature(Tensor([3.0, -1.0, 0.5]), 1e6)
        assert np.abs(out.data - 1.0 / 3.0).max() < 1e-3

    def test_t2_halves_logits(self):
        out = softmax_at_temperature(Tensor([2.0, 0.0]), 2.0)
        e = np.exp(1.0)
        assert np.allclose(out.data, [e / (e + 1), 1 / (e + 1)])

    def test_nonpositive_t_rejected(self):
        with pytest.raises(ContractError):
            softmax_at_temperature(Tensor([1.0]), 0.0)


def _masked_with_values(values):
    net = Network([LayerSpec("dense", in_size=1, out_size=len(values)),
                   LayerSpec("softmax-output")], seed=0)
    masked = MaskedModel(net)
    masked.masks[0].data[:] = np.asarray(values).reshape(1, -1)
    return masked


class TestBinarize:
    def test_top2_by_magnitude(self):
        bits = binarize_mask(_masked_with_values([0.9, 0.1, 0.5]), 2)
        assert np.array_equal(bits.flat(), [1, 0, 1])

    def test_ties_keep_lower_index(self):
        bits = binarize_mask(_masked_with_values([0.4] * 6), 1)
        assert np.array_equal(bits.flat(), [1, 0, 0, 0, 0, 0])

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(9)
        values = rng.uniform(size=12)
        bits = binarize_mask(_masked_with_values(values), 5)
        keep = sorted(np.argsort(-np.abs(values), kind="stable")[:5])
        want = np.zeros(12)
        want[keep] = 1
        assert np.array_equal(bits.flat(), want)

    def test_cardinality_for_every_k(self):
        rng = np.random.default_rng(10)
        masked = _masked_with_values(rng.uniform(size=9))
        for k_prime in range(1, 10):
            assert binarize_mask(masked, k_prime).retained_count == k_prime

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(11)
        values = rng.permutation(np.linspace(0.05, 0.95, 10))  # distinct
        perm = rng.permutation(10)
        direct = binarize_mask(_masked_with_values(values[perm]), 4).flat()
        permuted = binarize_mask(_masked_with_values(values), 4).flat()[perm]
        assert np.array_equal(direct, permuted)

    def test_out_of_range_rejected(self):
        masked = _masked_with_values([0.1, 0.2])
        with pytest.raises(ContractError):
            binarize_mask(masked, 0)
        with pytest.raises(ContractError):
            binarize_mask(masked, 3)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = Network(cnn_arch(input_hw=(12, 12), channels=(2, 3)), seed=4)
        path = tmp_path / "model.dwd"
        save_checkpoint(path, net, {"stage": "pretrained", "seed": 4})
        loaded, bits, meta = load_checkpoint(path)
        assert bits is None
        assert meta["stage"] == "pretrained"
        for a, b in zip(net.weights, loaded.weights):
            assert np.array_equal(a.data, b.data)
        for a, b in zip(net.biases, loaded.biases):
            assert np.array_equal(a.data, b.data)

    def test_logits_identical_after_round_trip(self, tmp_path):
        net = small_mlp(seed=8)
        x = np.random.default_rng(0).normal(size=(5, 6))
        before = net.forward(x).data.copy()
        path = tmp_path / "m.dwd"
        save_checkpoint(path, net, {"stage": "pretrained", "seed": 8})
        loaded, _, _ = load_checkpoint(path)
        assert np.array_equal(before, loaded.forward(x).data)

    def test_mask_round_trip(self, tmp_path):
        net = small_mlp(seed=2)
        masked = MaskedModel(net)
        masked.masks[0].data[0, 0] = 0.25
        bits = binarize_mask(masked, 10)
        path = tmp_path / "m.dwd"
        save_checkpoint(path, net, {"stage": "pruned", "seed": 2}, bits=bits)
        _, loaded_bits, _ = load_checkpoint(path)
        assert np.array_equal(bits.flat(), loaded_bits.flat())

    def test_corrupted_checksum_rejected(self, tmp_path):
        net = small_mlp()
        path = tmp_path / "m.dwd"
        save_checkpoint(path, net, {"stage": "pretrained", "seed": 0})
        raw = bytearray(path.read_bytes())
        raw[30] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        net = small_mlp()
        path = tmp_path / "m.dwd"
        save_checkpoint(path, net, {"stage": "pretrained", "seed": 0})
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.dwd"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path, monkeypatch):
        net = small_mlp()
        path = tmp_path / "m.dwd"
        monkeypatch.setattr(M, "CHECKPOINT_VERSION", 99)
        save_checkpoint(path, net, {"stage": "pretrained", "seed": 0})
        monkeypatch.undo()
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


def test_shape_trace_validates():
    with pytest.raises(ShapeError):
        shape_trace([LayerSpec("dense", in_size=4, out_size=2)], (5,))
    trace = shape_trace(cnn_arch(input_hw=(28, 28), channels=(8, 16)), (1, 28, 28))
    assert trace[-1] == (10,)


def test_binary_mask_apply_zeroes_weights():
    net = small_mlp(seed=3)
    masked = MaskedModel(net)
    bits = binarize_mask(masked, 5)
    pruned = bits.apply_to(net)
    flat = np.concatenate([w.data.ravel() for w in pruned.weights])
    assert int((flat != 0).sum()) <= 5
