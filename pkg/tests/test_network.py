import math
import struct

import numpy as np
import pytest

from oracles import central_diff, max_rel_err
from vseg.dataset import PatchSet
from vseg.errors import ConfigError, FormatError, ShapeError, UnsupportedVersionError
from vseg.network import (Network, TrainConfig, build_network, load_checkpoint, read_checkpoint,
                          save_checkpoint, train)
from vseg.optim import cross_entropy


def _patchset(n=16, size=28, seed=0):
    r = np.random.default_rng(seed)
    x = r.random((n, 1, size, size)).astype(np.float32)
    y = (x[:, 0] > 0.6).astype(np.uint8)
    z = np.zeros(n, np.int64)
    return PatchSet(x, y, z, z, z)


def test_parameter_count():
    net = build_network(0)
    per_layer = {name: sum(v.size for v in layer.params.values()) for name, layer in net.layers if layer.params}
    assert per_layer == {"c1": 320, "c2": 9248, "c3": 18496, "c4": 36928, "c5": 18464, "c6": 9248, "proj": 66}
    assert net.num_params() == 92_770


def test_layer_sequence_and_shape_trace():
    net = build_network(0)
    kinds = [type(layer).__name__ for _, layer in net.layers]
    conv_block = ["Conv3x3", "ReLU", "Dropout"]
    assert kinds == conv_block * 2 + ["MaxPool2x2"] + conv_block * 2 + ["Upsample2x"] + conv_block * 2 + \
        ["Conv1x1", "Softmax2"]
    trace = dict(net.shape_trace())
    assert trace["c2_drop"] == (32, 28, 28)
    assert trace["m1"] == (32, 14, 14)
    assert trace["c4_drop"] == (64, 14, 14)
    assert trace["u1"] == (64, 28, 28)
    assert trace["proj"] == (2, 28, 28)
    assert trace["softmax"] == (2, 28, 28)


def test_same_seed_same_parameters():
    a, b, c = build_network(3), build_network(3), build_network(4)
    for k, v in a.params().items():
        assert v.tobytes() == b.params()[k].tobytes()
    assert any(v.tobytes() != c.params()[k].tobytes() for k, v in a.params().items())


def test_forward_range_and_eval_determinism():
    net = build_network(1).eval()
    x = _patchset(4).patches
    p1, p2 = net.forward(x), net.forward(x)
    assert p1.shape == (4, 28, 28)
    assert ((p1 > 0) & (p1 < 1)).all()
    assert p1.tobytes() == p2.tobytes()


def test_forward_rejects_bad_shapes():
    net = build_network(0).eval()
    with pytest.raises(ShapeError):
        net.forward(np.zeros((1, 2, 28, 28), np.float32))
    with pytest.raises(ShapeError):
        net.forward(np.zeros((1, 1, 27, 28), np.float32))


def test_zero_head_gives_half_and_closed_form_loss():
    net = build_network(0, zero_head=True).eval()
    ps = _patchset(8)
    p = net.forward(ps.patches)
    assert (p == 0.5).all()
    loss, _ = cross_entropy(ps.labels, p)
    assert abs(loss - 784 * math.log(2)) < 1e-3
    assert abs(784 * math.log(2) - 543.43) < 0.01


def test_dropout_active_only_in_training():
    net = build_network(0, dropout=0.5)
    x = _patchset(2).patches
    a = net.train().forward(x)
    b = net.train().forward(x)
    assert a.tobytes() != b.tobytes()
    assert net.eval().forward(x).tobytes() == net.forward(x).tobytes()


def test_lr_zero_without_dropout_leaves_parameters():
    net = build_network(5, dropout=0.0)
    before = {k: v.copy() for k, v in net.params().items()}
    train(net, _patchset(16), None, TrainConfig(lr=0.0, epochs=1, batch_size=8, dropout=0.0))
    for k, v in net.params().items():
        assert v.tobytes() == before[k].tobytes(), k


def test_validation_runs_in_eval_mode():
    net = build_network(0, dropout=0.5)
    hist = train(net, _patchset(16), _patchset(4, seed=1), TrainConfig(epochs=2, batch_size=8))
    assert hist.steps == 4
    assert [m for m in hist.mode_audit if m[0] == "val"] == [("val", False)] * 2
    assert all(flag for phase, flag in hist.mode_audit if phase == "train")
    assert len(hist.train_loss) == len(hist.val_loss) == 2
    assert not net.training


def test_seeded_training_is_bit_reproducible():
    def run():
        net = build_network(7)
        h = train(net, _patchset(16), _patchset(4, seed=1), TrainConfig(epochs=2, batch_size=8, seed=7))
        return h.train_loss, h.val_loss, net.params()["c3.weight"].tobytes()
    assert run() == run()


def test_first_epoch_loss_near_half_output_value():
    net = build_network(0, dropout=0.0, zero_head=True)
    h = train(net, _patchset(8), None, TrainConfig(epochs=1, batch_size=8, lr=1e-4))
    assert abs(h.train_loss[0] - 784 * math.log(2)) < 1.0


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(dropout=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=-1)


def test_divergence_dumps_state(tmp_path):
    from vseg.errors import TrainingDivergedError
    net = build_network(0, dropout=0.0)
    net.params()["c1.weight"][...] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        train(net, _patchset(8), None, TrainConfig(epochs=1, batch_size=8), dump_dir=tmp_path)
    assert info.value.dump_path.is_file()
    _, meta = read_checkpoint(info.value.dump_path)
    assert meta["diverged"]["step"] == 0


def whole_network_grad_errors(seed=0):
    """Max relative error of backprop vs central differences for every parameter (8x8, fp64, no dropout)."""
    net = Network(seed, widths=(3, 4), dropout=0.0, dtype=np.float64).train()
    r = np.random.default_rng(seed)
    # zero biases put some pre-activations exactly on the ReLU kink, where differences are one-sided
    for k, p in net.params().items():
        if k.endswith(".bias"):
            p[...] = r.normal(scale=0.1, size=p.shape)
    x = r.random((2, 1, 8, 8))
    y = (r.random((2, 8, 8)) < 0.4).astype(np.float64)

    def loss():
        return cross_entropy(y, net.forward(x))[0]

    _, grad = cross_entropy(y, net.forward(x))
    net.backward(grad)
    analytic = {k: g.copy() for k, g in net.grads().items()}
    # central differences of a loss near 45 resolve gradients to ~1e-9 absolute at h=1e-5,
    # so relative error is measured against max(|a|, |b|, 1e-5)
    return {k: max_rel_err(analytic[k], central_diff(loss, p, 1e-5), floor=1e-5)
            for k, p in net.params().items()}


def test_whole_network_gradient():
    errs = whole_network_grad_errors()
    assert max(errs.values()) < 1e-4, errs


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = build_network(11).eval()
    path = tmp_path / "m.vseg"
    save_checkpoint(net, path, {"epoch": 3})
    loaded = load_checkpoint(path)
    for k, v in net.params().items():
        assert v.tobytes() == loaded.params()[k].tobytes()
    x = _patchset(3).patches
    assert net.forward(x).tobytes() == loaded.forward(x).tobytes()
    assert loaded.metadata["epoch"] == 3 and not loaded.training


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "m.vseg"
    save_checkpoint(build_network(0), path)
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_newer_version(tmp_path):
    path = tmp_path / "m.vseg"
    save_checkpoint(build_network(0), path)
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 2)
    path.write_bytes(bytes(data))
    with pytest.raises(UnsupportedVersionError):
        load_checkpoint(path)


@pytest.mark.parametrize("cut", [3, 20, 1000, -5])
def test_checkpoint_truncated(tmp_path, cut):
    path = tmp_path / "m.vseg"
    save_checkpoint(build_network(0), path)
    data = path.read_bytes()
    path.write_bytes(data[:cut])
    with pytest.raises(FormatError):
        read_checkpoint(path)


def test_checkpoint_trailing_bytes(tmp_path):
    path = tmp_path / "m.vseg"
    save_checkpoint(build_network(0), path)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        read_checkpoint(path)
