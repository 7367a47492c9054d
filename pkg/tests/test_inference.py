import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import stitch_loops
from vseg.errors import ConfigError, DataError, FormatError, StateError, UnsupportedVersionError
from vseg.imageio import read_vmap, write_vmap
from vseg.inference import binarize, grid_origins, predict_image
from vseg.network import build_network


class Stub:
    """Deterministic stand-in for a network: output depends only on the patch contents."""
    training = False

    def __init__(self, fn):
        self.fn = fn
        self.batches = []

    def forward(self, batch):
        self.batches.append(batch.copy())
        return self.fn(batch[:, 0])


def test_grid_origins():
    assert grid_origins(56, 28).tolist() == [0, 28]
    assert grid_origins(60, 28).tolist() == [0, 28, 32]
    assert grid_origins(28, 7).tolist() == [0]
    assert grid_origins(40, 7).tolist() == [0, 7, 12]


def test_stride_28_partition_is_identity():
    img = np.random.default_rng(0).random((56, 84))
    stub = Stub(lambda p: p)
    pm = predict_image(stub, img, stride=28)
    assert (pm.coverage == 1).all()
    np.testing.assert_array_equal(pm.prob, img.astype(np.float32))


def test_constant_stub_gives_constant_map():
    pm = predict_image(Stub(lambda p: np.full(p.shape, 0.3)), np.zeros((50, 61)), stride=7)
    np.testing.assert_allclose(pm.prob, 0.3, atol=1e-15)


def test_stride_7_matches_loop_stitching():
    r = np.random.default_rng(1)
    img = r.random((45, 50))
    noise = {}

    def fn(p):
        out = []
        for patch in p:
            key = patch.tobytes()
            noise.setdefault(key, r.random((28, 28)))
            out.append(noise[key])
        return np.stack(out)

    stub = Stub(fn)
    pm = predict_image(stub, img, stride=7, chunk=5)
    oy, ox = grid_origins(45, 7), grid_origins(50, 7)
    origins = [(a, b) for a in oy for b in ox]
    preds = [noise[img[a:a + 28, b:b + 28].astype(np.float32).tobytes()] for a, b in origins]
    ref, cnt = stitch_loops(45, 50, origins, preds)
    assert np.max(np.abs(pm.prob - ref)) < 1e-12
    np.testing.assert_array_equal(pm.coverage, cnt)


@settings(max_examples=30, deadline=None)
@given(st.integers(28, 80), st.integers(28, 80), st.integers(1, 28))
def test_every_pixel_covered(h, w, stride):
    pm = predict_image(Stub(lambda p: np.full(p.shape, 0.5)), np.zeros((h, w)), stride=stride)
    assert pm.coverage.min() >= 1
    assert pm.prob.shape == (h, w)


def test_fov_zeroes_outside():
    fov = np.zeros((40, 40), np.uint8)
    fov[5:30, 5:30] = 1
    pm = predict_image(Stub(lambda p: np.full(p.shape, 0.8)), np.zeros((40, 40)), fov=fov)
    assert (pm.prob[fov == 0] == 0).all() and np.allclose(pm.prob[fov == 1], 0.8)


def test_logit_aggregation():
    pm = predict_image(Stub(lambda p: np.full(p.shape, 0.25)), np.zeros((40, 40)), aggregate="logit")
    np.testing.assert_allclose(pm.prob, 0.25, atol=1e-12)


def test_predict_with_real_network():
    net = build_network(0).eval()
    pm = predict_image(net, np.random.default_rng(0).random((40, 36)))
    assert pm.prob.shape == (40, 36)
    assert ((pm.prob > 0) & (pm.prob < 1)).all()


def test_predict_errors():
    net = build_network(0)
    with pytest.raises(StateError):
        predict_image(net.train(), np.zeros((30, 30)))
    net.eval()
    with pytest.raises(ConfigError):
        predict_image(net, np.zeros((30, 30)), stride=0)
    with pytest.raises(ConfigError):
        predict_image(net, np.zeros((30, 30)), aggregate="max")
    with pytest.raises(DataError):
        predict_image(net, np.zeros((20, 30)))


def test_binarize_examples():
    seg = binarize(np.array([0.49, 0.5, 0.51]), 0.5)
    assert seg.mask.tolist() == [0, 1, 1]
    with pytest.raises(ConfigError):
        binarize(np.zeros(3), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.98), st.floats(0.001, 0.01))
def test_binarize_monotone_in_threshold(t, dt):
    p = np.random.default_rng(0).random(500)
    lo, hi = binarize(p, t).mask, binarize(p, t + dt).mask
    assert (hi <= lo).all()


def test_vmap_roundtrip(tmp_path):
    a = np.random.default_rng(0).random((13, 17))
    write_vmap(tmp_path / "a.vmap", a)
    b = read_vmap(tmp_path / "a.vmap")
    assert b.shape == a.shape
    np.testing.assert_array_equal(b, a.astype(np.float32))


def test_vmap_errors(tmp_path):
    p = tmp_path / "a.vmap"
    write_vmap(p, np.zeros((4, 4)))
    raw = bytearray(p.read_bytes())
    p.write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(FormatError):
        read_vmap(p)
    raw[4] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedVersionError):
        read_vmap(p)
    p.write_bytes(bytes(raw[:20]))
    with pytest.raises(FormatError):
        read_vmap(p)
