import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from guidedflow import checkpoint as ckpt
from guidedflow import oracles
from guidedflow.config import ConfigError, TrainConfig, env_overrides, load_config, parse_ini, to_ini
from guidedflow.dataset import load_manifest, make_dataset, read_manifest, stack
from guidedflow.flo import FLO_MAGIC, FloFormatError, decode_flo, encode_flo, read_flo, write_flo
from guidedflow.flow_ops import warp_backward
from guidedflow.metrics import endpoint_errors, epe, f1, outliers
from guidedflow.model import ModelConfig, init_params
from guidedflow.synthetic import KINDS, SyntheticSpec, generate, motion_boundaries
from guidedflow.tensor import Tensor, precision
from guidedflow.viz import flow_to_color, map_to_gray


# ------------------------------------------------------------ synthetic data

@pytest.mark.parametrize("kind", KINDS)
def test_generate_shapes_and_range(kind):
    s = generate(SyntheticSpec(kind, size=(32, 48)), seed=3)
    assert s.image1.shape == s.image2.shape == (3, 32, 48)
    assert s.flow.shape == (2, 32, 48)
    assert s.occ.shape == (32, 48)
    assert 0 <= s.image1.min() and s.image1.max() <= 1


def test_generate_is_seeded():
    spec = SyntheticSpec("occluder_box")
    a, b, c = generate(spec, 1), generate(spec, 1), generate(spec, 2)
    assert np.array_equal(a.image1, b.image1) and np.array_equal(a.flow, b.flow)
    assert not np.array_equal(a.image1, c.image1)


def test_static_has_zero_flow():
    s = generate(SyntheticSpec("static"), 0)
    assert np.array_equal(s.image1, s.image2)
    assert not s.flow.any() and s.occ.all()  # occ is the validity mask, 1 = visible


@pytest.mark.parametrize("kind", ["global_translation", "affine", "occluder_box"])
def test_ground_truth_warp_reconstructs_frame1(kind):
    # on visible pixels, frame 2 sampled at p + V(p) reproduces frame 1
    s = generate(SyntheticSpec(kind), seed=11)
    with precision(np.float64):
        back = warp_backward(Tensor(s.image2[None]), Tensor(s.flow[None])).data[0]
    visible = s.occ == 1
    err = np.abs(back - s.image1).max(axis=0)[visible]
    tol = 1e-9 if kind != "affine" else 0.05
    assert np.quantile(err, 0.99) <= tol


def test_occluder_box_marks_occlusions_and_boundaries():
    s = generate(SyntheticSpec("occluder_box"), 5)
    assert 0.5 < s.occ.mean() < 1
    b = motion_boundaries(s.flow)
    assert b.dtype == bool and 0 < b.mean() < 0.6
    flat = np.zeros((2, 8, 8))
    assert not motion_boundaries(flat).any()


def test_max_motion_bound():
    for seed in range(20):
        s = generate(SyntheticSpec("global_translation", max_motion=3), seed)
        assert np.abs(s.flow).max() <= 3


def test_bad_spec_rejected():
    with pytest.raises(ValueError):
        SyntheticSpec("spiral")


# ------------------------------------------------------------------- .flo

def test_flo_layout(tmp_path):
    flow = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
    buf = encode_flo(flow)
    assert buf[:4] == struct.pack("<f", FLO_MAGIC)
    assert struct.unpack("<ii", buf[4:12]) == (4, 3)
    # interleaved u, v per pixel, row-major
    first = struct.unpack("<4f", buf[12:28])
    assert first == (flow[0, 0, 0], flow[1, 0, 0], flow[0, 0, 1], flow[1, 0, 1])
    p = tmp_path / "a.flo"
    write_flo(flow, p)
    assert read_flo(p).tobytes() == flow.tobytes()


def test_flo_errors():
    good = encode_flo(np.zeros((2, 2, 2), np.float32))
    with pytest.raises(FloFormatError, match="magic") as e:
        decode_flo(b"\0\0\0\0" + good[4:])
    assert e.value.offset == 0
    with pytest.raises(FloFormatError):
        decode_flo(good[:-3])
    with pytest.raises(FloFormatError):
        decode_flo(good[:12] + good[12:] + b"\0" * 8)
    with pytest.raises(FloFormatError):
        decode_flo(good[:6])


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, st.tuples(st.just(2), st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_flo_roundtrip_property(flow):
    assert decode_flo(encode_flo(flow)).tobytes() == flow.tobytes()


# --------------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip(tmp_path):
    params = init_params(ModelConfig(), seed=1)
    p = tmp_path / "m.gfck"
    ckpt.save(params, p)
    back = ckpt.load(p)
    assert sorted(back) == sorted(params)
    for k in params:
        assert back[k].dtype == params[k].data.dtype
        assert back[k].tobytes() == params[k].data.tobytes()
    assert p.read_bytes()[:4] == b"GFCK"


def test_checkpoint_errors(tmp_path):
    params = init_params(ModelConfig(), seed=1)
    buf = ckpt.encode(params)
    with pytest.raises(ckpt.CheckpointError):
        ckpt.decode(b"XXXX" + buf[4:])
    with pytest.raises(ckpt.CheckpointError):
        ckpt.decode(buf[:-5])
    arrays = ckpt.decode(buf)
    arrays.pop("dec.head.bias")
    with pytest.raises(ckpt.CheckpointError, match="dec.head.bias"):
        ckpt.load_into(init_params(ModelConfig()), arrays)
    other = ckpt.decode(ckpt.encode(init_params(ModelConfig(feat_channels=16))))
    with pytest.raises(ckpt.CheckpointError, match="shape"):
        ckpt.load_into(init_params(ModelConfig()), other)


def test_checkpoint_load_into_copies_values():
    a, b = init_params(ModelConfig(), seed=1), init_params(ModelConfig(), seed=2)
    ckpt.load_into(b, ckpt.decode(ckpt.encode(a)))
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)


# ------------------------------------------------------------------ dataset

def test_make_and_load_dataset(tmp_path):
    spec = SyntheticSpec("occluder_box", size=(32, 32))
    manifest = make_dataset(spec, 3, tmp_path / "d", seed=4)
    entries = read_manifest(manifest)
    assert len(entries) == 3
    loaded = load_manifest(manifest)
    direct = [generate(spec, s) for s in range(3)]
    img1, img2, flow, occ = stack(loaded)
    assert img1.shape == (3, 3, 32, 32) and occ.shape == (3, 1, 32, 32)
    assert flow.dtype == np.float32
    # PNG quantises intensities to 8 bits; flow and occlusion are exact
    assert np.array_equal(loaded[1].occ, loaded[1].occ.astype(bool))


def test_manifest_missing_file(tmp_path):
    manifest = make_dataset(SyntheticSpec("static", size=(32, 32)), 2, tmp_path, seed=0)
    (tmp_path / next(tmp_path.glob("*_img2.png")).name).unlink()
    with pytest.raises(FileNotFoundError):
        load_manifest(manifest)


# ------------------------------------------------------------------- config

def test_config_roundtrip(tmp_path):
    cfg = TrainConfig(lr=3e-4, sgu_mode="sgu_m", iterations=7, pdl_use_occ=False)
    p = tmp_path / "c.ini"
    p.write_text(to_ini(cfg))
    back = load_config(p, environ={})
    assert back.lr == 3e-4 and back.sgu_mode == "sgu_m" and back.iterations == 7
    assert back.pdl_use_occ is False


def test_config_rejects_unknown_and_misplaced_keys():
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_ini("[train]\nlearning_rate = 1\n")
    with pytest.raises(ConfigError, match="belongs in"):
        parse_ini("[model]\nlr = 1\n")
    with pytest.raises(ConfigError, match="section"):
        parse_ini("[optim]\nlr = 1\n")
    with pytest.raises(ConfigError, match="bad value"):
        parse_ini("[train]\nlr = fast\n")
    with pytest.raises(ConfigError):
        TrainConfig(sgu_mode="nearest")


def test_env_overrides_and_precedence(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[train]\nlr = 0.01\nbatch_size = 2\ndata = d/manifest.txt\n")
    cfg = load_config(p, environ={"GUIDEDFLOW_LR": "0.5"}, batch_size=8)
    assert cfg.lr == 0.5 and cfg.batch_size == 8
    assert cfg.data == str(tmp_path / "d" / "manifest.txt")
    with pytest.raises(ConfigError, match="GUIDEDFLOW_BOGUS"):
        env_overrides({"GUIDEDFLOW_BOGUS": "1"})


def test_config_defaults_match_published_constants():
    cfg = TrainConfig()
    w = cfg.weights()
    assert (w.lambda_d, w.lambda_s, w.lambda_c, w.lambda_b) == (0.01, 0.05, 1.0, 1.0)
    assert (cfg.alpha1, cfg.alpha2, cfg.batch_size, cfg.depth) == (0.01, 0.5, 4, 4)


# ------------------------------------------------------------------ metrics

def test_metrics_against_oracles(rng):
    v, gt = rng.standard_normal((2, 2, 5, 6)) * 4, rng.standard_normal((2, 2, 5, 6)) * 4
    valid = rng.random((2, 5, 6)) > 0.3
    ref_all = np.mean([oracles.endpoint_error(v[b], gt[b]) for b in range(2)])
    assert epe(v, gt) == pytest.approx(ref_all)
    for b in range(2):
        assert epe(v[b], gt[b], valid[b]) == pytest.approx(oracles.endpoint_error(v[b], gt[b], valid[b]))
        assert f1(v[b], gt[b], valid[b]) == pytest.approx(oracles.outlier_rate(v[b], gt[b], valid[b]))


def test_outlier_needs_both_thresholds():
    gt = np.zeros((2, 1, 3))
    gt[0] = [[10.0, 100.0, 1.0]]
    v = gt.copy()
    v[0] += [[3.5, 3.5, 3.5]]
    # 3.5 px error: 35% of 10 (outlier), 3.5% of 100 (not), 350% of 1 (outlier)
    np.testing.assert_array_equal(outliers(v, gt)[0], [True, False, True])
    assert endpoint_errors(v, gt).shape == (1, 3)


# -------------------------------------------------------------------- viz

def test_flow_to_color():
    flow = np.zeros((2, 4, 4))
    img = flow_to_color(flow)
    assert img.shape == (4, 4, 3) and img.dtype == np.uint8
    assert (img == 255).all()  # zero motion is white
    flow[0] = 1.0
    right = flow_to_color(flow)
    flow[0] = -1.0
    left = flow_to_color(flow)
    assert not np.array_equal(right, left)
    g = map_to_gray(np.linspace(0, 1, 6).reshape(2, 3))
    assert g.dtype == np.uint8 and g.min() == 0 and g.max() == 255
