import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guidedflow import oracles
from guidedflow.losses import (
    PYRAMID_MODES,
    LossConfig,
    LossWeights,
    boundary_dilated_photometric,
    census_loss,
    photometric_loss,
    pyramid_distillation_loss,
    robust_penalty,
    smooth_loss,
    total_loss,
)
from guidedflow.model import PyramidOutputs, forward
from guidedflow.synthetic import SyntheticSpec, generate
from guidedflow.tensor import Tensor, precision
from guidedflow.verify import GRADIENT_CASES, run_gradient_case, run_oracle_case, tiny_model

LOSS_GRADIENTS = [
    "robust_penalty", "photometric_loss", "census_loss", "smooth_loss", "boundary_dilated_photometric",
    "pyramid_distillation_loss", "pyramid_unsupervised_loss_up", "pyramid_unsupervised_loss_down",
    "total_loss",
]


def _ones(B, H, W):
    return Tensor(np.ones((B, 1, H, W)))


def _translated(u, v, seed=0):
    s = generate(SyntheticSpec("global_translation", size=(32, 32), motion=(u, v)), seed)
    i1, i2 = Tensor(s.image1[None].astype(np.float64)), Tensor(s.image2[None].astype(np.float64))
    return i1, i2, s.flow[None].astype(np.float64)


def test_defaults():
    w = LossWeights()
    assert (w.lambda_d, w.lambda_s, w.lambda_c, w.lambda_a, w.lambda_b) == (0.01, 0.05, 1.0, 0.5, 1.0)
    assert (w.q, w.eps) == (0.4, 0.01)
    with pytest.raises(ValueError):
        LossWeights(lambda_s=-1)
    with pytest.raises(ValueError, match="pyramid loss mode"):
        LossConfig(pyramid="pul_sideways")
    assert set(PYRAMID_MODES) == {"pdl", "pul_up", "pul_down", "none"}


def test_robust_penalty_values(f64):
    x = Tensor(np.array([0.0, 0.99, -0.99]))
    np.testing.assert_allclose(robust_penalty(x).data, [0.01 ** 0.4, 1.0, 1.0], rtol=1e-12)


def test_photometric_zero_at_true_flow(f64):
    i1, i2, gt = _translated(3, -2)
    m = _ones(1, 32, 32)
    m.data[..., :4, :] = 0  # rows that moved in from outside
    m.data[..., :, -4:] = 0
    at_gt = photometric_loss(i1, i2, Tensor(gt), m).item()
    at_zero = photometric_loss(i1, i2, Tensor(np.zeros_like(gt)), m).item()
    assert at_gt == pytest.approx(0.01 ** 0.4, rel=1e-9)
    assert at_zero > at_gt * 2


def test_census_minimal_at_true_flow(f64):
    i1, i2, gt = _translated(-2, 1)
    m = _ones(1, 32, 32)
    assert census_loss(i1, i2, Tensor(gt), m).item() < census_loss(i1, i2, Tensor(np.zeros_like(gt)), m).item()


def test_census_matches_oracle(rng, f64):
    i1, i2 = rng.random((1, 3, 6, 6)), rng.random((1, 3, 6, 6))
    flow, mask = rng.uniform(-1.5, 1.5, (1, 2, 6, 6)), (rng.random((1, 1, 6, 6)) > 0.3).astype(float)
    got = census_loss(Tensor(i1), Tensor(i2), Tensor(flow), Tensor(mask)).item()
    assert got == pytest.approx(oracles.census(i1, i2, flow, mask), rel=1e-9)


def test_empty_mask_gives_zero_not_nan(f64):
    i1, i2, gt = _translated(1, 1)
    zero = Tensor(np.zeros((1, 1, 32, 32)))
    assert photometric_loss(i1, i2, Tensor(gt), zero).item() == 0.0
    assert census_loss(i1, i2, Tensor(gt), zero).item() == 0.0


def test_smooth_loss_constant_flow_is_zero(f64):
    img = Tensor(np.random.default_rng(1).random((1, 3, 8, 8)))
    flow = Tensor(np.full((1, 2, 8, 8), 2.5))
    assert smooth_loss(flow, img).item() == 0.0
    ramp = np.zeros((1, 2, 8, 8))
    ramp[:, 0] = np.arange(8)[None, :]
    assert smooth_loss(Tensor(ramp), img, order=2).item() == pytest.approx(0.0, abs=1e-14)
    assert smooth_loss(Tensor(ramp), img, order=1).item() > 0


def test_smooth_loss_edge_awareness(f64):
    flow = np.zeros((1, 2, 8, 8))
    flow[..., 4:] = 3.0
    flat = np.zeros((1, 3, 8, 8))
    edge = flat.copy()
    edge[..., 4:] = 1.0
    a = smooth_loss(Tensor(flow), Tensor(flat)).item()
    b = smooth_loss(Tensor(flow), Tensor(edge)).item()
    assert b < a * 1e-3


def test_dilated_boundary_agrees_inside_and_differs_outside(f64):
    rng = np.random.default_rng(2)
    i1, i2 = Tensor(rng.random((1, 3, 8, 8))), Tensor(rng.random((1, 3, 8, 8)))
    m = _ones(1, 8, 8)
    inside = Tensor(rng.uniform(-0.4, 0.4, (1, 2, 8, 8)))
    # with small flow only the outermost ring leaves the frame; compare with a mask excluding it
    m_in = Tensor(np.pad(np.ones((1, 1, 6, 6)), ((0, 0), (0, 0), (1, 1), (1, 1))))
    a = boundary_dilated_photometric(i1, i2, inside, m_in, dilation=3).item()
    b = photometric_loss(i1, i2, inside, m_in).item()
    assert a == b
    outward = Tensor(np.full((1, 2, 8, 8), 2.5))
    assert boundary_dilated_photometric(i1, i2, outward, m, 3).item() != photometric_loss(i1, i2, outward, m).item()


def test_pdl_zero_when_levels_agree(f64):
    rng = np.random.default_rng(3)
    final = rng.standard_normal((1, 2, 8, 8))
    from guidedflow.flow_ops import downsample

    flows = [Tensor(downsample(Tensor(final), s, kind="flow").data) for s in (4, 2)]
    out = PyramidOutputs(flows=flows, flow=Tensor(final), scales=[4, 2])
    v = pyramid_distillation_loss(out, _ones(1, 8, 8)).item()
    # every level sits at the floor value of the penalty (two channels)
    assert v == pytest.approx(2 * 2 * 0.01 ** 0.4, rel=1e-9)


def test_pdl_label_is_detached(f64):
    from guidedflow.tensor import parameter

    rng = np.random.default_rng(4)
    final = parameter(rng.standard_normal((1, 2, 8, 8)))
    levels = [parameter(rng.standard_normal((1, 2, 2, 2))), parameter(rng.standard_normal((1, 2, 4, 4)))]
    out = PyramidOutputs(flows=levels, flow=final, scales=[4, 2])
    pyramid_distillation_loss(out, _ones(1, 8, 8)).backward()
    assert final.grad is None
    assert all(np.abs(f.grad).sum() > 0 for f in levels)


def test_total_breakdown(f64):
    cfg, params = tiny_model(seed=2)
    rng = np.random.default_rng(5)
    i1, i2 = Tensor(rng.random((2, 3, 8, 8))), Tensor(rng.random((2, 3, 8, 8)))
    out = forward(i1, i2, params, cfg)
    w = LossWeights()
    for mode in PYRAMID_MODES:
        bd = total_loss(out, i1, i2, _ones(2, 8, 8), w, LossConfig(pyramid=mode, dilation=2))
        assert set(bd.terms) == {"L_m", "L_c", "L_s", "L_b", "L_d", "L_a", "total"}
        assert bd.terms["L_a"] == 0.0
        if mode.startswith("pul"):
            # the pyramid unsupervised stack fills the L_d slot with its own weight
            t = bd.terms
            manual = (t["L_m"] + w.lambda_c * t["L_c"] + w.lambda_s * t["L_s"] + w.lambda_b * t["L_b"]
                      + LossConfig().pul_weight * t["L_d"])
            assert abs(manual - bd.value()) <= 1e-6
        else:
            assert abs(bd.resum(w) - bd.value()) <= 1e-6
        assert (bd.terms["L_d"] == 0.0) == (mode == "none")
    # disabling a weight removes the term entirely
    bd = total_loss(out, i1, i2, _ones(2, 8, 8), LossWeights(lambda_c=0.0), LossConfig(dilation=2))
    assert bd.terms["L_c"] == 0.0


@pytest.mark.parametrize("name", LOSS_GRADIENTS)
@pytest.mark.parametrize("variant", range(3))
def test_loss_gradients(name, variant):
    assert name in GRADIENT_CASES
    report = run_gradient_case(name, variant)
    assert report, report.message


@pytest.mark.parametrize("name", ["photometric_loss", "pyramid_distillation_loss"])
def test_loss_oracles(name):
    worst, n = run_oracle_case(name, trials=20)
    assert worst <= 1e-6, f"{name}: {worst:.2e} over {n}"


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 3.0), st.integers(0, 100))
def test_photometric_invariant_to_mask_scale_property(k, seed):
    # the loss is a masked mean, so uniformly scaling the mask changes nothing
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        i1, i2 = Tensor(rng.random((1, 3, 6, 6))), Tensor(rng.random((1, 3, 6, 6)))
        flow = Tensor(rng.uniform(-1, 1, (1, 2, 6, 6)))
        m = rng.random((1, 1, 6, 6))
        a = photometric_loss(i1, i2, flow, Tensor(m)).item()
        b = photometric_loss(i1, i2, flow, Tensor(m * k)).item()
    assert a == pytest.approx(b, rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1, 1), st.integers(0, 100))
def test_census_brightness_offset_property(offset, seed):
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        i1, i2 = rng.random((1, 3, 8, 8)), rng.random((1, 3, 8, 8))
        flow, m = Tensor(rng.uniform(-2, 2, (1, 2, 8, 8))), _ones(1, 8, 8)
        a = census_loss(Tensor(i1), Tensor(i2), flow, m).item()
        b = census_loss(Tensor(i1 + offset), Tensor(i2 + offset), flow, m).item()
    assert a == pytest.approx(b, abs=1e-10)
