"""Release gate: gradient checks, oracle equivalence and invariants.

Every check is a named function returning ``(passed, detail)``.  The same
case tables drive the pytest suites and the ``verify`` command.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from guidedflow import checkpoint as ckpt
from guidedflow import oracles
from guidedflow.flo import decode_flo, encode_flo
from guidedflow.flow_ops import (
    bilinear_sample,
    census_transform,
    correlation_volume,
    downsample,
    feature_normalize,
    upsample_bilinear_flow,
    warp_backward,
)
from guidedflow.gradcheck import grad_check
from guidedflow.losses import (
    LossConfig,
    LossWeights,
    boundary_dilated_photometric,
    census_distance,
    census_loss,
    photometric_loss,
    pyramid_distillation_loss,
    pyramid_unsupervised_loss,
    robust_penalty,
    smooth_loss,
    total_loss,
)
from guidedflow.model import ModelConfig, decode_level, forward, init_params, sgu_upsample
from guidedflow.ops import conv2d, leaky_relu, sigmoid
from guidedflow.tensor import Tensor, concat, parameter, precision

SOFT_BUDGET_SECONDS = 300.0
F64 = np.float64


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str
    seconds: float


def rel_err(a, ref) -> float:
    """max |a - ref| over max |ref| (absolute when ref is all zero)."""
    a, ref = np.asarray(a, F64), np.asarray(ref, F64)
    scale = max(float(np.max(np.abs(ref), initial=0.0)), 1e-12)
    return float(np.max(np.abs(a - ref), initial=0.0)) / scale


def _p(rng, *shape, scale=1.0):
    return parameter(rng.standard_normal(shape) * scale)


def _c(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale)


def _weighted(t: Tensor, rng) -> Tensor:
    """Scalar projection with fixed random weights (avoids cancellation in plain sums)."""
    return (t * Tensor(rng.standard_normal(t.shape))).sum()


def _img(rng, *shape):
    return Tensor(rng.uniform(0, 1, shape))


def _outputs(level_flows, final, scales):
    return SimpleNamespace(flows=level_flows, flow=final, scales=scales)


def tiny_model(sgu_mode="sgu", depth=1, seed=0, head_scale=0.3):
    cfg = ModelConfig(depth=depth, feat_channels=4, max_disp=1, sgu_mode=sgu_mode,
                      decoder_channels=(6, 5, 4, 3, 3), sgu_channels=(3, 3, 2, 2, 2))
    params = init_params(cfg, seed=seed, dtype=F64)
    rng = np.random.default_rng(seed + 100)
    for k, p in params.items():
        if k.endswith("head.weight"):
            p.data = rng.standard_normal(p.shape) * head_scale
    return cfg, params


# ---------------------------------------------------------------- gradients
# Each builder maps (rng, variant in 0..2) to (closure, inputs, tolerance, step).

def _g_conv2d(rng, v):
    B, C, H, W, O, s, p = [(1, 2, 5, 5, 3, 1, 1), (2, 3, 6, 6, 4, 2, 1), (1, 8, 5, 4, 2, 1, 0)][v]
    x, w, b = _p(rng, B, C, H, W), _p(rng, O, C, 3, 3), _p(rng, O)
    r = rng.standard_normal((B, O, (H + 2 * p - 3) // s + 1, (W + 2 * p - 3) // s + 1))
    return (lambda x, w, b: (conv2d(x, w, b, s, p) * Tensor(r)).sum()), [x, w, b], 1e-4, 1e-5


def _shape(v):
    return [(1, 2, 3, 4), (2, 3, 5, 5), (1, 4, 6, 3)][v]


def _g_leaky(rng, v):
    x = _p(rng, *_shape(v))
    r = Tensor(rng.standard_normal(x.shape))
    return (lambda x: (leaky_relu(x) * r).sum()), [x], 1e-4, 1e-5


def _g_sigmoid(rng, v):
    x = _p(rng, *_shape(v), scale=3.0)
    r = Tensor(rng.standard_normal(x.shape))
    return (lambda x: (sigmoid(x) * r).sum()), [x], 1e-4, 1e-5


def _g_elementwise(rng, v):
    shape = _shape(v)
    a, b, c = _p(rng, *shape), _p(rng, *shape), _p(rng, *shape)
    r = Tensor(rng.standard_normal((shape[0], 3 * shape[1]) + shape[2:]))

    def fn(a, b, c):
        return (concat([a + b, a * c, b - c], axis=1) * r).sum()
    return fn, [a, b, c], 1e-4, 1e-5


def _coords(rng, B, H, W, margin=1.5):
    x = rng.uniform(-margin, W - 1 + margin, (B, 1, H, W))
    y = rng.uniform(-margin, H - 1 + margin, (B, 1, H, W))
    return np.concatenate([x, y], axis=1)


def _g_bilinear_source(rng, v):
    B, C, H, W = [(1, 2, 4, 5), (2, 1, 5, 5), (1, 3, 3, 6)][v]
    border = ["clamp", "zero", "clamp"][v]
    src = _p(rng, B, C, H, W)
    coords = Tensor(_coords(rng, B, H + 1, W - 1))
    r = Tensor(rng.standard_normal((B, C, H + 1, W - 1)))
    return (lambda s: (bilinear_sample(s, coords, border) * r).sum()), [src], 1e-4, 1e-5


def _g_bilinear_coords(rng, v):
    B, C, H, W = [(1, 2, 4, 5), (2, 1, 5, 5), (1, 3, 6, 4)][v]
    border = ["clamp", "zero", "zero"][v]
    src = Tensor(rng.standard_normal((B, C, H, W)))
    coords = parameter(_coords(rng, B, H, W, margin=0.8))
    r = Tensor(rng.standard_normal((B, C, H, W)))
    return (lambda c: (bilinear_sample(src, c, border) * r).sum()), [coords], 1e-4, 1e-5


def _g_warp(rng, v):
    B, C, H, W = [(1, 3, 4, 4), (2, 2, 5, 6), (1, 1, 6, 5)][v]
    img, flow = _p(rng, B, C, H, W), _p(rng, B, 2, H, W, scale=1.5)
    r = Tensor(rng.standard_normal((B, C, H, W)))
    border = ["clamp", "zero", "clamp"][v]
    return (lambda i, f: (warp_backward(i, f, border) * r).sum()), [img, flow], 1e-4, 1e-5


def _g_correlation(rng, v):
    B, C, H, W, d = [(1, 3, 4, 4, 1), (2, 2, 5, 5, 2), (1, 4, 3, 6, 1)][v]
    f1, f2 = _p(rng, B, C, H, W), _p(rng, B, C, H, W)
    r = Tensor(rng.standard_normal((B, (2 * d + 1) ** 2, H, W)))
    return (lambda a, b: (correlation_volume(a, b, d) * r).sum()), [f1, f2], 1e-4, 1e-5


def _g_feature_normalize(rng, v):
    x = _p(rng, *[(1, 3, 3, 3), (2, 5, 4, 2), (1, 8, 2, 4)][v])
    r = Tensor(rng.standard_normal(x.shape))
    return (lambda x: (feature_normalize(x) * r).sum()), [x], 1e-4, 1e-5


def _g_census_distance(rng, v):
    B, H, W, patch = [(1, 4, 4, 3), (1, 5, 6, 5), (2, 6, 5, 7)][v]
    img = parameter(rng.uniform(0, 1, (B, 1, H, W)))
    d2 = Tensor(rng.uniform(-1, 1, (B, patch * patch - 1, H, W)))
    r = Tensor(rng.standard_normal((B, 1, H, W)))
    return (lambda i: (census_distance(census_transform(i, patch), d2) * r).sum()), [img], 1e-4, 1e-5


def _g_robust(rng, v):
    x = _p(rng, *_shape(v))
    return (lambda x: robust_penalty(x).sum()), [x], 1e-4, 1e-5


def _pair(rng, B, H, W, flow_scale=1.5):
    i1, i2 = _img(rng, B, 3, H, W), _img(rng, B, 3, H, W)
    flow = _p(rng, B, 2, H, W, scale=flow_scale)
    mask = Tensor(rng.uniform(0, 1, (B, 1, H, W)))
    return i1, i2, flow, mask


SIZES = [(1, 4, 4), (2, 5, 6), (1, 6, 5)]


def _g_photometric(rng, v):
    i1, i2, flow, mask = _pair(rng, *SIZES[v])
    i2 = parameter(i2.data)
    return (lambda f, b: photometric_loss(i1, b, f, mask)), [flow, i2], 1e-4, 1e-5


def _g_census(rng, v):
    i1, i2, flow, mask = _pair(rng, *SIZES[v])
    return (lambda f: census_loss(i1, i2, f, mask)), [flow], 1e-4, 1e-5


def _g_smooth(rng, v):
    B, H, W = SIZES[v]
    flow = _p(rng, B, 2, H, W)
    img = _img(rng, B, 3, H, W)
    order = [1, 2, 1][v]
    return (lambda f: smooth_loss(f, img, order=order)), [flow], 1e-4, 1e-5


def _g_boundary(rng, v):
    i1, i2, flow, mask = _pair(rng, *SIZES[v], flow_scale=2.5)
    dil = [2, 3, 4][v]
    return (lambda f: boundary_dilated_photometric(i1, i2, f, mask, dil)), [flow], 1e-4, 1e-5


def _levels(rng, B, depth, base):
    scales = [2 ** (depth - i + 1) for i in range(depth + 1)]
    H = base * scales[0]
    flows = [_p(rng, B, 2, H // s, H // s) for s in scales]
    final = Tensor(rng.standard_normal((B, 2, H, H)))
    mask = Tensor(rng.uniform(0, 1, (B, 1, H, H)))
    return flows, final, mask, scales, H


def _g_pdl(rng, v):
    B, depth, normalize, use_occ = [(1, 1, True, True), (2, 2, False, True), (1, 1, True, False)][v]
    flows, final, mask, scales, _ = _levels(rng, B, depth, 1)

    def fn(*fl):
        return pyramid_distillation_loss(_outputs(list(fl), final, scales), mask,
                                         normalize=normalize, use_occ=use_occ)
    return fn, flows, 1e-4, 1e-5


def _g_pul(mode):
    def build(rng, v):
        B, depth = [(1, 1), (1, 2), (2, 1)][v]
        flows, final, mask, scales, H = _levels(rng, B, depth, 2)
        i1, i2 = _img(rng, B, 3, H, H), _img(rng, B, 3, H, H)
        cfg = LossConfig(dilation=2)

        def fn(*fl):
            return pyramid_unsupervised_loss(_outputs(list(fl), final, scales), i1, i2, mask, mode, cfg=cfg)
        return fn, flows, 1e-4, 1e-5
    return build


def _g_total(rng, v):
    B, H, W = SIZES[v]
    i1, i2, flow, mask = _pair(rng, B, 2 * H, 2 * W)
    cfg = LossConfig(pyramid="none", dilation=2)
    out = SimpleNamespace(flows=[], flow=None, scales=[])

    def fn(f):
        out.flow = f
        return total_loss(out, i1, i2, mask, LossWeights(), cfg).total
    return fn, [flow], 1e-4, 1e-5


def _g_sgu(rng, v):
    mode = ["sgu", "sgu_fm", "sgu_m"][v]
    cfg, params = tiny_model(mode, seed=v)
    B, h = 1 + v % 2, 3
    f1, f2 = _p(rng, B, 4, 2 * h, 2 * h), _p(rng, B, 4, 2 * h, 2 * h)
    coarse = _p(rng, B, 2, h, h)
    names = sorted(k for k in params if k.startswith("sgu."))
    r = Tensor(rng.standard_normal((B, 2, 2 * h, 2 * h)))

    def fn(a, b, c, *ps):
        local = dict(params)
        local.update(zip(names, ps))
        return (sgu_upsample(a, b, c, local, cfg)[0] * r).sum()
    return fn, [f1, f2, coarse] + [params[k] for k in names], 1e-4, 1e-5


def _g_decoder(rng, v):
    cfg, params = tiny_model(seed=v)
    B, h = [(1, 3), (2, 4), (1, 5)][v]
    f1, f2 = _p(rng, B, 4, h, h), _p(rng, B, 4, h, h)
    flow = _p(rng, B, 2, h, h)
    names = sorted(k for k in params if k.startswith("dec."))
    r = Tensor(rng.standard_normal((B, 2, h, h)))

    def fn(a, b, f, *ps):
        local = dict(params)
        local.update(zip(names, ps))
        return (decode_level(a, b, f, local, cfg) * r).sum()
    return fn, [f1, f2, flow] + [params[k] for k in names], 1e-4, 1e-5


def _g_end_to_end(rng, v):
    mode = ["sgu", "bilinear", "sgu"][v]
    size = [8, 8, 12][v]
    cfg, params = tiny_model(mode, seed=10 + v, head_scale=0.5)
    B = 1 + (v == 1)
    i1, i2 = _img(rng, B, 3, size, size), _img(rng, B, 3, size, size)
    mask = Tensor(rng.uniform(0.5, 1, (B, 1, size, size)))
    names = sorted(params)
    lcfg = LossConfig(pyramid="none", dilation=2)

    def fn(*ps):
        local = dict(zip(names, ps))
        return total_loss(forward(i1, i2, local, cfg), i1, i2, mask, LossWeights(), lcfg).total
    return fn, [params[k] for k in names], 1e-3, 1e-5


GRADIENT_CASES: Dict[str, Callable] = {
    "conv2d": _g_conv2d,
    "leaky_relu": _g_leaky,
    "sigmoid": _g_sigmoid,
    "elementwise_concat": _g_elementwise,
    "bilinear_sample_source": _g_bilinear_source,
    "bilinear_sample_coords": _g_bilinear_coords,
    "warp_backward": _g_warp,
    "correlation_volume": _g_correlation,
    "feature_normalize": _g_feature_normalize,
    "census_distance": _g_census_distance,
    "robust_penalty": _g_robust,
    "photometric_loss": _g_photometric,
    "census_loss": _g_census,
    "smooth_loss": _g_smooth,
    "boundary_dilated_photometric": _g_boundary,
    "pyramid_distillation_loss": _g_pdl,
    "pyramid_unsupervised_loss_up": _g_pul("pul_up"),
    "pyramid_unsupervised_loss_down": _g_pul("pul_down"),
    "total_loss": _g_total,
    "sgu_upsample": _g_sgu,
    "decode_level": _g_decoder,
    "end_to_end": _g_end_to_end,
}

GRADIENT_MAX_ELEMENTS = {"end_to_end": 12, "sgu_upsample": 60, "decode_level": 60}


def run_gradient_case(name: str, variant: int, seed: int = 0):
    rng = np.random.default_rng(1000 * seed + 17 * variant + sum(map(ord, name)))
    with precision(F64):
        fn, inputs, tol, step = GRADIENT_CASES[name](rng, variant)
        return grad_check(fn, inputs, tolerance=tol, step=step,
                          max_elements=GRADIENT_MAX_ELEMENTS.get(name, 10_000), seed=variant)


# ------------------------------------------------------------------ oracles
# Each builder maps an rng to (implementation value, oracle value).

def _o_conv2d(rng):
    B, C, O = int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
    H, W = int(rng.integers(3, 8)), int(rng.integers(3, 8))
    s, p = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x, w, b = rng.standard_normal((B, C, H, W)), rng.standard_normal((O, C, 3, 3)), rng.standard_normal(O)
    got = conv2d(Tensor(x), Tensor(w), Tensor(b), s, p).data
    return got, oracles.conv2d(x, w, b, s, p)


def _o_correlation(rng):
    B, C, H, W, d = 1, int(rng.integers(1, 5)), int(rng.integers(2, 7)), int(rng.integers(2, 7)), int(rng.integers(1, 3))
    f1, f2 = rng.standard_normal((B, C, H, W)), rng.standard_normal((B, C, H, W))
    return correlation_volume(Tensor(f1), Tensor(f2), d).data, oracles.correlation(f1, f2, d)


def _o_downsample(rng):
    f = int(rng.choice([2, 4]))
    kind = str(rng.choice(["flow", "mask", "image"]))
    t = rng.standard_normal((1, int(rng.integers(1, 4)), f * int(rng.integers(1, 4)), f * int(rng.integers(1, 4))))
    return downsample(Tensor(t), f, kind).data, oracles.downsample(t, f, kind)


def _o_photometric(rng):
    i1, i2 = rng.uniform(0, 1, (1, 3, 8, 8)), rng.uniform(0, 1, (1, 3, 8, 8))
    flow = rng.uniform(-3, 3, (1, 2, 8, 8))
    mask = rng.uniform(0, 1, (1, 1, 8, 8)) * (rng.uniform(size=(1, 1, 8, 8)) > 0.2)
    got = photometric_loss(Tensor(i1), Tensor(i2), Tensor(flow), Tensor(mask)).data
    return got, oracles.photometric(i1, i2, flow, mask)


def _o_distillation(rng):
    B = int(rng.integers(1, 3))
    scales = [4, 2]
    final = rng.uniform(-3, 3, (B, 2, 8, 8))
    flows = [rng.uniform(-2, 2, (B, 2, 8 // s, 8 // s)) for s in scales]
    mask = rng.uniform(0, 1, (B, 1, 8, 8))
    normalize, use_occ = bool(rng.integers(0, 2)), bool(rng.integers(0, 2))
    got = pyramid_distillation_loss(_outputs([Tensor(f) for f in flows], Tensor(final), scales),
                                    Tensor(mask), normalize=normalize, use_occ=use_occ).data
    return got, oracles.distillation(flows, final, mask, scales, normalize=normalize, use_occ=use_occ)


def _o_census(rng):
    i1, i2 = rng.uniform(0, 1, (1, 3, 8, 8)), rng.uniform(0, 1, (1, 3, 8, 8))
    flow = rng.uniform(-2, 2, (1, 2, 8, 8))
    mask = rng.uniform(0, 1, (1, 1, 8, 8))
    got = census_loss(Tensor(i1), Tensor(i2), Tensor(flow), Tensor(mask)).data
    return got, oracles.census(i1, i2, flow, mask)


ORACLE_CASES: Dict[str, Tuple[Callable, int]] = {
    "conv2d": (_o_conv2d, 100),
    "correlation_volume": (_o_correlation, 100),
    "downsample": (_o_downsample, 100),
    "photometric_loss": (_o_photometric, 100),
    "pyramid_distillation_loss": (_o_distillation, 100),
    "census_loss": (_o_census, 5),
}


def run_oracle_case(name: str, trials: Optional[int] = None, seed: int = 0) -> Tuple[float, int]:
    """Worst relative error over ``trials`` random instances."""
    build, default = ORACLE_CASES[name]
    rng = np.random.default_rng(seed + sum(map(ord, name)))
    worst = 0.0
    n = default if trials is None else trials
    with precision(F64):
        for _ in range(n):
            got, ref = build(rng)
            worst = max(worst, rel_err(got, ref))
    return worst, n


# --------------------------------------------------------------- invariants

def _sgu_inputs(seed, mode="sgu"):
    cfg, params = tiny_model(mode, seed=seed)
    rng = np.random.default_rng(seed)
    f1, f2 = _c(rng, 2, 4, 8, 8), _c(rng, 2, 4, 8, 8)
    coarse = _c(rng, 2, 2, 4, 4, scale=2.0)
    return cfg, params, f1, f2, coarse


def inv_sgu_map_one() -> Tuple[bool, str]:
    cfg, params, f1, f2, coarse = _sgu_inputs(1)
    got = sgu_upsample(f1, f2, coarse, params, cfg, force_map=1.0)[0].data
    ref = sgu_upsample(f1, f2, coarse, params, cfg, mode="bilinear")[0].data
    return bool(np.array_equal(got, ref)), "B=1 vs bilinear bitwise"


def inv_sgu_zero_interp_flow() -> Tuple[bool, str]:
    cfg, params, f1, f2, coarse = _sgu_inputs(2)
    w, b = params["sgu.head.weight"], params["sgu.head.bias"]
    w.data[:2] = 0.0
    b.data[:2] = 0.0
    b.data[2] = 0.7
    ref = upsample_bilinear_flow(coarse, 2).data
    err = rel_err(sgu_upsample(f1, f2, coarse, params, cfg)[0].data, ref)
    return err <= 1e-12, f"U=0 vs bilinear rel err {err:.2e}"


def inv_sgu_constant_flow() -> Tuple[bool, str]:
    cfg, params, f1, f2, _ = _sgu_inputs(3)
    coarse = Tensor(np.broadcast_to(np.array([1.25, -0.5]).reshape(1, 2, 1, 1), (2, 2, 4, 4)).copy())
    out = sgu_upsample(f1, f2, coarse, params, cfg)[0].data
    ref = np.broadcast_to(np.array([2.5, -1.0]).reshape(1, 2, 1, 1), out.shape)
    err = rel_err(out, ref)
    return err <= 1e-6, f"constant flow rel err {err:.2e}"


def inv_census_offset() -> Tuple[bool, str]:
    rng = np.random.default_rng(5)
    i1, i2 = rng.uniform(0, 0.7, (1, 3, 8, 8)), rng.uniform(0, 0.7, (1, 3, 8, 8))
    flow, mask = Tensor(rng.uniform(-2, 2, (1, 2, 8, 8))), Tensor(np.ones((1, 1, 8, 8)))
    a = census_loss(Tensor(i1), Tensor(i2), flow, mask).data
    b = census_loss(Tensor(i1 + 0.25), Tensor(i2 + 0.25), flow, mask).data
    return bool(a == b), f"offset 0.25: {float(a)!r} vs {float(b)!r}"


def inv_flo_roundtrip() -> Tuple[bool, str]:
    rng = np.random.default_rng(6)
    f = rng.standard_normal((2, 7, 9)).astype(np.float32)
    buf = encode_flo(f)
    back = decode_flo(buf)
    ok = back.tobytes() == f.tobytes() and len(buf) == 12 + 8 * 7 * 9
    return ok, f"{len(buf)} bytes"


def inv_checkpoint_roundtrip() -> Tuple[bool, str]:
    params = init_params(ModelConfig(), seed=3)
    a = ckpt.encode(params)
    b = ckpt.encode(ckpt.decode(a))
    return a == b, f"{len(a)} bytes"


def inv_forward_deterministic() -> Tuple[bool, str]:
    cfg, params = tiny_model(seed=4)
    rng = np.random.default_rng(7)
    i1, i2 = _img(rng, 1, 3, 8, 8), _img(rng, 1, 3, 8, 8)
    a = forward(i1, i2, params, cfg).flow.data
    b = forward(i1, i2, params, cfg).flow.data
    return bool(np.array_equal(a, b)), "two forwards bitwise"


def inv_loss_resum() -> Tuple[bool, str]:
    rng = np.random.default_rng(8)
    cfg, params = tiny_model(seed=5)
    i1, i2 = _img(rng, 1, 3, 8, 8), _img(rng, 1, 3, 8, 8)
    out = forward(i1, i2, params, cfg)
    w = LossWeights()
    bd = total_loss(out, i1, i2, Tensor(np.ones((1, 1, 8, 8))), w, LossConfig(dilation=2))
    err = abs(bd.resum(w) - bd.value())
    return err <= 1e-6, f"|resum - total| = {err:.2e}"


INVARIANT_CASES = {
    "sgu_map_one_is_bilinear": inv_sgu_map_one,
    "sgu_zero_interp_flow_is_bilinear": inv_sgu_zero_interp_flow,
    "sgu_constant_flow_doubles": inv_sgu_constant_flow,
    "census_additive_invariance": inv_census_offset,
    "flo_roundtrip": inv_flo_roundtrip,
    "checkpoint_roundtrip": inv_checkpoint_roundtrip,
    "forward_deterministic": inv_forward_deterministic,
    "loss_breakdown_resum": inv_loss_resum,
}


def run_invariant(name):
    with precision(F64):
        return INVARIANT_CASES[name]()


# ------------------------------------------------------------------- driver

def run_all(report: Optional[Callable[[CheckResult], None]] = None, oracle_trials: Optional[int] = None
            ) -> List[CheckResult]:
    results = []

    def record(suite, name, fn):
        t = time.time()
        try:
            passed, detail = fn()
        except Exception as e:  # a crashing check is a failing check
            passed, detail = False, f"{type(e).__name__}: {e}"
        r = CheckResult(suite, name, bool(passed), detail, time.time() - t)
        results.append(r)
        if report:
            report(r)

    for name in GRADIENT_CASES:
        def g(name=name):
            reps = [run_gradient_case(name, v) for v in range(3)]
            worst = max(r.max_rel_err for r in reps)
            msgs = [r.message for r in reps if not r.passed]
            return all(reps), f"max rel err {worst:.2e} over 3 shapes" + (f"; {msgs[0]}" if msgs else "")
        record("gradient", name, g)
    for name in ORACLE_CASES:
        def o(name=name):
            worst, n = run_oracle_case(name, oracle_trials)
            return worst <= 1e-6, f"max rel err {worst:.2e} over {n} instances"
        record("oracle", name, o)
    for name in INVARIANT_CASES:
        record("invariant", name, lambda name=name: run_invariant(name))
    total = sum(r.seconds for r in results)
    if total > SOFT_BUDGET_SECONDS:
        warnings.warn(f"verify took {total:.0f}s, above the {SOFT_BUDGET_SECONDS:.0f}s budget")
    return results


def format_result(r: CheckResult) -> str:
    return f"{'PASS' if r.passed else 'FAIL'} {r.suite}/{r.name}: {r.detail} ({r.seconds:.1f}s)"
