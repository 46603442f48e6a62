"""Coarse-to-fine pyramid flow network with a shared decoder and a shared
self-guided upsampler.

Level 0 is the coarsest.  With ``finest_scale=2`` the finest decoded level
sits at half the image resolution and the final flow is a bilinear x2
upsample of it.  One decoder parameter set and one upsampler parameter set
serve every level, which is why all encoder levels share a channel width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from guidedflow.flow_ops import (
    center_channels,
    correlation_volume,
    feature_normalize,
    upsample_bilinear_flow,
    warp_backward,
)
from guidedflow.ops import conv2d, leaky_relu, sigmoid
from guidedflow.tensor import Tensor, concat, expand, parameter, zeros

SGU_MODES = ("sgu", "sgu_m", "sgu_fm", "bilinear")

Params = Dict[str, Tensor]


@dataclass
class ModelConfig:
    depth: int = 4                    # N: levels 0..N
    feat_channels: int = 32
    max_disp: int = 4
    sgu_mode: str = "sgu"
    finest_scale: int = 2
    decoder_channels: tuple = (128, 128, 96, 64, 32)
    sgu_channels: tuple = (32, 32, 32, 16, 8)

    def __post_init__(self):
        if self.sgu_mode not in SGU_MODES:
            raise ValueError(f"unknown upsample mode {self.sgu_mode!r}; expected one of {SGU_MODES}")
        if self.finest_scale not in (2, 4):
            raise ValueError(f"finest_scale must be 2 or 4, got {self.finest_scale}")
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)
        self.sgu_channels = tuple(int(c) for c in self.sgu_channels)

    @property
    def levels(self) -> int:
        return self.depth + 1

    @property
    def image_factor(self) -> int:
        """Image extents must be divisible by this."""
        return self.finest_scale * 2 ** self.depth

    def level_scale(self, level: int) -> int:
        """Downsampling factor of ``level`` relative to the image."""
        return self.finest_scale * 2 ** (self.depth - level)


@dataclass
class PyramidOutputs:
    flows: List[Tensor]                       # V^i, i = 0..N (level pixels)
    flow: Tensor                              # final flow at image resolution
    interp_flows: List[Optional[Tensor]] = field(default_factory=list)   # U^i (None at level 0)
    interp_maps: List[Optional[Tensor]] = field(default_factory=list)    # B^i
    features1: List[Tensor] = field(default_factory=list)
    features2: List[Tensor] = field(default_factory=list)
    scales: List[int] = field(default_factory=list)


def _he(rng, o, i, k, dtype):
    std = np.sqrt(2.0 / (1 + 0.1 ** 2) / (i * k * k))
    return (rng.standard_normal((o, i, k, k)) * std).astype(dtype)


def _add_conv(params, rng, name, cin, cout, k=3, dtype=np.float32, zero=False):
    w = np.zeros((cout, cin, k, k), dtype) if zero else _he(rng, cout, cin, k, dtype)
    params[f"{name}.weight"] = parameter(w, name=f"{name}.weight")
    params[f"{name}.bias"] = parameter(np.zeros(cout, dtype), name=f"{name}.bias")


def sgu_head_channels(mode: str) -> int:
    return 3 if mode == "sgu" else 2


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Params:
    rng = np.random.default_rng(seed)
    params: Params = {}
    c = cfg.feat_channels
    n_stem = int(np.log2(cfg.finest_scale))
    for level in range(cfg.depth, -1, -1):
        if level == cfg.depth:
            cin = 3
            for s in range(n_stem):
                _add_conv(params, rng, f"enc{level}.down{s}", cin, c, dtype=dtype)
                cin = c
        else:
            _add_conv(params, rng, f"enc{level}.down0", c, c, dtype=dtype)
        _add_conv(params, rng, f"enc{level}.conv", c, c, dtype=dtype)

    n_corr = (2 * cfg.max_disp + 1) ** 2
    cin = n_corr + c + 2
    for k, cout in enumerate(cfg.decoder_channels):
        _add_conv(params, rng, f"dec.conv{k}", cin, cout, dtype=dtype)
        cin = cout
    _add_conv(params, rng, "dec.head", cin, 2, dtype=dtype, zero=True)

    if cfg.sgu_mode != "bilinear":
        cin = 2 * c
        for k, cout in enumerate(cfg.sgu_channels):
            _add_conv(params, rng, f"sgu.conv{k}", cin, cout, dtype=dtype)
            cin += cout
        _add_conv(params, rng, "sgu.head", cin, sgu_head_channels(cfg.sgu_mode), dtype=dtype, zero=True)
    return params


def _conv(params, name, x, stride=1, act=True):
    y = conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride, padding=1)
    return leaky_relu(y) if act else y


def check_image_extents(shape, cfg: ModelConfig) -> None:
    H, W = shape[-2:]
    f = cfg.image_factor
    if H % f or W % f:
        ph, pw = (-H) % f, (-W) % f
        raise ValueError(
            f"image extents {H}x{W} must be divisible by {f}; pad by {ph} rows and {pw} columns"
        )


def encode(image: Tensor, params: Params, cfg: ModelConfig) -> List[Tensor]:
    """Feature pyramid, coarsest first: ``feats[i]`` is at ``1/level_scale(i)``."""
    check_image_extents(image.shape, cfg)
    feats: List[Tensor] = []
    x = image
    n_stem = int(np.log2(cfg.finest_scale))
    for level in range(cfg.depth, -1, -1):
        if level == cfg.depth:
            for s in range(n_stem):
                x = _conv(params, f"enc{level}.down{s}", x, stride=2)
        else:
            x = _conv(params, f"enc{level}.down0", x, stride=2)
        x = _conv(params, f"enc{level}.conv", x)
        feats.append(x)
    return feats[::-1]


def decode_level(f1: Tensor, f2: Tensor, flow_in: Optional[Tensor], params: Params,
                 cfg: ModelConfig) -> Tensor:
    """Refine ``flow_in`` at one level; ``None`` seeds the coarsest level with zeros."""
    B, _, H, W = f1.shape
    if flow_in is None:
        flow_in = zeros((B, 2, H, W), dtype=f1.dtype)
        warped = f2
    else:
        if flow_in.shape[2:] != (H, W) or f2.shape != f1.shape:
            raise ValueError(f"decode_level: features {f1.shape}/{f2.shape} vs flow {flow_in.shape}")
        warped = warp_backward(f2, flow_in, border="zero")
    volume = correlation_volume(feature_normalize(center_channels(f1)),
                                feature_normalize(center_channels(warped)), cfg.max_disp)
    x = concat([volume, f1, flow_in], axis=1)
    for k in range(len(cfg.decoder_channels)):
        x = _conv(params, f"dec.conv{k}", x)
    return flow_in + _conv(params, "dec.head", x, act=False)


def sgu_upsample(f1: Tensor, f2: Tensor, flow_coarse: Tensor, params: Params, cfg: ModelConfig,
                 mode: Optional[str] = None, force_map: Optional[float] = None):
    """Upsample a level-(i-1) flow to level i.

    Returns ``(flow_up, interp_flow, interp_map)``; the last two are ``None``
    for modes that do not produce them.  ``force_map`` pins the fusion map to
    a constant (``sgu_m`` pins it to 0).
    """
    mode = cfg.sgu_mode if mode is None else mode
    if mode not in SGU_MODES:
        raise ValueError(f"unknown upsample mode {mode!r}; expected one of {SGU_MODES}")
    bar = upsample_bilinear_flow(flow_coarse, 2)
    if mode == "bilinear":
        return bar, None, None
    if bar.shape[2:] != f1.shape[2:]:
        raise ValueError(f"sgu_upsample: upsampled flow {bar.shape} vs features {f1.shape}")
    x = concat([f1, warp_backward(f2, bar, border="zero")], axis=1)
    for k in range(len(cfg.sgu_channels)):
        x = concat([x, _conv(params, f"sgu.conv{k}", x)], axis=1)
    out = _conv(params, "sgu.head", x, act=False)
    if mode == "sgu_fm":
        return bar + out[:, 0:2], None, None
    interp_flow = out[:, 0:2]
    tilde = warp_backward(bar, interp_flow, border="clamp")
    if mode == "sgu_m" and force_map is None:
        force_map = 0.0
    B, _, H, W = bar.shape
    if force_map is not None:
        interp_map = Tensor(np.full((B, 1, H, W), force_map, dtype=bar.dtype))
    else:
        interp_map = sigmoid(out[:, 2:3])
    m2 = expand(interp_map, (B, 2, H, W))
    fused = m2 * bar + (1.0 - m2) * tilde
    return fused, interp_flow, interp_map


def forward(image1: Tensor, image2: Tensor, params: Params, cfg: ModelConfig,
            force_map: Optional[float] = None) -> PyramidOutputs:
    if image1.shape != image2.shape:
        raise ValueError(f"images differ in shape: {image1.shape} vs {image2.shape}")
    B = image1.shape[0]
    both = encode(concat([image1, image2], axis=0), params, cfg)
    f1s = [f[:B] for f in both]
    f2s = [f[B:] for f in both]
    flows, interp_flows, interp_maps = [], [None], [None]
    flow = decode_level(f1s[0], f2s[0], None, params, cfg)
    flows.append(flow)
    for level in range(1, cfg.levels):
        up, u, m = sgu_upsample(f1s[level], f2s[level], flow, params, cfg, force_map=force_map)
        interp_flows.append(u)
        interp_maps.append(m)
        flow = decode_level(f1s[level], f2s[level], up, params, cfg)
        flows.append(flow)
    final = upsample_bilinear_flow(flow, cfg.finest_scale)
    return PyramidOutputs(
        flows=flows,
        flow=final,
        interp_flows=interp_flows,
        interp_maps=interp_maps,
        features1=f1s,
        features2=f2s,
        scales=[cfg.level_scale(i) for i in range(cfg.levels)],
    )


def count_parameters(params: Params, prefix: str = "") -> int:
    return sum(p.size for k, p in params.items() if k.startswith(prefix))
