"""Unsupervised flow objective and pyramid-level losses."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from guidedflow.flow_ops import (
    bilinear_sample,
    broadcast_channels,
    census_transform,
    downsample,
    pixel_grid,
    to_gray,
    upsample_bilinear_flow,
    warp_backward,
)
from guidedflow.tensor import Tensor

PYRAMID_MODES = ("pdl", "pul_up", "pul_down", "none")

CENSUS_HAMMING_SOFTNESS = 0.1
CHARBONNIER_EPS = 0.001
CHARBONNIER_ALPHA = 0.45


@dataclass
class LossWeights:
    lambda_d: float = 0.01
    lambda_s: float = 0.05
    lambda_c: float = 1.0
    lambda_a: float = 0.5
    lambda_b: float = 1.0
    q: float = 0.4
    eps: float = 0.01

    def __post_init__(self):
        for k in ("lambda_d", "lambda_s", "lambda_c", "lambda_a", "lambda_b"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative, got {getattr(self, k)}")
        if self.q <= 0 or self.eps <= 0:
            raise ValueError("q and eps must be positive")


@dataclass
class LossConfig:
    pyramid: str = "pdl"
    pdl_normalize: bool = True
    pdl_use_occ: bool = True
    pul_weight: float = 0.01
    smooth_beta: float = 10.0
    smooth_order: int = 1
    census_patch: int = 7
    census_scale: float = 1.0         # intensity scale fed to the census transform
    dilation: int = 6

    def __post_init__(self):
        if self.pyramid not in PYRAMID_MODES:
            raise ValueError(f"unknown pyramid loss mode {self.pyramid!r}; expected one of {PYRAMID_MODES}")
        if self.smooth_order not in (1, 2):
            raise ValueError(f"smooth_order must be 1 or 2, got {self.smooth_order}")
        if self.dilation < 0:
            raise ValueError("dilation must be >= 0")


@dataclass
class LossBreakdown:
    total: Tensor
    terms: Dict[str, float] = field(default_factory=dict)

    def value(self) -> float:
        return float(self.total.data)

    def resum(self, w: LossWeights) -> float:
        t = self.terms
        return (t["L_m"] + w.lambda_d * t["L_d"] + w.lambda_s * t["L_s"] + w.lambda_c * t["L_c"]
                + w.lambda_a * t["L_a"] + w.lambda_b * t["L_b"])


def robust_penalty(x: Tensor, q: float = 0.4, eps: float = 0.01) -> Tensor:
    """``(|x| + eps) ** q`` elementwise."""
    return (x.abs() + eps) ** q


def _zero(like: Tensor) -> Tensor:
    return Tensor(np.zeros((), dtype=like.dtype))


def _masked_mean(per_pixel: Tensor, mask: Tensor) -> Tensor:
    """Sum of ``per_pixel * mask`` over batch and pixels divided by the mask mass."""
    mass = float(mask.data.sum())
    if mass <= 0:
        return _zero(per_pixel)
    return (per_pixel * mask).sum() * (1.0 / mass)


def _photometric_from_warped(image1: Tensor, warped: Tensor, mask: Tensor, q: float, eps: float) -> Tensor:
    per_pixel = robust_penalty(image1 - warped, q, eps).mean(axis=1, keepdims=True)
    return _masked_mean(per_pixel, mask)


def photometric_loss(image1: Tensor, image2: Tensor, flow: Tensor, mask: Tensor,
                     q: float = 0.4, eps: float = 0.01, border: str = "clamp") -> Tensor:
    """Occlusion-masked robust brightness-constancy loss."""
    warped = warp_backward(image2, flow, border=border)
    return _photometric_from_warped(image1, warped, mask, q, eps)


def _linear_extrapolate(image: np.ndarray, width: int) -> np.ndarray:
    """Pad the last two axes by continuing the border gradient, clipped to [0, 1]."""
    if width == 0:
        return image
    k = np.arange(1, width + 1, dtype=image.dtype)

    def ext(a, axis):
        a = np.moveaxis(a, axis, -1)
        n = a.shape[-1]
        if n >= 2:
            lo_slope = a[..., 0:1] - a[..., 1:2]
            hi_slope = a[..., n - 1:n] - a[..., n - 2:n - 1]
        else:
            lo_slope = hi_slope = np.zeros_like(a[..., :1])
        lo = a[..., 0:1] + lo_slope * k[::-1]
        hi = a[..., n - 1:n] + hi_slope * k
        out = np.concatenate([lo, a, hi], axis=-1)
        return np.moveaxis(out, -1, axis)

    out = ext(ext(image, image.ndim - 1), image.ndim - 2)
    return np.clip(out, 0.0, 1.0)


def boundary_dilated_photometric(image1: Tensor, image2: Tensor, flow: Tensor, mask: Tensor,
                                 dilation: int, q: float = 0.4, eps: float = 0.01) -> Tensor:
    """Photometric loss against a second frame extended by ``dilation`` pixels.

    Sampling positions that leave the frame read linearly extrapolated content
    from the dilated border instead of the clamped edge pixel.
    """
    if dilation < 0:
        raise ValueError("dilation must be >= 0")
    if dilation == 0:
        return photometric_loss(image1, image2, flow, mask, q, eps)
    B, _, H, W = flow.shape
    padded = Tensor(_linear_extrapolate(image2.data, dilation))
    coords = flow + Tensor(pixel_grid(B, H, W, flow.dtype))
    warped = bilinear_sample(padded, coords, border="clamp", index_offset=dilation)
    return _photometric_from_warped(image1, warped, mask, q, eps)


def census_distance(desc1: Tensor, desc2: Tensor) -> Tensor:
    """Per-pixel Charbonnier of the soft Hamming distance between descriptors.

    The Hamming term is averaged over the neighbour channels, so it lies in [0, 1).
    """
    d = desc1 - desc2
    sq = d * d
    hamming = (sq / (sq + CENSUS_HAMMING_SOFTNESS)).mean(axis=1, keepdims=True)
    return (hamming * hamming + CHARBONNIER_EPS ** 2) ** CHARBONNIER_ALPHA


def census_loss(image1: Tensor, image2: Tensor, flow: Tensor, mask: Tensor, patch: int = 7,
                scale: float = 1.0) -> Tensor:
    """Masked mean census distance between frame 1 and the warped frame-2 descriptor."""
    c1 = census_transform(to_gray(image1) * scale, patch)
    c2 = census_transform(to_gray(image2) * scale, patch)
    c2w = warp_backward(c2, flow, border="clamp")
    return _masked_mean(census_distance(c1, c2w), mask)


def _image_weights(image: Tensor, beta: float, axis: int, stride: int = 1) -> Tensor:
    a = image.data
    n = a.shape[axis]
    hi = np.take(a, np.arange(stride, n), axis=axis)
    lo = np.take(a, np.arange(0, n - stride), axis=axis)
    return Tensor(np.exp(-beta * np.abs(hi - lo).mean(axis=1, keepdims=True)))


def smooth_loss(flow: Tensor, image: Tensor, beta: float = 10.0, order: int = 1) -> Tensor:
    """Edge-aware smoothness: mean |d flow| * exp(-beta * mean_c |d image|), x plus y."""
    if flow.shape[2:] != image.shape[2:]:
        raise ValueError(f"smooth_loss: flow {flow.shape} vs image {image.shape}")
    C = flow.shape[1]
    if order == 1:
        dx = flow[:, :, :, 1:] - flow[:, :, :, :-1]
        dy = flow[:, :, 1:, :] - flow[:, :, :-1, :]
        wx, wy = _image_weights(image, beta, 3), _image_weights(image, beta, 2)
    elif order == 2:
        dx = flow[:, :, :, 2:] - flow[:, :, :, 1:-1] * 2.0 + flow[:, :, :, :-2]
        dy = flow[:, :, 2:, :] - flow[:, :, 1:-1, :] * 2.0 + flow[:, :, :-2, :]
        wx, wy = _image_weights(image, beta, 3, 2), _image_weights(image, beta, 2, 2)
    else:
        raise ValueError(f"smooth_loss order must be 1 or 2, got {order}")
    total = _zero(flow)
    if dx.shape[3] > 0:
        total = total + (dx.abs() * broadcast_channels(wx, C)).mean()
    if dy.shape[2] > 0:
        total = total + (dy.abs() * broadcast_channels(wy, C)).mean()
    return total


def pyramid_distillation_loss(outputs, mask: Tensor, q: float = 0.4, eps: float = 0.01,
                              normalize: bool = True, use_occ: bool = True) -> Tensor:
    """Distil the (gradient-stopped) final flow into every pyramid level."""
    label_full = outputs.flow.detach()
    total = _zero(label_full)
    for flow_i, s in zip(outputs.flows, outputs.scales):
        label = downsample(label_full, s, kind="flow")
        pen = robust_penalty(flow_i - label, q, eps).sum(axis=1, keepdims=True)
        if use_occ:
            m = downsample(mask, s, kind="mask")
        else:
            m = Tensor(np.ones(pen.shape, dtype=pen.dtype))
        if normalize:
            total = total + _masked_mean(pen, m)
        else:
            total = total + (pen * m).sum()
    return total


def unsupervised_terms(image1: Tensor, image2: Tensor, flow: Tensor, mask: Tensor,
                       weights: LossWeights, cfg: LossConfig, dilation: Optional[int] = None) -> Dict[str, Tensor]:
    """Photometric, census, smoothness and boundary terms for one flow (enabled ones only)."""
    dilation = cfg.dilation if dilation is None else dilation
    terms = {"L_m": photometric_loss(image1, image2, flow, mask, weights.q, weights.eps)}
    if weights.lambda_c > 0:
        terms["L_c"] = census_loss(image1, image2, flow, mask, cfg.census_patch, cfg.census_scale)
    if weights.lambda_s > 0:
        terms["L_s"] = smooth_loss(flow, image1, cfg.smooth_beta, cfg.smooth_order)
    if weights.lambda_b > 0:
        terms["L_b"] = boundary_dilated_photometric(image1, image2, flow, mask, dilation,
                                                    weights.q, weights.eps)
    return terms


def loss_stack(image1, image2, flow, mask, weights: LossWeights, cfg: LossConfig,
               dilation: Optional[int] = None) -> Tensor:
    terms = unsupervised_terms(image1, image2, flow, mask, weights, cfg, dilation)
    lam = {"L_m": 1.0, "L_c": weights.lambda_c, "L_s": weights.lambda_s, "L_b": weights.lambda_b}
    total = terms["L_m"]
    for k, v in terms.items():
        if k != "L_m":
            total = total + v * lam[k]
    return total


def pyramid_unsupervised_loss(outputs, image1: Tensor, image2: Tensor, mask: Tensor, mode: str,
                              weights: Optional[LossWeights] = None,
                              cfg: Optional[LossConfig] = None) -> Tensor:
    """Unsupervised loss stack applied at every pyramid level.

    ``pul_up`` upsamples each level's flow to image resolution; ``pul_down``
    downsamples images and mask to the level and uses the flow as is.
    """
    weights = weights or LossWeights()
    cfg = cfg or LossConfig()
    if mode not in ("pul_up", "pul_down"):
        raise ValueError(f"unknown pyramid unsupervised mode {mode!r}")
    total = _zero(outputs.flow)
    for flow_i, s in zip(outputs.flows, outputs.scales):
        if mode == "pul_up":
            up = upsample_bilinear_flow(flow_i, s)
            total = total + loss_stack(image1, image2, up, mask, weights, cfg)
        else:
            i1 = downsample(image1, s, kind="image")
            i2 = downsample(image2, s, kind="image")
            m = downsample(mask, s, kind="mask")
            dil = int(np.ceil(cfg.dilation / s))
            total = total + loss_stack(i1, i2, flow_i, m, weights, cfg, dilation=dil)
    return total


def total_loss(outputs, image1: Tensor, image2: Tensor, mask: Tensor,
               weights: Optional[LossWeights] = None, cfg: Optional[LossConfig] = None) -> LossBreakdown:
    """Weighted sum of all enabled terms, with a per-term breakdown."""
    weights = weights or LossWeights()
    cfg = cfg or LossConfig()
    terms = unsupervised_terms(image1, image2, outputs.flow, mask, weights, cfg)
    if cfg.pyramid == "pdl" and weights.lambda_d > 0:
        terms["L_d"] = pyramid_distillation_loss(outputs, mask, weights.q, weights.eps,
                                                 cfg.pdl_normalize, cfg.pdl_use_occ)
        lam_d = weights.lambda_d
    elif cfg.pyramid in ("pul_up", "pul_down") and cfg.pul_weight > 0:
        terms["L_d"] = pyramid_unsupervised_loss(outputs, image1, image2, mask, cfg.pyramid, weights, cfg)
        lam_d = cfg.pul_weight
    else:
        lam_d = 0.0
    lam = {"L_c": weights.lambda_c, "L_s": weights.lambda_s, "L_b": weights.lambda_b, "L_d": lam_d}
    total = terms["L_m"]
    for k, v in terms.items():
        if k != "L_m":
            total = total + v * lam[k]
    values = {k: 0.0 for k in ("L_m", "L_c", "L_s", "L_b", "L_d", "L_a")}
    values.update({k: float(v.data) for k, v in terms.items()})
    values["total"] = float(total.data)
    return LossBreakdown(total=total, terms=values)
