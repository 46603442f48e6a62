"""Synthetic image pairs with analytic flow and occlusion ground truth.

Frames are crops of a larger rendered canvas.  Motions are whole pixels, so
every non-occluded pixel of the second frame is a bitwise copy of its source
pixel in the first frame and the photometric residual under the ground-truth
flow is exactly zero (also after 8-bit quantisation).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

KINDS = ("static", "global_translation", "affine", "occluder_box")


@dataclass
class SyntheticSpec:
    kind: str = "global_translation"
    size: Tuple[int, int] = (64, 64)
    max_motion: int = 6                   # largest |u| or |v| in pixels
    background_motion: int = 2            # occluder_box: background motion bound
    occluder_size: Tuple[int, int] = (16, 28)
    motion: Optional[Tuple[int, int]] = None   # fixes the (u, v) motion when set
    octaves: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; expected one of {KINDS}")
        self.size = tuple(int(s) for s in self.size)
        if self.max_motion < 0 or self.background_motion < 0:
            raise ValueError("motion bounds must be non-negative")
        lo, hi = self.occluder_size
        if not 1 <= lo <= hi:
            raise ValueError(f"bad occluder size range {self.occluder_size}")


@dataclass
class Sample:
    image1: np.ndarray      # 3 x H x W in [0, 1]
    image2: np.ndarray
    flow: np.ndarray        # 2 x H x W, (u, v) in pixels
    occ: np.ndarray         # H x W, 1 = non-occluded

    @property
    def shape(self):
        return self.image1.shape[1:]


def texture(h: int, w: int, rng: np.random.Generator, octaves: int = 4) -> np.ndarray:
    """Colour octave noise in [0, 1], shape 3 x h x w.

    Amplitude grows with cell size, so coarse structure dominates and the
    photometric loss stays informative several pixels away from the true
    flow; the fine octaves keep enough detail for the census term.
    """
    from guidedflow.flow_ops import _resize_matrix

    out = np.zeros((3, h, w))
    for k in range(octaves):
        cell = 2 ** (k + 2)
        gh, gw = h // cell + 2, w // cell + 2
        grid = rng.standard_normal((3, gh, gw))
        rh = _resize_matrix(gh, gh * cell, "float64")[:h]
        rw = _resize_matrix(gw, gw * cell, "float64")[:w]
        out += (rh @ grid @ rw.T) * 0.7 ** (octaves - 1 - k)
    lo = out.min(axis=(1, 2), keepdims=True)
    hi = out.max(axis=(1, 2), keepdims=True)
    return (out - lo) / np.maximum(hi - lo, 1e-12)


def _random_motion(rng, bound):
    return int(rng.integers(-bound, bound + 1)), int(rng.integers(-bound, bound + 1))


def _out_of_frame(flow: np.ndarray) -> np.ndarray:
    _, H, W = flow.shape
    ys, xs = np.mgrid[0:H, 0:W]
    tx, ty = xs + flow[0], ys + flow[1]
    return (tx < 0) | (tx > W - 1) | (ty < 0) | (ty > H - 1)


def _translation(spec, rng, motion):
    H, W = spec.size
    m = spec.max_motion if spec.motion is None else max(abs(motion[0]), abs(motion[1]))
    canvas = texture(H + 2 * m, W + 2 * m, rng, spec.octaves)
    u, v = motion
    img1 = canvas[:, m:m + H, m:m + W]
    img2 = canvas[:, m - v:m - v + H, m - u:m - u + W]
    flow = np.zeros((2, H, W))
    flow[0], flow[1] = u, v
    return img1, img2, flow


def _affine(spec, rng):
    from guidedflow.flow_ops import bilinear_sample
    from guidedflow.tensor import Tensor

    H, W = spec.size
    m = spec.max_motion
    canvas = texture(H + 2 * m, W + 2 * m, rng, spec.octaves)
    angle = rng.uniform(-0.05, 0.05)
    scale = 1 + rng.uniform(-0.05, 0.05)
    shift = rng.uniform(-m / 2, m / 2, size=2)
    a = scale * np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]) - np.eye(2)
    ys, xs = np.mgrid[0:H, 0:W].astype(float)
    cx, cy = (W - 1) / 2, (H - 1) / 2
    px, py = xs - cx, ys - cy
    flow = np.stack([a[0, 0] * px + a[0, 1] * py + shift[0], a[1, 0] * px + a[1, 1] * py + shift[1]])
    # frame 2 at q shows the point p with p + V(p) = q, i.e. p = (I + A)^-1 (q - c - t) + c
    inv = np.linalg.inv(a + np.eye(2))
    qx, qy = px - shift[0], py - shift[1]
    sx = inv[0, 0] * qx + inv[0, 1] * qy + cx + m
    sy = inv[1, 0] * qx + inv[1, 1] * qy + cy + m
    src = Tensor(canvas[None].astype(np.float64))
    coords = Tensor(np.stack([sx, sy])[None])
    img2 = bilinear_sample(src, coords, border="clamp").data[0]
    img1 = canvas[:, m:m + H, m:m + W]
    return np.clip(img1, 0, 1), np.clip(img2, 0, 1), flow


def _occluder_box(spec, rng):
    H, W = spec.size
    mb, mo = spec.background_motion, spec.max_motion
    bg_u, bg_v = _random_motion(rng, mb)
    while True:
        box_u, box_v = _random_motion(rng, mo)
        if abs(box_u - bg_u) + abs(box_v - bg_v) >= 2:
            break
    img1, img2, flow = _translation(spec, rng, (bg_u, bg_v))
    img1, img2 = img1.copy(), img2.copy()
    lo, hi = spec.occluder_size
    bh, bw = int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
    bh, bw = min(bh, H - 2), min(bw, W - 2)
    # keep the box inside the frame at t, and inside at t+1 when there is room
    ylo, xlo = max(0, -box_v), max(0, -box_u)
    y0 = int(rng.integers(ylo, max(ylo + 1, min(H - bh, H - bh - box_v) + 1)))
    x0 = int(rng.integers(xlo, max(xlo + 1, min(W - bw, W - bw - box_u) + 1)))
    y0, x0 = min(y0, H - bh), min(x0, W - bw)
    patch = texture(bh, bw, rng, max(1, spec.octaves - 1))
    img1[:, y0:y0 + bh, x0:x0 + bw] = patch
    y1, x1 = y0 + box_v, x0 + box_u
    # the box may leave the frame at t+1; clip its footprint
    ya, yb, xa, xb = max(y1, 0), min(y1 + bh, H), max(x1, 0), min(x1 + bw, W)
    if ya < yb and xa < xb:
        img2[:, ya:yb, xa:xb] = patch[:, ya - y1:yb - y1, xa - x1:xb - x1]
    in_box = np.zeros((H, W), bool)
    in_box[y0:y0 + bh, x0:x0 + bw] = True
    flow[0][in_box], flow[1][in_box] = box_u, box_v
    # background pixels whose target is covered by the box at t+1 are occluded
    ys, xs = np.mgrid[0:H, 0:W]
    ty, tx = ys + bg_v, xs + bg_u
    covered = (ty >= y1) & (ty < y1 + bh) & (tx >= x1) & (tx < x1 + bw)
    occluded = (~in_box & covered) | _out_of_frame(flow)
    return img1, img2, flow, occluded


def generate(spec: SyntheticSpec, seed: int) -> Sample:
    """One deterministic sample for ``spec`` and ``seed``."""
    rng = np.random.default_rng(seed)
    H, W = spec.size
    if spec.kind == "static":
        img1 = texture(H, W, rng, spec.octaves)
        img2 = img1.copy()
        flow = np.zeros((2, H, W))
        occluded = np.zeros((H, W), bool)
    elif spec.kind == "global_translation":
        motion = spec.motion if spec.motion is not None else _random_motion(rng, spec.max_motion)
        img1, img2, flow = _translation(spec, rng, tuple(int(c) for c in motion))
        occluded = _out_of_frame(flow)
    elif spec.kind == "affine":
        img1, img2, flow = _affine(spec, rng)
        occluded = _out_of_frame(flow)
    else:
        img1, img2, flow, occluded = _occluder_box(spec, rng)
    return Sample(
        image1=np.ascontiguousarray(img1, dtype=np.float32),
        image2=np.ascontiguousarray(img2, dtype=np.float32),
        flow=flow.astype(np.float32),
        occ=(~occluded).astype(np.float32),
    )


def motion_boundaries(flow: np.ndarray, radius: int = 2) -> np.ndarray:
    """Pixels within ``radius`` of a change in flow value."""
    _, H, W = flow.shape
    edge = np.zeros((H, W), bool)
    dx = np.any(flow[:, :, 1:] != flow[:, :, :-1], axis=0)
    dy = np.any(flow[:, 1:, :] != flow[:, :-1, :], axis=0)
    edge[:, 1:] |= dx
    edge[:, :-1] |= dx
    edge[1:, :] |= dy
    edge[:-1, :] |= dy
    out = edge.copy()
    for _ in range(radius - 1):
        grown = out.copy()
        grown[1:] |= out[:-1]
        grown[:-1] |= out[1:]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out
