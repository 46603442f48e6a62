"""Differentiable flow-field primitives.

Flow fields are ``B x 2 x H x W`` tensors holding (u, v) displacements in
pixels of their own resolution.  Coordinates passed to
:func:`bilinear_sample` are absolute pixel positions (x, y) in the source,
with pixel centres at integer positions.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from guidedflow.tensor import Function, Tensor, concat, expand, no_grad, pad

BORDERS = ("clamp", "zero")


class BilinearSample(Function):
    name = "bilinear_sample"

    def forward(self, src, coords, border="clamp", index_offset=0):
        if border not in BORDERS:
            raise ValueError(f"unknown border policy {border!r}")
        if src.ndim != 4 or coords.ndim != 4 or coords.shape[1] != 2 or coords.shape[0] != src.shape[0]:
            raise ValueError(f"bilinear_sample: bad shapes source {src.shape}, coords {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("bilinear_sample: non-finite sampling coordinates")
        B, C, H, W = src.shape
        Ho, Wo = coords.shape[2:]
        x, y = coords[:, 0], coords[:, 1]
        x0f, y0f = np.floor(x), np.floor(y)
        wx, wy = x - x0f, y - y0f
        # index_offset shifts the integer corner only, so sampling a frame
        # padded by k pixels at offset k reproduces the unpadded weights bitwise.
        x0 = x0f.astype(np.int64) + index_offset
        y0 = y0f.astype(np.int64) + index_offset
        x1, y1 = x0 + 1, y0 + 1
        dt = src.dtype
        if border == "zero":
            vx0 = ((x0 >= 0) & (x0 < W)).astype(dt)
            vx1 = ((x1 >= 0) & (x1 < W)).astype(dt)
            vy0 = ((y0 >= 0) & (y0 < H)).astype(dt)
            vy1 = ((y1 >= 0) & (y1 < H)).astype(dt)
        xs = [np.clip(x0, 0, W - 1), np.clip(x1, 0, W - 1)]
        ys = [np.clip(y0, 0, H - 1), np.clip(y1, 0, H - 1)]
        base = (np.arange(B) * (H * W)).reshape(B, 1, 1)
        flat = np.ascontiguousarray(src.transpose(0, 2, 3, 1)).reshape(B * H * W, C)
        idx, vals = [], []
        for yi in ys:
            for xi in xs:
                k = (base + yi * W + xi).reshape(-1)
                idx.append(k)
                vals.append(flat[k])
        if border == "zero":
            masks = [vy0 * vx0, vy0 * vx1, vy1 * vx0, vy1 * vx1]
            vals = [v * m.reshape(-1, 1) for v, m in zip(vals, masks)]
        else:
            masks = None
        wxf = wx.reshape(-1, 1).astype(dt)
        wyf = wy.reshape(-1, 1).astype(dt)
        v00, v01, v10, v11 = vals
        top = v00 + wxf * (v01 - v00)
        bot = v10 + wxf * (v11 - v10)
        out = top + wyf * (bot - top)
        self.shapes = (B, C, H, W, Ho, Wo)
        self.idx, self.vals, self.masks = idx, vals, masks
        self.wxf, self.wyf = wxf, wyf
        return np.ascontiguousarray(out.reshape(B, Ho, Wo, C).transpose(0, 3, 1, 2))

    def backward(self, grad):
        B, C, H, W, Ho, Wo = self.shapes
        g = np.ascontiguousarray(grad.transpose(0, 2, 3, 1)).reshape(-1, C)
        wx, wy = self.wxf, self.wyf
        gsrc = gcoords = None
        if self.needs[0]:
            weights = [(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy]
            if self.masks is not None:
                weights = [w * m.reshape(-1, 1) for w, m in zip(weights, self.masks)]
            total = B * H * W * C
            chan = np.arange(C)
            acc = np.zeros(total, dtype=np.float64)
            for k, w in zip(self.idx, weights):
                lin = (k[:, None] * C + chan).reshape(-1)
                acc += np.bincount(lin, weights=(g * w).reshape(-1), minlength=total)
            gsrc = acc.astype(grad.dtype).reshape(B, H, W, C).transpose(0, 3, 1, 2)
            gsrc = np.ascontiguousarray(gsrc)
        if self.needs[1]:
            v00, v01, v10, v11 = self.vals
            dx = (1 - wy) * (v01 - v00) + wy * (v11 - v10)
            dy = (1 - wx) * (v10 - v00) + wx * (v11 - v01)
            gx = (g * dx).sum(axis=1).reshape(B, Ho, Wo)
            gy = (g * dy).sum(axis=1).reshape(B, Ho, Wo)
            gcoords = np.stack([gx, gy], axis=1).astype(grad.dtype)
        return gsrc, gcoords


def bilinear_sample(source: Tensor, coords: Tensor, border: str = "clamp", index_offset: int = 0) -> Tensor:
    """Sample ``source`` at absolute pixel positions ``coords + index_offset`` (x, y)."""
    return BilinearSample.apply(source, coords, border=border, index_offset=int(index_offset))


@lru_cache(maxsize=64)
def _grid(h: int, w: int, dtype_name: str) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.stack([xs, ys]).astype(dtype_name)[None]


def pixel_grid(batch: int, h: int, w: int, dtype=np.float32) -> np.ndarray:
    g = _grid(h, w, np.dtype(dtype).name)
    return np.broadcast_to(g, (batch, 2, h, w)).copy()


def warp_backward(image: Tensor, flow: Tensor, border: str = "clamp") -> Tensor:
    """``out(p) = image(p + flow(p))`` with bilinear interpolation."""
    if image.shape[0] != flow.shape[0] or image.shape[2:] != flow.shape[2:] or flow.shape[1] != 2:
        raise ValueError(f"warp_backward: image {image.shape} and flow {flow.shape} disagree")
    B, _, H, W = flow.shape
    coords = flow + Tensor(pixel_grid(B, H, W, flow.dtype))
    return bilinear_sample(image, coords, border=border)


@lru_cache(maxsize=64)
def _resize_matrix(n_in: int, n_out: int, dtype_name: str) -> np.ndarray:
    """Row o holds the 1-D linear weights of output pixel o (half-pixel centres)."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m.astype(dtype_name)


class Resize(Function):
    name = "resize_bilinear"

    def forward(self, a, out_hw, gain=1.0):
        H, W = a.shape[-2:]
        Ho, Wo = out_hw
        dt = np.dtype(a.dtype).name
        self.rh = _resize_matrix(H, Ho, dt)
        self.rw = _resize_matrix(W, Wo, dt)
        self.gain = a.dtype.type(gain)
        return np.matmul(self.rh, a @ self.rw.T) * self.gain

    def backward(self, grad):
        return (np.matmul(self.rh.T, grad @ self.rw) * self.gain,)


def resize_bilinear(t: Tensor, out_hw) -> Tensor:
    return Resize.apply(t, out_hw=tuple(out_hw))


def upsample_bilinear_flow(flow: Tensor, scale: int) -> Tensor:
    """Bilinear upsampling by an integer factor with displacement rescaling."""
    if int(scale) != scale or scale < 2:
        raise ValueError(f"upsample scale must be an integer >= 2, got {scale}")
    H, W = flow.shape[-2:]
    return Resize.apply(flow, out_hw=(H * scale, W * scale), gain=float(scale))


class AvgPool(Function):
    name = "downsample"

    def forward(self, a, factor, gain=1.0):
        B, C, H, W = a.shape
        f = factor
        self.f, self.shape = f, a.shape
        self.gain = a.dtype.type(gain / (f * f))
        return a.reshape(B, C, H // f, f, W // f, f).sum(axis=(3, 5)) * self.gain

    def backward(self, grad):
        f = self.f
        g = np.repeat(np.repeat(grad * self.gain, f, axis=2), f, axis=3)
        return (g,)


def downsample(t: Tensor, factor: int, kind: str = "image") -> Tensor:
    """Area-average pooling over ``factor x factor`` blocks.

    ``kind='flow'`` divides displacements by ``factor``; masks and images are
    plain block means.
    """
    if kind not in ("flow", "mask", "image"):
        raise ValueError(f"unknown downsample kind {kind!r}")
    factor = int(factor)
    if factor == 1:
        return t
    H, W = t.shape[-2:]
    if factor < 1 or H % factor or W % factor:
        raise ValueError(f"downsample: extents {H}x{W} not divisible by {factor}")
    gain = 1.0 / factor if kind == "flow" else 1.0
    return AvgPool.apply(t, factor=factor, gain=gain)


def displacement_of(channel: int, max_disp: int) -> tuple:
    """(dx, dy) displacement encoded by a correlation channel index."""
    n = 2 * max_disp + 1
    return channel % n - max_disp, channel // n - max_disp


class Correlation(Function):
    name = "correlation_volume"

    def forward(self, f1, f2, max_disp=4):
        if f1.shape != f2.shape:
            raise ValueError(f"correlation_volume: shape mismatch {f1.shape} vs {f2.shape}")
        B, C, H, W = f1.shape
        d = max_disp
        n = 2 * d + 1
        f2p = np.pad(f2, ((0, 0), (0, 0), (d, d), (d, d)))
        out = np.empty((B, n * n, H, W), dtype=f1.dtype)
        inv_c = f1.dtype.type(1.0 / C)
        for k in range(n * n):
            dx, dy = displacement_of(k, d)
            win = f2p[:, :, d + dy:d + dy + H, d + dx:d + dx + W]
            out[:, k] = np.einsum("bchw,bchw->bhw", f1, win) * inv_c
        self.f1, self.f2p, self.d = f1, f2p, d
        return out

    def backward(self, grad):
        f1, f2p, d = self.f1, self.f2p, self.d
        B, C, H, W = f1.shape
        n = 2 * d + 1
        inv_c = f1.dtype.type(1.0 / C)
        g1 = np.zeros_like(f1) if self.needs[0] else None
        g2p = np.zeros_like(f2p) if self.needs[1] else None
        for k in range(n * n):
            dx, dy = displacement_of(k, d)
            gk = grad[:, k:k + 1] * inv_c
            sl = (slice(None), slice(None), slice(d + dy, d + dy + H), slice(d + dx, d + dx + W))
            if g1 is not None:
                g1 += gk * f2p[sl]
            if g2p is not None:
                g2p[sl] += gk * f1
        g2 = g2p[:, :, d:d + H, d:d + W] if g2p is not None else None
        return g1, g2


def correlation_volume(f1: Tensor, f2: Tensor, max_disp: int = 4) -> Tensor:
    """Channel-mean dot products of ``f1(p)`` with ``f2(p + (dx, dy))``.

    Channel ``k`` holds displacement :func:`displacement_of` ``(k, max_disp)``;
    positions outside ``f2`` contribute zero.
    """
    return Correlation.apply(f1, f2, max_disp=max_disp)


class FeatureNormalize(Function):
    name = "feature_normalize"

    def forward(self, a, eps=1e-6):
        mean = a.mean(axis=1, keepdims=True)
        centered = a - mean
        var = (centered * centered).mean(axis=1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + a.dtype.type(eps))
        self.out = centered * self.inv_std
        return self.out

    def backward(self, grad):
        y = self.out
        g = grad - grad.mean(axis=1, keepdims=True) - y * (grad * y).mean(axis=1, keepdims=True)
        return (g * self.inv_std,)


def feature_normalize(f: Tensor, eps: float = 1e-6) -> Tensor:
    """Standardise each pixel's channel vector to zero mean, unit variance."""
    return FeatureNormalize.apply(f, eps=eps)


def center_channels(f: Tensor) -> Tensor:
    """Subtract each channel's spatial mean, per image.

    Activations after leaky ReLUs carry large per-channel offsets that are the
    same at every pixel; left in, they make all feature vectors point the same
    way and flatten the cost volume.
    """
    return f - expand(f.mean(axis=(2, 3), keepdims=True), f.shape)


CENSUS_SOFTNESS = 0.81


def census_transform(image: Tensor, patch: int = 7) -> Tensor:
    """Soft census descriptor ``(n - c) / sqrt(0.81 + (n - c)^2)`` per neighbour.

    Neighbours falling outside the image yield a zero entry, which keeps the
    descriptor exactly invariant to additive intensity offsets.
    """
    if patch % 2 != 1 or patch < 3:
        raise ValueError(f"census patch must be odd and >= 3, got {patch}")
    if image.ndim != 4 or image.shape[1] != 1:
        raise ValueError(f"census_transform expects B x 1 x H x W, got {image.shape}")
    B, _, H, W = image.shape
    r = patch // 2
    padded = pad(image, r)
    valid = np.pad(np.ones((H, W), dtype=image.dtype), r)
    diffs, masks = [], []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dx == 0 and dy == 0:
                continue
            sl = (slice(None), slice(None), slice(r + dy, r + dy + H), slice(r + dx, r + dx + W))
            diffs.append(padded[sl] - image)
            masks.append(valid[r + dy:r + dy + H, r + dx:r + dx + W])
    delta = concat(diffs, axis=1)
    mask = np.broadcast_to(np.stack(masks)[None], delta.shape).copy()
    delta = delta * Tensor(mask)
    return delta / (delta * delta + CENSUS_SOFTNESS).sqrt()


def occlusion_mask_fb(vf: Tensor, vb: Tensor, alpha1: float = 0.01, alpha2: float = 0.5,
                      border: str = "zero") -> Tensor:
    """Forward-backward consistency mask, 1 = non-occluded, gradients stopped.

    With the default ``border='zero'`` a target outside the frame has no
    backward flow to cancel against, so pixels leaving the frame are marked
    occluded.
    """
    if vf.shape != vb.shape:
        raise ValueError(f"occlusion_mask_fb: flow shapes differ {vf.shape} vs {vb.shape}")
    with no_grad():
        vb_w = warp_backward(Tensor(vb.data), Tensor(vf.data), border=border).data
    f = vf.data
    diff = ((f + vb_w) ** 2).sum(axis=1, keepdims=True)
    mag = (f ** 2).sum(axis=1, keepdims=True) + (vb_w ** 2).sum(axis=1, keepdims=True)
    return Tensor((diff < alpha1 * mag + alpha2).astype(f.dtype))


def to_gray(image: Tensor) -> Tensor:
    """Luma from RGB, or pass-through for single-channel input."""
    if image.shape[1] == 1:
        return image
    if image.shape[1] != 3:
        raise ValueError(f"to_gray expects 1 or 3 channels, got {image.shape}")
    r, g, b = image[:, 0:1], image[:, 1:2], image[:, 2:3]
    return r * 0.2989 + g * 0.5870 + b * 0.1140


def broadcast_channels(t: Tensor, channels: int) -> Tensor:
    return expand(t, (t.shape[0], channels) + tuple(t.shape[2:]))
