"""Brute-force reference implementations written as explicit loops.

They share no code with the vectorised operations they check; keep it that
way.  Inputs and outputs are plain float64 numpy arrays.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d(x, w, b, stride=1, padding=0):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                y = i * stride + u - padding
                                xx = j * stride + v - padding
                                if 0 <= y < H and 0 <= xx < W:
                                    acc += x[n, c, y, xx] * w[o, c, u, v]
                    out[n, o, i, j] = acc
    return out


def correlation(f1, f2, d):
    B, C, H, W = f1.shape
    n = 2 * d + 1
    out = np.zeros((B, n * n, H, W))
    for bi in range(B):
        for dy in range(-d, d + 1):
            for dx in range(-d, d + 1):
                k = (dy + d) * n + (dx + d)
                for y in range(H):
                    for x in range(W):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < H and 0 <= xx < W:
                            s = 0.0
                            for c in range(C):
                                s += f1[bi, c, y, x] * f2[bi, c, yy, xx]
                            out[bi, k, y, x] = s / C
    return out


def downsample(t, f, kind="image"):
    B, C, H, W = t.shape
    out = np.zeros((B, C, H // f, W // f))
    for bi in range(B):
        for c in range(C):
            for y in range(H // f):
                for x in range(W // f):
                    s = 0.0
                    for u in range(f):
                        for v in range(f):
                            s += t[bi, c, y * f + u, x * f + v]
                    out[bi, c, y, x] = s / (f * f)
    return out / f if kind == "flow" else out


def sample(img, x, y, border="clamp"):
    """Bilinear value of a 2-D array at (x, y)."""
    H, W = img.shape
    x0, y0 = math.floor(x), math.floor(y)
    ax, ay = x - x0, y - y0
    total = 0.0
    for yy, wy in ((y0, 1 - ay), (y0 + 1, ay)):
        for xx, wx in ((x0, 1 - ax), (x0 + 1, ax)):
            if border == "zero":
                if not (0 <= yy < H and 0 <= xx < W):
                    continue
                v = img[yy, xx]
            else:
                v = img[min(max(yy, 0), H - 1), min(max(xx, 0), W - 1)]
            total += wx * wy * v
    return total


def robust(x, q=0.4, eps=0.01):
    return (abs(x) + eps) ** q


def photometric(i1, i2, flow, mask, q=0.4, eps=0.01):
    B, C, H, W = i1.shape
    num = den = 0.0
    for bi in range(B):
        for y in range(H):
            for x in range(W):
                m = mask[bi, 0, y, x]
                den += m
                px, py = x + flow[bi, 0, y, x], y + flow[bi, 1, y, x]
                pen = 0.0
                for c in range(C):
                    pen += robust(i1[bi, c, y, x] - sample(i2[bi, c], px, py), q, eps)
                num += pen / C * m
    return num / den if den > 0 else 0.0


def distillation(level_flows, final_flow, mask, scales, q=0.4, eps=0.01, normalize=True, use_occ=True):
    total = 0.0
    for v, s in zip(level_flows, scales):
        label = downsample(final_flow, s, "flow")
        m = downsample(mask, s, "mask") if use_occ else np.ones((v.shape[0], 1) + v.shape[2:])
        num = den = 0.0
        B, _, h, w = v.shape
        for bi in range(B):
            for y in range(h):
                for x in range(w):
                    pen = robust(v[bi, 0, y, x] - label[bi, 0, y, x], q, eps) + \
                        robust(v[bi, 1, y, x] - label[bi, 1, y, x], q, eps)
                    num += pen * m[bi, 0, y, x]
                    den += m[bi, 0, y, x]
        if normalize:
            total += num / den if den > 0 else 0.0
        else:
            total += num
    return total


def gray(img):
    return 0.2989 * img[:, 0] + 0.5870 * img[:, 1] + 0.1140 * img[:, 2]


def census_descriptor(g, patch=7):
    """Per-pixel list of soft signs of neighbour minus centre, zero outside."""
    H, W = g.shape
    r = patch // 2
    out = np.zeros((patch * patch - 1, H, W))
    for y in range(H):
        for x in range(W):
            k = 0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if dy == 0 and dx == 0:
                        continue
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < H and 0 <= xx < W:
                        d = g[yy, xx] - g[y, x]
                        out[k, y, x] = d / math.sqrt(0.81 + d * d)
                    k += 1
    return out


def census(i1, i2, flow, mask, patch=7):
    B, _, H, W = i1.shape
    g1, g2 = gray(i1), gray(i2)
    num = den = 0.0
    for bi in range(B):
        d1 = census_descriptor(g1[bi], patch)
        d2 = census_descriptor(g2[bi], patch)
        K = d1.shape[0]
        for y in range(H):
            for x in range(W):
                m = mask[bi, 0, y, x]
                px, py = x + flow[bi, 0, y, x], y + flow[bi, 1, y, x]
                h = 0.0
                for k in range(K):
                    delta = d1[k, y, x] - sample(d2[k], px, py)
                    h += delta * delta / (0.1 + delta * delta)
                h /= K
                num += (h * h + 0.001 ** 2) ** 0.45 * m
                den += m
    return num / den if den > 0 else 0.0


def endpoint_error(v, gt, valid=None):
    _, H, W = v.shape
    num = den = 0.0
    for y in range(H):
        for x in range(W):
            m = 1.0 if valid is None else float(valid[y, x])
            num += m * math.hypot(v[0, y, x] - gt[0, y, x], v[1, y, x] - gt[1, y, x])
            den += m
    return num / den if den else 0.0


def outlier_rate(v, gt, valid=None):
    _, H, W = v.shape
    num = den = 0.0
    for y in range(H):
        for x in range(W):
            m = 1.0 if valid is None else float(valid[y, x])
            e = math.hypot(v[0, y, x] - gt[0, y, x], v[1, y, x] - gt[1, y, x])
            g = math.hypot(gt[0, y, x], gt[1, y, x])
            num += m * (e > 3.0 and e > 0.05 * g)
            den += m
    return num / den if den else 0.0
