"""Network primitives: convolution, activations and elementwise helpers."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from guidedflow.tensor import Function, Tensor, concat  # noqa: F401  (re-export)

LEAKY_SLOPE = 0.1


class Conv2d(Function):
    """2-D cross-correlation via channels-last im2col and one GEMM."""

    name = "conv2d"

    def forward(self, x, w, b, stride=1, padding=0):
        if x.ndim != 4 or w.ndim != 4:
            raise ValueError(f"conv2d expects BCHW input and OIKK weight, got {x.shape} and {w.shape}")
        if x.shape[1] != w.shape[1]:
            raise ValueError(
                f"conv2d: input channels of {x.shape} do not match weight {w.shape}"
            )
        if b.shape != (w.shape[0],):
            raise ValueError(f"conv2d: bias shape {b.shape} does not match weight {w.shape}")
        if stride < 1 or padding < 0:
            raise ValueError(f"conv2d: invalid stride={stride} padding={padding}")
        B, C, H, W = x.shape
        O, _, kh, kw = w.shape
        s, p = stride, padding
        Ho = (H + 2 * p - kh) // s + 1
        Wo = (W + 2 * p - kw) // s + 1
        if Ho < 1 or Wo < 1:
            raise ValueError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
        xl = np.zeros((B, H + 2 * p, W + 2 * p, C), dtype=x.dtype)
        xl[:, p:p + H, p:p + W, :] = x.transpose(0, 2, 3, 1)
        self.geom = (B, C, H, W, Ho, Wo, s, p)
        self.wshape = w.shape
        # Few output channels relative to inputs: multiply first, then sum the
        # kh*kw shifted partial outputs; this avoids copying kh*kw input patches.
        self.shift_add = s == 1 and O * 2 <= C
        if self.shift_add:
            wc = np.ascontiguousarray(w.transpose(1, 2, 3, 0)).reshape(C, kh * kw * O)
            z = (xl.reshape(-1, C) @ wc).reshape(B, H + 2 * p, W + 2 * p, kh, kw, O)
            out = np.zeros((B, Ho, Wo, O), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    out += z[:, i:i + Ho, j:j + Wo, i, j, :]
            out += b
            self.xl, self.wc = xl, wc
            return np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        # im2col: cols[b, ho, wo, i, j, c] = xl[b, ho*s + i, wo*s + j, c]
        sb, sh, sw, sc = xl.strides
        windows = as_strided(xl, (B, Ho, Wo, kh, kw, C), (sb, s * sh, s * sw, sh, sw, sc))
        cols = np.empty((B, Ho, Wo, kh, kw, C), dtype=x.dtype)
        np.copyto(cols, windows)
        cols = cols.reshape(B * Ho * Wo, kh * kw * C)
        wmat = np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(O, -1)
        out = cols @ wmat.T
        out += b
        self.cols, self.wmat = cols, wmat
        return np.ascontiguousarray(out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))

    def backward(self, grad):
        B, C, H, W, Ho, Wo, s, p = self.geom
        O, _, kh, kw = self.wshape
        gl = np.ascontiguousarray(grad.transpose(0, 2, 3, 1))
        gw = gb = gx = None
        if self.needs[2]:
            gb = gl.reshape(-1, O).sum(axis=0)
        if self.shift_add:
            gz = np.zeros((B, H + 2 * p, W + 2 * p, kh, kw, O), dtype=grad.dtype)
            for i in range(kh):
                for j in range(kw):
                    gz[:, i:i + Ho, j:j + Wo, i, j, :] = gl
            gz = gz.reshape(-1, kh * kw * O)
            if self.needs[1]:
                gwc = self.xl.reshape(-1, C).T @ gz
                gw = np.ascontiguousarray(gwc.reshape(C, kh, kw, O).transpose(3, 0, 1, 2))
            if self.needs[0]:
                gxl = (gz @ self.wc.T).reshape(B, H + 2 * p, W + 2 * p, C)
                gx = np.ascontiguousarray(gxl[:, p:p + H, p:p + W, :].transpose(0, 3, 1, 2))
            return gx, gw, gb
        gmat = gl.reshape(B * Ho * Wo, O)
        if self.needs[1]:
            gw = (gmat.T @ self.cols).reshape(O, kh, kw, C).transpose(0, 3, 1, 2)
            gw = np.ascontiguousarray(gw)
        if self.needs[0]:
            gcols = (gmat @ self.wmat).reshape(B, Ho, Wo, kh, kw, C)
            gxl = np.zeros((B, H + 2 * p, W + 2 * p, C), dtype=grad.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxl[:, i:i + s * Ho:s, j:j + s * Wo:s, :] += gcols[:, :, :, i, j, :]
            gx = np.ascontiguousarray(gxl[:, p:p + H, p:p + W, :].transpose(0, 3, 1, 2))
        return gx, gw, gb


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


class LeakyReLU(Function):
    name = "leaky_relu"

    def forward(self, a, slope=LEAKY_SLOPE):
        self.scale = np.where(a > 0, a.dtype.type(1.0), a.dtype.type(slope))
        return a * self.scale

    def backward(self, grad):
        return (grad * self.scale,)


def _stable_sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        self.out = _stable_sigmoid(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return LeakyReLU.apply(x, slope=slope)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    raise ValueError(f"unknown elementwise kind {kind!r}")
