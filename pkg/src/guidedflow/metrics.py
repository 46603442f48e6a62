"""Endpoint error and outlier metrics."""

from __future__ import annotations

import numpy as np


def _fields(v, gt):
    v = np.asarray(getattr(v, "data", v), dtype=np.float64)
    gt = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    if v.shape != gt.shape:
        raise ValueError(f"flow shapes differ: {v.shape} vs {gt.shape}")
    return v, gt


def _channel_axis(a):
    return 1 if a.ndim == 4 else 0


def endpoint_errors(v, gt) -> np.ndarray:
    v, gt = _fields(v, gt)
    return np.sqrt(((v - gt) ** 2).sum(axis=_channel_axis(v)))


def _masked_mean(x, valid):
    if valid is None:
        return float(x.mean()) if x.size else 0.0
    m = np.asarray(valid, dtype=np.float64).reshape(x.shape)
    mass = m.sum()
    return float((x * m).sum() / mass) if mass > 0 else 0.0


def epe(v, gt, valid=None) -> float:
    """Mean Euclidean endpoint error over ``valid`` pixels."""
    return _masked_mean(endpoint_errors(v, gt), valid)


def outliers(v, gt) -> np.ndarray:
    """Error above 3 px and above 5% of the ground-truth magnitude."""
    err = endpoint_errors(v, gt)
    _, g = _fields(v, gt)
    mag = np.sqrt((g ** 2).sum(axis=_channel_axis(g)))
    return (err > 3.0) & (err > 0.05 * mag)


def f1(v, gt, valid=None) -> float:
    """Fraction of outlier pixels over ``valid`` pixels."""
    return _masked_mean(outliers(v, gt).astype(np.float64), valid)
