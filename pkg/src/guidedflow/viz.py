"""Flow colour rendering and image helpers."""

from __future__ import annotations

import numpy as np
from matplotlib.colors import hsv_to_rgb


def flow_to_color(flow, max_mag=None) -> np.ndarray:
    """Render a 2 x H x W flow as H x W x 3 uint8.

    Hue encodes the direction ``atan2(v, u)``, saturation the magnitude over
    ``max_mag`` (default: the 99th-percentile magnitude); zero flow is white.
    """
    f = np.asarray(getattr(flow, "data", flow), dtype=np.float64)
    if f.ndim == 4:
        f = f[0]
    u, v = f[0], f[1]
    mag = np.hypot(u, v)
    if max_mag is None:
        max_mag = float(np.percentile(mag, 99))
    if max_mag <= 0:
        max_mag = 1.0
    hue = np.mod(np.arctan2(v, u), 2 * np.pi) / (2 * np.pi)
    sat = np.clip(mag / max_mag, 0.0, 1.0)
    hsv = np.stack([hue, sat, np.ones_like(hue)], axis=-1)
    return np.round(hsv_to_rgb(hsv) * 255).astype(np.uint8)


def map_to_gray(values) -> np.ndarray:
    """[0, 1] map to uint8 gray, linearly."""
    a = np.asarray(getattr(values, "data", values), dtype=np.float64)
    return np.round(np.clip(a, 0.0, 1.0) * 255).astype(np.uint8)
