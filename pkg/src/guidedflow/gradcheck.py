"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from guidedflow.tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    tolerance: float
    worst: Optional[tuple] = None  # (input index, flat element index)
    checked: int = 0
    message: str = ""
    per_input: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.passed


def _scalar(fn, inputs) -> float:
    out = fn(*inputs)
    if not isinstance(out, Tensor):
        raise TypeError("grad_check closure must return a Tensor")
    if out.size != 1:
        raise ValueError(f"grad_check closure must return a scalar, got shape {out.shape}")
    return float(out.data.reshape(()))


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_elements: int = 10_000,
    floor_ratio: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``fn(*inputs)`` with two-sided differences.

    Every element of every input with ``requires_grad`` is perturbed, or a
    random subset of ``max_elements`` per input when the input is larger.
    The error of one element is ``|a - n| / max(|a|, |n|, floor)`` where
    ``floor = floor_ratio * max|n|`` over that input, so entries that are
    tiny relative to the gradient's scale are judged on that scale instead
    of amplifying round-off.
    """
    for p in inputs:
        p.grad = None
        p.data = np.ascontiguousarray(p.data)
    out = fn(*inputs)
    if out.size != 1:
        raise ValueError(f"grad_check closure must return a scalar, got shape {out.shape}")
    if not np.all(np.isfinite(out.data)):
        return GradCheckReport(np.inf, False, tolerance, message="non-finite output")
    out.backward()

    rng = np.random.default_rng(seed)
    worst_err, worst_at, checked = 0.0, None, 0
    per_input = []
    for k, p in enumerate(inputs):
        if not p.requires_grad:
            per_input.append(0.0)
            continue
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(analytic)):
            bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
            return GradCheckReport(np.inf, False, tolerance, worst=(k, bad),
                                   message=f"non-finite analytic gradient in input {k} at {bad}")
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_elements else np.sort(rng.choice(n, max_elements, replace=False))
        numeric = np.empty(len(idx))
        for m, j in enumerate(idx):
            orig = flat[j]
            flat[j] = orig + step
            fp = _scalar(fn, inputs)
            flat[j] = orig - step
            fm = _scalar(fn, inputs)
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                return GradCheckReport(np.inf, False, tolerance, worst=(k, int(j)),
                                       message=f"non-finite output perturbing input {k} element {int(j)}")
            numeric[m] = (fp - fm) / (2 * step)
        a = analytic.reshape(-1)[idx].astype(np.float64)
        floor = max(floor_ratio * float(np.max(np.abs(numeric), initial=0.0)), 1e-12)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        err = np.abs(a - numeric) / denom
        checked += len(idx)
        e = float(err.max(initial=0.0))
        per_input.append(e)
        if e > worst_err:
            worst_err, worst_at = e, (k, int(idx[int(err.argmax())]))
    passed = worst_err <= tolerance
    msg = "ok" if passed else f"max relative error {worst_err:.3g} at input {worst_at[0]} element {worst_at[1]}"
    return GradCheckReport(worst_err, passed, tolerance, worst_at, checked, msg, per_input)
