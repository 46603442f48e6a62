"""Training loop, evaluation and inference."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from guidedflow import checkpoint as ckpt
from guidedflow.config import TrainConfig
from guidedflow.dataset import load_manifest, read_png, stack, write_png
from guidedflow.flo import write_flo
from guidedflow.flow_ops import downsample, occlusion_mask_fb
from guidedflow.losses import total_loss
from guidedflow.metrics import endpoint_errors, outliers
from guidedflow.model import ModelConfig, Params, check_image_extents, forward, init_params
from guidedflow.synthetic import motion_boundaries
from guidedflow.tensor import Tensor, no_grad
from guidedflow.viz import flow_to_color, map_to_gray

MODEL_SIDECAR = ".model.json"


class TrainingError(RuntimeError):
    """Raised when training cannot continue; ``tag`` is a short machine-readable code."""

    def __init__(self, tag: str, message: str):
        super().__init__(message)
        self.tag = tag


class Adam:
    def __init__(self, params: Params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: Params, lr: float = 1e-4):
        self.params, self.lr = params, lr

    def step(self) -> None:
        for p in self.params.values():
            if p.grad is not None:
                p.data -= self.lr * p.grad


def save_model_config(cfg: ModelConfig, checkpoint_path) -> None:
    Path(str(checkpoint_path) + MODEL_SIDECAR).write_text(json.dumps(asdict(cfg), indent=1))


def load_model(checkpoint_path, cfg: Optional[ModelConfig] = None):
    """Rebuild the architecture (from ``cfg`` or the sidecar) and load weights."""
    if not os.path.isfile(checkpoint_path):
        raise FileNotFoundError(f"checkpoint not found: {checkpoint_path}")
    if cfg is None:
        side = Path(str(checkpoint_path) + MODEL_SIDECAR)
        cfg = ModelConfig(**json.loads(side.read_text())) if side.is_file() else ModelConfig()
    params = init_params(cfg, seed=0)
    ckpt.load_into(params, ckpt.load(checkpoint_path))
    return params, cfg


@dataclass
class TrainResult:
    params: Params
    history: List[dict] = field(default_factory=list)
    seconds: float = 0.0


def _reverse_flow(params: Params, mcfg: ModelConfig, i1: Tensor, i2: Tensor) -> Tensor:
    with no_grad():
        return forward(i2, i1, params, mcfg).flow


def _occlusion(cfg: TrainConfig, vf: Tensor, reverse: Callable[[], Tensor], iteration: int) -> Tensor:
    # early flows are noisy and fail the consistency check almost everywhere,
    # which would mask out the whole photometric signal; the reverse pass is
    # only paid for once the mask is in use
    if not cfg.use_occlusion or iteration < cfg.occ_warmup:
        return Tensor(np.ones((vf.shape[0], 1) + vf.shape[2:], dtype=vf.dtype))
    return occlusion_mask_fb(vf, reverse(), cfg.alpha1, cfg.alpha2)


def train(cfg: TrainConfig, samples=None, progress: Optional[Callable[[dict], None]] = None,
          callback: Optional[Callable[[int, Params], bool]] = None) -> TrainResult:
    """Train from ``cfg.data`` (or in-memory ``samples``); writes ``cfg.checkpoint``.

    ``callback(iterations_done, params)`` runs after every update; returning
    True stops training early.
    """
    t0 = time.time()
    if samples is None:
        if not cfg.data:
            raise TrainingError("missing_data", "no dataset manifest configured")
        samples = load_manifest(cfg.data)
    img1_all, img2_all, _, _ = stack(samples)
    mcfg = cfg.model()
    check_image_extents(img1_all.shape, mcfg)
    params = init_params(mcfg, seed=cfg.seed)
    if cfg.resume:
        ckpt.load_into(params, ckpt.load(cfg.resume))
    opt = Adam(params, cfg.lr) if cfg.optimizer == "adam" else SGD(params, cfg.lr)
    weights, lcfg = cfg.weights(), cfg.loss()
    rng = np.random.default_rng(cfg.seed + 7919)
    n = len(samples)
    order, cursor = rng.permutation(n), 0
    history = []
    log_fh = open(cfg.log, "w") if cfg.log else None
    try:
        for it in range(cfg.iterations):
            idx = []
            while len(idx) < cfg.batch_size:
                if cursor == n:
                    order, cursor = rng.permutation(n), 0
                idx.append(order[cursor])
                cursor += 1
            i1, i2 = Tensor(img1_all[idx]), Tensor(img2_all[idx])
            out = forward(i1, i2, params, mcfg)
            mask = _occlusion(cfg, out.flow, lambda: _reverse_flow(params, mcfg, i1, i2), it)
            bd = total_loss(out, i1, i2, mask, weights, lcfg)
            for name, value in bd.terms.items():
                if not np.isfinite(value):
                    raise TrainingError("nonfinite_loss", f"non-finite loss term {name} at iteration {it}")
            for p in params.values():
                p.grad = None
            bd.total.backward()
            opt.step()
            if it % cfg.log_every == 0 or it == cfg.iterations - 1:
                rec = {"iteration": it, **bd.terms}
                history.append(rec)
                if log_fh:
                    log_fh.write(json.dumps(rec) + "\n")
                    log_fh.flush()
                if progress:
                    progress(rec)
            if cfg.checkpoint_every and cfg.checkpoint and (it + 1) % cfg.checkpoint_every == 0:
                ckpt.save(params, cfg.checkpoint)
            if callback is not None and callback(it + 1, params):
                break
    finally:
        if log_fh:
            log_fh.close()
    for p in params.values():
        p.grad = None
    if cfg.checkpoint:
        ckpt.save(params, cfg.checkpoint)
        save_model_config(mcfg, cfg.checkpoint)
    return TrainResult(params, history, time.time() - t0)


@dataclass
class MetricsReport:
    epe_all: float
    epe_noc: float
    epe_occ: float
    epe_boundary: float
    f1_all: float
    counts: Dict[str, int]
    per_level_epe: Dict[str, float]     # key "x<scale>" -> EPE in that level's pixels
    occ_iou: float
    samples: int
    loss_history: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def predict(params: Params, cfg: ModelConfig, img1: np.ndarray, img2: np.ndarray,
            batch: int = 8, backward: bool = False):
    """No-grad forward over arrays; returns final flows, per-level flows and optional reverse flows."""
    finals, levels, reverse = [], None, []
    with no_grad():
        for s in range(0, len(img1), batch):
            a, b = Tensor(img1[s:s + batch]), Tensor(img2[s:s + batch])
            out = forward(a, b, params, cfg)
            finals.append(out.flow.data)
            if levels is None:
                levels = [[] for _ in out.flows]
            for lst, f in zip(levels, out.flows):
                lst.append(f.data)
            if backward:
                reverse.append(forward(b, a, params, cfg).flow.data)
    return (np.concatenate(finals), [np.concatenate(l) for l in levels],
            np.concatenate(reverse) if backward else None)


def metrics_from_flows(flow, gt, occ, level_flows=None, scales=None,
                       occ_pred=None, boundary_radius: int = 2) -> MetricsReport:
    """Pooled pixel metrics over a batch; ``occ`` is B x H x W with 1 = non-occluded."""
    err = endpoint_errors(flow, gt)
    noc = occ > 0.5
    bnd = np.stack([motion_boundaries(g, boundary_radius) for g in gt])

    def mean(mask):
        return float(err[mask].mean()) if mask.any() else float("nan")

    per_level = {}
    if level_flows is not None:
        gt_t = Tensor(gt.astype(np.float64))
        for f, s in zip(level_flows, scales):
            g = downsample(gt_t, s, kind="flow").data
            per_level[f"x{s}"] = float(endpoint_errors(f, g).mean())
    iou = float("nan")
    if occ_pred is not None:
        p, t = occ_pred < 0.5, ~noc
        union = (p | t).sum()
        iou = float((p & t).sum() / union) if union else 1.0
    return MetricsReport(
        epe_all=float(err.mean()), epe_noc=mean(noc), epe_occ=mean(~noc), epe_boundary=mean(bnd),
        f1_all=float(outliers(flow, gt).mean()),
        counts={"all": int(err.size), "noc": int(noc.sum()), "occ": int((~noc).sum()),
                "boundary": int(bnd.sum())},
        per_level_epe=per_level, occ_iou=iou, samples=int(len(flow)),
    )


def evaluate(params: Params, cfg: ModelConfig, samples, alpha1: float = 0.01, alpha2: float = 0.5) -> MetricsReport:
    img1, img2, gt, occ = stack(samples)
    check_image_extents(img1.shape, cfg)
    flow, levels, rev = predict(params, cfg, img1, img2, backward=True)
    occ_pred = occlusion_mask_fb(Tensor(flow), Tensor(rev), alpha1, alpha2).data[:, 0]
    scales = [cfg.level_scale(i) for i in range(cfg.levels)]
    return metrics_from_flows(flow, gt, occ[:, 0], levels, scales, occ_pred)


def evaluate_checkpoint(checkpoint_path, manifest, cfg: Optional[ModelConfig] = None, **kw) -> MetricsReport:
    params, mcfg = load_model(checkpoint_path, cfg)
    return evaluate(params, mcfg, load_manifest(manifest), **kw)


def infer(checkpoint_path, img1_path, img2_path, out_dir, dump_sgu: bool = False,
          cfg: Optional[ModelConfig] = None) -> Dict[str, str]:
    """Write ``flow.flo`` and ``flow.png`` (plus SGU maps when requested) into ``out_dir``."""
    params, mcfg = load_model(checkpoint_path, cfg)
    a, b = read_png(img1_path), read_png(img2_path)
    if a.shape != b.shape:
        raise ValueError(f"image extents differ: {a.shape[1:]} vs {b.shape[1:]}")
    check_image_extents(a.shape, mcfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with no_grad():
        res = forward(Tensor(a[None]), Tensor(b[None]), params, mcfg)
    written = {"flow": str(out / "flow.flo"), "color": str(out / "flow.png")}
    write_flo(res.flow.data, written["flow"])
    write_png(flow_to_color(res.flow.data), written["color"])
    if dump_sgu:
        for level, (u, m) in enumerate(zip(res.interp_flows, res.interp_maps)):
            if m is not None:
                key = f"interp_map_level{level}"
                written[key] = str(out / f"{key}.png")
                write_png(map_to_gray(m.data[0, 0]), written[key])
            if u is not None:
                key = f"interp_flow_level{level}"
                written[key] = str(out / f"{key}.png")
                write_png(flow_to_color(u.data), written[key])
    return written
