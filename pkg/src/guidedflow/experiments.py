"""Cached training experiments behind the acceptance suite.

Each run is keyed by its full configuration plus ``EXPERIMENT_VERSION`` and
stored as JSON in the cache directory (``GF_EXPERIMENT_CACHE``, default
``<repo>/acceptance_cache``).  Set ``GF_EXPERIMENT_RECOMPUTE=1`` to ignore
cached results.  Runs are slow on a CPU; launch them ahead of time with::

    python -m guidedflow.experiments trainability --seeds 0 1 2 3 4
    python -m guidedflow.experiments ablation --seeds 0 1 2 3 4
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from guidedflow.config import TrainConfig
from guidedflow.dataset import stack
from guidedflow.metrics import epe
from guidedflow.synthetic import SyntheticSpec, generate
from guidedflow.train import evaluate, predict, train

EXPERIMENT_VERSION = 2

TRANSLATION = dict(kind="global_translation", size=(64, 64), max_motion=6)
OCCLUDER = dict(kind="occluder_box", size=(64, 64), max_motion=6, background_motion=2)

TRAINABILITY = dict(pairs=200, data_seed=1234, iterations=2000, eval_every=100, target=0.2,
                    lr=5e-4)
ABLATION = dict(train_pairs=200, test_pairs=64, data_seed=4321, test_seed=8765, iterations=1500,
                lr=5e-4)

# name -> TrainConfig overrides
VARIANTS = {
    "full": dict(sgu_mode="sgu", loss_mode="pdl"),
    "sgu_only": dict(sgu_mode="sgu", loss_mode="none"),
    "bilinear_only": dict(sgu_mode="bilinear", loss_mode="none"),
    "sgu_m": dict(sgu_mode="sgu_m", loss_mode="pdl"),
    "sgu_fm": dict(sgu_mode="sgu_fm", loss_mode="pdl"),
    "pul_down": dict(sgu_mode="sgu", loss_mode="pul_down"),
    "pdl_no_occ": dict(sgu_mode="sgu", loss_mode="pdl", pdl_use_occ=False),
}


def cache_dir() -> Path:
    default = Path(__file__).resolve().parents[2] / "acceptance_cache"
    return Path(os.environ.get("GF_EXPERIMENT_CACHE", default))


def _key(kind: str, payload: dict) -> str:
    # config defaults are part of the key so that retuning one invalidates old runs
    blob = json.dumps({"kind": kind, "version": EXPERIMENT_VERSION, "defaults": TrainConfig().to_dict(),
                       **payload}, sort_keys=True)
    return f"{kind}-{hashlib.sha256(blob.encode()).hexdigest()[:16]}"


def _cached(kind: str, payload: dict, fn):
    path = cache_dir() / (_key(kind, payload) + ".json")
    if path.is_file() and os.environ.get("GF_EXPERIMENT_RECOMPUTE", "") not in ("1", "true", "yes"):
        return json.loads(path.read_text())
    result = fn()
    result["payload"] = payload
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(result, indent=1))
    tmp.replace(path)
    return result


def dataset(spec: dict, count: int, seed: int):
    seeds = np.random.SeedSequence(seed).generate_state(count)
    s = SyntheticSpec(**spec)
    return [generate(s, int(k)) for k in seeds]


def trainability_run(seed: int, settings: dict = TRAINABILITY) -> dict:
    payload = {"seed": seed, "data": TRANSLATION, **settings}

    def run():
        samples = dataset(TRANSLATION, settings["pairs"], settings["data_seed"])
        img1, img2, gt, _ = stack(samples)
        baseline = epe(np.zeros_like(gt), gt)
        cfg = TrainConfig(seed=seed, iterations=settings["iterations"], lr=settings["lr"], checkpoint="")
        mcfg = cfg.model()
        curve, state = [], {"train_s": 0.0, "mark": time.time(), "reached": None}

        def cb(done, params):
            if done % settings["eval_every"] and done != settings["iterations"]:
                return False
            state["train_s"] += time.time() - state["mark"]
            flow, _, _ = predict(params, mcfg, img1, img2)
            e = epe(flow, gt)
            curve.append({"iteration": done, "epe": e, "train_seconds": state["train_s"]})
            print(f"[trainability seed={seed}] it={done} epe={e:.4f} ratio={e / baseline:.3f} "
                  f"t={state['train_s']:.0f}s", flush=True)
            state["mark"] = time.time()
            if e <= settings["target"] * baseline and state["reached"] is None:
                state["reached"] = {"iteration": done, "epe": e, "train_seconds": state["train_s"]}
                return True
            return False

        res = train(cfg, samples, callback=cb)
        return {"baseline_epe": baseline, "curve": curve, "reached": state["reached"],
                "final_epe": curve[-1]["epe"], "history": res.history}

    return _cached("trainability", payload, run)


def ablation_run(variant: str, seed: int, settings: dict = ABLATION) -> dict:
    overrides = VARIANTS[variant]
    payload = {"variant": overrides, "seed": seed, "data": OCCLUDER, **settings}

    def run():
        train_set = dataset(OCCLUDER, settings["train_pairs"], settings["data_seed"])
        test_set = dataset(OCCLUDER, settings["test_pairs"], settings["test_seed"])
        cfg = TrainConfig(seed=seed, iterations=settings["iterations"], lr=settings["lr"],
                          checkpoint="", **overrides)
        t0 = time.time()
        res = train(cfg, train_set, progress=lambda r: print(
            f"[ablation {variant} seed={seed}] it={r['iteration']} loss={r['total']:.4f}", flush=True))
        report = evaluate(res.params, cfg.model(), test_set, cfg.alpha1, cfg.alpha2)
        out = report.to_dict()
        out["train_seconds"] = time.time() - t0
        out["history"] = res.history
        print(f"[ablation {variant} seed={seed}] epe={report.epe_all:.4f} bnd={report.epe_boundary:.4f} "
              f"iou={report.occ_iou:.3f}", flush=True)
        return out

    return _cached("ablation", payload, run)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m guidedflow.experiments")
    ap.add_argument("suite", choices=["trainability", "ablation"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS))
    args = ap.parse_args(argv)
    if args.suite == "trainability":
        for s in args.seeds:
            trainability_run(s)
    else:
        for s in args.seeds:
            for v in args.variants:
                ablation_run(v, s)
    return 0


if __name__ == "__main__":
    sys.exit(main())
