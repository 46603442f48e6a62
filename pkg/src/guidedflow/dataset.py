"""On-disk datasets: 8-bit PNG frames, ``.flo`` ground truth and a manifest.

Each manifest line is ``img1 img2 flow [occ]`` with paths relative to the
manifest's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from guidedflow.flo import read_flo, write_flo
from guidedflow.synthetic import Sample, SyntheticSpec, generate

MANIFEST_NAME = "manifest.txt"


def read_png(path) -> np.ndarray:
    """RGB PNG as 3 x H x W float32 in [0, 1]."""
    with Image.open(path) as im:
        a = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(a.transpose(2, 0, 1))


def write_png(image: np.ndarray, path) -> None:
    """Write 3 x H x W float in [0, 1], H x W x 3 uint8, or H x W gray."""
    a = np.asarray(image)
    if a.dtype != np.uint8:
        if a.ndim == 3 and a.shape[0] in (1, 3):
            a = a.transpose(1, 2, 0)
        a = np.round(np.clip(a, 0.0, 1.0) * 255).astype(np.uint8)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    Image.fromarray(a).save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) >= 128).astype(np.float32)


@dataclass
class ManifestEntry:
    img1: Path
    img2: Path
    flow: Path
    occ: Optional[Path] = None


def read_manifest(path) -> List[ManifestEntry]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) not in (3, 4):
            raise ValueError(f"{path}:{lineno}: expected 3 or 4 paths, got {len(parts)}")
        paths = [root / p for p in parts]
        for p in paths:
            if not p.is_file():
                raise FileNotFoundError(f"{path}:{lineno}: missing file {p}")
        entries.append(ManifestEntry(*paths))
    if not entries:
        raise ValueError(f"manifest {path} lists no samples")
    return entries


def load_entry(e: ManifestEntry) -> Sample:
    img1, img2 = read_png(e.img1), read_png(e.img2)
    flow = read_flo(e.flow)
    occ = read_mask(e.occ) if e.occ is not None else np.ones(img1.shape[1:], np.float32)
    if img1.shape != img2.shape or flow.shape[1:] != img1.shape[1:]:
        raise ValueError(f"extents disagree in sample {e.img1.name}")
    return Sample(img1, img2, flow, occ)


def load_manifest(path) -> List[Sample]:
    return [load_entry(e) for e in read_manifest(path)]


def write_dataset(samples, out_dir) -> Path:
    """Write samples as PNG/.flo files plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        names = [f"{i:05d}_img1.png", f"{i:05d}_img2.png", f"{i:05d}_flow.flo", f"{i:05d}_occ.png"]
        write_png(s.image1, out / names[0])
        write_png(s.image2, out / names[1])
        write_flo(s.flow, out / names[2])
        write_png((s.occ > 0.5).astype(np.uint8) * 255, out / names[3])
        lines.append(" ".join(names))
    manifest = out / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def make_dataset(spec: SyntheticSpec, count: int, out_dir, seed: int = 0) -> Path:
    """Generate ``count`` samples with per-sample seeds derived from ``seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    seeds = np.random.SeedSequence(seed).generate_state(count)
    samples = [generate(spec, int(s)) for s in seeds]
    return write_dataset(samples, out_dir)


def stack(samples: List[Sample]):
    """Batch arrays ``(img1, img2, flow, occ)`` with occ shaped B x 1 x H x W."""
    img1 = np.stack([s.image1 for s in samples])
    img2 = np.stack([s.image2 for s in samples])
    flow = np.stack([s.flow for s in samples])
    occ = np.stack([s.occ for s in samples])[:, None]
    return img1, img2, flow, occ


def is_dataset_dir(path) -> bool:
    return os.path.isfile(os.path.join(path, MANIFEST_NAME))
