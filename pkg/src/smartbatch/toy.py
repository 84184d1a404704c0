"""Seeded toy corpora standing in for real/synthetic driving datasets.

Both corpora are drawn from the same small set of scene archetypes: coarse
class layouts made of horizontal bands with some off-band cells. Every image
perturbs one archetype (jittered cell boundaries, flipped cells, a random
object box), so every real image has semantically close synthetic
neighbours. Synthetic archetype frequencies are deliberately skewed so that
plain nearest-neighbour pairing piles onto a few popular images.

Real images use raw IDs ``canonical + 1`` with 0 as "unlabeled" and come with
a remap table. Synthetic images are written with canonical IDs directly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from ._validation import check_positive_int, check_seed
from .exceptions import ConfigError
from .labelmap import LabelMap
from .schema import CITYSCAPES_CLASSES, ClassSchema, RemapTable, save_remap, save_schema

COARSE_ROWS = 4
COARSE_COLS = 8
_STR = np.array([str(i) for i in range(256)])


@dataclass(frozen=True)
class ToySpec:
    seed: int = 42
    n_real: int = 300
    n_synth: int = 2500
    width: int = 128
    height: int = 64
    n_classes: int = 19
    cluster_count: int = 12


def toy_schema(n_classes: int) -> ClassSchema:
    if n_classes == len(CITYSCAPES_CLASSES):
        return ClassSchema.default()
    return ClassSchema(tuple((i, f"class_{i}") for i in range(n_classes)))


def make_archetypes(rng: np.random.Generator, count: int, n_classes: int) -> np.ndarray:
    """``(count, COARSE_ROWS, COARSE_COLS)`` coarse layouts."""
    out = np.empty((count, COARSE_ROWS, COARSE_COLS), dtype=np.int64)
    for a in range(count):
        band = rng.integers(0, n_classes, size=COARSE_ROWS)
        grid = np.repeat(band[:, None], COARSE_COLS, axis=1)
        off = rng.random((COARSE_ROWS, COARSE_COLS)) < 0.3
        grid[off] = rng.integers(0, n_classes, size=int(off.sum()))
        out[a] = grid
    return out


def _cuts(rng: np.random.Generator, length: int, parts: int) -> np.ndarray:
    base = np.arange(1, parts) * length / parts
    jitter = rng.uniform(-0.25, 0.25, size=parts - 1) * length / parts
    inner = np.clip(np.round(base + jitter).astype(int), 1, max(1, length - 1))
    return np.concatenate([[0], np.sort(inner), [length]])


def render(rng: np.random.Generator, archetype: np.ndarray, width: int, height: int,
           n_classes: int, ignore_strip: bool, ignore_id: int = 255) -> np.ndarray:
    grid = archetype.copy()
    flip = rng.random(grid.shape) < 0.12
    grid[flip] = rng.integers(0, n_classes, size=int(flip.sum()))
    ys = _cuts(rng, height, grid.shape[0])
    xs = _cuts(rng, width, grid.shape[1])
    row_of = np.searchsorted(ys, np.arange(height), side="right") - 1
    col_of = np.searchsorted(xs, np.arange(width), side="right") - 1
    row_of = np.clip(row_of, 0, grid.shape[0] - 1)
    col_of = np.clip(col_of, 0, grid.shape[1] - 1)
    img = grid[row_of[:, None], col_of[None, :]]
    # one object box of a random class
    bh = int(rng.integers(1, max(2, height // 3)))
    bw = int(rng.integers(1, max(2, width // 4)))
    y0 = int(rng.integers(0, height - bh + 1))
    x0 = int(rng.integers(0, width - bw + 1))
    img[y0:y0 + bh, x0:x0 + bw] = rng.integers(0, n_classes)
    if ignore_strip:
        strip = int(rng.integers(0, max(1, height // 8)))
        if strip:
            img[height - strip:, :] = ignore_id
    return img.astype(np.uint8)


def toy_labelmaps(seed: int, n: int, width: int, height: int, n_classes: int,
                  cluster_count: int, prefix: str = "img") -> List[LabelMap]:
    """In-memory canonical toy maps; same generator family as the on-disk corpora."""
    ss = np.random.SeedSequence(check_seed(seed))
    arch_rng, img_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    arche = make_archetypes(arch_rng, cluster_count, n_classes)
    width_digits = len(str(max(n - 1, 0)))
    maps = []
    for i in range(n):
        a = int(img_rng.integers(0, cluster_count))
        data = render(img_rng, arche[a], width, height, n_classes, ignore_strip=False)
        maps.append(LabelMap(f"{prefix}_{i:0{width_digits}d}", data))
    return maps


def _write_grid(path: Path, data: np.ndarray) -> None:
    h, w = data.shape
    body = "\n".join(" ".join(row) for row in _STR[data])
    path.write_text(f"{w} {h}\n{body}\n")


def generate_toy(out_dir: Union[str, Path], spec: Optional[ToySpec] = None) -> dict:
    """Write ``schema.json``, ``real/``, ``synthetic/``, ``remap_real.json``
    and a ``pipeline.json`` config into ``out_dir``; returns the config dict.
    """
    spec = spec or ToySpec()
    seed = check_seed(spec.seed)
    for name in ("width", "height", "n_classes", "cluster_count"):
        check_positive_int(getattr(spec, name), name)
    for name in ("n_real", "n_synth"):
        check_positive_int(getattr(spec, name), name, minimum=0)
    if spec.n_classes > 254:
        raise ConfigError("n_classes must be <= 254 for the toy raw-ID encoding")
    if spec.height < COARSE_ROWS or spec.width < COARSE_COLS:
        raise ConfigError(f"toy maps must be at least {COARSE_COLS}x{COARSE_ROWS} pixels")

    out = Path(out_dir)
    real_dir, synth_dir = out / "real", out / "synthetic"
    real_dir.mkdir(parents=True, exist_ok=True)
    synth_dir.mkdir(parents=True, exist_ok=True)
    schema = toy_schema(spec.n_classes)
    save_schema(schema, out / "schema.json")
    entries = [(0, None)] + [(c + 1, c) for c in range(spec.n_classes)]
    save_remap(RemapTable("real", tuple(entries)), out / "remap_real.json")

    ss = np.random.SeedSequence(seed)
    arch_ss, real_ss, synth_ss, skew_ss = ss.spawn(4)
    arche = make_archetypes(np.random.default_rng(arch_ss), spec.cluster_count, spec.n_classes)
    skew = np.random.default_rng(skew_ss).dirichlet(np.full(spec.cluster_count, 0.7))

    rng = np.random.default_rng(real_ss)
    for i in range(spec.n_real):
        a = int(rng.integers(0, spec.cluster_count))
        data = render(rng, arche[a], spec.width, spec.height, spec.n_classes, ignore_strip=True)
        raw = np.where(data == schema.ignore_id, 0, data.astype(np.int64) + 1).astype(np.uint8)
        _write_grid(real_dir / f"real_{i:05d}.lgm", raw)

    rng = np.random.default_rng(synth_ss)
    for i in range(spec.n_synth):
        a = int(rng.choice(spec.cluster_count, p=skew))
        data = render(rng, arche[a], spec.width, spec.height, spec.n_classes, ignore_strip=False)
        _write_grid(synth_dir / f"synth_{i:05d}.lgm", data)

    config = {
        "schema_path": "schema.json",
        "remap_paths": {"real": "remap_real.json"},
        "real_root": "real",
        "synthetic_root": "synthetic",
        "output_dir": "out",
        "seed": seed,
    }
    (out / "pipeline.json").write_text(json.dumps(config, indent=2) + "\n")
    return config
