"""Synthetic corpus construction: occlusion, degradation, depth rasters.

A corpus lives in one directory:

    corpus/
      corpus.json            generation settings echo
      manifest.txt           retrieval manifest (train-split complete shapes)
      shapes/<shape_id>.xyz  complete clouds
      samples/<split>/<sample_id>.partial.xyz
      splits/<split>.txt     "sample_id shape_id category viewpoint" per line

Everything derives from a single master seed; reruns are byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import cloudio
from .geometry import ContractError, fps
from .shapes import random_spec, sample_shape

N_VIEWPOINTS = 24


def view_directions() -> np.ndarray:
    """24 fixed unit directions: 12 Fibonacci-sphere points plus negations.

    Viewpoint i and i+12 are exact opposites.
    """
    n = N_VIEWPOINTS // 2
    i = np.arange(n)
    golden = (1 + 5 ** 0.5) / 2
    theta = 2 * np.pi * i / golden
    z = 1 - (2 * i + 1) / n
    r = np.sqrt(1 - z * z)
    half = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    half /= np.linalg.norm(half, axis=1, keepdims=True)
    return np.vstack([half, -half])


_VIEW_DIRS = view_directions()


def occlude(cloud: np.ndarray, viewpoint: int, target: int) -> np.ndarray:
    """Drop the half-space behind the view plane, then resample to `target`.

    The plane offset is the median projection, so roughly half the points
    survive. Survivors are FPS-downsampled; if fewer than `target` survive
    the kept set is tiled (duplicated) to reach the count.
    """
    if not (0 <= viewpoint < N_VIEWPOINTS):
        raise ContractError(f"viewpoint must be in 0..{N_VIEWPOINTS - 1}, got {viewpoint}")
    direction = _VIEW_DIRS[viewpoint]
    dots = cloud @ direction
    offset = np.sort(dots)[len(dots) // 2]
    kept = cloud[dots >= offset]
    if kept.shape[0] >= target:
        return kept[fps(kept, target, start=0)]
    reps = int(np.ceil(target / kept.shape[0]))
    return np.tile(kept, (reps, 1))[:target]


def visible_mask(cloud: np.ndarray, viewpoint: int) -> np.ndarray:
    """Which points survive the occlusion plane (before resampling)."""
    direction = _VIEW_DIRS[viewpoint]
    dots = cloud @ direction
    return dots >= np.sort(dots)[len(dots) // 2]


def degrade(partial: np.ndarray, n_sparse: int, sigma: float, seed: int = 0) -> np.ndarray:
    """FPS down to `n_sparse` points, then add per-axis Gaussian jitter."""
    if n_sparse > partial.shape[0]:
        raise ContractError(
            f"n_sparse={n_sparse} exceeds cloud size {partial.shape[0]}")
    sub = partial[fps(partial, n_sparse, start=0)]
    if sigma == 0.0:
        return sub
    rng = np.random.default_rng(seed)
    return sub + rng.normal(scale=sigma, size=sub.shape)


def _view_basis(direction: np.ndarray):
    w = direction / np.linalg.norm(direction)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(w)))] = 1.0
    u = np.cross(helper, w)
    u /= np.linalg.norm(u)
    v = np.cross(w, u)
    return u, v, w


def depth_raster(cloud: np.ndarray, viewpoint: int, res: tuple[int, int]) -> np.ndarray:
    """Orthographic nearest-depth raster along a viewpoint direction.

    Pixels hold 2 + depth for the nearest point (viewer looks along +w),
    0 where no point projects. Clouds are assumed roughly unit scale; the
    image plane spans [-1.25, 1.25] in both axes.
    """
    h, w_res = res
    if h < 1 or w_res < 1:
        raise ContractError(f"raster resolution must be positive, got {res}")
    u, v, w = _view_basis(_VIEW_DIRS[viewpoint])
    px = cloud @ u
    py = cloud @ v
    depth = cloud @ w
    span = 1.25
    cols = np.clip(((px + span) / (2 * span) * w_res).astype(int), 0, w_res - 1)
    rows = np.clip(((py + span) / (2 * span) * h).astype(int), 0, h - 1)
    img = np.zeros((h, w_res))
    stored = np.full((h, w_res), np.inf)
    for r, c, d in sorted(zip(rows.tolist(), cols.tolist(), depth.tolist())):
        if d < stored[r, c]:
            stored[r, c] = d
            img[r, c] = 2.0 + d
    return img


# corpus generation ------------------------------------------------------------

@dataclass
class SampleRecord:
    sample_id: str
    shape_id: str
    category: str
    viewpoint: int
    split: str


def _shape_seed(master_seed: int, shape_index: int) -> int:
    return master_seed * 1_000_003 + shape_index


def generate_corpus(out_dir, *, master_seed: int, seen_families, unseen_families,
                    train_per_family: int, val_per_family: int, test_per_family: int,
                    unseen_per_family: int, viewpoints_per_shape: int,
                    partial_points: int, gt_points: int, dense_factor: int = 4,
                    sparse_points: int | None = None, noise_sigma: float = 0.0) -> dict:
    """Write a complete corpus; returns the summary dict also saved as corpus.json."""
    os.makedirs(out_dir, exist_ok=True)
    shapes_dir = os.path.join(out_dir, "shapes")
    splits_dir = os.path.join(out_dir, "splits")
    os.makedirs(shapes_dir, exist_ok=True)
    os.makedirs(splits_dir, exist_ok=True)

    plan = []  # (family, split) pairs in a fixed order
    for fam in seen_families:
        plan += [(fam, "train")] * train_per_family
        plan += [(fam, "val")] * val_per_family
        plan += [(fam, "test")] * test_per_family
    for fam in unseen_families:
        plan += [(fam, "unseen")] * unseen_per_family

    records: list[SampleRecord] = []
    manifest_lines = []
    fam_counters: dict[str, int] = {}
    dense_n = partial_points * dense_factor
    for shape_index, (family, split) in enumerate(plan):
        fam_idx = fam_counters.get(family, 0)
        fam_counters[family] = fam_idx + 1
        shape_id = f"{family}_{fam_idx:03d}"
        spec = random_spec(family, _shape_seed(master_seed, shape_index))
        dense = sample_shape(spec, dense_n)
        gt = dense[fps(dense, gt_points, start=0)]
        cloudio.write_xyz(gt, os.path.join(shapes_dir, f"{shape_id}.xyz"))
        if split == "train":
            manifest_lines.append(f"{shape_id}\tshapes/{shape_id}.xyz\t{family}")
        sample_dir = os.path.join(out_dir, "samples", split)
        os.makedirs(sample_dir, exist_ok=True)
        for j in range(viewpoints_per_shape):
            viewpoint = (shape_index * 7 + j * 11) % N_VIEWPOINTS
            sample_id = f"{shape_id}_v{viewpoint:02d}"
            partial = occlude(dense, viewpoint, partial_points)
            cloudio.write_xyz(partial, os.path.join(sample_dir, f"{sample_id}.partial.xyz"))
            records.append(SampleRecord(sample_id, shape_id, family, viewpoint, split))

    split_names = sorted({r.split for r in records})
    for split in split_names:
        with open(os.path.join(splits_dir, f"{split}.txt"), "w") as f:
            for r in records:
                if r.split == split:
                    f.write(f"{r.sample_id} {r.shape_id} {r.category} {r.viewpoint}\n")

    if sparse_points is not None:
        sparse_dir = os.path.join(out_dir, "samples", "test_sparse")
        os.makedirs(sparse_dir, exist_ok=True)
        with open(os.path.join(splits_dir, "test_sparse.txt"), "w") as f:
            for k, r in enumerate([r for r in records if r.split == "test"]):
                partial = cloudio.read_xyz(
                    os.path.join(out_dir, "samples", "test", f"{r.sample_id}.partial.xyz"))
                sparse = degrade(partial, sparse_points, noise_sigma,
                                 seed=_shape_seed(master_seed, 900_000 + k))
                cloudio.write_xyz(sparse, os.path.join(sparse_dir, f"{r.sample_id}.partial.xyz"))
                f.write(f"{r.sample_id} {r.shape_id} {r.category} {r.viewpoint}\n")

    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        f.write("\n".join(manifest_lines) + "\n")

    summary = {
        "master_seed": master_seed,
        "seen_families": list(seen_families),
        "unseen_families": list(unseen_families),
        "train_per_family": train_per_family,
        "val_per_family": val_per_family,
        "test_per_family": test_per_family,
        "unseen_per_family": unseen_per_family,
        "viewpoints_per_shape": viewpoints_per_shape,
        "partial_points": partial_points,
        "gt_points": gt_points,
        "dense_factor": dense_factor,
        "sparse_points": sparse_points,
        "noise_sigma": noise_sigma,
        "splits": {s: sum(1 for r in records if r.split == s) for s in split_names},
        "shapes": len(plan),
    }
    with open(os.path.join(out_dir, "corpus.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


def load_split(corpus_dir, split: str) -> list[SampleRecord]:
    path = os.path.join(corpus_dir, "splits", f"{split}.txt")
    if not os.path.exists(path):
        raise FileNotFoundError(f"split file not found: {path}")
    records = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            sample_id, shape_id, category, viewpoint = line.split()
            records.append(SampleRecord(sample_id, shape_id, category, int(viewpoint), split))
    return records


def sample_paths(corpus_dir, record: SampleRecord) -> tuple[str, str]:
    partial = os.path.join(corpus_dir, "samples", record.split,
                           f"{record.sample_id}.partial.xyz")
    gt = os.path.join(corpus_dir, "shapes", f"{record.shape_id}.xyz")
    return partial, gt
