"""Deterministic geometric shape descriptor.

Stands in for learned embedders: an 80-dim unit vector built from a 4x4x4
occupancy histogram (64) plus the sorted centroid distances of 16
farthest-point samples (16). Centering and scaling make it translation-
and scale-invariant; histogram + sorted distances make it permutation-
invariant.
"""

from __future__ import annotations

import numpy as np

from .geometry import ContractError, fps

GRID = 4
FPS_COUNT = 16
DIM = GRID ** 3 + FPS_COUNT
EMBEDDER_ID = "geo-hist4-fps16-v1"


def embed_geometric(cloud: np.ndarray) -> np.ndarray:
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ContractError(f"embed_geometric: need a non-empty N x 3 cloud, got {pts.shape}")
    centered = pts - pts.mean(axis=0)
    radii = np.linalg.norm(centered, axis=1)
    scale = radii.max()
    if scale > 0:
        centered = centered / scale

    cells = np.clip(((centered + 1.0) * (GRID / 2.0)).astype(int), 0, GRID - 1)
    flat = cells[:, 0] * GRID * GRID + cells[:, 1] * GRID + cells[:, 2]
    hist = np.bincount(flat, minlength=GRID ** 3).astype(np.float64) / pts.shape[0]

    # start FPS from the farthest-from-centroid point so the sample set
    # depends on geometry, not on storage order
    start = int(np.argmax(np.linalg.norm(centered, axis=1)))
    m = min(FPS_COUNT, pts.shape[0])
    picked = fps(centered, m, start=start)
    dists = np.sort(np.linalg.norm(centered[picked], axis=1))
    if m < FPS_COUNT:
        dists = np.concatenate([np.zeros(FPS_COUNT - m), dists])

    vec = np.concatenate([hist, dists])
    return vec / np.linalg.norm(vec)
