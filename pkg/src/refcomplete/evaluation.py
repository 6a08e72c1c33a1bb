"""Evaluation harness: per-sample metric dumps and aggregate reports.

Metrics per sample: CD-l2 and CD-l1 (reported x1000), F-score at a
percentage of the ground-truth bounding-box side, fidelity of the input,
and minimal matching distance against the retrieval corpus shapes. The
retrieval index is always the train-split index, so unseen-category
evaluation never sees test shapes.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import cloudio, geometry
from .config import RunConfig
from .model import CompletionModel, make_image
from .retrieval import RetrievalIndex, retrieve_reference
from .synthesis import load_split, sample_paths

METRIC_KEYS = ("cd_l2_x1000", "cd_l1_x1000", "fscore", "fidelity_x1000", "mmd_x1000")


@dataclass
class SampleMetrics:
    sample_id: str
    category: str
    cd_l2_x1000: float
    cd_l1_x1000: float
    fscore: float
    fidelity_x1000: float
    mmd_x1000: float
    reference_id: str | None


def fscore_tau(gt: np.ndarray, percent: float) -> float:
    side = float((gt.max(axis=0) - gt.min(axis=0)).max())
    return percent / 100.0 * side


def sample_metrics(sample_id: str, category: str, partial: np.ndarray,
                   output: np.ndarray, gt: np.ndarray,
                   candidates: list[np.ndarray], percent: float,
                   reference_id: str | None = None) -> SampleMetrics:
    cd2 = geometry.chamfer_l2(output, gt, method="blas")
    cd1 = geometry.chamfer_l1(output, gt, method="blas")
    fs = geometry.f_score(output, gt, fscore_tau(gt, percent), method="blas")
    fid = geometry.fidelity(partial, output, method="blas")
    mm = geometry.mmd(output, candidates, method="blas") if candidates else float("nan")
    return SampleMetrics(sample_id, category, cd2 * 1000.0, cd1 * 1000.0, fs,
                         fid * 1000.0, mm * 1000.0, reference_id)


def _aggregate(rows: list[SampleMetrics]) -> dict:
    def mean_over(items):
        return {k: float(np.mean([getattr(r, k) for r in items])) for k in METRIC_KEYS}

    categories = sorted({r.category for r in rows})
    return {
        "per_category": {c: mean_over([r for r in rows if r.category == c])
                         for c in categories},
        "average": mean_over(rows),
        "count": len(rows),
    }


def evaluate(checkpoint_path, corpus_dir, index_path, split: str,
             out_prefix=None, threads: int = 1, self_check: bool = False,
             swap_references: bool = False, progress=None) -> dict:
    """Evaluate a checkpoint on a corpus split; returns the report dict.

    self_check scores the ground truth against itself (oracle mode);
    swap_references replaces each retrieved reference with a shape from a
    different category (robustness probe)."""
    model, _extras, _meta = CompletionModel.load(checkpoint_path)
    cfg = model.cfg
    index = RetrievalIndex.load(index_path)
    records = load_split(corpus_dir, split)

    candidates = []
    for rec in index.records[: cfg.mmd_candidates]:
        candidates.append(cloudio.read_cloud(os.path.join(index.root, rec.path)))

    id_to_category = {r.shape_id: r.path for r in index.records}

    def score(record):
        partial_path, gt_path = sample_paths(corpus_dir, record)
        partial = cloudio.read_xyz(partial_path)
        gt = cloudio.read_xyz(gt_path)
        reference_id = None
        reference = None
        if cfg.use_reference:
            hits = retrieve_reference(index, partial, k=1,
                                      n_points=cfg.reference_points)
            reference_id, reference = hits[0]
            if swap_references:
                reference_id, reference = _other_category_reference(
                    index, record.category, record.sample_id, cfg.reference_points)
        if self_check:
            output = gt
        else:
            image = make_image(partial, record.viewpoint, cfg) if cfg.use_image else None
            output = model.forward(partial, reference, image).output.dense.data
        return sample_metrics(record.sample_id, record.category, partial, output,
                              gt, candidates, cfg.fscore_percent, reference_id)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(score, records))  # map preserves order
    else:
        rows = []
        for rec in records:
            rows.append(score(rec))
            if progress:
                progress(f"scored {rec.sample_id}")

    report = _aggregate(rows)
    report["split"] = split
    report["config_hash"] = cfg.hash()
    report["checkpoint"] = str(checkpoint_path)
    report["self_check"] = self_check
    report["swap_references"] = swap_references
    if out_prefix:
        os.makedirs(os.path.dirname(os.path.abspath(str(out_prefix))), exist_ok=True)
        with open(f"{out_prefix}.samples.jsonl", "w") as f:
            for r in rows:
                f.write(json.dumps(asdict(r)) + "\n")
        with open(f"{out_prefix}.report.json", "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    report["samples"] = [asdict(r) for r in rows]
    return report


def _other_category_reference(index: RetrievalIndex, category: str,
                              sample_id: str, n_points: int):
    """Deterministic pick of a corpus shape from a different category."""
    others = [r for r in index.records if not r.shape_id.startswith(category)]
    if not others:
        others = list(index.records)
    pick = others[hash(sample_id) % len(others)]
    cloud = cloudio.read_cloud(os.path.join(index.root, pick.path))
    from .retrieval import resample

    return pick.shape_id, resample(cloud, n_points)


def format_table(report: dict) -> str:
    headers = ["category", "n"] + list(METRIC_KEYS)
    lines = ["  ".join(f"{h:>14}" for h in headers)]
    per_cat = report["per_category"]
    counts = {}
    for row in report.get("samples", []):
        counts[row["category"]] = counts.get(row["category"], 0) + 1
    for cat in sorted(per_cat):
        vals = per_cat[cat]
        cells = [f"{cat:>14}", f"{counts.get(cat, 0):>14}"]
        cells += [f"{vals[k]:>14.4f}" for k in METRIC_KEYS]
        lines.append("  ".join(cells))
    avg = report["average"]
    cells = [f"{'average':>14}", f"{report['count']:>14}"]
    cells += [f"{avg[k]:>14.4f}" for k in METRIC_KEYS]
    lines.append("  ".join(cells))
    return "\n".join(lines)
