"""Training loop: batch sampling, top-1 reference retrieval, backprop,
checkpointing with exact resume."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import cloudio, engine
from .config import RunConfig
from .encoder import ProxyStructure
from .geometry import chamfer_l2, fps
from .losses import NonFiniteLossError
from .model import CompletionModel, make_image
from .optim import Adam, lr_at_epoch
from .retrieval import RetrievalIndex, retrieve_reference
from .synthesis import SampleRecord, load_split, sample_paths


class TrainingAbort(RuntimeError):
    pass


@dataclass
class TrainSample:
    record: SampleRecord
    partial: np.ndarray
    gt: np.ndarray
    gt_seed: np.ndarray
    image: np.ndarray | None
    reference: np.ndarray | None
    reference_id: str | None
    input_struct: ProxyStructure
    ref_struct: ProxyStructure | None


def load_samples(cfg: RunConfig, corpus_dir, split: str,
                 index: RetrievalIndex | None, model: CompletionModel,
                 with_structs: bool = True) -> list[TrainSample]:
    """Load a split and precompute everything that does not depend on weights."""
    samples = []
    for record in load_split(corpus_dir, split):
        partial_path, gt_path = sample_paths(corpus_dir, record)
        partial = cloudio.read_xyz(partial_path)
        gt = cloudio.read_xyz(gt_path)
        gt_seed = gt[fps(gt, min(cfg.seed_count, len(gt)), start=0)]
        image = make_image(partial, record.viewpoint, cfg) if cfg.use_image else None
        reference = reference_id = None
        if cfg.use_reference and index is not None:
            hits = retrieve_reference(index, partial, k=1, n_points=cfg.reference_points)
            reference_id, reference = hits[0]
        input_struct = model.input_structure(partial) if with_structs else None
        ref_struct = (model.reference_structure(reference)
                      if with_structs and reference is not None else None)
        samples.append(TrainSample(record, partial, gt, gt_seed, image,
                                   reference, reference_id, input_struct, ref_struct))
    return samples


def validation_cd(model: CompletionModel, samples: list[TrainSample]) -> float:
    scores = []
    for s in samples:
        res = model.forward(s.partial, s.reference, s.image,
                            input_struct=s.input_struct, ref_struct=s.ref_struct)
        scores.append(chamfer_l2(res.output.dense.data, s.gt, method="blas"))
    return float(np.mean(scores))


@dataclass
class TrainResult:
    best_path: str
    last_path: str
    log: list[dict]
    steps: int


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def train(cfg: RunConfig, corpus_dir, index_path, out_dir,
          resume: str | None = None, progress=None) -> TrainResult:
    """Run the configured schedule; saves best-by-validation-CD and last
    checkpoints plus a JSONL loss curve under `out_dir`."""
    os.makedirs(out_dir, exist_ok=True)
    index = RetrievalIndex.load(index_path) if cfg.use_reference else None

    if resume:
        model, extras, meta = CompletionModel.load(resume)
        cfg = model.cfg
        opt = Adam(model.params, cfg.lr)
        opt.load_state(extras, int(meta["adam_t"]))
        rng = _restore_rng(json.loads(meta["rng_state"]))
        start_epoch = int(meta["epoch"]) + 1
        step = int(meta["step"])
        best_val = float(meta["best_val"])
        log = list(meta.get("log", []))
    else:
        model = CompletionModel(cfg)
        opt = Adam(model.params, cfg.lr)
        rng = np.random.default_rng(cfg.seed + 0x5EED)
        start_epoch = 0
        step = 0
        best_val = float("inf")
        log = []

    train_samples = load_samples(cfg, corpus_dir, "train", index, model)
    val_samples = load_samples(cfg, corpus_dir, "val", index, model)
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")
    log_path = os.path.join(out_dir, "trainlog.jsonl")

    def save(path, epoch):
        meta = {"epoch": epoch, "step": step, "adam_t": opt.t,
                "best_val": best_val, "rng_state": json.dumps(_rng_state(rng)),
                "log": log}
        model.save(path, extra_tensors=opt.state_tensors(), meta=meta)

    stop = False
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at_epoch(cfg.lr, cfg.lr_decay, cfg.lr_decay_every, epoch)
        order = rng.permutation(len(train_samples))
        sums = {"seed": 0.0, "output": 0.0, "ft": 0.0, "total": 0.0}
        seen = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            totals = []
            for i in batch:
                s = train_samples[i]
                res = model.forward(s.partial, s.reference, s.image,
                                    input_struct=s.input_struct,
                                    ref_struct=s.ref_struct)
                try:
                    lb = model.compute_loss(res, s.gt, gt_seed=s.gt_seed)
                except NonFiniteLossError as exc:
                    raise TrainingAbort(
                        f"epoch {epoch} batch {lo // cfg.batch_size} "
                        f"sample {s.record.sample_id}: {exc}") from exc
                totals.append(lb.total)
                for key, val in lb.values().items():
                    sums[key] += val
                seen += 1
            batch_loss = totals[0]
            for t in totals[1:]:
                batch_loss = engine.add(batch_loss, t)
            batch_loss = engine.mul(batch_loss, engine.Tensor(
                np.asarray(1.0 / len(totals), dtype=batch_loss.dtype)))
            engine.backward(batch_loss)
            opt.step(lr)
            opt.zero_grad()
            step += 1
            if cfg.max_steps and step >= cfg.max_steps:
                stop = True
                break
        entry = {"epoch": epoch, "lr": lr, "steps": step,
                 **{k: v / max(seen, 1) for k, v in sums.items()}}
        entry["val_cd"] = validation_cd(model, val_samples)
        log.append(entry)
        with open(log_path, "a") as f:
            f.write(json.dumps(entry) + "\n")
        if progress:
            progress(f"epoch {epoch}: total {entry['total']:.5f} "
                     f"val_cd {entry['val_cd']:.5f} lr {lr:.2e}")
        if entry["val_cd"] < best_val:
            best_val = entry["val_cd"]
            save(best_path, epoch)
        save(last_path, epoch)
        if stop:
            break
    return TrainResult(best_path, last_path, log, step)
