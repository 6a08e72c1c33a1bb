"""Training losses: seed/output Chamfer terms and the feature-transfer loss.

The Chamfer terms differentiate through the tensor engine: nearest-neighbor
assignments are computed outside the graph (they are locally constant) and
the distances re-enter as gather + square + mean nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import Tensor
from .geometry import ContractError, fps


class NonFiniteLossError(RuntimeError):
    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term!r} is non-finite ({value})")
        self.term = term


def _nn_idx(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Argmin over b per row of a, via the inner-product expansion.

    Selection runs in float32 for speed; the chosen pair's distance is
    recomputed exactly inside the graph, so only tie-breaking can differ
    from an exact scan, never the loss semantics."""
    a4 = np.ascontiguousarray(a, dtype=np.float32)
    b4 = np.ascontiguousarray(b.T, dtype=np.float32)
    bb = (b4 * b4).sum(axis=0)
    out = np.empty(a.shape[0], dtype=np.int64)
    block = 4096
    for lo in range(0, a.shape[0], block):
        hi = min(lo + block, a.shape[0])
        scores = a4[lo:hi] @ b4
        scores *= -2.0
        scores += bb[None, :]
        out[lo:hi] = scores.argmin(axis=1)
    return out


def chamfer_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Differentiable symmetric squared-distance Chamfer against a fixed cloud."""
    tgt = np.asarray(target, dtype=np.float64)
    if pred.shape[0] < 1 or tgt.shape[0] < 1:
        raise ContractError("chamfer_loss: both clouds must be non-empty")
    fwd_idx = _nn_idx(pred.data, tgt)
    bwd_idx = _nn_idx(tgt, pred.data)
    tgt_t = Tensor(tgt.astype(pred.dtype))
    diff_fwd = E.sub(pred, Tensor(tgt[fwd_idx].astype(pred.dtype)))
    term_fwd = E.tmean(E.tsum(E.square(diff_fwd), axis=1))
    diff_bwd = E.sub(E.gather(pred, bwd_idx), tgt_t)
    term_bwd = E.tmean(E.tsum(E.square(diff_bwd), axis=1))
    return E.add(term_fwd, term_bwd)


def seed_loss(seeds: Tensor, gt: np.ndarray, seed_gt_count: int = 512) -> Tensor:
    """Chamfer between the seeds and an FPS downsample of the ground truth."""
    gt = np.asarray(gt, dtype=np.float64)
    count = min(seed_gt_count, gt.shape[0])
    return chamfer_loss(seeds, gt[fps(gt, count, start=0)])


def output_loss(dense: Tensor, gt: np.ndarray) -> Tensor:
    return chamfer_loss(dense, gt)


def gram(features: Tensor) -> Tensor:
    """features^T @ features; invariant to any row permutation."""
    if features.shape[0] < 1:
        raise ContractError("gram: need at least one token")
    return E.matmul(E.transpose(features, (1, 0)), features)


def ft_pair_loss(f_in: Tensor, f_out: Tensor) -> Tensor:
    """One feature-transfer pair: normalized GRAM MSE, plus the direct MSE
    when the token counts line up (it is undefined across different T)."""
    if f_in.shape[1] != f_out.shape[1]:
        raise ContractError(
            f"ft_pair_loss: channel dims disagree: {f_in.shape} vs {f_out.shape}")
    d = f_in.shape[1]
    ga = E.div(gram(f_in), Tensor(np.asarray(float(f_in.shape[0]), dtype=f_in.dtype)))
    gb = E.div(gram(f_out), Tensor(np.asarray(float(f_out.shape[0]), dtype=f_out.dtype)))
    loss = E.div(E.tsum(E.square(E.sub(ga, gb))),
                 Tensor(np.asarray(float(d * d), dtype=f_in.dtype)))
    if f_in.shape[0] == f_out.shape[0]:
        loss = E.add(loss, E.tmean(E.square(E.sub(f_in, f_out))))
    return loss


def ft_loss(pairs: list[tuple[Tensor, Tensor]]) -> Tensor:
    """Feature-transfer loss accumulated over the configured pairing set."""
    if not pairs:
        return Tensor(np.asarray(0.0))
    total = ft_pair_loss(*pairs[0])
    for f_in, f_out in pairs[1:]:
        total = E.add(total, ft_pair_loss(f_in, f_out))
    return total


@dataclass
class LossBreakdown:
    seed: Tensor
    output: Tensor
    ft: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {"seed": self.seed.item(), "output": self.output.item(),
                "ft": self.ft.item(), "total": self.total.item()}


def total_loss(seed: Tensor, output: Tensor, ft: Tensor,
               weights: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> LossBreakdown:
    """Fixed-order sum seed + output + ft; aborts on any non-finite term."""
    for name, term in (("seed", seed), ("output", output), ("ft", ft)):
        if not np.isfinite(term.data):
            raise NonFiniteLossError(name, float(term.data))
    ws, wo, wf = weights
    if (ws, wo, wf) != (1.0, 1.0, 1.0):
        seed = E.mul(seed, Tensor(np.asarray(ws, dtype=seed.dtype)))
        output = E.mul(output, Tensor(np.asarray(wo, dtype=output.dtype)))
        ft = E.mul(ft, Tensor(np.asarray(wf, dtype=ft.dtype)))
    total = E.add(E.add(seed, output), ft)
    return LossBreakdown(seed, output, ft, total)
