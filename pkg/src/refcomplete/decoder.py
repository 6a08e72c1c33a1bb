"""Progressive retrieval-augmented generator.

Pools global context from the fused input and the gated reference, emits
sparse seed coordinates with per-seed queries, refines them with
geometric-KNN attention over input tokens and semantic-KNN attention over
gated reference tokens, and displaces each seed into a dense group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .encoder import TokenSet, _cosine_topk
from .engine import Tensor


@dataclass
class CompletionOutput:
    dense: Tensor   # (M0 * k, 3)
    seeds: Tensor   # (M0, 3)
    group_size: int

    @property
    def count(self) -> int:
        return self.dense.shape[0]


def fuse_global(inp: TokenSet, gated_ref: TokenSet, params: dict,
                source: TokenSet | None = None) -> Tensor:
    """Global context: pooled (up-projected) input tokens joined with pooled
    gated reference tokens, then a two-layer perceptron.

    `source` swaps the first pooled stream (the alternative reading of the
    seed equation); default pools the fused input tokens."""
    first_tokens = source if source is not None else inp
    proj = E.dense(first_tokens.features, params["dec.fuseg.w"], params["dec.fuseg.b"])
    first = E.max_over_axis(proj, axis=0)                      # (Dg,)
    second = E.max_over_axis(gated_ref.features, axis=0)       # (D,)
    joined = E.reshape(E.concat([first, second], axis=0), (1, first.shape[0] + second.shape[0]))
    h = E.relu(E.dense(joined, params["dec.fuseg.w1"], params["dec.fuseg.b1"]))
    out = E.dense(h, params["dec.fuseg.w2"], params["dec.fuseg.b2"])
    return E.reshape(out, (out.shape[1],))


def generate_seeds(pooled: Tensor, m0: int, params: dict) -> Tensor:
    """Perceptron from the global feature to m0 seed coordinates in [-2, 2]^3."""
    row = E.reshape(pooled, (1, pooled.shape[0]))
    h = E.relu(E.dense(row, params["dec.seed.w1"], params["dec.seed.b1"]))
    raw = E.dense(h, params["dec.seed.w2"], params["dec.seed.b2"])
    return E.mul(E.tanh(E.reshape(raw, (m0, 3))), Tensor(np.asarray(2.0, dtype=raw.dtype)))


def seed_queries(pooled: Tensor, seeds: Tensor, params: dict) -> Tensor:
    """Per-seed query: perceptron over [global feature ; seed coordinate]."""
    m0 = seeds.shape[0]
    dg = pooled.shape[0]
    rows = E.broadcast_to(E.reshape(pooled, (1, dg)), (m0, dg))
    joined = E.concat([rows, seeds], axis=1)
    h = E.relu(E.dense(joined, params["dec.query.w1"], params["dec.query.b1"]))
    return E.dense(h, params["dec.query.w2"], params["dec.query.b2"])


def _branch_attention(queries: Tensor, source: Tensor, idx: np.ndarray,
                      params: dict, prefix: str, subtract_query: bool) -> Tensor:
    """Cross-attention from each query to its selected source tokens.

    With subtract_query the keys/values come from (token - query), the
    reference-relative form; otherwise from the tokens directly."""
    m0, d = queries.shape
    k = idx.shape[1]
    gathered = E.reshape(E.gather(source, idx.reshape(-1)), (m0, k, d))
    if subtract_query:
        spread = E.broadcast_to(E.reshape(queries, (m0, 1, d)), (m0, k, d))
        gathered = E.sub(gathered, spread)
    q = E.dense(queries, params[f"{prefix}.wq.w"], params[f"{prefix}.wq.b"])
    keys = E.dense(gathered, params[f"{prefix}.wk.w"], params[f"{prefix}.wk.b"])
    vals = E.dense(gathered, params[f"{prefix}.wv.w"], params[f"{prefix}.wv.b"])
    dh = q.shape[1]
    scale = Tensor(np.asarray(1.0 / np.sqrt(dh), dtype=q.dtype))
    scores = E.mul(E.bmm(E.reshape(q, (m0, 1, dh)), E.transpose(keys, (0, 2, 1))), scale)
    attn = E.softmax(scores, axis=-1)
    out = E.reshape(E.bmm(attn, vals), (m0, dh))
    return E.dense(out, params[f"{prefix}.wo.w"], params[f"{prefix}.wo.b"])


def refer_attend(queries: Tensor, seeds: Tensor, inp_cloud: TokenSet,
                 gated_ref: TokenSet, params: dict, *, k_geo: int, k_sem: int,
                 rounds: int, progressive: bool = True) -> Tensor:
    """Per-seed refinement: geometric branch over anchor-nearest input tokens,
    semantic branch over cosine-nearest gated reference tokens, summed into
    the query residually for `rounds` rounds.

    With progressive=False both branches attend to every token (full
    cross-attention, the one-stage ablation)."""
    if inp_cloud.anchors is None:
        raise ValueError("geometric branch needs input tokens with anchors")
    m0 = queries.shape[0]
    t_in = inp_cloud.count
    t_ref = gated_ref.count
    kg = t_in if not progressive else min(k_geo, t_in)
    ks = t_ref if not progressive else min(k_sem, t_ref)

    diff = seeds.data[:, None, :] - inp_cloud.anchors[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    geo_idx = np.argsort(d2, axis=1, kind="stable")[:, :kg]

    out = queries
    for r in range(rounds):
        sem_idx = _cosine_topk(out.data, gated_ref.features.data, ks)
        geo = _branch_attention(out, inp_cloud.features, geo_idx,
                                params, f"dec.r{r}.geo", subtract_query=False)
        sem = _branch_attention(out, gated_ref.features, sem_idx,
                                params, f"dec.r{r}.sem", subtract_query=True)
        out = E.add(E.add(out, geo), sem)
    return out


def displace(refined: Tensor, seeds: Tensor, group_size: int, params: dict) -> CompletionOutput:
    """Map each refined query to `group_size` offsets around its seed."""
    if group_size < 1:
        raise ValueError(f"group size must be >= 1, got {group_size}")
    m0 = seeds.shape[0]
    h = E.relu(E.dense(refined, params["dec.disp.w1"], params["dec.disp.b1"]))
    offsets = E.reshape(E.dense(h, params["dec.disp.w2"], params["dec.disp.b2"]),
                        (m0, group_size, 3))
    anchored = E.add(E.broadcast_to(E.reshape(seeds, (m0, 1, 3)), (m0, group_size, 3)),
                     offsets)
    return CompletionOutput(E.reshape(anchored, (m0 * group_size, 3)), seeds, group_size)
