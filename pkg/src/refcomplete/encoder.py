"""Structural shared feature encoder.

Turns images and point clouds into aligned token sets, runs one
weight-shared attention stack over every stream (positional encoding only
for the input cloud), and reconstructs reference features through the
similarity and absence control gates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import Tensor
from .geometry import ContractError, SpatialIndex, fps

_NEG_BIG = -1e30


@dataclass
class TokenSet:
    features: Tensor            # (T, D)
    anchors: np.ndarray | None  # (T, 3) for cloud tokens, None for image tokens
    modality: str

    @property
    def count(self) -> int:
        return self.features.shape[0]


def patch_encode(image: np.ndarray, params: dict, patch_size: int, dtype) -> TokenSet:
    """One token per patch; a strided linear map plays the 2D-convolution role."""
    img = np.asarray(image, dtype=dtype)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if h % patch_size or w % patch_size:
        raise ContractError(
            f"image dims {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    patches = (img.reshape(gh, patch_size, gw, patch_size, c)
                  .transpose(0, 2, 1, 3, 4)
                  .reshape(gh * gw, patch_size * patch_size * c))
    feats = E.dense(Tensor(patches), params["enc.patch.w"], params["enc.patch.b"])
    return TokenSet(feats, None, "image")


@dataclass
class ProxyStructure:
    """Parameter-free neighborhood geometry, cacheable per sample."""
    rel: np.ndarray      # (m, max_k, 3) padded relative offsets
    mask: np.ndarray     # (m, max_k, 1) 1 for real neighbors
    centers: np.ndarray  # (m, 3) FPS centers


def proxy_structure(cloud: np.ndarray, m: int, radius: float, max_k: int,
                    fps_start: int = 0) -> ProxyStructure:
    pts = np.asarray(cloud, dtype=np.float64)
    centers_idx = fps(pts, m, start=fps_start)
    centers = pts[centers_idx]
    index = SpatialIndex(pts)
    rel = np.zeros((m, max_k, 3))
    mask = np.zeros((m, max_k, 1))
    for i, center in enumerate(centers):
        nb = index.ball(center, radius, max_k)
        rel[i, :len(nb)] = pts[nb] - center
        mask[i, :len(nb), 0] = 1.0
    return ProxyStructure(rel, mask, centers)


def proxy_features(struct: ProxyStructure, params: dict, dtype,
                   modality: str) -> TokenSet:
    m, max_k, _ = struct.rel.shape
    rel_t = Tensor(struct.rel.astype(dtype))
    hidden = E.relu(E.dense(rel_t, params["enc.proxy.w1"], params["enc.proxy.b1"]))
    hdim = hidden.shape[2]
    center_feat = _masked_max(hidden, struct.mask, hdim)               # (m, H)
    spread = E.broadcast_to(E.reshape(center_feat, (m, 1, hdim)), (m, max_k, hdim))
    edges = E.dense(E.concat([spread, rel_t], axis=2),
                    params["enc.proxy.w2"], params["enc.proxy.b2"])
    feats = _masked_max(edges, struct.mask, edges.shape[2])            # (m, D)
    return TokenSet(feats, struct.centers, modality)


def proxy_encode(cloud: np.ndarray, m: int, radius: float, max_k: int,
                 params: dict, dtype, fps_start: int = 0,
                 modality: str = "input-cloud") -> TokenSet:
    """Local proxies: FPS centers, ball-query neighborhoods, relative-offset
    edge features maxed over each neighborhood. Translation invariant by
    construction; anchors carry the absolute center coordinates."""
    return proxy_features(proxy_structure(cloud, m, radius, max_k, fps_start),
                          params, dtype, modality)


def _masked_max(x: Tensor, mask: np.ndarray, width: int) -> Tensor:
    """Max over axis 1 ignoring padded rows (mask 0 entries never win)."""
    m, k = x.shape[0], x.shape[1]
    mask_b = np.broadcast_to(mask, (m, k, width)).astype(x.dtype).copy()
    penalty = Tensor((1.0 - mask_b) * _NEG_BIG)
    return E.max_over_axis(E.add(E.mul(x, Tensor(mask_b)), penalty), axis=1)


def positional_map(anchors: np.ndarray, params: dict, dtype) -> Tensor:
    a = Tensor(np.asarray(anchors, dtype=dtype))
    h = E.relu(E.dense(a, params["enc.pos.w1"], params["enc.pos.b1"]))
    return E.dense(h, params["enc.pos.w2"], params["enc.pos.b2"])


def _attention(x: Tensor, params: dict, prefix: str, heads: int) -> Tensor:
    t, d = x.shape
    dh = d // heads
    scale = Tensor(np.asarray(1.0 / np.sqrt(dh), dtype=x.dtype))

    def split(name):
        proj = E.dense(x, params[f"{prefix}.{name}.w"], params[f"{prefix}.{name}.b"])
        return E.transpose(E.reshape(proj, (t, heads, dh)), (1, 0, 2))  # (H, T, dh)

    q, k, v = split("wq"), split("wk"), split("wv")
    scores = E.mul(E.bmm(q, E.transpose(k, (0, 2, 1))), scale)
    attn = E.softmax(scores, axis=-1)
    out = E.transpose(E.bmm(attn, v), (1, 0, 2))                        # (T, H, dh)
    return E.dense(E.reshape(out, (t, d)),
                   params[f"{prefix}.wo.w"], params[f"{prefix}.wo.b"])


def _ln(x: Tensor, params: dict, prefix: str) -> Tensor:
    return E.add(E.mul(E.layer_norm(x), params[f"{prefix}.g"]), params[f"{prefix}.b"])


def shared_encode(tokens: TokenSet, params: dict, blocks: int, heads: int,
                  use_pos: bool, dtype) -> TokenSet:
    """Pre-norm self-attention stack shared across all modalities.

    With use_pos the anchor coordinates enter through a learned map before
    block 1; without it the stack is exactly permutation-equivariant.
    """
    x = tokens.features
    if use_pos:
        if tokens.anchors is None:
            raise ContractError("positional encoding requires anchor coordinates")
        x = E.add(x, positional_map(tokens.anchors, params, dtype))
    for i in range(blocks):
        x = E.add(x, _attention(_ln(x, params, f"enc.b{i}.ln1"), params,
                                f"enc.b{i}.attn", heads))
        h = E.relu(E.dense(_ln(x, params, f"enc.b{i}.ln2"),
                           params[f"enc.b{i}.ff.w1"], params[f"enc.b{i}.ff.b1"]))
        x = E.add(x, E.dense(h, params[f"enc.b{i}.ff.w2"], params[f"enc.b{i}.ff.b2"]))
    return TokenSet(x, tokens.anchors, tokens.modality)


def fuse_modalities(img: TokenSet | None, pc: TokenSet) -> TokenSet:
    """Token-axis concatenation; image tokens carry no anchors."""
    if img is None:
        return TokenSet(E.concat([pc.features], axis=0), pc.anchors, pc.modality)
    if img.features.shape[1] != pc.features.shape[1]:
        raise ContractError(
            f"feature dims disagree: {img.features.shape} vs {pc.features.shape}")
    feats = E.concat([img.features, pc.features], axis=0)
    return TokenSet(feats, None, "fused")


def _cosine_topk(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    """Indices into b of the k most cosine-similar rows per row of a."""
    an = a / (np.linalg.norm(a, axis=1, keepdims=True) + 1e-12)
    bn = b / (np.linalg.norm(b, axis=1, keepdims=True) + 1e-12)
    sim = an @ bn.T
    return np.argsort(-sim, axis=1, kind="stable")[:, :k]


def similarity_gate(ref: TokenSet, inp: TokenSet, params: dict, knn: int = 4) -> Tensor:
    """Per-channel gate from the mean feature delta to the nearest input tokens."""
    t_ref, d = ref.features.shape
    k = min(knn, inp.count)
    idx = _cosine_topk(ref.features.data, inp.features.data, k)
    gathered = E.reshape(E.gather(inp.features, idx.reshape(-1)), (t_ref, k, d))
    spread = E.broadcast_to(E.reshape(ref.features, (t_ref, 1, d)), (t_ref, k, d))
    delta = E.tmean(E.sub(spread, gathered), axis=1)
    h = E.relu(E.dense(delta, params["enc.gate.sim.w1"], params["enc.gate.sim.b1"]))
    return E.sigmoid(E.dense(h, params["enc.gate.sim.w2"], params["enc.gate.sim.b2"]))


def global_pool(inp: TokenSet, params: dict) -> Tensor:
    """Linear up-projection then elementwise max over tokens."""
    up = E.dense(inp.features, params["enc.pool.w"], params["enc.pool.b"])
    return E.max_over_axis(up, axis=0)


def absence_gate(similarity: Tensor, ref: TokenSet, pooled: Tensor,
                 params: dict) -> Tensor:
    """Rows of the gate matrix: sigmoid(MLP([S_i * ref_i ; pooled]))."""
    t_ref, d = ref.features.shape
    dg = pooled.shape[0]
    scaled = E.mul(similarity, ref.features)
    pooled_rows = E.broadcast_to(E.reshape(pooled, (1, dg)), (t_ref, dg))
    u = E.concat([scaled, pooled_rows], axis=1)
    h = E.relu(E.dense(u, params["enc.gate.abs.w1"], params["enc.gate.abs.b1"]))
    return E.sigmoid(E.dense(h, params["enc.gate.abs.w2"], params["enc.gate.abs.b2"]))


def reconstruct_reference(ref: TokenSet, gates: Tensor) -> TokenSet:
    """Elementwise gating of reference features; anchors pass through."""
    if gates.shape != ref.features.shape:
        raise ContractError(
            f"gate shape {gates.shape} != reference features {ref.features.shape}")
    return TokenSet(E.mul(gates, ref.features), ref.anchors, ref.modality)
