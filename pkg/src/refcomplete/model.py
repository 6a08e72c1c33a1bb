"""Parameter store and the end-to-end completion pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from . import decoder as D
from . import encoder as Enc
from . import losses
from .config import RunConfig
from .decoder import CompletionOutput
from .encoder import TokenSet
from .engine import Tensor


class IncompatibleCheckpointError(RuntimeError):
    pass


def _np_dtype(name: str):
    return np.float32 if name == "float32" else np.float64


class _Init:
    def __init__(self, rng: np.random.Generator, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}

    def linear(self, name: str, fan_in: int, fan_out: int):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = self.rng.uniform(-limit, limit, size=(fan_in, fan_out))
        self.params[f"{name}.w"] = Tensor(w.astype(self.dtype), requires_grad=True,
                                          name=f"{name}.w")
        self.params[f"{name}.b"] = Tensor(np.zeros(fan_out, dtype=self.dtype),
                                          requires_grad=True, name=f"{name}.b")

    def norm(self, name: str, dim: int):
        self.params[f"{name}.g"] = Tensor(np.ones(dim, dtype=self.dtype),
                                          requires_grad=True, name=f"{name}.g")
        self.params[f"{name}.b"] = Tensor(np.zeros(dim, dtype=self.dtype),
                                          requires_grad=True, name=f"{name}.b")


def init_params(cfg: RunConfig) -> dict[str, Tensor]:
    """Build every parameter tensor, seeded by cfg.seed; order is fixed."""
    return _init_params_full(cfg, _Init(np.random.default_rng(cfg.seed),
                                        _np_dtype(cfg.dtype)))


def _init_params_full(cfg: RunConfig, init: _Init) -> dict[str, Tensor]:
    d = cfg.feat_dim
    dg = cfg.global_dim
    dgd = cfg.decoder_global_dim
    init.params.clear()

    init.linear("enc.patch", cfg.patch_size * cfg.patch_size, d)
    _linear_named(init, "enc.proxy", "w1", "b1", 3, cfg.proxy_hidden)
    _linear_named(init, "enc.proxy", "w2", "b2", cfg.proxy_hidden + 3, d)
    _linear_named(init, "enc.pos", "w1", "b1", 3, d)
    _linear_named(init, "enc.pos", "w2", "b2", d, d)
    for i in range(cfg.blocks):
        init.norm(f"enc.b{i}.ln1", d)
        for proj in ("wq", "wk", "wv", "wo"):
            init.linear(f"enc.b{i}.attn.{proj}", d, d)
        init.norm(f"enc.b{i}.ln2", d)
        _linear_named(init, f"enc.b{i}.ff", "w1", "b1", d, cfg.ff_dim)
        _linear_named(init, f"enc.b{i}.ff", "w2", "b2", cfg.ff_dim, d)
    _linear_named(init, "enc.gate.sim", "w1", "b1", d, d)
    _linear_named(init, "enc.gate.sim", "w2", "b2", d, d)
    init.linear("enc.pool", d, dg)
    _linear_named(init, "enc.gate.abs", "w1", "b1", d + dg, dg)
    _linear_named(init, "enc.gate.abs", "w2", "b2", dg, d)

    init.linear("dec.fuseg", d, dg)
    _linear_named(init, "dec.fuseg", "w1", "b1", dg + d, dgd)
    _linear_named(init, "dec.fuseg", "w2", "b2", dgd, dgd)
    seed_hidden = 2 * dgd
    _linear_named(init, "dec.seed", "w1", "b1", dgd, seed_hidden)
    _linear_named(init, "dec.seed", "w2", "b2", seed_hidden, 3 * cfg.seed_count)
    _linear_named(init, "dec.query", "w1", "b1", dgd + 3, dgd)
    _linear_named(init, "dec.query", "w2", "b2", dgd, d)
    for r in range(cfg.refine_rounds):
        for branch in ("geo", "sem"):
            for proj in ("wq", "wk", "wv", "wo"):
                init.linear(f"dec.r{r}.{branch}.{proj}", d, d)
    _linear_named(init, "dec.disp", "w1", "b1", d, 2 * d)
    _linear_named(init, "dec.disp", "w2", "b2", 2 * d, 3 * cfg.group_size)
    return init.params


def _linear_named(init: _Init, prefix: str, wname: str, bname: str,
                  fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = init.rng.uniform(-limit, limit, size=(fan_in, fan_out))
    init.params[f"{prefix}.{wname}"] = Tensor(w.astype(init.dtype), requires_grad=True,
                                              name=f"{prefix}.{wname}")
    init.params[f"{prefix}.{bname}"] = Tensor(np.zeros(fan_out, dtype=init.dtype),
                                              requires_grad=True, name=f"{prefix}.{bname}")


@dataclass
class ForwardResult:
    output: CompletionOutput
    pc_pre: TokenSet
    pc_enc: TokenSet
    img_pre: TokenSet | None
    img_enc: TokenSet | None
    ref_enc: TokenSet | None
    gated_ref: TokenSet
    gates: Tensor | None
    pooled: Tensor


class CompletionModel:
    """The full pipeline with its parameters; forward is pure given both."""

    def __init__(self, cfg: RunConfig, params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.dtype = _np_dtype(cfg.dtype)
        self.params = params if params is not None else _init_params_full(
            cfg, _Init(np.random.default_rng(cfg.seed), self.dtype))

    # --- pipeline ---------------------------------------------------------

    def input_structure(self, partial: np.ndarray) -> Enc.ProxyStructure:
        cfg = self.cfg
        m = min(cfg.input_proxies, len(partial))
        return Enc.proxy_structure(partial, m, cfg.ball_radius, cfg.ball_max_k)

    def reference_structure(self, reference: np.ndarray) -> Enc.ProxyStructure:
        cfg = self.cfg
        m = min(cfg.reference_proxies, len(reference))
        return Enc.proxy_structure(reference, m, cfg.ball_radius, cfg.ball_max_k)

    def forward(self, partial: np.ndarray, reference: np.ndarray | None = None,
                image: np.ndarray | None = None, *,
                input_struct: Enc.ProxyStructure | None = None,
                ref_struct: Enc.ProxyStructure | None = None) -> ForwardResult:
        cfg = self.cfg
        if input_struct is None:
            input_struct = self.input_structure(partial)
        pc_pre = Enc.proxy_features(input_struct, self.params, self.dtype, "input-cloud")
        pc_enc = Enc.shared_encode(pc_pre, self.params, cfg.blocks, cfg.heads,
                                   use_pos=cfg.use_pos_input, dtype=self.dtype)

        img_pre = img_enc = None
        if cfg.use_image and image is not None:
            img_pre = Enc.patch_encode(image, self.params, cfg.patch_size, self.dtype)
            img_enc = Enc.shared_encode(img_pre, self.params, cfg.blocks, cfg.heads,
                                        use_pos=False, dtype=self.dtype)
        fused = Enc.fuse_modalities(img_enc, pc_enc)
        fused = TokenSet(fused.features, None, "fused")

        ref_enc = None
        gates = None
        if cfg.use_reference and reference is not None:
            if ref_struct is None:
                ref_struct = self.reference_structure(reference)
            ref_pre = Enc.proxy_features(ref_struct, self.params, self.dtype,
                                         "reference-cloud")
            ref_enc = Enc.shared_encode(ref_pre, self.params, cfg.blocks, cfg.heads,
                                        use_pos=False, dtype=self.dtype)
            if cfg.use_sacg:
                sim = Enc.similarity_gate(ref_enc, fused, self.params, knn=cfg.gate_knn)
                pooled_in = Enc.global_pool(fused, self.params)
                gates = Enc.absence_gate(sim, ref_enc, pooled_in, self.params)
                gated_ref = Enc.reconstruct_reference(ref_enc, gates)
            else:
                gated_ref = ref_enc
        else:
            gated_ref = TokenSet(Tensor(np.zeros((1, cfg.feat_dim), dtype=self.dtype)),
                                 None, "reference-cloud")

        source = ref_enc if (cfg.fuse_global_source == "reference"
                             and ref_enc is not None) else None
        pooled = D.fuse_global(fused, gated_ref, self.params, source=source)
        seeds = D.generate_seeds(pooled, cfg.seed_count, self.params)
        queries = D.seed_queries(pooled, seeds, self.params)
        refined = D.refer_attend(queries, seeds, pc_enc, gated_ref, self.params,
                                 k_geo=cfg.k_geo, k_sem=cfg.k_sem,
                                 rounds=cfg.refine_rounds,
                                 progressive=cfg.progressive_decode)
        output = D.displace(refined, seeds, cfg.group_size, self.params)
        return ForwardResult(output, pc_pre, pc_enc, img_pre, img_enc,
                             ref_enc, gated_ref, gates, pooled)

    def compute_loss(self, result: ForwardResult, gt: np.ndarray,
                     gt_seed: np.ndarray | None = None) -> losses.LossBreakdown:
        cfg = self.cfg
        if gt_seed is None:
            seed_l = losses.seed_loss(result.output.seeds, gt, cfg.seed_count)
        else:
            seed_l = losses.chamfer_loss(result.output.seeds, gt_seed)
        out_l = losses.output_loss(result.output.dense, gt)
        pairs = []
        if result.img_pre is not None and result.img_enc is not None:
            pairs.append((result.img_pre.features, result.pc_enc.features))
            pairs.append((result.pc_pre.features, result.img_enc.features))
        pairs.append((result.pc_pre.features, result.pc_enc.features))
        if cfg.use_reference and cfg.ft_use_reference_pair and result.ref_enc is not None:
            pairs.append((result.gated_ref.features, result.pc_enc.features))
        ft_l = losses.ft_loss(pairs)
        return losses.total_loss(seed_l, out_l, ft_l,
                                 weights=(cfg.loss_weight_seed, cfg.loss_weight_output,
                                          cfg.loss_weight_ft))

    # --- persistence --------------------------------------------------------

    def save(self, path, extra_tensors: dict[str, np.ndarray] | None = None,
             meta: dict | None = None):
        tensors = {name: t.data for name, t in self.params.items()}
        if extra_tensors:
            tensors.update(extra_tensors)
        full_meta = {"config": self.cfg.as_dict(), "config_hash": self.cfg.hash()}
        if meta:
            full_meta.update(meta)
        ckpt.save_tensors(path, tensors, full_meta)

    @classmethod
    def load(cls, path) -> tuple["CompletionModel", dict[str, np.ndarray], dict]:
        """Restore a model; returns (model, non-parameter tensors, meta)."""
        tensors, meta = ckpt.load_tensors(path)
        if "config" not in meta:
            raise IncompatibleCheckpointError(f"{path}: checkpoint carries no config")
        cfg = RunConfig.from_dict(meta["config"])
        dtype = _np_dtype(cfg.dtype)
        expected = _init_params_full(cfg, _Init(np.random.default_rng(cfg.seed), dtype))
        params = {}
        extras = {}
        for name, arr in tensors.items():
            if name in expected:
                if tuple(arr.shape) != expected[name].shape:
                    raise IncompatibleCheckpointError(
                        f"{path}: tensor {name!r} has shape {arr.shape}, "
                        f"config implies {expected[name].shape}")
                params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
            else:
                extras[name] = arr
        missing = set(expected) - set(params)
        if missing:
            raise IncompatibleCheckpointError(
                f"{path}: checkpoint is missing parameters: {sorted(missing)[:4]}...")
        return cls(cfg, params), extras, meta


def make_image(partial: np.ndarray, viewpoint: int, cfg: RunConfig) -> np.ndarray:
    """The depth-raster stand-in for a rendered view of the partial cloud."""
    from .synthesis import depth_raster

    return depth_raster(partial, viewpoint, (cfg.image_size, cfg.image_size))
