"""Run configuration: flat key/value text files, strict key checking.

Files look like:

    # completion run
    feat_dim = 64
    seen_families = box,cylinder,chair

Unknown keys are hard errors. Types are inferred from the defaults table;
lists are comma separated. Every checkpoint and report embeds the config
hash so runs stay attributable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


_DEFAULTS: dict[str, object] = {
    # model dims
    "feat_dim": 64,
    "global_dim": 128,
    "decoder_global_dim": 128,
    "blocks": 4,
    "heads": 4,
    "ff_dim": 128,
    "proxy_hidden": 32,
    "input_proxies": 64,
    "reference_proxies": 64,
    "ball_radius": 0.2,
    "ball_max_k": 16,
    "image_size": 32,
    "patch_size": 8,
    "seed_count": 512,
    "group_size": 4,
    "refine_rounds": 2,
    "k_geo": 8,
    "k_sem": 8,
    "gate_knn": 4,
    # ablation switches
    "use_pos_input": True,
    "use_sacg": True,
    "use_reference": True,
    "use_image": True,
    "progressive_decode": True,
    "fuse_global_source": "input",
    # loss
    "ft_use_reference_pair": True,
    "loss_weight_seed": 1.0,
    "loss_weight_output": 1.0,
    "loss_weight_ft": 1.0,
    # training
    "lr": 2e-4,
    "lr_decay": 0.7,
    "lr_decay_every": 50,
    "epochs": 200,
    "max_steps": 0,
    "batch_size": 4,
    "seed": 0,
    "dtype": "float64",
    # data
    "partial_points": 2048,
    "gt_points": 2048,
    "reference_points": 2048,
    "dense_factor": 4,
    "sparse_points": 256,
    "noise_sigma": 0.01,
    "viewpoints_per_shape": 2,
    "train_per_family": 8,
    "val_per_family": 2,
    "test_per_family": 2,
    "unseen_per_family": 3,
    "seen_families": ["box", "cylinder", "chair"],
    "unseen_families": ["sphere_union", "lamp"],
    # evaluation
    "fscore_percent": 1.0,
    "mmd_candidates": 16,
    # paths / runtime
    "corpus_dir": "corpus",
    "index_path": "corpus/index.bin",
    "checkpoint_dir": "runs",
    "report_dir": "runs",
    "threads": 1,
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = dict(_DEFAULTS)
        for key, val in self.values.items():
            if key not in _DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = val
        self.values = merged

    def __getattr__(self, key):
        values = object.__getattribute__(self, "values")
        if key in values:
            return values[key]
        raise AttributeError(key)

    def replace(self, **overrides) -> "RunConfig":
        new = dict(self.values)
        for key, val in overrides.items():
            if key not in _DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            new[key] = val
        return RunConfig(new)

    def as_dict(self) -> dict:
        return dict(self.values)

    def hash(self) -> str:
        canon = "\n".join(f"{k}={_fmt(self.values[k])}" for k in sorted(self.values))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def dump(self, path):
        with open(path, "w") as f:
            for k in sorted(self.values):
                f.write(f"{k} = {_fmt(self.values[k])}\n")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        raw: dict[str, object] = {}
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = stripped.partition("=")
                key, value = key.strip(), value.strip()
                if key not in _DEFAULTS:
                    raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
                raw[key] = _parse(key, value, f"{path}:{lineno}")
        return cls(raw)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        parsed = {}
        for key, val in values.items():
            if key not in _DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            parsed[key] = _coerce(key, val)
        return cls(parsed)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, text: str, where: str):
    default = _DEFAULTS[key]
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            return [v.strip() for v in text.split(",") if v.strip()]
        return text
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def _coerce(key: str, val):
    default = _DEFAULTS[key]
    if isinstance(default, bool):
        return bool(val)
    if isinstance(default, int) and not isinstance(val, bool):
        return int(val)
    if isinstance(default, float):
        return float(val)
    if isinstance(default, list):
        return list(val)
    return str(val)
