"""Run configuration: presets, JSON config file, and flag overrides (flag > file > preset)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .channel import SimConfig
from .evaluation import DEFAULT_SWEEP
from .estimator import VARIANTS
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


PRESETS = {
    "paper": {"sim": {"n_samples": 10_000}, "model": {"base_channels": 32},
              "train": {"max_epochs": 200}},
    "desk": {"sim": {"n_samples": 1_000}, "model": {"base_channels": 8},
             "train": {"max_epochs": 40, "dtype": "float32"}},
}

MODEL_KEYS = ("base_channels", "dropout_rate", "convlstm_hidden", "convlstm_layers")


@dataclass
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    variant: str = "cnn"
    model: dict = field(default_factory=lambda: {"base_channels": 32})
    group_size: int | None = None
    group_sizes: tuple[int, ...] = DEFAULT_SWEEP
    profile: str = "model-b"
    out_dir: str = "runs"

    @property
    def effective_group_size(self) -> int:
        return self.group_size or self.sim.n_subcarriers

    def to_json(self) -> dict:
        return {"sim": self.sim.to_json(), "train": self.train.to_json(), "variant": self.variant,
                "model": dict(self.model), "group_size": self.group_size,
                "group_sizes": list(self.group_sizes), "profile": self.profile, "out_dir": self.out_dir}


def normalize_variant(name: str) -> str:
    v = name.replace("-", "_").replace("+", "_").lower()
    if v not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected cnn or cnn-convlstm")
    return v


def _merge(dst: dict, src: dict) -> dict:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = v
    return dst


def build_run_config(preset: str | None = None, path=None, overrides: dict | None = None) -> RunConfig:
    """Layer preset, config file and overrides, then validate everything."""
    raw: dict = {"sim": {}, "train": {}, "model": {}}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        _merge(raw, json.loads(json.dumps(PRESETS[preset])))
    if path is not None:
        try:
            text = Path(path).read_text("utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        _merge(raw, doc)
    _merge(raw, overrides or {})
    seed = raw.pop("seed", None)
    try:
        sim = SimConfig.from_json(raw.pop("sim"))
        train = TrainConfig(**raw.pop("train"))
        if seed is not None:
            sim, train = replace(sim, seed=int(seed)), replace(train, seed=int(seed))
        model = {"base_channels": 32, **raw.pop("model")}
        unknown = set(model) - set(MODEL_KEYS)
        if unknown:
            raise ConfigError(f"unknown model keys {sorted(unknown)}")
        cfg = RunConfig(sim=sim, train=train, model=model,
                        variant=normalize_variant(raw.pop("variant", "cnn")),
                        group_size=raw.pop("group_size", None),
                        group_sizes=tuple(raw.pop("group_sizes", DEFAULT_SWEEP)),
                        profile=str(raw.pop("profile", "model-b")),
                        out_dir=str(raw.pop("out_dir", "runs")))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if raw:
        raise ConfigError(f"unknown config keys {sorted(raw)}")
    K = cfg.sim.n_subcarriers
    for g in (cfg.effective_group_size, *cfg.group_sizes):
        if g < 1 or K % g:
            raise ConfigError(f"group size {g} does not divide {K} subcarriers")
    return cfg
