"""Experiment configuration: strict JSON with explicit seeds everywhere.

Unknown keys are rejected, seeds are mandatory for every stochastic
stage, and referenced files must exist at load time.  There is no hidden
global random state anywhere in the pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


def _take(d: dict, cls, context: str):
    """Build a dataclass from a dict, rejecting unknown keys and
    reporting missing required ones."""
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


@dataclass(frozen=True)
class CorruptionBlock:
    blur_sigma: float
    snr_db: float
    seed: int


@dataclass(frozen=True)
class DataBlock:
    refs: int
    bands: int
    rows: int
    cols: int
    k: int
    seed: int
    rules: list = field(default_factory=lambda: ["zero", "same", "block"])
    both_directions: bool = True
    region_min_frac: float = 0.02
    region_max_frac: float = 0.15
    test_count: int = 4
    noise_sigma: float = 0.0
    ref_paths: list = field(default_factory=list)


@dataclass(frozen=True)
class OperatorsBlock:
    blur_sigma: float = 2.35
    subsample_factor: int = 4
    spectral_width: int = 4
    kernel_radius: int | None = None
    corruption: CorruptionBlock | None = None


@dataclass(frozen=True)
class FusionBlock:
    backend: str = "model_based"
    # model-based knobs
    lam: float = 1e-4
    cg_iters: int = 500
    cg_tol: float = 1e-8
    # neural knobs
    width: int = 32
    trunk_width: int = 64
    trunk_depth: int = 4
    lr: float = 2e-3
    epochs: int = 15
    batch: int = 2
    seed: int = 0
    checkpoint: str | None = None


@dataclass(frozen=True)
class TrainBlock:
    seed: int
    alpha: float = 1.0
    beta: float = 1e-3
    lr: float = 2e-4
    epochs: int = 15
    batch: int = 4
    adversarial: str = "nonsaturating"
    width: int = 32
    trunk_width: int = 64
    trunk_depth: int = 4
    critic_width: int = 32


@dataclass(frozen=True)
class DetectBlock:
    mode: str = "otsu"
    tau: float | None = None
    smooth_radius: int = 1


@dataclass(frozen=True)
class EvalBlock:
    write_roc: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataBlock
    operators: OperatorsBlock
    fusion: FusionBlock
    train: TrainBlock
    detect: DetectBlock = field(default_factory=DetectBlock)
    eval: EvalBlock = field(default_factory=EvalBlock)


_BLOCKS = ("data", "operators", "fusion", "train", "detect", "eval")


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = set(raw) - set(_BLOCKS)
    if unknown:
        raise ConfigError(f"unknown top-level blocks {sorted(unknown)}")
    for required in ("data", "operators", "fusion", "train"):
        if required not in raw:
            raise ConfigError(f"missing required block {required!r}")
    data_raw = dict(raw["data"])
    ops_raw = dict(raw["operators"])
    corruption = None
    if ops_raw.get("corruption") is not None:
        corruption = _take(dict(ops_raw["corruption"]), CorruptionBlock, "operators.corruption")
    ops_raw["corruption"] = corruption
    cfg = ExperimentConfig(
        data=_take(data_raw, DataBlock, "data"),
        operators=_take(ops_raw, OperatorsBlock, "operators"),
        fusion=_take(dict(raw["fusion"]), FusionBlock, "fusion"),
        train=_take(dict(raw["train"]), TrainBlock, "train"),
        detect=_take(dict(raw.get("detect", {})), DetectBlock, "detect"),
        eval=_take(dict(raw.get("eval", {})), EvalBlock, "eval"),
    )
    _validate(cfg, base_dir)
    return cfg


def _validate(cfg: ExperimentConfig, base_dir: Path | None) -> None:
    d = cfg.data
    if d.refs < 1:
        raise ConfigError("data.refs must be >= 1")
    if d.rows % cfg.operators.subsample_factor or d.cols % cfg.operators.subsample_factor:
        raise ConfigError("data dims must be divisible by operators.subsample_factor")
    if d.bands % cfg.operators.spectral_width:
        raise ConfigError("data.bands should be a multiple of operators.spectral_width "
                          "(leftover bands would be dropped)")
    if not 0 < d.region_min_frac <= d.region_max_frac < 1:
        raise ConfigError("region fractions must satisfy 0 < min <= max < 1")
    for rule in d.rules:
        if rule not in ("zero", "same", "block", "none"):
            raise ConfigError(f"data.rules: unknown rule {rule!r}")
    for p in d.ref_paths:
        path = Path(p) if base_dir is None else base_dir / p
        if not path.exists():
            raise ConfigError(f"data.ref_paths: {path} does not exist")
    if cfg.fusion.backend not in ("model_based", "neural"):
        raise ConfigError(f"fusion.backend must be model_based or neural, got {cfg.fusion.backend!r}")
    if cfg.fusion.checkpoint is not None:
        path = Path(cfg.fusion.checkpoint) if base_dir is None else base_dir / cfg.fusion.checkpoint
        if not path.exists():
            raise ConfigError(f"fusion.checkpoint: {path} does not exist")
    if cfg.detect.mode not in ("otsu", "tau"):
        raise ConfigError("detect.mode must be 'otsu' or 'tau'")
    if cfg.detect.mode == "tau" and cfg.detect.tau is None:
        raise ConfigError("detect.mode 'tau' requires detect.tau")
    if cfg.detect.smooth_radius < 0:
        raise ConfigError("detect.smooth_radius must be >= 0")
    if cfg.train.adversarial not in ("nonsaturating", "saturating"):
        raise ConfigError("train.adversarial must be 'nonsaturating' or 'saturating'")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(raw, base_dir=path.parent)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def undata(x):
        if hasattr(x, "__dataclass_fields__"):
            return {f.name: undata(getattr(x, f.name)) for f in fields(x)}
        if isinstance(x, (list, tuple)):
            return [undata(v) for v in x]
        return x

    return undata(cfg)
