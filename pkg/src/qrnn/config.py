"""Experiment configuration: YAML files, presets and ``key=value`` overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LorenzBlock(_Block):
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    x0: float = 0.0
    y0: float = -0.01
    z0: float = 9.0
    dt: float = Field(0.01, gt=0)
    n_steps: int = Field(5000, ge=1)
    noise_std: float = Field(0.0, ge=0)


class FieldBlock(_Block):
    height: int = Field(64, ge=1)
    width: int = Field(64, ge=1)
    n_steps: int = Field(2000, ge=2)
    rank: int = Field(5, ge=1)
    mode: Literal["traveling", "static"] = "traveling"
    noise_std: float = Field(0.0, ge=0)
    n_probes: int = Field(16, ge=1)


class SplitBlock(_Block):
    train: float = Field(0.70, ge=0)
    val: float = Field(0.20, ge=0)
    test: float = Field(0.10, ge=0)

    @model_validator(mode="after")
    def _sums_to_one(self):
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        return self


class DatasetBlock(_Block):
    kind: Literal["lorenz", "synthetic-field", "csv"] = "synthetic-field"
    path: Optional[str] = None
    columns: Optional[list[str]] = None
    dt: float = Field(1.0, gt=0)
    seed: int = 0
    normalization: Literal["zscore", "minmax", "none"] = "zscore"
    lorenz: LorenzBlock = LorenzBlock()
    field: FieldBlock = FieldBlock()
    split: SplitBlock = SplitBlock()

    @model_validator(mode="after")
    def _path_for_csv(self):
        if self.kind == "csv":
            if not self.path:
                raise ValueError("dataset.path is required for kind 'csv'")
            if not Path(self.path).exists():
                raise ValueError(f"dataset.path {self.path!r} does not exist")
        return self


class ModelBlock(_Block):
    variant: Literal["lstm", "gru", "lqlstm", "mpqlstm", "mpqgru"] = "mpqlstm"
    hidden: int = Field(5, ge=1)
    window: int = Field(4, ge=1)
    encoding_layers: int = Field(3, ge=1)
    qubits: int = Field(3, ge=1, le=12)
    depth: int = Field(1, ge=1)
    measurement: Literal["mean", "tensor", "first"] = "mean"
    lqlstm_qubits: int = Field(4, ge=1, le=12)


class TrainingBlock(_Block):
    lr: float = Field(0.02, gt=0)
    batch_size: int = Field(128, ge=1)
    epochs: int = Field(100, ge=0)
    seed: int = 0


class AnnealingBlock(_Block):
    t_start: float = Field(1.0, gt=0)
    t_end: float = Field(1e-3, gt=0)
    iterations: int = Field(3000, ge=0)


class RomBlock(_Block):
    rank: int = Field(20, ge=1)
    sensors: int = Field(5, ge=1)
    solver: Literal["greedy", "annealing"] = "annealing"
    center: bool = False
    annealing: AnnealingBlock = AnnealingBlock()


class PipelineBlock(_Block):
    hidden: Optional[list[int]] = None
    latent: Optional[int] = Field(None, ge=1)
    trans_hidden: Optional[int] = Field(None, ge=1)
    trans_layers: int = Field(8, ge=2)
    loss_weights: tuple[float, float] = (1.0, 1.0)
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(100, ge=0)
    pretrain_epochs: int = Field(0, ge=0)


class BenchBlock(_Block):
    seeds: int = Field(5, ge=1)
    variants: list[Literal["lstm", "gru", "lqlstm", "mpqlstm", "mpqgru"]] = ["lstm", "gru", "lqlstm", "mpqlstm", "mpqgru"]


class ExperimentConfig(_Block):
    name: str = "experiment"
    dataset: DatasetBlock = DatasetBlock()
    model: ModelBlock = ModelBlock()
    training: TrainingBlock = TrainingBlock()
    rom: RomBlock = RomBlock()
    pipeline: PipelineBlock = PipelineBlock()
    bench: BenchBlock = BenchBlock()

    def digest(self) -> str:
        """Short content hash of the canonical JSON form."""
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PRESETS: dict[str, dict] = {
    # desk-scale stand-in for the pressure-field experiment
    "pressure-like": {
        "name": "pressure-like",
        "dataset": {"kind": "synthetic-field", "field": {"height": 64, "width": 64, "n_steps": 2000, "rank": 5}},
        "model": {"variant": "mpqlstm", "hidden": 5, "window": 4, "encoding_layers": 3, "qubits": 3},
        "training": {"lr": 0.02, "batch_size": 128, "epochs": 100},
        "rom": {"rank": 20, "sensors": 5},
        "pipeline": {"lr": 1e-3, "batch_size": 32},
    },
    "lorenz": {
        "name": "lorenz",
        "dataset": {"kind": "lorenz", "lorenz": {"noise_std": 5.0}},
        "model": {"variant": "mpqlstm", "hidden": 3, "window": 20, "encoding_layers": 3, "qubits": 3},
        "training": {"lr": 1e-3, "batch_size": 64, "epochs": 100},
    },
    "csv": {
        "name": "csv",
        "dataset": {"kind": "csv"},
        "model": {"variant": "mpqlstm", "hidden": 9, "window": 8, "encoding_layers": 3, "qubits": 3},
        "training": {"lr": 1e-3, "batch_size": 32, "epochs": 100},
    },
}


def _parse_scalar(text: str):
    return yaml.safe_load(text) if text.strip() else ""


def apply_override(tree: dict, assignment: str) -> None:
    """Apply one ``a.b.c=value`` assignment in place; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {assignment!r} has an empty key")
    node = tree
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key!r}: {p!r} is not a section")
        node = nxt
    node[parts[-1]] = _parse_scalar(raw)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def build_config(path: str | Path | None = None, preset: str | None = None,
                 overrides: list[str] | None = None) -> ExperimentConfig:
    """Preset, then the file, then ``--set`` overrides, validated once at the end."""
    tree: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        tree = copy.deepcopy(PRESETS[preset])
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base_preset = loaded.pop("preset", None)
        if base_preset is not None:
            if base_preset not in PRESETS:
                raise ConfigError(f"{path}: unknown preset {base_preset!r}")
            tree = _merge(PRESETS[base_preset], tree)
        tree = _merge(tree, loaded)
    for item in overrides or []:
        apply_override(tree, item)
    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            msgs.append(f"{loc}: {err['msg']}")
        raise ConfigError("invalid configuration: " + "; ".join(msgs)) from None


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False))
