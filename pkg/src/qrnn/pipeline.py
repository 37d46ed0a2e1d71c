"""Autoencoder + transform network for full-field estimation from sensor values."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .forecast import TrainConfig, TrainResult, train_model
from .nn import MLP, Module, Tensor, as_tensor, square

PIPELINE_FORMAT = "qrnn-pipeline-v1"

# reference architecture, sized for a 780 x 780 grid
FULL_N_SPACE = 780 * 780
FULL_HIDDEN = (1000, 500)
FULL_LATENT = 128


def scaled_widths(n_space: int, min_hidden: int = 16, min_latent: int = 4) -> tuple[tuple[int, int], int, int]:
    """Hidden widths, latent width and transform-net width for a field of ``n_space`` points.

    Widths shrink with ``sqrt(n_space / 780^2)``, so the full-size grid gets
    1000/500/128 and desk-scale grids keep the same funnel shape.
    """
    s = min(1.0, math.sqrt(n_space / FULL_N_SPACE))
    hidden = tuple(max(min_hidden, int(round(w * s))) for w in FULL_HIDDEN)
    latent = max(min_latent, int(round(FULL_LATENT * s)))
    trans = max(32, int(round(FULL_LATENT * s)))
    return hidden, latent, trans


@dataclass(frozen=True)
class PipelineConfig:
    n_space: int
    n_sensors: int = 5
    hidden: tuple[int, ...] | None = None
    latent: int | None = None
    trans_hidden: int | None = None
    trans_layers: int = 8
    loss_weights: tuple[float, float] = (1.0, 1.0)
    seed: int = 0

    def resolved(self) -> "PipelineConfig":
        hidden, latent, trans = scaled_widths(self.n_space)
        return PipelineConfig(
            self.n_space, self.n_sensors,
            tuple(self.hidden) if self.hidden is not None else hidden,
            self.latent if self.latent is not None else latent,
            self.trans_hidden if self.trans_hidden is not None else trans,
            self.trans_layers, tuple(self.loss_weights), self.seed,
        )


@dataclass
class FieldScaler:
    """Per-point mean removal and one global scale."""

    mean: np.ndarray
    scale: float

    @classmethod
    def fit(cls, snapshots: np.ndarray) -> "FieldScaler":
        """``snapshots`` is (n_samples, n_space)."""
        mean = snapshots.mean(axis=0)
        scale = float(np.sqrt(np.mean((snapshots - mean) ** 2)))
        return cls(mean, scale if scale > 0 else 1.0)

    def transform(self, d, idx=None) -> np.ndarray:
        mean = self.mean if idx is None else self.mean[idx]
        return (np.asarray(d, dtype=float) - mean) / self.scale

    def inverse(self, d, idx=None) -> np.ndarray:
        mean = self.mean if idx is None else self.mean[idx]
        return np.asarray(d, dtype=float) * self.scale + mean


@dataclass
class PipelineResult:
    curves: TrainResult
    pretrain: TrainResult | None = None
    extra: dict = field(default_factory=dict)


def multitask_loss(d, d_hat: Tensor, d_ent: Tensor, weights=(1.0, 1.0)) -> Tensor:
    """``w1 ||d - d_hat||^2 + w2 ||d - d_ent||^2``, summed per sample and
    averaged over the leading batch axis when there is one."""
    d = as_tensor(d)
    t1 = square(d_hat - d)
    t2 = square(d_ent - d)
    if d.ndim == 1:
        return t1.sum() * weights[0] + t2.sum() * weights[1]
    n = d.shape[0]
    return t1.sum() * (weights[0] / n) + t2.sum() * (weights[1] / n)


class FieldPipeline(Module):
    """Encoder, decoder and transform net. The decoder is shared by the
    reconstruction and the sensor-to-field paths.

    Networks work in scaled coordinates (see :class:`FieldScaler`); the
    public methods take and return physical values.
    """

    def __init__(self, config: PipelineConfig, sensors):
        cfg = config.resolved()
        sensors = np.asarray(sensors, dtype=int)
        if len(sensors) != cfg.n_sensors:
            raise ValueError(f"{len(sensors)} sensor indices for n_sensors={cfg.n_sensors}")
        if len(set(sensors.tolist())) != len(sensors) or sensors.min() < 0 or sensors.max() >= cfg.n_space:
            raise ValueError("sensor indices must be distinct and inside the field")
        if cfg.trans_layers < 2:
            raise ValueError("the transform net needs at least 2 layers")
        rng = np.random.default_rng(cfg.seed)
        self.config = cfg
        self.sensors = sensors
        self.encoder = MLP((cfg.n_space, *cfg.hidden, cfg.latent), rng)
        self.decoder = MLP((cfg.latent, *reversed(cfg.hidden), cfg.n_space), rng)
        widths = (cfg.n_sensors,) + (cfg.trans_hidden,) * (cfg.trans_layers - 1) + (cfg.latent,)
        self.trans = MLP(widths, rng)
        self.scaler: FieldScaler | None = None

    # scaled-space networks
    def _check(self, d, width: int, what: str) -> np.ndarray:
        d = np.asarray(d.data if isinstance(d, Tensor) else d, dtype=float)
        if d.shape[-1] != width:
            raise ValueError(f"{what} must have length {width}, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise DataError(f"{what} contains non-finite values")
        return d

    def ae(self, d) -> tuple[Tensor, Tensor]:
        d = self._check(d, self.config.n_space, "field")
        z = self.encoder(d)
        return z, self.decoder(z)

    def estimate(self, d_s) -> Tensor:
        d_s = self._check(d_s, self.config.n_sensors, "sensor vector")
        return self.decoder(self.trans(d_s))

    def loss(self, d) -> Tensor:
        """L_edt on scaled fields, sensor values read from ``d`` itself."""
        d = self._check(d, self.config.n_space, "field")
        _, d_hat = self.ae(d)
        d_ent = self.estimate(d[..., self.sensors])
        return multitask_loss(d, d_hat, d_ent, self.config.loss_weights)

    # physical-space API
    def _scaler(self) -> FieldScaler:
        if self.scaler is None:
            raise DataError("pipeline has no fitted scaler; train or load it first")
        return self.scaler

    def ae_forward(self, d) -> tuple[np.ndarray, np.ndarray]:
        sc = self._scaler()
        z, d_hat = self.ae(sc.transform(self._check(d, self.config.n_space, "field")))
        return z.data, sc.inverse(d_hat.data)

    def estimate_field(self, d_s) -> np.ndarray:
        sc = self._scaler()
        d_s = self._check(d_s, self.config.n_sensors, "sensor vector")
        return sc.inverse(self.estimate(sc.transform(d_s, self.sensors)).data)

    def describe(self) -> dict:
        cfg = asdict(self.config)
        return {"config": cfg, "sensors": self.sensors.tolist()}


def train_pipeline(pipe: FieldPipeline, snapshots: np.ndarray, train_config: TrainConfig,
                   val_snapshots: np.ndarray | None = None, pretrain_epochs: int = 0) -> PipelineResult:
    """Joint Adam minimization of L_edt. ``snapshots`` rows are fields.

    With ``pretrain_epochs > 0`` the autoencoder alone is fitted first
    (reconstruction term only), then all three networks jointly.
    """
    snapshots = np.asarray(snapshots, dtype=float)
    if snapshots.ndim != 2 or snapshots.shape[1] != pipe.config.n_space:
        raise DataError(f"snapshots must be (n_samples, {pipe.config.n_space}), got {snapshots.shape}")
    pipe.scaler = FieldScaler.fit(snapshots)
    train = pipe.scaler.transform(snapshots)
    val = pipe.scaler.transform(val_snapshots) if val_snapshots is not None and len(val_snapshots) else None

    def val_fn(m):
        return float(m.loss(val).data) if val is not None else None

    pre = None
    if pretrain_epochs > 0:
        pre_cfg = TrainConfig(lr=train_config.lr, batch_size=train_config.batch_size, epochs=pretrain_epochs,
                              seed=train_config.seed + 7919, shuffle=train_config.shuffle)
        ae_only = _AutoencoderView(pipe)

        def pre_loss(m, d):
            return m.loss(d)

        pre = train_model(ae_only, pre_loss, (train,), None, pre_cfg,
                          (lambda m: float(m.loss(val).data)) if val is not None else None)

    def loss_fn(m, d):
        return m.loss(d)

    curves = train_model(pipe, loss_fn, (train,), None, train_config, val_fn if val is not None else None)
    pipe.trained = True
    return PipelineResult(curves, pre)


class _AutoencoderView(Module):
    """Encoder and decoder of a pipeline with the reconstruction loss only."""

    def __init__(self, pipe: FieldPipeline):
        self.encoder = pipe.encoder
        self.decoder = pipe.decoder
        self._pipe = pipe

    def loss(self, d) -> Tensor:
        _, d_hat = self._pipe.ae(d)
        d = as_tensor(d)
        return square(d_hat - d).sum() * (1.0 / (d.shape[0] if d.ndim > 1 else 1))


def rmspe(predicted, reference) -> float:
    """``100 * sqrt(mean(((pred - ref) / ref)^2))`` over all elements, in percent."""
    p = np.asarray(predicted, dtype=float)
    r = np.asarray(reference, dtype=float)
    if p.shape != r.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {r.shape}")
    if np.any(r == 0):
        raise DataError("reference contains zeros; percentage error is undefined")
    return float(100.0 * np.sqrt(np.mean(((p - r) / r) ** 2)))


def end_to_end_forecast(forecaster, pipe: FieldPipeline, history, normalizer=None) -> np.ndarray:
    """Next-step full fields from sensor histories.

    ``history`` is (W, k) or (B, W, k) physical sensor values; returns (n_space,)
    or (B, n_space).
    """
    if not getattr(forecaster, "trained", False):
        raise DataError("forecaster is untrained")
    if not getattr(pipe, "trained", False):
        raise DataError("field pipeline is untrained")
    h = np.asarray(history, dtype=float)
    single = h.ndim == 2
    if single:
        h = h[None]
    if normalizer is not None:
        h = normalizer.transform(h)
    pred = forecaster.predict(h)
    if normalizer is not None:
        pred = normalizer.inverse(pred)
    fields = pipe.estimate_field(pred)
    return fields[0] if single else fields


# checkpoints ----------------------------------------------------------------------


def save_pipeline(path, pipe: FieldPipeline, extra: dict | None = None) -> None:
    sc = pipe._scaler()
    meta = {"format": PIPELINE_FORMAT, "kind": "pipeline", **pipe.describe(), "scale": sc.scale, **(extra or {})}
    arrays = {f"param/{k}": v for k, v in pipe.state_dict().items()}
    np.savez(path, meta=np.array(json.dumps(meta)), scaler_mean=sc.mean, **arrays)


def load_pipeline(path) -> tuple[FieldPipeline, dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such checkpoint")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != PIPELINE_FORMAT:
            raise DataError(f"{path}: not a {PIPELINE_FORMAT} file")
        params = {k[6:]: z[k] for k in z.files if k.startswith("param/")}
        mean = z["scaler_mean"]
    cfg = dict(meta["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    cfg["loss_weights"] = tuple(cfg["loss_weights"])
    pipe = FieldPipeline(PipelineConfig(**cfg), meta["sensors"])
    pipe.load_state_dict(params)
    pipe.scaler = FieldScaler(mean, float(meta["scale"]))
    pipe.trained = True
    return pipe, meta
