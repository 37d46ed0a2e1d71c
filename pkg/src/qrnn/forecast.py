"""Training, evaluation and checkpointing of forecast models."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cells import CellConfig, ForecastModel
from .errors import DataError, NumericalError
from .nn import Adam, Module, mse_loss

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "qrnn-checkpoint-v1"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.02
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    shuffle: bool = True


@dataclass
class TrainResult:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    best_state: dict[str, np.ndarray] | None = None

    def curves_rows(self) -> list[tuple[int, float, str]]:
        rows = [(e + 1, v, "train") for e, v in enumerate(self.train_loss)]
        rows += [(e + 1, v, "val") for e, v in enumerate(self.val_loss)]
        return rows


def batch_order(n: int, epoch: int, seed: int, shuffle: bool) -> np.ndarray:
    # keyed on (seed, epoch) so a resumed run replays the same batches
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng([seed, epoch]).permutation(n)


def _loss_value(model, X, Y, batch_size=1024) -> float:
    total = 0.0
    for i in range(0, len(X), batch_size):
        pred = model(X[i:i + batch_size]).data
        total += float(np.sum((pred - Y[i:i + batch_size]) ** 2))
    return total / Y.size


def train_model(model: Module, loss_fn: Callable, train: tuple, val: tuple | None, config: TrainConfig,
                val_fn: Callable | None = None, state_path=None, resume: bool = False,
                on_epoch: Callable | None = None) -> TrainResult:
    """Mini-batch Adam keeping the best-validation parameters.

    ``loss_fn(model, *batch)`` returns a scalar Tensor; ``val_fn(model)``
    returns the validation loss. When ``state_path`` is given, the full
    training state is written after every epoch and ``resume=True``
    continues from it.
    """
    names = [n for n, _ in model.named_parameters()]
    opt = Adam(model.parameters(), lr=config.lr, names=names)
    result = TrainResult()
    start = 0
    if resume and state_path is not None and Path(state_path).exists():
        start = _load_train_state(state_path, model, opt, result)
        log.info("resuming from epoch %d", start)
    n = len(train[0])
    if n == 0:
        raise DataError("empty training set")
    for epoch in range(start, config.epochs):
        order = batch_order(n, epoch, config.seed, config.shuffle)
        total, count = 0.0, 0
        for b, i in enumerate(range(0, n, config.batch_size)):
            idx = order[i:i + config.batch_size]
            model.zero_grad()
            loss = loss_fn(model, *(part[idx] for part in train))
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite training loss at epoch {epoch + 1}, batch {b + 1}")
            loss.backward()
            opt.step()
            total += value * len(idx)
            count += len(idx)
        result.train_loss.append(total / count)
        v = val_fn(model) if val_fn is not None else result.train_loss[-1]
        if not np.isfinite(v):
            raise NumericalError(f"non-finite validation loss at epoch {epoch + 1}")
        result.val_loss.append(float(v))
        if v < result.best_val:
            result.best_val = float(v)
            result.best_epoch = epoch
            result.best_state = model.state_dict()
        log.info("epoch %d train %.6g val %.6g", epoch + 1, result.train_loss[-1], v)
        if on_epoch is not None:
            on_epoch(epoch, result)
        if state_path is not None:
            _save_train_state(state_path, epoch + 1, model, opt, result)
    if result.best_state is not None:
        model.load_state_dict(result.best_state)
    return result


def train_forecaster(model: ForecastModel, data: dict, config: TrainConfig, state_path=None,
                     resume: bool = False, on_epoch=None) -> TrainResult:
    """Minimize next-step MSE over all channels jointly.

    ``data`` maps split names to ``(inputs, targets)`` windows.
    """
    train = data["train"]
    val = data.get("val")

    def loss_fn(m, X, Y):
        return mse_loss(m(X), Y)

    val_fn = (lambda m: _loss_value(m, *val)) if val is not None and len(val[0]) else None
    result = train_model(model, loss_fn, train, val, config, val_fn, state_path, resume, on_epoch)
    model.trained = True
    return result


def _save_train_state(path, epoch: int, model: Module, opt: Adam, result: TrainResult) -> None:
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    arrays.update({f"adam/{k}": v for k, v in opt.state_dict().items()})
    if result.best_state is not None:
        arrays.update({f"best/{k}": v for k, v in result.best_state.items()})
    meta = {"epoch": epoch, "train_loss": result.train_loss, "val_loss": result.val_loss,
            "best_epoch": result.best_epoch, "best_val": result.best_val}
    tmp = Path(str(path) + ".tmp.npz")
    np.savez(tmp, meta=np.array(json.dumps(meta)), **arrays)
    tmp.replace(path)


def _load_train_state(path, model: Module, opt: Adam, result: TrainResult) -> int:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        model.load_state_dict({k[6:]: z[k] for k in z.files if k.startswith("param/")})
        opt.load_state_dict({k[5:]: z[k] for k in z.files if k.startswith("adam/")})
        best = {k[5:]: z[k] for k in z.files if k.startswith("best/")}
    result.train_loss = list(meta["train_loss"])
    result.val_loss = list(meta["val_loss"])
    result.best_epoch = meta["best_epoch"]
    result.best_val = meta["best_val"]
    result.best_state = best or None
    return int(meta["epoch"])


def evaluate(model: ForecastModel, X: np.ndarray, Y: np.ndarray, normalizer=None) -> dict:
    """MSE/MAE in model units and, with a normalizer, in physical units."""
    pred = model.predict(X)
    out = {"mse": float(np.mean((pred - Y) ** 2)), "mae": float(np.mean(np.abs(pred - Y)))}
    if normalizer is not None:
        p, y = normalizer.inverse(pred), normalizer.inverse(Y)
        out["mse_phys"] = float(np.mean((p - y) ** 2))
        out["mae_phys"] = float(np.mean(np.abs(p - y)))
    return out


# checkpoints --------------------------------------------------------------------


def save_checkpoint(path, model: ForecastModel, extra: dict | None = None) -> None:
    """npz with one array per parameter (``param/<name>``) and a JSON ``meta``
    entry holding the format tag, architecture, window, seed and ``extra``."""
    meta = {"format": CHECKPOINT_FORMAT, "kind": "forecaster", **model.describe(), **(extra or {})}
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such checkpoint")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        params = {k[6:]: z[k] for k in z.files if k.startswith("param/")}
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    return meta, params


def load_checkpoint(path) -> tuple[ForecastModel, dict]:
    meta, params = read_checkpoint(path)
    model = ForecastModel(CellConfig(**meta["cell"]), meta["window"], meta["seed"])
    model.load_state_dict(params)
    model.trained = True
    return model, meta
