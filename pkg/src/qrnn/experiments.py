"""End-to-end runs shared by the CLI and the acceptance suite."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import datasets as ds
from . import rom
from .cells import CellConfig, ForecastModel
from .config import ExperimentConfig
from .errors import DataError
from .forecast import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train_forecaster
from .pipeline import FieldPipeline, PipelineConfig, end_to_end_forecast, rmspe, save_pipeline, train_pipeline

log = logging.getLogger(__name__)


def split_spec(cfg: ExperimentConfig) -> ds.SplitSpec:
    s = cfg.dataset.split
    return ds.SplitSpec(s.train, s.val, s.test)


# data ----------------------------------------------------------------------------


def lorenz_config(cfg: ExperimentConfig) -> ds.LorenzConfig:
    return ds.LorenzConfig(**cfg.dataset.lorenz.model_dump(), seed=cfg.dataset.seed)


def generate_field(cfg: ExperimentConfig) -> ds.SyntheticField:
    f = cfg.dataset.field
    return ds.synth_field_generate(f.height, f.width, f.n_steps, f.rank, f.mode, f.noise_std,
                                   cfg.dataset.seed, f.n_probes)


@dataclass
class SensorData:
    """Reduced-order view of a field: denoised snapshots, sensors and their series."""

    field: ds.SyntheticField
    basis: rom.PodBasis
    denoised: np.ndarray  # (n_space, n_time)
    greedy: rom.SensorSet
    sensors: rom.SensorSet
    series: ds.TimeSeries  # (n_time, k) values at the chosen sensors


def field_sensor_data(cfg: ExperimentConfig, field: ds.SyntheticField | None = None) -> SensorData:
    """POD on the training snapshots, rank-r projection of every snapshot,
    then greedy (and optionally annealing) sensor selection."""
    field = field if field is not None else generate_field(cfg)
    P = field.snapshots.values
    n_train = split_spec(cfg).sizes(P.shape[1])[0]
    basis = rom.compute_svd(P[:, :n_train], center=cfg.rom.center)
    # modes past the numerical rank are round-off and would steer sensor placement
    r = max(1, min(cfg.rom.rank, rom.numerical_rank(basis)))
    if cfg.rom.sensors > r:
        raise DataError(f"{cfg.rom.sensors} sensors requested but the training snapshots have numerical rank {r}")
    _, reduced = rom.truncate(basis, r)
    U = reduced.modes
    mean = reduced.mean[:, None] if reduced.mean is not None else 0.0
    denoised = U @ (U.T @ (P - mean)) + mean
    greedy = rom.select_sensors_greedy(reduced, cfg.rom.sensors)
    if cfg.rom.solver == "annealing":
        a = cfg.rom.annealing
        chosen = rom.select_sensors_annealing(reduced, cfg.rom.sensors, rom.AnnealingSchedule(a.t_start, a.t_end, a.iterations),
                                              seed=cfg.dataset.seed, initial=greedy)
    else:
        chosen = greedy
    names = [f"s{int(i)}" for i in chosen.indices]
    series = ds.TimeSeries(denoised[chosen.indices].T, dt=1.0, channels=names)
    return SensorData(field, reduced, denoised, greedy, chosen, series)


def load_series(cfg: ExperimentConfig) -> ds.TimeSeries:
    """The multichannel series a forecaster is trained on."""
    kind = cfg.dataset.kind
    if kind == "lorenz":
        if cfg.dataset.path:
            return ds.load_csv(cfg.dataset.path, cfg.dataset.columns, cfg.dataset.lorenz.dt)
        return ds.lorenz_generate(lorenz_config(cfg))
    if kind == "csv":
        return ds.load_csv(cfg.dataset.path, cfg.dataset.columns, cfg.dataset.dt)
    return field_sensor_data(cfg).series


@dataclass
class ForecastData:
    series: ds.TimeSeries
    normalizer: ds.Normalizer
    windows: dict  # split name -> (inputs, targets), normalized


def prepare_forecast_data(cfg: ExperimentConfig, series: ds.TimeSeries | None = None) -> ForecastData:
    series = series if series is not None else load_series(cfg)
    split = split_spec(cfg)
    normed, norm = ds.normalize(series, cfg.dataset.normalization, split)
    return ForecastData(series, norm, ds.split_windows(normed.values, cfg.model.window, split))


# forecasting -------------------------------------------------------------------------


def cell_config(cfg: ExperimentConfig, input_dim: int, variant: str | None = None) -> CellConfig:
    m = cfg.model
    return CellConfig(variant=variant or m.variant, input_dim=input_dim, hidden=m.hidden,
                      encoding_layers=m.encoding_layers, qubits=m.qubits, depth=m.depth,
                      measurement=m.measurement, lqlstm_qubits=m.lqlstm_qubits)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.training
    return TrainConfig(lr=t.lr, batch_size=t.batch_size, epochs=t.epochs, seed=t.seed)


def test_metrics(model: ForecastModel, data: ForecastData) -> dict:
    X, Y = data.windows["test"]
    return evaluate(model, X, Y, data.normalizer)


def run_train(cfg: ExperimentConfig, out: Path | None = None, resume: bool = False, variant: str | None = None,
              data: ForecastData | None = None) -> dict:
    """Train one forecaster; returns the run report and writes artifacts under ``out``."""
    t0 = time.perf_counter()
    data = data if data is not None else prepare_forecast_data(cfg)
    ccfg = cell_config(cfg, data.series.n_channels, variant)
    model = ForecastModel(ccfg, cfg.model.window, seed=cfg.training.seed)
    state_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        state_path = out / "train_state.npz"
        if not resume and state_path.exists():
            state_path.unlink()
    result = train_forecaster(model, data.windows, train_config(cfg), state_path=state_path, resume=resume)
    metrics = test_metrics(model, data)
    report = {
        "variant": ccfg.variant,
        "seed": cfg.training.seed,
        "config_hash": cfg.digest(),
        "train_loss": result.train_loss,
        "val_loss": result.val_loss,
        "best_epoch": result.best_epoch + 1,
        "test": metrics,
        "num_parameters": model.num_parameters(),
        "wall_clock_s": time.perf_counter() - t0,
    }
    if out is not None:
        save_checkpoint(out / "checkpoint.npz", model, {
            "normalizer": data.normalizer.to_dict(),
            "config": cfg.model_dump(mode="json"),
            "channels": data.series.channels,
        })
        write_curves(out / "curves.csv", result.curves_rows())
        write_json(out / "report.json", report)
    report["model"] = model
    return report


def run_eval(checkpoint: Path, cfg: ExperimentConfig | None = None) -> dict:
    """Recompute test metrics of a checkpoint on its own data (or on ``cfg``'s data)."""
    model, meta = load_checkpoint(checkpoint)
    if cfg is None:
        if "config" not in meta:
            raise DataError(f"{checkpoint}: no embedded config; pass --config")
        cfg = ExperimentConfig.model_validate(meta["config"])
    data = prepare_forecast_data(cfg)
    if data.series.n_channels != model.config.input_dim:
        raise DataError(f"checkpoint expects {model.config.input_dim} channels, data has {data.series.n_channels}")
    if "normalizer" in meta:
        data = replace(data, normalizer=ds.Normalizer.from_dict(meta["normalizer"]))
    return {"variant": model.config.variant, "seed": meta.get("seed"), "config_hash": cfg.digest(),
            "test": test_metrics(model, data)}


def run_bench(cfg: ExperimentConfig, out: Path | None = None, variants=None, seeds: int | None = None,
              epochs: int | None = None, data: ForecastData | None = None, jobs: int = 1) -> dict:
    """Every variant trained on the same data over ``seeds`` seeds; mean and std of test metrics."""
    variants = list(variants or cfg.bench.variants)
    seeds = seeds or cfg.bench.seeds
    if epochs is not None:
        cfg = cfg.model_copy(update={"training": cfg.training.model_copy(update={"epochs": epochs})})
    data = data if data is not None else prepare_forecast_data(cfg)
    base = cfg.training.seed
    tasks = [(v, base + s) for v in variants for s in range(seeds)]

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_bench_one, [(cfg, v, s, data) for v, s in tasks]))
    else:
        results = [_bench_one((cfg, v, s, data)) for v, s in tasks]

    runs = [{"variant": v, "seed": s, **m} for (v, s), m in zip(tasks, results)]
    table = {}
    for v in variants:
        rows = [r for r in runs if r["variant"] == v]
        table[v] = {}
        for key in rows[0]:
            if key in ("variant", "seed"):
                continue
            vals = np.array([r[key] for r in rows])
            table[v][key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    summary = {"config_hash": cfg.digest(), "seeds": seeds, "runs": runs, "table": table}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "bench.json", summary)
        with (out / "bench.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            metrics = [k for k in table[variants[0]]]
            w.writerow(["variant"] + [f"{m}_{s}" for m in metrics for s in ("mean", "std")])
            for v in variants:
                w.writerow([v] + [repr(table[v][m][s]) for m in metrics for s in ("mean", "std")])
    return summary


def _bench_one(args) -> dict:
    cfg, variant, seed, data = args
    c = cfg.model_copy(update={"training": cfg.training.model_copy(update={"seed": seed})})
    rep = run_train(c, None, variant=variant, data=data)
    return rep["test"]


# field pipeline ------------------------------------------------------------------------


def pipeline_config(cfg: ExperimentConfig, n_space: int) -> PipelineConfig:
    p = cfg.pipeline
    return PipelineConfig(n_space=n_space, n_sensors=cfg.rom.sensors,
                          hidden=tuple(p.hidden) if p.hidden else None, latent=p.latent,
                          trans_hidden=p.trans_hidden, trans_layers=p.trans_layers,
                          loss_weights=tuple(p.loss_weights), seed=cfg.training.seed)


def run_train_pipeline(cfg: ExperimentConfig, sd: SensorData, out: Path | None = None):
    P = sd.denoised.T  # rows are snapshots
    bounds = split_spec(cfg).bounds(len(P))
    pipe = FieldPipeline(pipeline_config(cfg, P.shape[1]), sd.sensors.indices)
    p = cfg.pipeline
    tc = TrainConfig(lr=p.lr, batch_size=p.batch_size, epochs=p.epochs, seed=cfg.training.seed)
    a, b = bounds["train"]
    va, vb = bounds["val"]
    result = train_pipeline(pipe, P[a:b], tc, P[va:vb], pretrain_epochs=p.pretrain_epochs)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_pipeline(out / "pipeline.npz", pipe, {"grid": list(sd.field.grid)})
        write_curves(out / "pipeline_curves.csv", result.curves.curves_rows())
    return pipe, result


def probe_points(sd: SensorData) -> np.ndarray:
    """Probe indices that are not sensors."""
    return np.setdiff1d(sd.field.probe_indices, sd.sensors.indices)


def run_pipeline(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    """Generate, select sensors, train the forecaster and the field pipeline,
    forecast the test span and score next-step fields at held-out probes."""
    t0 = time.perf_counter()
    sd = field_sensor_data(cfg)
    data = prepare_forecast_data(cfg, sd.series)
    rep = run_train(cfg, out, data=data)
    model = rep.pop("model")
    model.trained = True
    pipe, pres = run_train_pipeline(cfg, sd, out)

    W = cfg.model.window
    n_time = sd.series.n_steps
    a, b = split_spec(cfg).bounds(n_time)["test"]
    targets = np.arange(a + W, b)
    hist = np.stack([sd.series.values[t - W:t] for t in targets])
    fields = end_to_end_forecast(model, pipe, hist, data.normalizer)  # (T, n_space)
    probes = probe_points(sd)
    clean = sd.field.clean
    truth = clean[probes][:, targets].T
    true_sensor_fields = pipe.estimate_field(sd.series.values[targets])
    report = {
        "config_hash": cfg.digest(),
        "seed": cfg.training.seed,
        "sensors": sd.sensors.indices.tolist(),
        "objective_greedy": sd.greedy.objective,
        "objective_selected": sd.sensors.objective,
        "probes": probes.tolist(),
        "forecaster_test": rep["test"],
        "pipeline_best_val": pres.curves.best_val,
        "rmspe_probes": rmspe(fields[:, probes], truth),
        "rmspe_field": rmspe(fields, clean[:, targets].T),
        "rmspe_true_sensors": rmspe(true_sensor_fields[:, probes], truth),
        "rmspe_persistence": rmspe(clean[probes][:, targets - 1].T, truth),
        "wall_clock_s": time.perf_counter() - t0,
    }
    if out is not None:
        write_json(out / "pipeline_report.json", report)
        rom.save_sensors_csv(sd.sensors, out / "sensors.csv", sd.field.grid, cfg.rom.solver)
        with (out / "probe_forecast.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "probe", "forecast", "truth"])
            for i, t in enumerate(targets):
                for j, p in enumerate(probes):
                    w.writerow([int(t), int(p), repr(float(fields[i, p])), repr(float(truth[i, j]))])
    return report


# output helpers ------------------------------------------------------------------------------


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_curves(path: Path, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "series"])
        for epoch, loss, series in rows:
            w.writerow([epoch, repr(float(loss)), series])
