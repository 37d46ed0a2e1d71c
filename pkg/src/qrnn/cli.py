"""``qrnn`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datasets as ds
from . import experiments as ex
from . import rom
from .config import PRESETS, build_config, dump_config
from .errors import ConfigError, DataError, QrnnError
from .pipeline import end_to_end_forecast, load_pipeline

log = logging.getLogger("qrnn")

VARIANTS = ["lstm", "gru", "lqlstm", "mpqlstm", "mpqgru"]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a built-in preset")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. training.epochs=20 (repeatable)")
    p.add_argument("--seed", type=int, help="seed for data generation and training")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a dataset and its manifest")
    _common(p)

    p = sub.add_parser("select-sensors", help="POD + greedy and annealing sensor selection")
    _common(p)

    p = sub.add_parser("train", help="train a forecaster")
    _common(p)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--resume", action="store_true", help="continue from OUT/train_state.npz")

    p = sub.add_parser("eval", help="recompute test metrics of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("train-pipeline", help="train the autoencoder/transform networks")
    _common(p)

    p = sub.add_parser("forecast", help="next-step full field from a sensor history CSV")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="forecaster checkpoint")
    p.add_argument("--pipeline", type=Path, required=True, help="field pipeline checkpoint")
    p.add_argument("--history", type=Path, required=True, help="CSV of the last W sensor readings")

    p = sub.add_parser("bench", help="compare variants over repeated seeds")
    _common(p)
    p.add_argument("--variants", nargs="+", choices=VARIANTS)
    p.add_argument("--seeds", type=int)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("pipeline", help="generate, select, train, train-pipeline, forecast, score")
    _common(p)
    return parser


def load_config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"training.seed={args.seed}", f"dataset.seed={args.seed}"]
    if getattr(args, "variant", None):
        overrides.append(f"model.variant={args.variant}")
    return build_config(args.config, args.preset, overrides)


def _manifest(cfg, out: Path, files: dict, extra: dict | None = None) -> None:
    ex.write_json(out / "manifest.json", {"config_hash": cfg.digest(), "config": cfg.model_dump(mode="json"),
                                          "files": files, **(extra or {})})


def cmd_generate(args) -> int:
    cfg = load_config(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    kind = cfg.dataset.kind
    if kind == "lorenz":
        series = ds.lorenz_generate(ex.lorenz_config(cfg))
        ds.save_csv(series, out / "lorenz.csv")
        _manifest(cfg, out, {"series": "lorenz.csv"}, {"shape": list(series.values.shape)})
    elif kind == "synthetic-field":
        field = ex.generate_field(cfg)
        rom.save_snapshots_binary(field.snapshots, out / "snapshots.bin")
        with (out / "probes.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "row", "col"])
            for i in field.probe_indices:
                r, c = np.unravel_index(i, field.grid)
                w.writerow([int(i), int(r), int(c)])
        _manifest(cfg, out, {"snapshots": "snapshots.bin", "probes": "probes.csv"},
                  {"grid": list(field.grid), "rank": field.rank, "shape": list(field.snapshots.values.shape)})
    else:
        raise ConfigError("dataset.kind 'csv' reads existing data; nothing to generate")
    print(f"wrote dataset to {out}")
    return 0


def cmd_select_sensors(args) -> int:
    cfg = load_config(args)
    if cfg.dataset.kind != "synthetic-field":
        raise ConfigError("select-sensors needs dataset.kind 'synthetic-field'")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    both_cfg = cfg.model_copy(update={"rom": cfg.rom.model_copy(update={"solver": "annealing"})})
    sd = ex.field_sensor_data(both_cfg)
    grid = sd.field.grid
    rom.save_sensors_csv(sd.greedy, out / "sensors_greedy.csv", grid, "greedy")
    rom.save_sensors_csv(sd.sensors, out / "sensors_annealing.csv", grid, "annealing")
    chosen = sd.sensors if cfg.rom.solver == "annealing" else sd.greedy
    rom.save_sensors_csv(chosen, out / "sensors.csv", grid, cfg.rom.solver)
    log_ = {"rank": sd.basis.rank, "greedy": {"indices": sd.greedy.indices.tolist(), "objective": sd.greedy.objective},
            "annealing": {"indices": sd.sensors.indices.tolist(), "objective": sd.sensors.objective},
            "solver": cfg.rom.solver}
    ex.write_json(out / "sensors.json", log_)
    print(f"greedy    objective {sd.greedy.objective:.6g}  indices {sd.greedy.indices.tolist()}")
    print(f"annealing objective {sd.sensors.objective:.6g}  indices {sd.sensors.indices.tolist()}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, args.out / "config.yaml")
    report = ex.run_train(cfg, args.out, resume=args.resume)
    report.pop("model")
    t = report["test"]
    print(f"{report['variant']}: best epoch {report['best_epoch']}, test mse {t['mse']:.6g}, mae {t['mae']:.6g}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args) if (args.config or args.preset or args.overrides) else None
    report = ex.run_eval(args.checkpoint, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    ex.write_json(args.out / "eval.json", report)
    print(json.dumps(report["test"], sort_keys=True))
    return 0


def cmd_train_pipeline(args) -> int:
    cfg = load_config(args)
    if cfg.dataset.kind != "synthetic-field":
        raise ConfigError("train-pipeline needs dataset.kind 'synthetic-field'")
    sd = ex.field_sensor_data(cfg)
    pipe, result = ex.run_train_pipeline(cfg, sd, args.out)
    print(f"pipeline: best epoch {result.curves.best_epoch + 1}, val L_edt {result.curves.best_val:.6g}")
    return 0


def cmd_forecast(args) -> int:
    from .forecast import load_checkpoint

    model, meta = load_checkpoint(args.checkpoint)
    pipe, pmeta = load_pipeline(args.pipeline)
    hist = ds.load_csv(args.history).values
    if hist.shape[0] < model.window:
        raise DataError(f"{args.history}: need {model.window} rows, found {hist.shape[0]}")
    norm = ds.Normalizer.from_dict(meta["normalizer"]) if "normalizer" in meta else None
    field = end_to_end_forecast(model, pipe, hist[-model.window:], norm)
    args.out.mkdir(parents=True, exist_ok=True)
    grid = pmeta.get("grid")
    with (args.out / "forecast_field.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        rows = field.reshape(grid) if grid else field[:, None]
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    print(f"wrote {args.out / 'forecast_field.csv'}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args)
    summary = ex.run_bench(cfg, args.out, variants=args.variants, seeds=args.seeds, jobs=args.jobs)
    for v, row in summary["table"].items():
        print(f"{v:8s} mse {row['mse']['mean']:.4g} ± {row['mse']['std']:.2g}   "
              f"mae {row['mae']['mean']:.4g} ± {row['mae']['std']:.2g}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args)
    if cfg.dataset.kind != "synthetic-field":
        raise ConfigError("pipeline needs dataset.kind 'synthetic-field'")
    args.out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, args.out / "config.yaml")
    report = ex.run_pipeline(cfg, args.out)
    print(f"next-step RMSPE at held-out probes: {report['rmspe_probes']:.4f}%")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "select-sensors": cmd_select_sensors,
    "train": cmd_train,
    "eval": cmd_eval,
    "train-pipeline": cmd_train_pipeline,
    "forecast": cmd_forecast,
    "bench": cmd_bench,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except QrnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
