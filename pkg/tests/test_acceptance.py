"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

The Lorenz reproduction runs in a reduced-epoch smoke mode by default; set
``QRNN_ACCEPT_LORENZ=full`` for the five-seed, full-length protocol at both
noise levels (hours on one core).
"""

import itertools
import os
import time

import numpy as np
import pytest

from qrnn import nn, qsim, rom
from qrnn.cells import CellConfig, ForecastModel, LSTMCell, MPQLSTMCell
from qrnn.config import build_config
from qrnn.experiments import field_sensor_data, prepare_forecast_data, run_bench, run_pipeline, run_train
from qrnn.nn import Parameter, Tensor, grad_check, mse_loss
from qrnn.pipeline import FieldPipeline, PipelineConfig
from qrnn.qsim import VqcParams, VqcSpec, apply_cnot, apply_rotation, expectation_z

from oracles import best_subset, central_difference, dense_vqc_output, random_orthonormal


def rel_err(a, b, floor=1e-4):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# 1 -----------------------------------------------------------------------------------------


def test_criterion_1_quantum_oracle_equivalence(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n, M, D = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
        d = int(rng.integers(1, 6))
        mode = str(rng.choice(["mean", "tensor", "first"]))
        spec = VqcSpec(n, d, M, D, mode)
        p = VqcParams.random(spec, rng)
        x = rng.normal(size=d) * 2
        want = dense_vqc_output(n, p.encoding_weights, p.encoding_bias, p.variational_angles, x, mode)
        worst = max(worst, abs(qsim.vqc_forward(spec, p, x) - want))
        # the batched engine used in training, on the same circuit
        enc = (np.einsum("mqi,i->mq", p.encoding_weights, x) + p.encoding_bias)[None, None]
        out, _ = qsim.batched_forward(enc, p.variational_angles[None], mode)
        worst = max(worst, abs(out[0, 0, 0] - want))
    elapsed = time.perf_counter() - t0
    criterion(1, worst <= 1e-10 and elapsed < 60,
              f"200 random VQCs, max |engine - dense oracle| = {worst:.2e} (<= 1e-10), {elapsed:.1f} s (< 60 s)")


# 2 -----------------------------------------------------------------------------------------


def test_criterion_2_gradient_integrity(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)

    # (a) lone VQC: parameter-shift gradient against central differences of the forward map
    spec = VqcSpec(3, 4, 3, 2, "mean")
    p = VqcParams.random(spec, rng)
    x = rng.normal(size=4)
    g = qsim.vqc_gradient(spec, p, x)
    arrays = {"encoding_weights": p.encoding_weights, "encoding_bias": p.encoding_bias,
              "variational_angles": p.variational_angles}
    err_a = 0.0
    for name, value in arrays.items():
        def f(v, name=name):
            return qsim.vqc_forward(spec, VqcParams(**{**arrays, name: v}), x)
        err_a = max(err_a, rel_err(getattr(g, name), central_difference(f, value)))
    enc = Parameter(rng.uniform(-2, 2, (3, 4, 3, 3)))
    var = Parameter(rng.uniform(-2, 2, (4, 2, 3, 3)))
    w = rng.normal(size=(3, 4))
    err_a = max(err_a, grad_check(lambda: (nn.vqc(enc, var, "mean") * w).sum(), [enc, var]))

    # (b) two-step MP-QLSTM with MSE at the pressure-field sizes
    model = ForecastModel(CellConfig("mpqlstm", 5, 5, encoding_layers=3, qubits=3), window=2, seed=7)
    X, Y = rng.normal(size=(3, 2, 5)), rng.normal(size=(3, 5))
    err_b = grad_check(lambda: mse_loss(model(X), Y), model.parameters())

    # (c) the multitask loss on a 12-point field
    pipe = FieldPipeline(PipelineConfig(12, 3, (10, 8), 4, 8, 3), [1, 6, 10])
    d = rng.normal(size=(4, 12))
    err_c = grad_check(lambda: pipe.loss(d), pipe.parameters())

    elapsed = time.perf_counter() - t0
    ok = max(err_a, err_b, err_c) <= 1e-5 and elapsed < 300
    criterion(2, ok, f"max relative error vs central differences: VQC {err_a:.1e}, 2-step MP-QLSTM {err_b:.1e}, "
                     f"L_edt {err_c:.1e} (<= 1e-5), {elapsed:.1f} s (< 300 s)")


# 3 -----------------------------------------------------------------------------------------


def test_criterion_3_reduction_to_lstm(criterion):
    rng = np.random.default_rng(103)
    K, d, n = 5, 5, 3
    lstm = LSTMCell(CellConfig("lstm", d, K), rng)
    mp = MPQLSTMCell(CellConfig("mpqlstm", d, K, encoding_layers=1, qubits=n, identity_vqc=True), rng)
    # each circuit's qubits read the same row as the matching classical gate unit
    mp.gates.weight.data = np.repeat(lstm.gates.weight.data, n, axis=0)
    mp.gates.bias.data = np.repeat(lstm.gates.bias.data, n)
    s1 = s2 = (Tensor(np.zeros((1, K))), Tensor(np.zeros((1, K))))
    worst = 0.0
    for _ in range(50):
        x = Tensor(rng.normal(size=(1, d)))
        s1 = lstm.step(x, s1)
        s2 = mp.step(x, s2)
        worst = max(worst, float(np.max(np.abs(s1[0].data - s2[0].data))),
                    float(np.max(np.abs(s1[1].data - s2[1].data))))
    criterion(3, worst <= 1e-12, f"50 steps, max |h, c difference| = {worst:.1e} (<= 1e-12)")


# 4 -----------------------------------------------------------------------------------------


def test_criterion_4_eckart_young(criterion):
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(50):
        m, k = int(rng.integers(2, 40)), int(rng.integers(2, 40))
        P = rng.normal(size=(m, k)) * rng.uniform(0.1, 10)
        b = rom.compute_svd(P)
        r = int(rng.integers(1, b.rank + 1))
        Pt, _ = rom.truncate(b, r)
        worst = max(worst, abs(np.linalg.norm(P - Pt) ** 2 - np.sum(b.singular_values[r:] ** 2)))
    criterion(4, worst <= 1e-9, f"50 random matrices, max |error^2 - tail energy| = {worst:.1e} (<= 1e-9)")


# 5 -----------------------------------------------------------------------------------------

SENSOR_CLASSES = [(8, 2, 2), (10, 3, 2), (10, 3, 3), (12, 4, 3), (12, 4, 4)]


def test_criterion_5_sensor_selection(criterion):
    rng = np.random.default_rng(105)
    ratios, per_class = [], {}
    for cls in SENSOR_CLASSES:
        n, r, k = cls
        hits = 0
        for inst in range(10):
            U = random_orthonormal(rng, n, r)
            best, _ = best_subset(U, k)
            g = rom.select_sensors_greedy(U, k)
            ratios.append(np.exp(g.objective - best))
            for s in range(10):
                a = rom.select_sensors_annealing(U, k, seed=inst * 10 + s)
                hits += abs(a.objective - best) <= 1e-9
        per_class[cls] = hits
    mean_ratio = float(np.mean(ratios))
    ok = mean_ratio >= 0.95 and all(h >= 95 for h in per_class.values())
    classes = ", ".join(f"{c}: {h}/100" for c, h in per_class.items())
    criterion(5, ok, f"greedy mean det ratio {mean_ratio:.4f} (>= 0.95) over 50 instances; "
                     f"annealing optimal runs per (n, r, k) class {classes} (>= 95)")


# 6 -----------------------------------------------------------------------------------------


def test_criterion_6_statevector_invariants(criterion):
    rng = np.random.default_rng(106)
    applied, worst_norm, worst_range = 0, 0.0, 0.0
    while applied < 100_000:
        n = int(rng.integers(1, 5))
        v = rng.normal(size=2 ** n) + 1j * rng.normal(size=2 ** n)
        s = qsim.StateVector(n, v / np.linalg.norm(v))
        for _ in range(100):
            if n > 1 and rng.random() < 0.3:
                c, t = rng.choice(n, 2, replace=False)
                s = apply_cnot(s, int(c), int(t))
            else:
                s = apply_rotation(s, int(rng.integers(n)), "XYZ"[rng.integers(3)], float(rng.uniform(-10, 10)))
            applied += 1
            worst_norm = max(worst_norm, abs(s.norm() - 1.0))
            z = expectation_z(s, int(rng.integers(n)))
            worst_range = max(worst_range, abs(z) - 1.0)
    ok = worst_norm <= 1e-12 and worst_range <= 1e-12
    criterion(6, ok, f"{applied} gate applications, max |norm - 1| = {worst_norm:.1e}, "
                     f"max excess of |<Z>| over 1 = {max(worst_range, 0.0):.1e}")


# 7 -----------------------------------------------------------------------------------------

TABLE_S1 = {5.0: {"mpqlstm": 4.34, "lstm": 4.48}, 1.0: {"mpqlstm": 1.20, "lstm": 0.99}}
SMOKE_SEEDS = 3
SMOKE_EPOCHS = 50


def lorenz_maes(std, seeds, epochs):
    cfg = build_config(preset="lorenz", overrides=[f"dataset.lorenz.noise_std={std}", f"training.epochs={epochs}"])
    data = prepare_forecast_data(cfg)
    out = {}
    for variant in ("mpqlstm", "lstm"):
        maes = []
        for s in range(seeds):
            c = cfg.model_copy(update={"training": cfg.training.model_copy(update={"seed": s})})
            maes.append(run_train(c, None, variant=variant, data=data)["test"]["mae_phys"])
        out[variant] = (float(np.mean(maes)), float(np.std(maes, ddof=1)) if seeds > 1 else 0.0)
    return out


@pytest.mark.slow
def test_criterion_7_lorenz_ordering(criterion):
    full = os.environ.get("QRNN_ACCEPT_LORENZ", "smoke") == "full"
    t0 = time.perf_counter()
    if full:
        levels, seeds, epochs, tol = (5.0, 1.0), 5, None, 0.30
    else:
        levels, seeds, epochs, tol = (5.0,), SMOKE_SEEDS, SMOKE_EPOCHS, 0.50
    parts, ok = [], True
    for std in levels:
        res = lorenz_maes(std, seeds, epochs or build_config(preset="lorenz").training.epochs)
        mp, ls = res["mpqlstm"][0], res["lstm"][0]
        ordered = mp < ls if std == 5.0 else ls < mp
        within = all(abs(res[v][0] - TABLE_S1[std][v]) <= tol * TABLE_S1[std][v] for v in res)
        ok = ok and ordered and within
        parts.append(f"std {std:g}: MP-QLSTM MAE {mp:.3f}+-{res['mpqlstm'][1]:.3f} vs LSTM {ls:.3f}+-{res['lstm'][1]:.3f} "
                     f"(ordering {'ok' if ordered else 'reversed'}, within +-{tol:.0%} of table: {within})")
    elapsed = time.perf_counter() - t0
    mode = "full" if full else f"smoke, {seeds} seeds x {epochs} epochs"
    budget_ok = full or elapsed <= 1800
    criterion(7, ok and budget_ok, f"Lorenz [{mode}] " + "; ".join(parts) + f"; {elapsed / 60:.1f} min")


# 8 -----------------------------------------------------------------------------------------

PIPELINE_OVERRIDES: list[str] = []


@pytest.mark.slow
def test_criterion_8_field_pipeline(criterion, tmp_path):
    cfg = build_config(preset="pressure-like", overrides=PIPELINE_OVERRIDES)
    assert (cfg.dataset.field.height, cfg.dataset.field.width, cfg.dataset.field.n_steps) == (64, 64, 2000)
    assert cfg.dataset.field.rank == 5 and cfg.dataset.field.noise_std == 0.0
    assert (cfg.rom.rank, cfg.rom.sensors, cfg.model.variant) == (20, 5, "mpqlstm")
    t0 = time.perf_counter()
    rep = run_pipeline(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    ok = rep["rmspe_probes"] < 2.0 and elapsed < 3600
    criterion(8, ok, f"64x64 rank-5 field, next-step RMSPE at {len(rep['probes'])} held-out probes "
                     f"{rep['rmspe_probes']:.3f}% (< 2%); whole field {rep['rmspe_field']:.3f}%, "
                     f"persistence baseline {rep['rmspe_persistence']:.3f}%; {elapsed / 60:.1f} min (< 60)")


# 9 -----------------------------------------------------------------------------------------

BENCH_SEEDS = 3
BENCH_EPOCHS = 100


@pytest.mark.slow
def test_criterion_9_variant_benchmark(criterion, tmp_path):
    cfg = build_config(preset="pressure-like")
    sd = field_sensor_data(cfg)
    data = prepare_forecast_data(cfg, sd.series)
    t0 = time.perf_counter()
    summary = run_bench(cfg, tmp_path, seeds=BENCH_SEEDS, epochs=BENCH_EPOCHS, data=data)
    elapsed = time.perf_counter() - t0
    mse = {v: row["mse"]["mean"] for v, row in summary["table"].items()}
    best_classical = min(mse["lstm"], mse["gru"])
    ok = len(mse) == 5 and all(mse[v] <= 1.05 * best_classical for v in ("mpqlstm", "mpqgru"))
    table = ", ".join(f"{v} {m:.3e}" for v, m in mse.items())
    criterion(9, ok, f"test MSE ({BENCH_SEEDS} seeds x {BENCH_EPOCHS} epochs) {table}; MP variants must be "
                     f"<= 1.05 x best classical {best_classical:.3e}; {elapsed / 60:.1f} min")
