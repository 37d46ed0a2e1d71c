"""Series generation, CSV ingestion, normalization, sequential splits and windowing."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .rom import SnapshotMatrix


@dataclass
class TimeSeries:
    values: np.ndarray  # (n_steps, n_channels)
    dt: float = 1.0
    channels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2:
            raise DataError(f"series values must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite values")
        if not self.channels:
            self.channels = [f"c{i}" for i in range(self.n_channels)]
        if len(self.channels) != self.n_channels:
            raise DataError(f"{len(self.channels)} channel names for {self.n_channels} channels")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.20
    test_frac: float = 0.10

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fracs}")

    def sizes(self, n: int) -> tuple[int, int, int]:
        n_train = int(round(n * self.train_frac))
        n_val = int(round(n * self.val_frac))
        return n_train, n_val, n - n_train - n_val

    def bounds(self, n: int) -> dict[str, tuple[int, int]]:
        n_train, n_val, _ = self.sizes(n)
        return {"train": (0, n_train), "val": (n_train, n_train + n_val), "test": (n_train + n_val, n)}


# Lorenz system ---------------------------------------------------------------


@dataclass(frozen=True)
class LorenzConfig:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    x0: float = 0.0
    y0: float = -0.01
    z0: float = 9.0
    dt: float = 0.01
    n_steps: int = 5000
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise DataError("dt must be positive")
        if self.n_steps < 1:
            raise DataError("n_steps must be >= 1")
        if self.noise_std < 0:
            raise DataError("noise_std must be non-negative")


def lorenz_rhs(state: np.ndarray, sigma: float, rho: float, beta: float) -> np.ndarray:
    x, y, z = state
    return np.array([sigma * (y - x), rho * x - y - x * z, x * y - beta * z])


def rk4(rhs, y0: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """Fixed-step RK4; row 0 is the initial condition."""
    out = np.empty((n_steps, len(y0)))
    y = np.asarray(y0, dtype=float)
    out[0] = y
    for k in range(1, n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k] = y
    return out


def channel_noise(seed: int, n_steps: int, n_channels: int, std: float) -> np.ndarray:
    """Gaussian noise with an independent stream per channel."""
    streams = np.random.SeedSequence(seed).spawn(n_channels)
    cols = [np.random.default_rng(s).normal(0.0, 1.0, n_steps) for s in streams]
    return std * np.stack(cols, axis=1)


def lorenz_generate(cfg: LorenzConfig) -> TimeSeries:
    """Integrate the Lorenz system and add the configured Gaussian noise.

    Normalization is left to :func:`normalize` so its statistics can come
    from the training split alone.
    """
    traj = rk4(lambda s: lorenz_rhs(s, cfg.sigma, cfg.rho, cfg.beta),
               np.array([cfg.x0, cfg.y0, cfg.z0]), cfg.dt, cfg.n_steps)
    if cfg.noise_std > 0:
        traj = traj + channel_noise(cfg.seed, cfg.n_steps, 3, cfg.noise_std)
    return TimeSeries(traj, dt=cfg.dt, channels=["x", "y", "z"])


# synthetic high-dimensional field ---------------------------------------------


@dataclass
class SyntheticField:
    snapshots: SnapshotMatrix  # possibly noisy
    clean: np.ndarray  # (n_space, n_time) noise-free field
    rank: int
    grid: tuple[int, int]
    probe_indices: np.ndarray
    probe_series: np.ndarray  # (n_probes, n_time), from the clean field
    params: dict


_TRAVELING = [
    # amplitude, wave numbers (cycles over the unit square), period in steps
    (0.08, (2.0, 1.0), 25.0),
    (0.06, (1.0, -3.0), 40.0),
    (0.05, (3.0, 2.0), 17.0),
    (0.04, (-2.0, 3.0), 55.0),
]


def synth_field_generate(height: int, width: int, n_steps: int, rank: int = 5, mode: str = "traveling",
                         noise_std: float = 0.0, seed: int = 0, n_probes: int = 16) -> SyntheticField:
    """Low-rank unsteady field around a unit base pressure.

    One static mean mode plus traveling waves (rank 2 each) and, for even
    ranks, one standing oscillation. ``mode="static"`` keeps only the mean.
    """
    if height * width > 10_000:
        raise DataError(f"grid {height}x{width} exceeds the desk-scale limit of 10^4 points")
    if n_steps < 2:
        raise DataError("n_steps must be >= 2")
    if mode == "static":
        rank = 1
    elif mode != "traveling":
        raise DataError(f"unknown field mode {mode!r}")
    if rank < 1:
        raise DataError("rank must be >= 1")
    n_travel = (rank - 1) // 2
    n_stand = (rank - 1) % 2
    if n_travel > len(_TRAVELING):
        raise DataError(f"rank {rank} exceeds the supported maximum {2 * len(_TRAVELING) + 2}")

    yy, xx = np.meshgrid(np.arange(height) / height, np.arange(width) / width, indexing="ij")
    x = xx.ravel()
    y = yy.ravel()
    t = np.arange(n_steps, dtype=float)
    base = 1.0 + 0.05 * np.exp(-((x - 0.3) ** 2 + (y - 0.5) ** 2) / 0.02)
    field_ = np.repeat(base[:, None], n_steps, axis=1)
    for amp, (kx, ky), period in _TRAVELING[:n_travel]:
        phase = 2 * np.pi * (kx * x + ky * y)
        field_ += amp * np.cos(phase[:, None] - 2 * np.pi * t[None, :] / period)
    if n_stand:
        shape = np.sin(2 * np.pi * x) * np.sin(np.pi * y)
        field_ += 0.05 * shape[:, None] * np.cos(2 * np.pi * t / 60.0)[None, :]

    rng = np.random.default_rng(seed)
    noisy = field_ + rng.normal(0.0, noise_std, field_.shape) if noise_std > 0 else field_.copy()
    probes = np.sort(rng.choice(height * width, size=min(n_probes, height * width), replace=False))
    return SyntheticField(
        snapshots=SnapshotMatrix(noisy),
        clean=field_,
        rank=rank,
        grid=(height, width),
        probe_indices=probes,
        probe_series=field_[probes],
        params={"height": height, "width": width, "n_steps": n_steps, "rank": rank, "mode": mode,
                "noise_std": noise_std, "seed": seed},
    )


# normalization ------------------------------------------------------------------


@dataclass
class Normalizer:
    method: str
    offset: np.ndarray
    scale: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.offset) / self.scale

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.scale + self.offset

    def to_dict(self) -> dict:
        return {"method": self.method, "offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(d["method"], np.asarray(d["offset"], dtype=float), np.asarray(d["scale"], dtype=float))


def fit_normalizer(values: np.ndarray, method: str = "zscore", channels: Sequence[str] | None = None) -> Normalizer:
    values = np.asarray(values, dtype=float)
    names = list(channels) if channels else [f"c{i}" for i in range(values.shape[1])]
    if method == "zscore":
        offset = values.mean(axis=0)
        scale = values.std(axis=0)
    elif method == "minmax":
        offset = values.min(axis=0)
        scale = values.max(axis=0) - offset
    elif method == "none":
        return Normalizer("none", np.zeros(values.shape[1]), np.ones(values.shape[1]))
    else:
        raise DataError(f"unknown normalization method {method!r}")
    for name, s in zip(names, scale):
        if not s > 0:
            raise DataError(f"channel {name!r} is constant on the training split; cannot normalize")
    return Normalizer(method, offset, scale)


def normalize(series: TimeSeries, method: str = "zscore", split: SplitSpec = SplitSpec()) -> tuple[TimeSeries, Normalizer]:
    """Per-channel normalization with statistics from the training split only."""
    n_train = split.sizes(series.n_steps)[0]
    norm = fit_normalizer(series.values[:n_train], method, series.channels)
    return TimeSeries(norm.transform(series.values), series.dt, list(series.channels)), norm


# windowing ------------------------------------------------------------------------


def window(values: np.ndarray, W: int) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 windows: inputs (n - W, W, C) and next-step targets (n - W, C)."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if W < 1:
        raise DataError("window length must be >= 1")
    n = values.shape[0]
    if n < W + 1:
        raise DataError(f"series of {n} steps is shorter than window {W} + 1")
    idx = np.arange(W)[None, :] + np.arange(n - W)[:, None]
    return values[idx], values[W:]


def split_windows(values: np.ndarray, W: int, split: SplitSpec = SplitSpec()) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Split the series sequentially, then window each segment so that no
    window (inputs or target) crosses a split boundary."""
    values = np.asarray(values, dtype=float)
    out = {}
    for name, (a, b) in split.bounds(len(values)).items():
        seg = values[a:b]
        if len(seg) < W + 1:
            raise DataError(f"{name} split has {len(seg)} steps, fewer than window {W} + 1")
        out[name] = window(seg, W)
    return out


def window_target_indices(n: int, W: int, split: SplitSpec = SplitSpec()) -> dict[str, np.ndarray]:
    """Absolute time index of every target produced by :func:`split_windows`."""
    return {name: np.arange(a + W, b) for name, (a, b) in split.bounds(n).items()}


# CSV -----------------------------------------------------------------------------------


def save_csv(series: TimeSeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(series.channels)
        for row in series.values:
            writer.writerow([repr(float(v)) for v in row])


def load_csv(path, columns: Sequence[str] | None = None, dt: float = 1.0) -> TimeSeries:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, a header row is required") from None
        if columns:
            missing = [c for c in columns if c not in header]
            if missing:
                raise DataError(f"{path}: columns {missing} not in header {header}")
            picks = [header.index(c) for c in columns]
        else:
            picks = list(range(len(header)))
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
            try:
                rows.append([float(row[i]) for i in picks])
            except ValueError:
                bad = next(i for i in picks if not _is_float(row[i]))
                raise DataError(f"{path}:{lineno}: non-numeric value {row[bad]!r} in column {header[bad]!r}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return TimeSeries(np.array(rows), dt=dt, channels=[header[i] for i in picks])


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False
