"""Snapshot SVD/POD, truncated-SVD denoising and D-optimal sensor selection."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

SNAPSHOT_MAGIC = b"QRNNSNAP"
_HEADER = struct.Struct("<8sQQ")


@dataclass
class SnapshotMatrix:
    """Columns are flattened fields at successive time steps."""

    values: np.ndarray  # (n_space, n_time)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError(f"snapshot matrix must be 2-D, got shape {self.values.shape}")
        if np.isnan(self.values).any():
            raise DataError("snapshot matrix contains NaN")
        if self.n_time < 2:
            raise DataError("snapshot matrix needs at least 2 time steps")

    @property
    def n_space(self) -> int:
        return self.values.shape[0]

    @property
    def n_time(self) -> int:
        return self.values.shape[1]


@dataclass
class PodBasis:
    modes: np.ndarray  # U, (n_space, r)
    singular_values: np.ndarray  # (r,), descending
    right_vectors: np.ndarray  # V, (n_time, r)
    mean: np.ndarray | None = None  # per-point mean removed before the SVD

    @property
    def rank(self) -> int:
        return len(self.singular_values)

    def reconstruct(self) -> np.ndarray:
        P = (self.modes * self.singular_values) @ self.right_vectors.T
        return P if self.mean is None else P + self.mean[:, None]


@dataclass
class SensorSet:
    indices: np.ndarray
    objective: float

    def coordinates(self, grid: tuple[int, int]) -> np.ndarray:
        """(row, col) of every sensor on a row-major ``grid``."""
        return np.stack(np.unravel_index(self.indices, grid), axis=1)


def compute_svd(P, center: bool = False) -> PodBasis:
    """Thin SVD ``P = U diag(s) V^T`` with singular values in descending order."""
    values = P.values if isinstance(P, SnapshotMatrix) else np.asarray(P, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError("snapshot matrix contains non-finite values")
    mean = None
    if center:
        mean = values.mean(axis=1)
        values = values - mean[:, None]
    U, s, Vt = np.linalg.svd(values, full_matrices=False)
    return PodBasis(U, s, Vt.T, mean)


def numerical_rank(basis: PodBasis, rtol: float | None = None) -> int:
    """Number of singular values above ``rtol * s_max`` (default ``max(n, m) * eps``)."""
    s = basis.singular_values
    if len(s) == 0 or s[0] == 0:
        return 0
    if rtol is None:
        rtol = max(basis.modes.shape[0], basis.right_vectors.shape[0]) * np.finfo(float).eps
    return int(np.sum(s > rtol * s[0]))


def truncate(basis: PodBasis, r: int) -> tuple[np.ndarray, PodBasis]:
    """Rank-``r`` reconstruction and the reduced basis."""
    if not (1 <= r <= basis.rank):
        raise ValueError(f"truncation rank must be in 1..{basis.rank}, got {r}")
    reduced = PodBasis(basis.modes[:, :r], basis.singular_values[:r], basis.right_vectors[:, :r], basis.mean)
    return reduced.reconstruct(), reduced


def _modes(basis_or_modes) -> np.ndarray:
    return basis_or_modes.modes if isinstance(basis_or_modes, PodBasis) else np.asarray(basis_or_modes, dtype=float)


def logdet_objective(modes: np.ndarray, indices) -> float:
    """``log det(U_S U_S^T)`` for the selected rows; ``-inf`` when singular."""
    rows = modes[np.asarray(indices, dtype=int)]
    sign, logdet = np.linalg.slogdet(rows @ rows.T)
    return float(logdet) if sign > 0 else float("-inf")


def _check_k(modes: np.ndarray, k: int) -> None:
    n, r = modes.shape
    if k < 1:
        raise ValueError("number of sensors must be >= 1")
    if k > r:
        raise ValueError(f"k={k} sensors exceeds the {r} retained modes; the determinant objective degenerates")
    if k > n:
        raise ValueError(f"k={k} sensors exceeds {n} spatial points")


def select_sensors_greedy(basis, k: int) -> SensorSet:
    """Add, one at a time, the row with the largest residual norm after
    projecting out the rows already chosen. Each pick maximizes the
    determinant gain; ties go to the lowest index."""
    modes = _modes(basis)
    _check_k(modes, k)
    resid = modes.copy()
    chosen: list[int] = []
    for _ in range(k):
        norms = np.einsum("ij,ij->i", resid, resid)
        norms[chosen] = -np.inf
        i = int(np.argmax(norms))
        chosen.append(i)
        if norms[i] > 0:
            q = resid[i] / np.sqrt(norms[i])
            resid -= np.outer(resid @ q, q)
    idx = np.array(chosen)
    return SensorSet(idx, logdet_objective(modes, idx))


@dataclass(frozen=True)
class AnnealingSchedule:
    t_start: float = 1.0
    t_end: float = 1e-3
    iterations: int = 3000

    def __post_init__(self):
        if not (self.t_start > 0 and self.t_end > 0):
            raise ValueError("annealing temperatures must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")

    def temperature(self, it: int) -> float:
        if self.iterations <= 1:
            return self.t_start
        return self.t_start * (self.t_end / self.t_start) ** (it / (self.iterations - 1))


def select_sensors_annealing(basis, k: int, schedule: AnnealingSchedule = AnnealingSchedule(), seed: int = 0,
                             initial: SensorSet | None = None) -> SensorSet:
    """Simulated annealing over k-subsets with swap moves, seeded from greedy.

    The best subset visited is returned, so the result is never worse than
    the starting point.
    """
    modes = _modes(basis)
    _check_k(modes, k)
    start = initial if initial is not None else select_sensors_greedy(modes, k)
    n = modes.shape[0]
    if schedule.iterations == 0 or n == k:
        return SensorSet(start.indices.copy(), start.objective)
    rng = np.random.default_rng(seed)
    current = list(int(i) for i in start.indices)
    cur_obj = start.objective
    best, best_obj = list(current), cur_obj
    in_set = np.zeros(n, dtype=bool)
    in_set[current] = True
    for it in range(schedule.iterations):
        temp = schedule.temperature(it)
        pos = int(rng.integers(k))
        out_pool = np.flatnonzero(~in_set)
        new = int(out_pool[rng.integers(len(out_pool))])
        cand = list(current)
        cand[pos] = new
        obj = logdet_objective(modes, cand)
        u = rng.random()
        if obj >= cur_obj or (np.isfinite(obj) and np.isfinite(cur_obj) and u < np.exp((obj - cur_obj) / temp)) \
                or (not np.isfinite(cur_obj)):
            in_set[current[pos]] = False
            in_set[new] = True
            current, cur_obj = cand, obj
            if cur_obj > best_obj:
                best, best_obj = list(current), cur_obj
    return SensorSet(np.array(best), best_obj)


# file formats ------------------------------------------------------------------


def save_snapshots_binary(P: SnapshotMatrix, path) -> None:
    """``QRNNSNAP`` magic, uint64 n_space, uint64 n_time, then row-major float64, all little-endian."""
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, P.n_space, P.n_time))
        fh.write(np.ascontiguousarray(P.values, dtype="<f8").tobytes())


def load_snapshots_binary(path) -> SnapshotMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, n_space, n_time = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * n_space * n_time
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {n_space}x{n_time}, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n_space, n_time)
    return SnapshotMatrix(values.astype(float))


def save_snapshots_csv(P: SnapshotMatrix, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"t{j}" for j in range(P.n_time)])
        for row in P.values:
            writer.writerow([repr(float(v)) for v in row])


def load_snapshots_csv(path) -> SnapshotMatrix:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return SnapshotMatrix(np.array(rows))


def load_snapshots(path) -> SnapshotMatrix:
    path = Path(path)
    return load_snapshots_csv(path) if path.suffix.lower() == ".csv" else load_snapshots_binary(path)


def save_sensors_csv(sensors: SensorSet, path, grid: tuple[int, int] | None = None, solver: str = "") -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "row", "col", "solver", "objective"] if grid else ["index", "solver", "objective"])
        coords = sensors.coordinates(grid) if grid else None
        for j, idx in enumerate(sensors.indices):
            if grid:
                writer.writerow([int(idx), int(coords[j, 0]), int(coords[j, 1]), solver, repr(sensors.objective)])
            else:
                writer.writerow([int(idx), solver, repr(sensors.objective)])


def load_sensors_csv(path) -> SensorSet:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: no sensors")
    return SensorSet(np.array([int(r["index"]) for r in rows]), float(rows[0]["objective"]))
