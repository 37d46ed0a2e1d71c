"""Recurrent forecasting cells and the windowed one-step-ahead model.

Every cell consumes ``v_t = [h_{t-1}, x_t]``. The LSTM-family cells produce
pre-activations for the gates in the order (f, i, c, o); the GRU-family cells
produce (r, z) from ``v_t`` and the candidate from ``[x_t, r_t * h_{t-1}]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import qsim
from .nn import Linear, Module, Parameter, Tensor, as_tensor, concat, linear, sigmoid, tanh, uniform_init, vqc

VARIANTS = ("lstm", "gru", "lqlstm", "mpqlstm", "mpqgru")


@dataclass(frozen=True)
class CellConfig:
    variant: str = "mpqlstm"
    input_dim: int = 5
    hidden: int = 5
    encoding_layers: int = 3
    qubits: int = 3
    depth: int = 1
    measurement: str = "mean"
    lqlstm_qubits: int = 4
    identity_vqc: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.input_dim < 1 or self.hidden < 1:
            raise ValueError("input_dim and hidden must be positive")


class QuantumGateBlock(Module):
    """``n_circuits`` independent VQCs reading the same input vector.

    Circuit ``c`` owns ``encoding_layers`` linear maps input -> qubits; they
    are stored stacked as one (n_circuits * M * n, input_dim) weight.
    """

    def __init__(self, input_dim: int, n_circuits: int, qubits: int, encoding_layers: int, depth: int,
                 measurement: str, rng: np.random.Generator, identity: bool = False):
        self.spec = qsim.VqcSpec(qubits, input_dim, encoding_layers, depth, measurement)
        self.n_circuits = n_circuits
        self.identity = identity
        rows = n_circuits * encoding_layers * qubits
        self.weight = Parameter(uniform_init(rng, (rows, input_dim), input_dim))
        self.bias = Parameter(uniform_init(rng, (rows,), input_dim))
        self.angles = Parameter(rng.uniform(-1.0, 1.0, (n_circuits, depth, qubits, 3)))

    def encoding_angles(self, v: Tensor) -> Tensor:
        s = self.spec
        a = linear(v, self.weight, self.bias)
        return a.reshape(v.shape[0], self.n_circuits, s.num_encoding_layers, s.num_qubits)

    def __call__(self, v: Tensor) -> Tensor:
        enc = self.encoding_angles(v)
        if self.identity:
            # pass-through of the first linear layer's mean instead of a circuit
            return enc[:, :, 0, :].mean(axis=-1)
        return vqc(enc, self.angles, self.spec.measurement_mode)

    def circuit(self, c: int) -> tuple[qsim.VqcSpec, qsim.VqcParams]:
        """Spec and parameters of circuit ``c`` as a standalone VQC."""
        s = self.spec
        M, n = s.num_encoding_layers, s.num_qubits
        w = self.weight.data.reshape(self.n_circuits, M, n, s.input_dim)[c]
        b = self.bias.data.reshape(self.n_circuits, M, n)[c]
        return s, qsim.VqcParams(w.copy(), b.copy(), self.angles.data[c].copy())


def _lstm_update(pre: Tensor, c_prev: Tensor, K: int) -> tuple[Tensor, Tensor]:
    f = sigmoid(pre[:, 0:K])
    i = sigmoid(pre[:, K:2 * K])
    g = tanh(pre[:, 2 * K:3 * K])
    o = sigmoid(pre[:, 3 * K:4 * K])
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


class Cell(Module):
    has_cell_state = True

    def __init__(self, config: CellConfig):
        self.config = config
        self.hidden = config.hidden

    def initial_state(self, batch: int) -> tuple:
        zeros = Tensor(np.zeros((batch, self.hidden)))
        return (zeros, Tensor(np.zeros((batch, self.hidden)))) if self.has_cell_state else (zeros,)

    def step(self, x: Tensor, state: tuple) -> tuple:
        raise NotImplementedError


class LSTMCell(Cell):
    def __init__(self, config: CellConfig, rng):
        super().__init__(config)
        self.gates = Linear(config.input_dim + config.hidden, 4 * config.hidden, rng)

    def step(self, x, state):
        h, c = state
        return _lstm_update(self.gates(concat([h, x])), c, self.hidden)


class MPQLSTMCell(Cell):
    """K circuits per gate, each fed by its own M linear layers."""

    def __init__(self, config: CellConfig, rng):
        super().__init__(config)
        self.gates = QuantumGateBlock(
            config.input_dim + config.hidden, 4 * config.hidden, config.qubits, config.encoding_layers,
            config.depth, config.measurement, rng, identity=config.identity_vqc,
        )

    def step(self, x, state):
        h, c = state
        return _lstm_update(self.gates(concat([h, x])), c, self.hidden)

    def num_circuits(self) -> int:
        return self.gates.n_circuits


class LQLSTMCell(Cell):
    """One circuit per gate between a reducing and an expanding linear layer."""

    def __init__(self, config: CellConfig, rng):
        super().__init__(config)
        n = config.lqlstm_qubits
        # pre-VQC layers of the four gates stacked; M=1 so they feed RX angles
        self.gates = QuantumGateBlock(config.input_dim + config.hidden, 4, n, 1, config.depth, "all", rng)
        self.post = [Linear(n, config.hidden, rng) for _ in range(4)]

    def step(self, x, state):
        h, c = state
        z = self.gates(concat([h, x]))  # (B, 4, n) per-qubit <Z>
        pre = concat([self.post[g](z[:, g, :]) for g in range(4)])
        return _lstm_update(pre, c, self.hidden)


class GRUCell(Cell):
    has_cell_state = False

    def __init__(self, config: CellConfig, rng):
        super().__init__(config)
        d = config.input_dim + config.hidden
        self.gates = Linear(d, 2 * config.hidden, rng)
        self.candidate = Linear(d, config.hidden, rng)

    def _gates(self, v):
        return self.gates(v)

    def _candidate(self, v):
        return self.candidate(v)

    def step(self, x, state):
        (h,) = state
        K = self.hidden
        rz = self._gates(concat([h, x]))
        r = sigmoid(rz[:, :K])
        z = sigmoid(rz[:, K:])
        h_tilde = tanh(self._candidate(concat([x, r * h])))
        return ((1.0 - z) * h + z * h_tilde,)


class MPQGRUCell(GRUCell):
    def __init__(self, config: CellConfig, rng):
        Cell.__init__(self, config)
        d = config.input_dim + config.hidden
        args = (config.qubits, config.encoding_layers, config.depth, config.measurement, rng)
        self.gates = QuantumGateBlock(d, 2 * config.hidden, *args, identity=config.identity_vqc)
        self.candidate = QuantumGateBlock(d, config.hidden, *args, identity=config.identity_vqc)

    def num_circuits(self) -> int:
        return self.gates.n_circuits + self.candidate.n_circuits


CELL_TYPES = {
    "lstm": LSTMCell,
    "gru": GRUCell,
    "lqlstm": LQLSTMCell,
    "mpqlstm": MPQLSTMCell,
    "mpqgru": MPQGRUCell,
}


def make_cell(config: CellConfig, rng: np.random.Generator) -> Cell:
    return CELL_TYPES[config.variant](config, rng)


class ForecastModel(Module):
    """Recurrent cell stepped over a window, then a linear head on the final h."""

    def __init__(self, config: CellConfig, window: int, seed: int = 0):
        if window < 1:
            raise ValueError("window must be >= 1")
        rng = np.random.default_rng(seed)
        self.config = config
        self.window = window
        self.seed = seed
        self.cell = make_cell(config, rng)
        self.head = Linear(config.hidden, config.input_dim, rng)

    def __call__(self, windows) -> Tensor:
        windows = np.asarray(windows, dtype=float)
        if windows.ndim != 3 or windows.shape[1:] != (self.window, self.config.input_dim):
            raise ValueError(
                f"expected windows of shape (B, {self.window}, {self.config.input_dim}), got {windows.shape}"
            )
        state = self.cell.initial_state(windows.shape[0])
        for t in range(self.window):
            state = self.cell.step(as_tensor(windows[:, t, :]), state)
        return self.head(state[0])

    def predict(self, windows, batch_size: int = 1024) -> np.ndarray:
        windows = np.asarray(windows, dtype=float)
        outs = [self(windows[i:i + batch_size]).data for i in range(0, len(windows), batch_size)]
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, self.config.input_dim))

    def describe(self) -> dict:
        return {"cell": asdict(self.config), "window": self.window, "seed": self.seed}


def run_sequence(model: ForecastModel, window) -> np.ndarray:
    """One-step-ahead prediction for a single (W, C) window."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or window.shape[0] != model.window:
        raise ValueError(f"window must have {model.window} steps, got shape {window.shape}")
    return model(window[None]).data[0]
