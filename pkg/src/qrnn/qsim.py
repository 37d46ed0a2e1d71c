"""Exact statevector simulation of the small variational circuits used by the
quantum recurrent cells.

Qubit 0 is the most significant bit of a basis index, so ``|10>`` with
``control=0`` has qubit 0 set. Rotations follow ``R_a(t) = exp(-i t/2 P_a)``.

Two evaluation paths share the same circuit definition:

* a reference path working gate by gate on a single :class:`StateVector`
  (``run_circuit``, ``vqc_forward``, ``vqc_gradient``);
* a batched path used during training. The encoding layers only contain
  single-qubit rotations acting on ``|0...0>``, so the encoded state is a
  product state, and the variational block is folded into the measured
  observables (``U^dagger O U``). Parameter-shift gradients on this path are
  quadratic forms against shifted product states or shifted observables.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

AXES = ("X", "Y", "Z")
MEASUREMENT_MODES = ("mean", "tensor", "first", "all")
MAX_QUBITS = 12
SHIFT = np.pi / 2


def rotation_matrix(axis: str, angle) -> np.ndarray:
    """Single-qubit rotation matrices, shape ``angle.shape + (2, 2)``."""
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle / 2)
    s = np.sin(angle / 2)
    m = np.zeros(angle.shape + (2, 2), dtype=complex)
    if axis == "X":
        m[..., 0, 0] = c
        m[..., 0, 1] = -1j * s
        m[..., 1, 0] = -1j * s
        m[..., 1, 1] = c
    elif axis == "Y":
        m[..., 0, 0] = c
        m[..., 0, 1] = -s
        m[..., 1, 0] = s
        m[..., 1, 1] = c
    elif axis == "Z":
        m[..., 0, 0] = np.exp(-0.5j * angle)
        m[..., 1, 1] = np.exp(0.5j * angle)
    else:
        raise ValueError(f"unknown rotation axis {axis!r}")
    return m


def _apply_1q(states: np.ndarray, num_qubits: int, qubit: int, mats: np.ndarray) -> np.ndarray:
    # states (..., 2**n); mats broadcastable to states.shape[:-1] + (2, 2)
    lead = states.shape[:-1]
    s = states.reshape(lead + (1 << qubit, 2, 1 << (num_qubits - qubit - 1)))
    a = s[..., 0, :]
    b = s[..., 1, :]
    m = mats[..., None, None, :, :]
    out = np.empty_like(s)
    out[..., 0, :] = m[..., 0, 0] * a + m[..., 0, 1] * b
    out[..., 1, :] = m[..., 1, 0] * a + m[..., 1, 1] * b
    return out.reshape(states.shape)


@lru_cache(maxsize=None)
def _cnot_permutation(num_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << num_qubits)
    cmask = 1 << (num_qubits - 1 - control)
    tmask = 1 << (num_qubits - 1 - target)
    return np.where(idx & cmask, idx ^ tmask, idx)


@lru_cache(maxsize=None)
def _z_signs(num_qubits: int) -> np.ndarray:
    """(2**n, n) matrix of Pauli-Z eigenvalues, +1 for bit 0 and -1 for bit 1."""
    idx = np.arange(1 << num_qubits)[:, None]
    bits = (idx >> (num_qubits - 1 - np.arange(num_qubits))[None, :]) & 1
    return 1.0 - 2.0 * bits


def _check_qubit(num_qubits: int, qubit: int, what: str = "qubit") -> None:
    if not (0 <= int(qubit) < num_qubits) or int(qubit) != qubit:
        raise IndexError(f"{what} index {qubit} out of range for {num_qubits} qubits")


@dataclass(frozen=True)
class StateVector:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if not (1 <= self.num_qubits <= MAX_QUBITS):
            raise ValueError(f"num_qubits must be in 1..{MAX_QUBITS}, got {self.num_qubits}")
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (1 << self.num_qubits,):
            raise ValueError(
                f"expected {1 << self.num_qubits} amplitudes for {self.num_qubits} qubits, got {amps.shape}"
            )
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, num_qubits: int) -> "StateVector":
        amps = np.zeros(1 << num_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(num_qubits, amps)

    @classmethod
    def basis(cls, bits: str) -> "StateVector":
        """``StateVector.basis("10")`` is ``|10>`` with qubit 0 set."""
        amps = np.zeros(1 << len(bits), dtype=complex)
        amps[int(bits, 2)] = 1.0
        return cls(len(bits), amps)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def apply_rotation(state: StateVector, qubit: int, axis: str, angle: float) -> StateVector:
    _check_qubit(state.num_qubits, qubit)
    if not np.isfinite(angle):
        raise ValueError(f"rotation angle must be finite, got {angle}")
    mat = rotation_matrix(axis, angle)
    return StateVector(state.num_qubits, _apply_1q(state.amplitudes, state.num_qubits, qubit, mat))


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    _check_qubit(state.num_qubits, control, "control")
    _check_qubit(state.num_qubits, target, "target")
    if control == target:
        raise ValueError("CNOT control and target must differ")
    perm = _cnot_permutation(state.num_qubits, control, target)
    return StateVector(state.num_qubits, state.amplitudes[perm])


def expectation_z(state: StateVector, qubit: int) -> float:
    _check_qubit(state.num_qubits, qubit)
    return float(state.probabilities() @ _z_signs(state.num_qubits)[:, qubit])


# --------------------------------------------------------------------------
# Circuit description


@dataclass(frozen=True)
class VqcSpec:
    """Topology of one variational circuit.

    ``num_encoding_layers`` linear layers each produce one angle per qubit;
    layer ``m`` is applied as rotations about ``AXES[m % 3]``. Each of the
    ``variational_depth`` blocks is a CNOT ring followed by learnable
    RX, RY, RZ on every qubit.
    """

    num_qubits: int
    input_dim: int
    num_encoding_layers: int = 3
    variational_depth: int = 1
    measurement_mode: str = "mean"

    def __post_init__(self):
        if not (1 <= self.num_qubits <= MAX_QUBITS):
            raise ValueError(f"num_qubits must be in 1..{MAX_QUBITS}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_encoding_layers < 1:
            raise ValueError("num_encoding_layers must be >= 1")
        if self.variational_depth < 1:
            raise ValueError("variational_depth must be >= 1")
        if self.measurement_mode not in MEASUREMENT_MODES:
            raise ValueError(f"measurement_mode must be one of {MEASUREMENT_MODES}")

    @property
    def num_encoding_angles(self) -> int:
        return self.num_encoding_layers * self.num_qubits

    @property
    def num_variational_angles(self) -> int:
        return self.variational_depth * self.num_qubits * 3

    @property
    def num_outputs(self) -> int:
        return self.num_qubits if self.measurement_mode == "all" else 1


def encoding_axis(layer: int) -> str:
    return AXES[layer % 3]


def cnot_ring(num_qubits: int) -> list[tuple[int, int]]:
    if num_qubits == 1:
        return []
    if num_qubits == 2:
        return [(0, 1), (1, 0)]
    return [(q, (q + 1) % num_qubits) for q in range(num_qubits)]


def circuit_gates(spec: VqcSpec) -> list[tuple]:
    """Gate list. Rotations are ``("rot", qubit, axis, slot)`` where ``slot``
    indexes the flat angle vector (encoding angles first, then variational
    angles in ``(depth, qubit, axis)`` order); CNOTs are ``("cnot", c, t)``."""
    n = spec.num_qubits
    gates: list[tuple] = []
    for m in range(spec.num_encoding_layers):
        for q in range(n):
            gates.append(("rot", q, encoding_axis(m), m * n + q))
    base = spec.num_encoding_angles
    for d in range(spec.variational_depth):
        for c, t in cnot_ring(n):
            gates.append(("cnot", c, t))
        for q in range(n):
            for a, axis in enumerate(AXES):
                gates.append(("rot", q, axis, base + (d * n + q) * 3 + a))
    return gates


@dataclass
class VqcParams:
    encoding_weights: np.ndarray  # (M, num_qubits, input_dim)
    encoding_bias: np.ndarray  # (M, num_qubits)
    variational_angles: np.ndarray  # (D, num_qubits, 3)

    @classmethod
    def zeros(cls, spec: VqcSpec) -> "VqcParams":
        M, n, d = spec.num_encoding_layers, spec.num_qubits, spec.input_dim
        return cls(np.zeros((M, n, d)), np.zeros((M, n)), np.zeros((spec.variational_depth, n, 3)))

    @classmethod
    def random(cls, spec: VqcSpec, rng: np.random.Generator) -> "VqcParams":
        M, n, d = spec.num_encoding_layers, spec.num_qubits, spec.input_dim
        bound = 1.0 / np.sqrt(d)
        return cls(
            rng.uniform(-bound, bound, (M, n, d)),
            rng.uniform(-bound, bound, (M, n)),
            rng.uniform(-1.0, 1.0, (spec.variational_depth, n, 3)),
        )

    def check(self, spec: VqcSpec) -> None:
        M, n, d = spec.num_encoding_layers, spec.num_qubits, spec.input_dim
        expected = {
            "encoding_weights": (M, n, d),
            "encoding_bias": (M, n),
            "variational_angles": (spec.variational_depth, n, 3),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")


@dataclass
class VqcGradient:
    encoding_weights: np.ndarray
    encoding_bias: np.ndarray
    variational_angles: np.ndarray
    input: np.ndarray


def encode_angles(spec: VqcSpec, params: VqcParams, x) -> np.ndarray:
    """Per-layer encoding angles ``W_m x + b_m``, shape (M, num_qubits)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.input_dim,):
        raise ValueError(f"input has shape {x.shape}, expected ({spec.input_dim},)")
    params.check(spec)
    return np.einsum("mqi,i->mq", params.encoding_weights, x) + params.encoding_bias


def flat_angles(spec: VqcSpec, enc_angles: np.ndarray, var_angles: np.ndarray) -> np.ndarray:
    return np.concatenate([np.ravel(enc_angles), np.ravel(var_angles)])


def run_circuit(spec: VqcSpec, angles: np.ndarray) -> StateVector:
    angles = np.asarray(angles, dtype=float)
    state = StateVector.zero(spec.num_qubits)
    for gate in circuit_gates(spec):
        if gate[0] == "rot":
            _, q, axis, slot = gate
            state = apply_rotation(state, q, axis, angles[slot])
        else:
            state = apply_cnot(state, gate[1], gate[2])
    return state


def measure(state: StateVector, mode: str):
    """Collapse per-qubit Z expectations to the circuit output."""
    probs = state.probabilities()
    signs = _z_signs(state.num_qubits)
    if mode == "mean":
        return float(np.mean(probs @ signs))
    if mode == "tensor":
        return float(probs @ np.prod(signs, axis=1))
    if mode == "first":
        return float(probs @ signs[:, 0])
    if mode == "all":
        return probs @ signs
    raise ValueError(f"unknown measurement mode {mode!r}")


def vqc_forward(spec: VqcSpec, params: VqcParams, x):
    enc = encode_angles(spec, params, x)
    state = run_circuit(spec, flat_angles(spec, enc, params.variational_angles))
    return measure(state, spec.measurement_mode)


def vqc_gradient(spec: VqcSpec, params: VqcParams, x, upstream=1.0) -> VqcGradient:
    """Parameter-shift gradient of ``upstream * vqc_forward`` gate by gate.

    For ``measurement_mode="all"`` ``upstream`` is a per-qubit vector.
    """
    x = np.asarray(x, dtype=float)
    enc = encode_angles(spec, params, x)
    angles = flat_angles(spec, enc, params.variational_angles)
    up = np.atleast_1d(np.asarray(upstream, dtype=float))
    dangles = np.zeros_like(angles)
    for slot in range(angles.size):
        plus = angles.copy()
        minus = angles.copy()
        plus[slot] += SHIFT
        minus[slot] -= SHIFT
        fp = np.atleast_1d(measure(run_circuit(spec, plus), spec.measurement_mode))
        fm = np.atleast_1d(measure(run_circuit(spec, minus), spec.measurement_mode))
        dangles[slot] = float(up @ (fp - fm)) / 2
    n_enc = spec.num_encoding_angles
    denc = dangles[:n_enc].reshape(spec.num_encoding_layers, spec.num_qubits)
    return VqcGradient(
        encoding_weights=denc[:, :, None] * x[None, None, :],
        encoding_bias=denc.copy(),
        variational_angles=dangles[n_enc:].reshape(spec.variational_depth, spec.num_qubits, 3),
        input=np.einsum("mq,mqi->i", denc, params.encoding_weights),
    )


# --------------------------------------------------------------------------
# Batched engine


@lru_cache(maxsize=256)
def _path(spec: str, shapes: tuple) -> list:
    return np.einsum_path(spec, *(np.empty(sh) for sh in shapes), optimize="greedy")[0]


def _einsum(spec: str, *operands) -> np.ndarray:
    """``np.einsum`` with the contraction order planned once per spec and shapes."""
    return np.einsum(spec, *operands, optimize=_path(spec, tuple(o.shape for o in operands)))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("QRNN_THREADS", "1")))
    except ValueError:
        return 1


def _rotate(axis: str, angle: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Apply R_axis(angle) to single-qubit states ``vec`` (..., 2)."""
    c = np.cos(angle / 2)
    s = np.sin(angle / 2)
    a, b = vec[..., 0], vec[..., 1]
    out = np.empty(np.broadcast_shapes(angle.shape + (2,), vec.shape), dtype=complex)
    if axis == "X":
        out[..., 0] = c * a - 1j * s * b
        out[..., 1] = c * b - 1j * s * a
    elif axis == "Y":
        out[..., 0] = c * a - s * b
        out[..., 1] = s * a + c * b
    else:
        out[..., 0] = (c - 1j * s) * a
        out[..., 1] = (c + 1j * s) * b
    return out


def product_qubits(enc_angles: np.ndarray) -> np.ndarray:
    """Single-qubit states after the encoding layers.

    ``enc_angles`` has shape (..., M, n); returns (..., n, 2) complex.
    """
    vec = np.array([1.0 + 0j, 0.0])
    for m in range(enc_angles.shape[-2]):
        vec = _rotate(encoding_axis(m), enc_angles[..., m, :], vec)
    return vec


def _reduced_operator(qvecs: np.ndarray, ops: np.ndarray, q: int) -> np.ndarray:
    """Contract every qubit except ``q`` of the product state into the observables.

    ``qvecs`` (B, C, n, 2), ``ops`` (C, n_obs, d, d) -> (B, C, n_obs, 2, 2).
    """
    B, C, n, _ = qvecs.shape
    n_obs = ops.shape[1]
    env = kron_qubits(np.delete(qvecs, q, axis=2)) if n > 1 else np.ones((B, C, 1), dtype=complex)
    e = env.shape[-1]
    # split each index into (qubits before q, qubit q, qubits after q) and move q last
    lo, hi = 1 << q, 1 << (n - q - 1)
    t = ops.reshape(C, n_obs, lo, 2, hi, lo, 2, hi).transpose(0, 2, 4, 1, 5, 7, 3, 6)
    t = t.reshape(C, e, n_obs * e * 4)
    left = np.matmul(env.conj().transpose(1, 0, 2), t).reshape(C, B, n_obs, e, 2, 2)
    return np.einsum("cboyij,bcy->bcoij", left, env)


def kron_qubits(qvecs: np.ndarray) -> np.ndarray:
    """(..., n, 2) single-qubit states -> (..., 2**n) product state, qubit 0 most significant."""
    n = qvecs.shape[-2]
    psi = qvecs[..., 0, :]
    for q in range(1, n):
        psi = (psi[..., :, None] * qvecs[..., q, None, :]).reshape(psi.shape[:-1] + (-1,))
    return psi


def variational_unitaries(var_angles: np.ndarray) -> np.ndarray:
    """Unitary of the variational blocks, (..., D, n, 3) -> (..., 2**n, 2**n)."""
    lead = var_angles.shape[:-3]
    D, n, _ = var_angles.shape[-3:]
    dim = 1 << n
    # rows of `cols` are the images of basis vectors: cols[..., j, :] = U e_j
    cols = np.broadcast_to(np.eye(dim, dtype=complex), lead + (dim, dim)).copy()
    for d in range(D):
        for c, t in cnot_ring(n):
            cols = cols[..., _cnot_permutation(n, c, t)]
        for q in range(n):
            for a, axis in enumerate(AXES):
                mat = rotation_matrix(axis, var_angles[..., d, q, a])[..., None, :, :]
                cols = _apply_1q(cols, n, q, mat)
    return np.swapaxes(cols, -1, -2)


def observables(num_qubits: int, mode: str) -> np.ndarray:
    """Diagonals of the measured observables, shape (n_obs, 2**n)."""
    signs = _z_signs(num_qubits)
    if mode == "mean":
        return signs.mean(axis=1)[None, :]
    if mode == "tensor":
        return np.prod(signs, axis=1)[None, :]
    if mode == "first":
        return signs[:, 0][None, :]
    if mode == "all":
        return signs.T.copy()
    raise ValueError(f"unknown measurement mode {mode!r}")


def folded_observables(unitaries: np.ndarray, obs_diag: np.ndarray) -> np.ndarray:
    """``U^dagger diag(o) U`` for every observable: (..., d, d) x (n_obs, d) -> (..., n_obs, d, d)."""
    return _einsum("...ki,ok,...kj->...oij", unitaries.conj(), obs_diag, unitaries)


def _quadratic(psi: np.ndarray, ops: np.ndarray) -> np.ndarray:
    # psi (B, C, d); ops (C, n_obs, d, d) -> (B, C, n_obs)
    C, n_obs, d, _ = ops.shape
    rows = ops.reshape(C, n_obs * d, d).transpose(0, 2, 1)

    def run(chunk):
        # phi[c, b, o, i] = sum_j ops[c, o, i, j] psi[b, c, j], one matmul per circuit
        phi = np.matmul(chunk.transpose(1, 0, 2), rows).reshape(C, -1, n_obs, d)
        return np.einsum("cboi,bci->bco", phi, chunk.conj()).real

    threads = _threads()
    if threads == 1 or psi.shape[0] < 2 * threads:
        return run(psi)
    chunks = np.array_split(psi, threads, axis=0)
    with ThreadPoolExecutor(threads) as pool:
        return np.concatenate(list(pool.map(run, chunks)), axis=0)


def batched_forward(enc_angles: np.ndarray, var_angles: np.ndarray, mode: str):
    """Evaluate ``C`` circuit instances on ``B`` samples.

    ``enc_angles`` (B, C, M, n), ``var_angles`` (C, D, n, 3).
    Returns outputs (B, C, n_obs) and a cache for :func:`batched_backward`.
    """
    n = enc_angles.shape[-1]
    qvecs = product_qubits(enc_angles)
    psi = kron_qubits(qvecs)
    obs = observables(n, mode)
    ops = folded_observables(variational_unitaries(var_angles), obs)
    out = _quadratic(psi, ops)
    return out, (enc_angles, var_angles, qvecs, psi, ops, obs)


def batched_backward(cache, upstream: np.ndarray):
    """Parameter-shift gradients for :func:`batched_forward`.

    ``upstream`` has the shape of the forward output. Returns gradients for
    ``enc_angles`` (B, C, M, n) and ``var_angles`` (C, D, n, 3).
    """
    enc_angles, var_angles, qvecs, psi, ops, obs = cache
    B, C, M, n = enc_angles.shape
    D = var_angles.shape[1]

    # Every qubit's encoding only touches that qubit of the product state, so
    # its shifted expectations come from the 2x2 operator left after
    # contracting the other qubits. All (sign, layer) shifts at once:
    red = np.stack([_reduced_operator(qvecs, ops, q) for q in range(n)], axis=2)  # (B, C, n, o, 2, 2)
    shifts = np.zeros((2, M, 1, 1, M, 1))
    for m in range(M):
        shifts[0, m, 0, 0, m] = SHIFT
        shifts[1, m, 0, 0, m] = -SHIFT
    v = product_qubits(enc_angles[None, None] + shifts)  # (2, M, B, C, n, 2)
    w = np.sum(red * v[..., None, None, :], axis=-1)  # (2, M, B, C, n, o, 2)
    f = np.sum(v.conj()[..., None, :] * w, axis=-1).real
    g_enc = _einsum("mbcqo,bco->bcmq", (f[0] - f[1]) / 2, upstream)

    # rho[c, o] = sum_b upstream[b, c, o] |psi_bc><psi_bc|
    rho = _einsum("bco,bci,bcj->coij", upstream, psi, psi.conj())
    P = D * n * 3
    flat = var_angles.reshape(C, P)
    shifts = np.zeros((2, P, P))
    shifts[0] = np.eye(P) * SHIFT
    shifts[1] = -np.eye(P) * SHIFT
    ang = flat[:, None, None, :] + shifts[None]  # (C, 2, P, P)
    U = variational_unitaries(ang.reshape(C, 2, P, D, n, 3))
    shifted_ops = folded_observables(U, obs)  # (C, 2, P, n_obs, d, d)
    delta = (shifted_ops[:, 0] - shifted_ops[:, 1]) / 2
    g_var = _einsum("cpoij,coji->cp", delta, rho).real
    return g_enc, g_var.reshape(var_angles.shape)
