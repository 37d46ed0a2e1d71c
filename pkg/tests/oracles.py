"""Independent reference implementations used only by the tests.

Nothing here imports the package's numerical code: the oracles rebuild
circuits from dense Kronecker products, factor matrices with one-sided
Jacobi rotations and enumerate sensor subsets exhaustively.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

I2 = np.eye(2, dtype=complex)
PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def dense_rotation(axis, angle):
    # exp(-i a/2 P) = cos(a/2) I - i sin(a/2) P, since P^2 = I
    return math.cos(angle / 2) * I2 - 1j * math.sin(angle / 2) * PAULI[axis]


def embed(op, qubit, n):
    """Single-qubit ``op`` on ``qubit`` of an n-qubit register, qubit 0 leftmost."""
    out = np.array([[1.0 + 0j]])
    for q in range(n):
        out = np.kron(out, op if q == qubit else I2)
    return out


def dense_cnot(control, target, n):
    P0 = np.array([[1, 0], [0, 0]], dtype=complex)
    P1 = np.array([[0, 0], [0, 1]], dtype=complex)
    return embed(P0, control, n) + embed(P1, control, n) @ embed(PAULI["X"], target, n)


def ring(n):
    if n == 1:
        return []
    if n == 2:
        return [(0, 1), (1, 0)]
    return [(q, (q + 1) % n) for q in range(n)]


def dense_vqc_unitary(n, enc_angles, var_angles):
    """enc_angles (M, n); var_angles (D, n, 3)."""
    U = np.eye(2 ** n, dtype=complex)
    for m, layer in enumerate(enc_angles):
        axis = "XYZ"[m % 3]
        for q in range(n):
            U = embed(dense_rotation(axis, layer[q]), q, n) @ U
    for block in var_angles:
        for c, t in ring(n):
            U = dense_cnot(c, t, n) @ U
        for q in range(n):
            for a, axis in enumerate("XYZ"):
                U = embed(dense_rotation(axis, block[q, a]), q, n) @ U
    return U


def dense_vqc_output(n, W, b, var, x, mode="mean"):
    enc = np.einsum("mqi,i->mq", W, x) + b
    psi = dense_vqc_unitary(n, enc, var)[:, 0]
    zs = np.array([np.real(psi.conj() @ embed(PAULI["Z"], q, n) @ psi) for q in range(n)])
    if mode == "mean":
        return zs.mean()
    if mode == "first":
        return zs[0]
    if mode == "tensor":
        Zall = np.array([[1.0 + 0j]])
        for _ in range(n):
            Zall = np.kron(Zall, PAULI["Z"])
        return np.real(psi.conj() @ Zall @ psi)
    return zs


# linear algebra ------------------------------------------------------------------


def naive_matmul(W, x):
    out = np.zeros((W.shape[0],))
    for i in range(W.shape[0]):
        acc = 0.0
        for j in range(W.shape[1]):
            acc += W[i, j] * x[j]
        out[i] = acc
    return out


def jacobi_singular_values(A, tol=1e-15, max_sweeps=100):
    """One-sided Jacobi (Hestenes): orthogonalize columns by plane rotations."""
    A = np.array(A, dtype=float)
    if A.shape[0] < A.shape[1]:
        A = A.T.copy()
    n = A.shape[1]
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = A[:, p] @ A[:, p]
                beta = A[:, q] @ A[:, q]
                gamma = A[:, p] @ A[:, q]
                if abs(gamma) <= tol * math.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                off = max(off, abs(gamma) / math.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1 + zeta * zeta))
                c = 1 / math.sqrt(1 + t * t)
                s = c * t
                ap = A[:, p].copy()
                A[:, p] = c * ap - s * A[:, q]
                A[:, q] = s * ap + c * A[:, q]
        if off < tol:
            break
    return np.sort(np.linalg.norm(A, axis=0))[::-1]


def best_subset(modes, k):
    """Exhaustive maximum of log det(U_S U_S^T) over all k-subsets of rows."""
    best, arg = -np.inf, None
    for S in itertools.combinations(range(modes.shape[0]), k):
        rows = modes[list(S)]
        d = np.linalg.det(rows @ rows.T)
        val = math.log(d) if d > 0 else -np.inf
        if val > best:
            best, arg = val, S
    return best, arg


def random_orthonormal(rng, n, r):
    q, _ = np.linalg.qr(rng.normal(size=(n, r)))
    return q


# recurrent cells, straight from the update equations --------------------------------


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_transcription(gf, gi, gc, go, c_prev):
    f = sig(gf)
    i = sig(gi)
    c_tilde = np.tanh(gc)
    o = sig(go)
    c = f * c_prev + i * c_tilde
    h = o * np.tanh(c)
    return h, c


def gru_transcription(gr, gz, h_prev, candidate_fn, x):
    r = sig(gr)
    z = sig(gz)
    v_tilde = np.concatenate([x, r * h_prev])
    h_tilde = np.tanh(candidate_fn(v_tilde))
    return (1 - z) * h_prev + z * h_tilde


def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g
