"""Worst-case (diamond) distance between channels, and fidelity conversions.

For Pauli channels the half-diamond-norm distance reduces to the total
variation distance between their Pauli probability vectors; the general
single-qubit/qutrit case is handled numerically by maximizing the trace-norm
distinguishability over pure inputs entangled with a reference system of the
same dimension.  The numeric route is validated against the analytic Pauli
formula rather than trusted on its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .ptm import SuperOp, basis_for_dim
from .stats import tvd

_SIMPLEX_ATOL = 1e-9


@dataclass(frozen=True)
class DiamondResult:
    """Half-diamond-norm distance plus optimizer metadata."""

    value: float
    best_input: np.ndarray
    restarts: int
    converged: bool


def pauli_diamond(a, b) -> float:
    """Half-diamond-norm distance between two Pauli channels.

    ``a`` and ``b`` are probability vectors over {I, X, Y, Z} conjugations;
    the distance is their TVD (attained with a maximally entangled input).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for v in (a, b):
        if v.shape != (4,) or v.min() < -_SIMPLEX_ATOL or abs(v.sum() - 1.0) > _SIMPLEX_ATOL:
            raise ValueError(f"{v} is not a distribution over the four Paulis")
    return tvd(a, b)


def pauli_channel(probs) -> SuperOp:
    """PTM of rho -> sum_i p_i P_i rho P_i."""
    p = np.asarray(probs, dtype=float)
    if p.shape != (4,) or p.min() < -_SIMPLEX_ATOL or abs(p.sum() - 1.0) > _SIMPLEX_ATOL:
        raise ValueError("need a probability vector over the four Paulis")
    # conjugation by P_j flips the sign of the two anticommuting axes
    signs = np.array([
        [1, 1, 1, 1],
        [1, 1, -1, -1],
        [1, -1, 1, -1],
        [1, -1, -1, 1],
    ], dtype=float)
    return SuperOp(np.diag(signs.T @ p), 2)


def pauli_probs(channel: SuperOp) -> np.ndarray:
    """Invert a diagonal qubit PTM back to Pauli probabilities."""
    if channel.dim != 2:
        raise ValueError("Pauli decomposition requires a qubit channel")
    m = channel.matrix
    if np.abs(m - np.diag(np.diag(m))).max() > 1e-12:
        raise ValueError("channel is not diagonal in the Pauli basis")
    signs = np.array([
        [1, 1, 1, 1],
        [1, 1, -1, -1],
        [1, -1, 1, -1],
        [1, -1, -1, 1],
    ], dtype=float)
    return np.linalg.solve(signs.T, np.diag(m))


def _action_tensor(delta: np.ndarray, dim: int) -> np.ndarray:
    """S[a,b,i,k] with Delta(|i><k|)[a,b] = S[a,b,i,k], from a PTM difference."""
    basis = basis_for_dim(dim)
    duals = basis.matrices / basis.norms[:, None, None]
    t1 = np.einsum("mab,mn->nab", duals, delta)
    return np.einsum("nab,nki->abik", t1, basis.matrices)


def _max_entangled(dim: int) -> np.ndarray:
    m = np.eye(dim, dtype=complex) / np.sqrt(dim)
    return m.ravel()


class _TraceNormObjective:
    """0.5 ||(Delta x id)(psi psi*)||_1 over unit vectors, with gradient."""

    def __init__(self, delta: np.ndarray, dim: int):
        self.dim = dim
        self.s = _action_tensor(delta, dim)
        self.n = dim * dim

    def _output(self, psi_mat: np.ndarray) -> np.ndarray:
        h = np.einsum("abik,ij,kl->ajbl", self.s, psi_mat, psi_mat.conj())
        h = h.reshape(self.n, self.n)
        return 0.5 * (h + h.conj().T)

    def value(self, psi: np.ndarray) -> float:
        h = self._output(psi.reshape(self.dim, self.dim))
        return 0.5 * float(np.abs(np.linalg.eigvalsh(h)).sum())

    def neg_value_and_grad(self, x: np.ndarray):
        nrm = np.linalg.norm(x)
        u = x / nrm
        psi = (u[: self.n] + 1j * u[self.n:]).reshape(self.dim, self.dim)
        h = self._output(psi)
        evals, vecs = np.linalg.eigh(h)
        val = 0.5 * float(np.abs(evals).sum())
        p = (vecs * np.sign(evals)) @ vecs.conj().T
        p4 = p.reshape(self.dim, self.dim, self.dim, self.dim)
        g = 0.5 * np.einsum("blaj,abik,ij->kl", p4, self.s, psi)
        g_real = np.concatenate([2.0 * g.real.ravel(), 2.0 * g.imag.ravel()])
        # project out the radial direction (objective is scale invariant)
        g_unit = (g_real - (g_real @ u) * u) / nrm
        return -val, -g_unit


def diamond_numeric(e1: SuperOp, e2: SuperOp, restarts: int = 32, seed: int = 0) -> DiamondResult:
    """Half-diamond-norm distance by multistart maximization over pure inputs.

    Both channels must be trace preserving and share a dimension.  The
    maximally entangled input is always among the starts (it alone already
    gives a valid lower bound); additional random restarts only raise the
    maximum.  Non-convergent restarts are kept as lower bounds and flagged.
    """
    if e1.dim != e2.dim:
        raise ValueError("channels live on different dimensions")
    for e in (e1, e2):
        if not e.is_trace_preserving(atol=1e-9):
            raise ValueError("diamond distance requires trace-preserving inputs")
    dim = e1.dim
    delta = e1.matrix - e2.matrix
    if np.abs(delta).max() == 0.0:
        return DiamondResult(0.0, _max_entangled(dim), restarts, True)

    obj = _TraceNormObjective(delta, dim)
    rng = np.random.default_rng(seed)
    n = dim * dim
    starts = [_max_entangled(dim)]
    while len(starts) < max(restarts, 1):
        starts.append(rng.normal(size=n) + 1j * rng.normal(size=n))

    best_val = -np.inf
    best_x = None
    any_converged = False
    for s in starts:
        x0 = np.concatenate([s.real, s.imag])
        x0 /= np.linalg.norm(x0)
        res = optimize.minimize(
            obj.neg_value_and_grad, x0, jac=True, method="L-BFGS-B",
            options={"maxiter": 500, "ftol": 1e-16, "gtol": 1e-12})
        any_converged = any_converged or bool(res.success)
        if -res.fun > best_val:
            best_val = -res.fun
            best_x = res.x / np.linalg.norm(res.x)
    psi = best_x[:n] + 1j * best_x[n:]
    return DiamondResult(
        value=float(best_val), best_input=psi, restarts=len(starts),
        converged=any_converged)


def avg_gate_fidelity(e: SuperOp, u: SuperOp) -> float:
    """Average gate fidelity of channel e to (unitary) reference u.

    F_avg = (d F_pro + 1) / (d + 1) with the process fidelity read off the
    transfer matrices as tr(R_u^T R_e) / d^2.
    """
    if e.dim != u.dim:
        raise ValueError("dimension mismatch")
    for c in (e, u):
        if not c.is_trace_preserving(atol=1e-9):
            raise ValueError("average gate fidelity expects trace-preserving maps")
    d = e.dim
    f_pro = float(np.trace(u.matrix.T @ e.matrix)) / d ** 2
    return (d * f_pro + 1.0) / (d + 1.0)
