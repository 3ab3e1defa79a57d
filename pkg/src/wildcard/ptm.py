"""Transfer-matrix simulation of single-qubit (and leaky qutrit) channels.

States, measurement effects, and channels are all stored as real vectors or
matrices over a Hermitian operator basis with the identity first: the Pauli
basis {I, X, Y, Z} for qubits and {I, lambda_1..lambda_8} (Gell-Mann) for
qutrits.  A density operator rho is represented by the coefficient vector
c_i = Tr[B_i rho], so c_0 == 1 for every normalized state, and a
trace-preserving channel always has first transfer-matrix row (1, 0, ..., 0).
Effects live in the dual convention e_i = Tr[E B_i] / Tr[B_i B_i], which makes
outcome probabilities plain dot products e . c.

Composition convention (fixed package-wide): circuits are time ordered left
to right, so ``compose(a, b)`` means "apply a, then b" and its matrix is
``b.matrix @ a.matrix``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Negative probabilities within this tolerance are clipped silently;
# anything worse is clipped too but logged as a model-physicality warning.
PROB_CLIP = 1e-12
TP_ATOL = 1e-12


class UnknownGateError(KeyError):
    """A circuit referenced a gate label the gate set does not define."""


class DimensionMismatchError(ValueError):
    """Operands live on different Hilbert-space dimensions."""


# ---------------------------------------------------------------------------
# Operator bases
# ---------------------------------------------------------------------------

def _pauli_matrices() -> np.ndarray:
    i2 = np.eye(2, dtype=complex)
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    return np.stack([i2, sx, sy, sz])


def _gellmann_matrices() -> np.ndarray:
    """Identity plus the eight Gell-Mann matrices (all Hermitian)."""
    l = [np.eye(3, dtype=complex)]
    for a, b in [(0, 1), (0, 2), (1, 2)]:
        m = np.zeros((3, 3), dtype=complex)
        m[a, b] = m[b, a] = 1
        l.append(m)
        m = np.zeros((3, 3), dtype=complex)
        m[a, b] = -1j
        m[b, a] = 1j
        l.append(m)
    d1 = np.diag([1.0, -1.0, 0.0]).astype(complex)
    d2 = np.diag([1.0, 1.0, -2.0]).astype(complex) / np.sqrt(3.0)
    l.append(d1)
    l.append(d2)
    # Order: I, (01 pair), (02 pair), (12 pair), diag1, diag2
    return np.stack(l)


class Basis:
    """Hermitian operator basis with the identity first."""

    def __init__(self, name: str, matrices: np.ndarray):
        self.name = name
        self.matrices = matrices
        self.dim = matrices.shape[1]
        self.size = matrices.shape[0]
        # Tr[B_i B_j] = norms[i] delta_ij for these bases
        self.norms = np.real(np.einsum("kij,kji->k", matrices, matrices))
        self.matrices.setflags(write=False)
        self.norms.setflags(write=False)

    def state_coeffs(self, rho: np.ndarray) -> np.ndarray:
        """Coefficients c_i = Tr[B_i rho]; c_0 = Tr[rho]."""
        return np.real(np.einsum("kij,ji->k", self.matrices, rho))

    def effect_coeffs(self, op: np.ndarray) -> np.ndarray:
        """Dual coefficients e_i = Tr[op B_i] / Tr[B_i B_i]."""
        return np.real(np.einsum("kij,ji->k", self.matrices, op)) / self.norms

    def operator_from_state(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("k,kij->ij", coeffs / self.norms, self.matrices)

    def operator_from_effect(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("k,kij->ij", coeffs, self.matrices)


_BASES = {
    2: Basis("pauli", _pauli_matrices()),
    3: Basis("gellmann", _gellmann_matrices()),
}
_BASIS_NAMES = {2: "pauli", 3: "gellmann"}


def basis_for_dim(dim: int) -> Basis:
    try:
        return _BASES[dim]
    except KeyError:
        raise DimensionMismatchError(f"unsupported Hilbert-space dimension {dim}")


# ---------------------------------------------------------------------------
# Core value types
# ---------------------------------------------------------------------------

def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SuperOp:
    """A channel as a real matrix on basis-coefficient vectors."""

    matrix: np.ndarray
    dim: int

    def __post_init__(self):
        basis = basis_for_dim(self.dim)
        m = _readonly(self.matrix)
        if m.shape != (basis.size, basis.size):
            raise DimensionMismatchError(
                f"matrix shape {m.shape} does not match dim {self.dim}")
        object.__setattr__(self, "matrix", m)

    def is_trace_preserving(self, atol: float = TP_ATOL) -> bool:
        row = np.zeros(self.matrix.shape[0])
        row[0] = 1.0
        return bool(np.allclose(self.matrix[0], row, atol=atol, rtol=0.0))

    def apply(self, state: "StateVec") -> "StateVec":
        if state.dim != self.dim:
            raise DimensionMismatchError("state/channel dimension mismatch")
        return StateVec(self.matrix @ state.coeffs, self.dim)


@dataclass(frozen=True)
class StateVec:
    """A density operator as its basis-coefficient vector (c_0 = trace)."""

    coeffs: np.ndarray
    dim: int

    def __post_init__(self):
        c = _readonly(self.coeffs)
        if c.shape != (basis_for_dim(self.dim).size,):
            raise DimensionMismatchError("coefficient length does not match dim")
        object.__setattr__(self, "coeffs", c)

    def density_matrix(self) -> np.ndarray:
        return basis_for_dim(self.dim).operator_from_state(self.coeffs)

    def is_physical(self, tol: float = 1e-9) -> bool:
        if abs(self.coeffs[0] - 1.0) > tol:
            return False
        evals = np.linalg.eigvalsh(self.density_matrix())
        return bool(evals.min() >= -tol)


@dataclass(frozen=True)
class Effect:
    """A POVM element in the dual-coefficient convention (p = e . c)."""

    coeffs: np.ndarray
    dim: int

    def __post_init__(self):
        c = _readonly(self.coeffs)
        if c.shape != (basis_for_dim(self.dim).size,):
            raise DimensionMismatchError("coefficient length does not match dim")
        object.__setattr__(self, "coeffs", c)

    def operator(self) -> np.ndarray:
        return basis_for_dim(self.dim).operator_from_effect(self.coeffs)

    def probability(self, state: StateVec) -> float:
        if state.dim != self.dim:
            raise DimensionMismatchError("state/effect dimension mismatch")
        return float(self.coeffs @ state.coeffs)


def state_from_density(rho: np.ndarray) -> StateVec:
    dim = rho.shape[0]
    return StateVec(basis_for_dim(dim).state_coeffs(rho), dim)


def effect_from_operator(op: np.ndarray) -> Effect:
    dim = op.shape[0]
    return Effect(basis_for_dim(dim).effect_coeffs(op), dim)


def prep_zero(dim: int = 2) -> StateVec:
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    return state_from_density(rho)


def povm_z(dim: int = 2) -> dict[str, Effect]:
    """Computational-basis readout.

    For the qutrit the leaked level |2> is detected as outcome "0", so the
    "0" effect is |0><0| + |2><2|.
    """
    if dim == 2:
        e0 = np.diag([1.0, 0.0]).astype(complex)
        e1 = np.diag([0.0, 1.0]).astype(complex)
    elif dim == 3:
        e0 = np.diag([1.0, 0.0, 1.0]).astype(complex)
        e1 = np.diag([0.0, 1.0, 0.0]).astype(complex)
    else:
        raise DimensionMismatchError(f"unsupported dimension {dim}")
    return {"0": effect_from_operator(e0), "1": effect_from_operator(e1)}


# ---------------------------------------------------------------------------
# Channel constructors
# ---------------------------------------------------------------------------

def superop_from_map(apply_fn: Callable[[np.ndarray], np.ndarray], dim: int) -> SuperOp:
    """Build the transfer matrix of a linear map on density operators."""
    basis = basis_for_dim(dim)
    cols = []
    for j in range(basis.size):
        out = apply_fn(basis.matrices[j])
        cols.append(basis.state_coeffs(out) / basis.norms[j])
    return SuperOp(np.stack(cols, axis=1), dim)


def superop_from_unitary(u: np.ndarray) -> SuperOp:
    dim = u.shape[0]
    return superop_from_map(lambda x: u @ x @ u.conj().T, dim)


def superop_from_kraus(kraus_ops: Iterable[np.ndarray], dim: int) -> SuperOp:
    ops = list(kraus_ops)
    return superop_from_map(
        lambda x: sum(k @ x @ k.conj().T for k in ops), dim)


def identity_superop(dim: int = 2) -> SuperOp:
    return SuperOp(np.eye(basis_for_dim(dim).size), dim)


def compose(a: SuperOp, b: SuperOp) -> SuperOp:
    """The channel "apply a, then b" (time order left to right)."""
    if a.dim != b.dim:
        raise DimensionMismatchError(
            f"cannot compose channels of dimension {a.dim} and {b.dim}")
    return SuperOp(b.matrix @ a.matrix, a.dim)


def channel_depolarizing(q: float) -> SuperOp:
    """Qubit depolarizing channel rho -> (1-q) rho + q I/2, PTM diag(1, 1-q, 1-q, 1-q).

    q may exceed 1 up to 4/3, where the map stays positive.
    """
    if not 0.0 <= q <= 4.0 / 3.0:
        raise ValueError(f"depolarizing strength {q} outside [0, 4/3]")
    return SuperOp(np.diag([1.0, 1.0 - q, 1.0 - q, 1.0 - q]), 2)


def channel_dephasing(p: float) -> SuperOp:
    """Z-basis dephasing rho -> (1-p) rho + p Z rho Z, PTM diag(1, 1-2p, 1-2p, 1)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"flip probability {p} outside [0, 1]")
    return SuperOp(np.diag([1.0, 1.0 - 2.0 * p, 1.0 - 2.0 * p, 1.0]), 2)


_PAULI_BY_AXIS = {"X": 1, "Y": 2, "Z": 3}


def channel_rotation(axis: str, angle: float) -> SuperOp:
    """Unitary rotation exp(-i * angle * P_axis / 2) as a transfer matrix."""
    try:
        idx = _PAULI_BY_AXIS[axis.upper()]
    except KeyError:
        raise ValueError(f"axis must be one of X, Y, Z, got {axis!r}")
    pauli = _BASES[2].matrices[idx]
    u = np.cos(angle / 2.0) * np.eye(2) - 1j * np.sin(angle / 2.0) * pauli
    return superop_from_unitary(u)


def embed_leakage(g: SuperOp, leak_rate: float) -> SuperOp:
    """Lift a qubit channel to a leaky qutrit channel.

    The qutrit map applies ``g`` on the {|0>, |1>} block and then leaks:

        rho -> (1 - l) G(P rho P) + [l Tr(P rho P) + <2|rho|2>] |2><2|

    with P the projector onto the qubit block.  Coherences between the qubit
    block and |2> are discarded, leakage is one-way, and the trace is
    preserved exactly.
    """
    if g.dim != 2:
        raise DimensionMismatchError("embed_leakage expects a qubit channel")
    if not 0.0 <= leak_rate <= 1.0:
        raise ValueError(f"leak rate {leak_rate} outside [0, 1]")
    qubit_basis = _BASES[2]

    def apply_fn(x: np.ndarray) -> np.ndarray:
        block = x[:2, :2]
        coeffs = qubit_basis.state_coeffs(block)
        out_block = qubit_basis.operator_from_state(g.matrix @ coeffs)
        pop2 = leak_rate * np.trace(block) + x[2, 2]
        out = np.zeros((3, 3), dtype=complex)
        out[:2, :2] = (1.0 - leak_rate) * out_block
        out[2, 2] = pop2
        return out

    return superop_from_map(apply_fn, 3)


# ---------------------------------------------------------------------------
# Gate sets and circuit evaluation
# ---------------------------------------------------------------------------

@dataclass
class GateSet:
    """Labelled gates plus preparation and POVM, all on one dimension.

    Treated as immutable after construction; all contained arrays are
    read-only, so gate sets can be shared freely across threads.
    """

    gates: dict[str, SuperOp]
    prep: StateVec
    povm: dict[str, Effect]
    dim: int = 2

    def __post_init__(self):
        for label, g in self.gates.items():
            if g.dim != self.dim:
                raise DimensionMismatchError(f"gate {label} has dim {g.dim}, expected {self.dim}")
        if self.prep.dim != self.dim:
            raise DimensionMismatchError("prep dimension mismatch")
        for lab, e in self.povm.items():
            if e.dim != self.dim:
                raise DimensionMismatchError(f"effect {lab} dimension mismatch")

    @property
    def outcomes(self) -> tuple[str, ...]:
        return tuple(self.povm.keys())

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.gates.keys())

    def gate(self, label: str) -> SuperOp:
        try:
            return self.gates[label]
        except KeyError:
            raise UnknownGateError(label)

    def to_doc(self) -> dict:
        """Plain-JSON document: basis, dim, prep/povm vectors, row-major gate matrices."""
        return {
            "basis": _BASIS_NAMES[self.dim],
            "dim": self.dim,
            "prep": self.prep.coeffs.tolist(),
            "povm": {lab: e.coeffs.tolist() for lab, e in self.povm.items()},
            "gates": {lab: g.matrix.tolist() for lab, g in self.gates.items()},
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "GateSet":
        dim = int(doc["dim"])
        expected = _BASIS_NAMES.get(dim)
        if doc.get("basis") != expected:
            raise ValueError(f"basis {doc.get('basis')!r} does not match dim {dim}")
        gates = {lab: SuperOp(np.array(m, dtype=float), dim)
                 for lab, m in doc["gates"].items()}
        prep = StateVec(np.array(doc["prep"], dtype=float), dim)
        povm = {lab: Effect(np.array(v, dtype=float), dim)
                for lab, v in doc["povm"].items()}
        return cls(gates=gates, prep=prep, povm=povm, dim=dim)


def ideal_qubit_gateset(labels: Sequence[str] = ("Gi", "Gx", "Gy", "Gz")) -> GateSet:
    """Ideal gate set over pi/2 rotations: Gi idle, Gx/Gy/Gz quarter turns."""
    available = {
        "Gi": identity_superop(2),
        "Gx": channel_rotation("X", np.pi / 2),
        "Gy": channel_rotation("Y", np.pi / 2),
        "Gz": channel_rotation("Z", np.pi / 2),
    }
    gates = {}
    for lab in labels:
        if lab not in available:
            raise UnknownGateError(lab)
        gates[lab] = available[lab]
    return GateSet(gates=gates, prep=prep_zero(2), povm=povm_z(2), dim=2)


def circuit_probs(gs: GateSet, circuit) -> np.ndarray:
    """Outcome distribution of a circuit under a gate set.

    ``circuit`` may be a Circuit or any sequence of gate labels.  The result
    is clipped at -1e-12 and renormalized; larger negativity is logged as a
    model-physicality warning but is not fatal.
    """
    labels = getattr(circuit, "layers", circuit)
    c = gs.prep.coeffs
    for lab in labels:
        c = gs.gate(lab).matrix @ c
    probs = np.array([e.coeffs @ c for e in gs.povm.values()])
    worst = probs.min()
    if worst < -PROB_CLIP:
        logger.warning(
            "non-physical outcome probability %.3e for circuit %s; clipping",
            worst, ";".join(labels) if labels else "{}")
    probs = np.clip(probs, 0.0, None)
    total = probs.sum()
    if total <= 0.0:
        raise ValueError("all outcome probabilities vanished after clipping")
    return probs / total
