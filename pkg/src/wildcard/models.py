"""Error models: maps from circuits to outcome distributions.

An :class:`ErrorModel` wraps a :class:`~wildcard.ptm.GateSet` and caches
per-circuit predictions.  Concrete constructors cover the model kinds used
throughout the package: the ideal "target" model, RB-fitted depolarizing
models, arbitrary process-matrix models built from per-gate error parameters,
and leaky qutrit models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ptm
from .ptm import GateSet, SuperOp, compose

_AXIS_OF_LABEL = {"Gx": "X", "Gy": "Y", "Gz": "Z"}

KINDS = ("target", "depolarizing", "process-matrix", "leakage")


class ErrorModel:
    """Deterministic circuit -> distribution map backed by a gate set.

    Predictions are cached by canonical circuit text.  The cache is a plain
    dict written under CPython's GIL (single atomic insert per circuit), so
    concurrent readers are safe; entries are immutable arrays.
    """

    def __init__(self, kind: str, gateset: GateSet, metadata: dict | None = None):
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.gateset = gateset
        self.metadata = dict(metadata or {})
        self._cache: dict[str, np.ndarray] = {}

    @property
    def outcomes(self) -> tuple[str, ...]:
        return self.gateset.outcomes

    @property
    def labels(self) -> tuple[str, ...]:
        return self.gateset.labels

    def predict(self, circuit) -> np.ndarray:
        """Outcome distribution for a circuit (cached, read-only array)."""
        key = getattr(circuit, "text", None)
        if key is None:
            key = ";".join(circuit) if circuit else "{}"
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        probs = ptm.circuit_probs(self.gateset, circuit)
        probs.setflags(write=False)
        self._cache[key] = probs
        return probs

    def to_doc(self) -> dict:
        doc = self.gateset.to_doc()
        doc["kind"] = self.kind
        doc["metadata"] = self.metadata
        return doc

    @classmethod
    def from_doc(cls, doc) -> "ErrorModel":
        gs = GateSet.from_doc(doc)
        return cls(kind=doc.get("kind", "process-matrix"), gateset=gs,
                   metadata=doc.get("metadata", {}))


def predict(model: ErrorModel, circuit) -> np.ndarray:
    return model.predict(circuit)


def target_model(gateset: GateSet) -> ErrorModel:
    return ErrorModel("target", gateset, {"construction": "target"})


def build_depolarizing_model(
    gateset_ideal: GateSet,
    r: float,
    spam: tuple[float, float] | None = None,
) -> ErrorModel:
    """Uniform-depolarization model with per-gate error rate ``r``.

    Every gate is the ideal transfer matrix followed by diag(1, eta, eta, eta)
    with eta = 1 - 2r.  ``spam`` optionally carries RB-fit intercept/amplitude
    (A, B); the POVM is then (A, 0, 0, B) so depth-d identity-compiling
    sequences predict success A + B eta^d while other circuits still get full
    distributions.  With spam=None the curve is 1/2 + eta^d / 2.
    """
    if not 0.0 <= r <= 0.5:
        raise ValueError(f"RB error rate {r} outside [0, 0.5]")
    eta = 1.0 - 2.0 * r
    depol = ptm.channel_depolarizing(1.0 - eta)
    gates = {lab: compose(g, depol) for lab, g in gateset_ideal.gates.items()}
    prep = gateset_ideal.prep
    povm = gateset_ideal.povm
    meta = {"construction": "depolarizing", "r": r, "eta": eta}
    if spam is not None:
        a, b = float(spam[0]), float(spam[1])
        povm = {
            "0": ptm.Effect(np.array([a, 0.0, 0.0, b]), 2),
            "1": ptm.Effect(np.array([1.0 - a, 0.0, 0.0, -b]), 2),
        }
        meta["spam"] = [a, b]
    gs = GateSet(gates=gates, prep=prep, povm=povm, dim=gateset_ideal.dim)
    return ErrorModel("depolarizing", gs, meta)


# ---------------------------------------------------------------------------
# Parameterized per-gate error specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateError:
    """Error parameters for one gate, applied after its ideal action."""

    depol: float = 0.0
    rot_angle: float = 0.0   # extra rotation about the gate's own axis, radians
    dephasing: float = 0.0
    leakage: float = 0.0


@dataclass(frozen=True)
class ModelSpec:
    """Per-gate and SPAM error parameters defining a simulated processor."""

    gate_errors: dict[str, GateError]
    spam_depol: float = 0.0
    seed: int | None = None
    ranges: dict | None = None

    def __post_init__(self):
        for lab, ge in self.gate_errors.items():
            if not 0.0 <= ge.depol <= 1.0:
                raise ValueError(f"{lab}: depolarizing strength {ge.depol} outside [0, 1]")
            if not 0.0 <= ge.dephasing <= 1.0:
                raise ValueError(f"{lab}: dephasing probability {ge.dephasing} outside [0, 1]")
            if not 0.0 <= ge.leakage <= 1.0:
                raise ValueError(f"{lab}: leakage rate {ge.leakage} outside [0, 1]")
        if not 0.0 <= self.spam_depol <= 1.0:
            raise ValueError(f"SPAM depolarization {self.spam_depol} outside [0, 1]")

    @property
    def has_leakage(self) -> bool:
        return any(ge.leakage > 0 for ge in self.gate_errors.values())

    def to_doc(self) -> dict:
        return {
            "gate_errors": {
                lab: {"depol": ge.depol, "rot_angle": ge.rot_angle,
                      "dephasing": ge.dephasing, "leakage": ge.leakage}
                for lab, ge in self.gate_errors.items()
            },
            "spam_depol": self.spam_depol,
            "seed": self.seed,
            "ranges": self.ranges,
        }

    @classmethod
    def from_doc(cls, doc) -> "ModelSpec":
        return cls(
            gate_errors={lab: GateError(**ge) for lab, ge in doc["gate_errors"].items()},
            spam_depol=doc.get("spam_depol", 0.0),
            seed=doc.get("seed"),
            ranges=doc.get("ranges"),
        )


DEFAULT_RANGES = {
    "depol": (0.0, 0.02),
    "rot_angle": (-0.05, 0.05),
    "dephasing": (0.0, 0.0),
    "spam_depol": (0.0, 0.0),
}


def random_error_modelspec(
    seed: int,
    labels=("Gx", "Gy"),
    ranges: dict | None = None,
) -> ModelSpec:
    """Draw independent per-gate error parameters, reproducible under seed."""
    r = dict(DEFAULT_RANGES)
    if ranges:
        r.update(ranges)
    rng = np.random.default_rng(seed)
    gate_errors = {}
    for lab in labels:
        gate_errors[lab] = GateError(
            depol=float(rng.uniform(*r["depol"])),
            rot_angle=float(rng.uniform(*r["rot_angle"])),
            dephasing=float(rng.uniform(*r["dephasing"])),
        )
    spam = float(rng.uniform(*r["spam_depol"]))
    return ModelSpec(gate_errors=gate_errors, spam_depol=spam, seed=seed,
                     ranges={k: list(v) for k, v in r.items()})


def _noisy_qubit_gate(label: str, ideal: SuperOp, err: GateError) -> SuperOp:
    g = ideal
    axis = _AXIS_OF_LABEL.get(label)
    if err.rot_angle != 0.0 and axis is not None:
        g = compose(g, ptm.channel_rotation(axis, err.rot_angle))
    if err.dephasing != 0.0:
        g = compose(g, ptm.channel_dephasing(err.dephasing))
    if err.depol != 0.0:
        g = compose(g, ptm.channel_depolarizing(err.depol))
    return g


def build_model(spec: ModelSpec, labels=None) -> ErrorModel:
    """Materialize a ModelSpec as a process-matrix or leaky-qutrit model.

    Gates pick up rotation error about their own axis (the idle has none),
    then dephasing, then depolarization; leakage, when present on any gate,
    lifts the whole gate set to the qutrit representation with leaked
    population detected as outcome "0".  SPAM depolarization shrinks the
    prepared state.
    """
    if labels is None:
        labels = tuple(spec.gate_errors.keys())
    ideal = ptm.ideal_qubit_gateset(labels)
    noisy = {}
    for lab in labels:
        err = spec.gate_errors.get(lab, GateError())
        noisy[lab] = _noisy_qubit_gate(lab, ideal.gates[lab], err)

    if not spec.has_leakage:
        prep = ideal.prep
        if spec.spam_depol > 0.0:
            prep = ptm.channel_depolarizing(spec.spam_depol).apply(prep)
        gs = GateSet(gates=noisy, prep=prep, povm=ideal.povm, dim=2)
        return ErrorModel("process-matrix", gs, {"construction": "modelspec", "spec": spec.to_doc()})

    gates3 = {}
    for lab in labels:
        err = spec.gate_errors.get(lab, GateError())
        gates3[lab] = ptm.embed_leakage(noisy[lab], err.leakage)
    prep_rho = np.zeros((3, 3), dtype=complex)
    prep_rho[0, 0] = 1.0
    if spec.spam_depol > 0.0:
        s = spec.spam_depol
        prep_rho[0, 0] = 1.0 - s / 2.0
        prep_rho[1, 1] = s / 2.0
    prep = ptm.state_from_density(prep_rho)
    gs = GateSet(gates=gates3, prep=prep, povm=ptm.povm_z(3), dim=3)
    return ErrorModel("leakage", gs, {"construction": "modelspec", "spec": spec.to_doc()})
