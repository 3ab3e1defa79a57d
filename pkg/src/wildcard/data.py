"""Finite-sample datasets: seeded multinomial sampling and JSONL storage.

Dataset file grammar (bit-exact): one JSON record per line,

    {"circuit": "Gx;Gy", "counts": {"0": 512, "1": 488}}

Circuits must be unique; the loader rejects duplicates.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .circuits import Circuit
from .models import ErrorModel


@dataclass
class OutcomeCounts:
    """Observed counts for one circuit."""

    circuit: Circuit
    counts: np.ndarray
    outcomes: tuple[str, ...]

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 1 or len(c) != len(self.outcomes):
            raise ValueError("counts must be one entry per outcome")
        if (c < 0).any():
            raise ValueError("counts must be nonnegative")
        c.setflags(write=False)
        self.counts = c

    @property
    def n_shots(self) -> int:
        return int(self.counts.sum())

    def frequencies(self) -> np.ndarray:
        return frequencies(self)


def frequencies(oc: OutcomeCounts) -> np.ndarray:
    """Empirical distribution counts / N."""
    n = oc.n_shots
    if n < 1:
        raise ValueError("cannot take frequencies of an empty record")
    return oc.counts / n


class DataSet:
    """Counts for a set of unique circuits, with generation provenance."""

    def __init__(self, records: Iterable[OutcomeCounts], provenance: dict | None = None):
        self._records: list[OutcomeCounts] = []
        self._by_text: dict[str, OutcomeCounts] = {}
        for rec in records:
            if rec.circuit.text in self._by_text:
                raise ValueError(f"duplicate circuit {rec.circuit.text!r}")
            self._by_text[rec.circuit.text] = rec
            self._records.append(rec)
        self.provenance = dict(provenance or {})

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, key):
        if isinstance(key, int):
            return self._records[key]
        text = key.text if isinstance(key, Circuit) else key
        return self._by_text[text]

    def __contains__(self, key):
        text = key.text if isinstance(key, Circuit) else key
        return text in self._by_text

    @property
    def circuits(self) -> tuple[Circuit, ...]:
        return tuple(rec.circuit for rec in self._records)


def _child_seed(master_seed: int, circuit_text: str) -> int:
    """Stable per-circuit seed, independent of evaluation order."""
    digest = hashlib.sha256(f"{master_seed}:{circuit_text}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def simulate_counts(model: ErrorModel, circuit: Circuit, n_shots: int, seed: int) -> OutcomeCounts:
    """Multinomial draw from the model's prediction for one circuit.

    The RNG stream is derived from (seed, circuit text), so results do not
    depend on the order in which circuits are sampled.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    probs = model.predict(circuit)
    rng = np.random.default_rng(_child_seed(seed, circuit.text))
    counts = rng.multinomial(n_shots, probs)
    return OutcomeCounts(circuit=circuit, counts=counts, outcomes=model.outcomes)


def simulate_dataset(
    model: ErrorModel,
    circuits: Sequence[Circuit],
    n_shots: int,
    seed: int,
    provenance: dict | None = None,
    aggregate_duplicates: bool = False,
) -> DataSet:
    """Sample every circuit once; order does not affect the draws.

    With ``aggregate_duplicates`` a circuit appearing k times is recorded once
    with k * n_shots shots (randomly sampled circuit lists, e.g. RB, can
    collide -- depth-1 sequences always compile to the identity).
    """
    prov = {"seed": seed, "n_shots": n_shots, "model_kind": model.kind}
    if provenance:
        prov.update(provenance)
    if aggregate_duplicates:
        multiplicity: dict[str, int] = {}
        unique: list[Circuit] = []
        for c in circuits:
            if c.text not in multiplicity:
                multiplicity[c.text] = 0
                unique.append(c)
            multiplicity[c.text] += 1
        return DataSet(
            (simulate_counts(model, c, n_shots * multiplicity[c.text], seed)
             for c in unique),
            provenance=prov,
        )
    return DataSet(
        (simulate_counts(model, c, n_shots, seed) for c in circuits),
        provenance=prov,
    )


def save_dataset(ds: DataSet, path) -> None:
    path = Path(path)
    lines = []
    for rec in ds:
        row = {
            "circuit": rec.circuit.text,
            "counts": {lab: int(n) for lab, n in zip(rec.outcomes, rec.counts)},
        }
        lines.append(json.dumps(row, separators=(", ", ": ")))
    path.write_text("\n".join(lines) + "\n")
    if ds.provenance:
        meta = path.with_suffix(path.suffix + ".meta.json")
        meta.write_text(json.dumps(ds.provenance, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> DataSet:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            circuit = Circuit.from_text(row["circuit"])
            outcomes = tuple(row["counts"].keys())
            counts = np.array([row["counts"][k] for k in outcomes], dtype=np.int64)
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed dataset record: {exc}") from exc
        records.append(OutcomeCounts(circuit=circuit, counts=counts, outcomes=outcomes))
    meta = path.with_suffix(path.suffix + ".meta.json")
    provenance = json.loads(meta.read_text()) if meta.exists() else {}
    return DataSet(records, provenance=provenance)
