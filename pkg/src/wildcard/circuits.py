"""Circuits, the single-qubit Clifford group, RB sampling, and GST designs.

Circuit text grammar (bit-exact): gate labels joined by ";", e.g.
"Gx;Gy;Gx"; the empty circuit is "{}".
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .ptm import GateSet, SuperOp, channel_rotation, identity_superop, povm_z, prep_zero

EMPTY_CIRCUIT_TEXT = "{}"


def _check_label(label: str) -> str:
    if not label or ";" in label or label == EMPTY_CIRCUIT_TEXT or label.strip() != label:
        raise ValueError(f"invalid gate label {label!r}")
    return label


@dataclass(frozen=True)
class Circuit:
    """An ordered sequence of gate labels (prep/measure are implicit)."""

    layers: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(_check_label(l) for l in self.layers))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def text(self) -> str:
        return ";".join(self.layers) if self.layers else EMPTY_CIRCUIT_TEXT

    def __str__(self) -> str:
        return self.text

    def gate_counts(self) -> Counter:
        return Counter(self.layers)

    def __add__(self, other: "Circuit") -> "Circuit":
        return Circuit(self.layers + other.layers)

    def __mul__(self, reps: int) -> "Circuit":
        if reps < 0:
            raise ValueError("repetition count must be nonnegative")
        return Circuit(self.layers * reps)

    @classmethod
    def from_text(cls, text: str) -> "Circuit":
        if text == EMPTY_CIRCUIT_TEXT:
            return cls(())
        if not text:
            raise ValueError("empty string is not a circuit; use '{}'")
        return cls(tuple(text.split(";")))


# ---------------------------------------------------------------------------
# Single-qubit Clifford group
# ---------------------------------------------------------------------------

class CliffordGroup:
    """The 24 single-qubit Cliffords with composition and inverse tables.

    Elements are labelled "C0".."C23" with C0 the identity; ordering is the
    (deterministic) breadth-first closure of {X90, Y90}.  Each element's
    ideal transfer matrix is a signed permutation of the Pauli axes and is
    stored exactly.
    """

    def __init__(self):
        gens = []
        for axis in ("X", "Y"):
            m = channel_rotation(axis, np.pi / 2).matrix
            gens.append(np.rint(m).astype(np.int64))
        ident = np.eye(4, dtype=np.int64)
        order = [ident]
        index = {ident.tobytes(): 0}
        frontier = [ident]
        while frontier:
            nxt = []
            for m in frontier:
                for g in gens:
                    prod = g @ m  # apply m then g
                    key = prod.tobytes()
                    if key not in index:
                        index[key] = len(order)
                        order.append(prod)
                        nxt.append(prod)
            frontier = nxt
        if len(order) != 24:
            raise RuntimeError(f"Clifford closure produced {len(order)} elements")
        self._matrices = order
        self._index = index
        self.size = len(order)
        self.compose_table = np.empty((self.size, self.size), dtype=np.int64)
        for i, mi in enumerate(order):
            for j, mj in enumerate(order):
                self.compose_table[i, j] = index[(mj @ mi).tobytes()]
        self.inverse_table = np.array(
            [index[m.T.copy().tobytes()] for m in order], dtype=np.int64)

    def label(self, i: int) -> str:
        return f"C{i}"

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.label(i) for i in range(self.size))

    def ptm(self, i: int) -> SuperOp:
        return SuperOp(self._matrices[i].astype(float), 2)

    def compose_indices(self, indices: Iterable[int]) -> int:
        """Index of the product "apply indices[0], then indices[1], ...";"""
        acc = 0
        for idx in indices:
            acc = self.compose_table[acc, idx]
        return int(acc)

    def inverse(self, i: int) -> int:
        return int(self.inverse_table[i])

    def ideal_gateset(self) -> GateSet:
        gates = {self.label(i): self.ptm(i) for i in range(self.size)}
        return GateSet(gates=gates, prep=prep_zero(2), povm=povm_z(2), dim=2)


_GROUP: CliffordGroup | None = None


def clifford_group() -> CliffordGroup:
    """Shared group instance (construction is deterministic)."""
    global _GROUP
    if _GROUP is None:
        _GROUP = CliffordGroup()
    return _GROUP


def sample_rb_circuit(depth: int, seed: int) -> Circuit:
    """Random Clifford sequence of the given depth compiling to the identity.

    depth-1 Cliffords are drawn uniformly and the final gate inverts their
    product, so the ideal net operation is the identity.  The returned depth
    counts all ``depth`` gates, inversion included.
    """
    if depth < 1:
        raise ValueError("RB depth must be >= 1")
    group = clifford_group()
    rng = np.random.default_rng(seed)
    picks = [int(k) for k in rng.integers(0, group.size, size=depth - 1)]
    net = group.compose_indices(picks)
    picks.append(group.inverse(net))
    return Circuit(tuple(group.label(k) for k in picks))


# ---------------------------------------------------------------------------
# Germ-fiducial experiment designs
# ---------------------------------------------------------------------------

DEFAULT_FIDUCIALS = (
    "{}",
    "Gx",
    "Gy",
    "Gx;Gx",
    "Gx;Gx;Gx",
    "Gy;Gy;Gy",
)


@dataclass(frozen=True)
class GstCircuitTag:
    fid_in: str
    germ: str
    power: int
    fid_out: str


@dataclass
class GstDesign:
    """Deduplicated (fid_in, germ^power, fid_out) circuit list with tags."""

    fiducials_in: tuple[Circuit, ...]
    fiducials_out: tuple[Circuit, ...]
    germs: tuple[Circuit, ...]
    depths: tuple[int, ...]
    circuits: tuple[Circuit, ...]
    tags: dict[str, GstCircuitTag]

    def __len__(self) -> int:
        return len(self.circuits)

    def to_rows(self) -> list[dict]:
        rows = []
        for c in self.circuits:
            t = self.tags[c.text]
            rows.append({
                "circuit": c.text,
                "fid_in": t.fid_in,
                "germ": t.germ,
                "power": t.power,
                "fid_out": t.fid_out,
            })
        return rows

    @classmethod
    def from_rows(cls, rows: Sequence[dict]) -> "GstDesign":
        circuits = []
        tags = {}
        germs, fids_in, fids_out, depths = [], [], [], []
        for r in rows:
            c = Circuit.from_text(r["circuit"])
            circuits.append(c)
            tag = GstCircuitTag(r["fid_in"], r["germ"], int(r["power"]), r["fid_out"])
            tags[c.text] = tag
            for seen, val in ((germs, tag.germ), (fids_in, tag.fid_in), (fids_out, tag.fid_out)):
                if val not in seen:
                    seen.append(val)
            d = tag.power * Circuit.from_text(tag.germ).depth
            if d not in depths:
                depths.append(d)
        return cls(
            fiducials_in=tuple(Circuit.from_text(f) for f in fids_in),
            fiducials_out=tuple(Circuit.from_text(f) for f in fids_out),
            germs=tuple(Circuit.from_text(g) for g in germs),
            depths=tuple(sorted(depths)),
            circuits=tuple(circuits),
            tags=tags,
        )


def default_depth_ladder(max_depth: int) -> tuple[int, ...]:
    """Powers of two up to max_depth: 1, 2, 4, ..."""
    depths = []
    d = 1
    while d <= max_depth:
        depths.append(d)
        d *= 2
    return tuple(depths)


def gst_design(
    labels: Sequence[str],
    germs: Sequence[Circuit | str],
    fiducials: Sequence[Circuit | str] | None = None,
    max_depth: int = 64,
    depths: Sequence[int] | None = None,
) -> GstDesign:
    """Enumerate all fid_in + germ^k + fid_out circuits up to a depth ladder.

    For each germ and ladder depth L the repetition count is k = L // len(germ)
    (skipped when zero), so the repeated-germ block never exceeds L.
    Duplicates keep their first tag; ordering is germ-major, then depth, then
    fiducial pair, and is deterministic.
    """
    label_set = set(labels)
    if fiducials is None:
        fiducials = DEFAULT_FIDUCIALS
    fids = tuple(c if isinstance(c, Circuit) else Circuit.from_text(c) for c in fiducials)
    germ_circuits = tuple(c if isinstance(c, Circuit) else Circuit.from_text(c) for c in germs)
    for g in germ_circuits:
        if g.depth == 0:
            raise ValueError("germs must be nonempty circuits")
    for c in fids + germ_circuits:
        missing = set(c.layers) - label_set
        if missing:
            raise ValueError(f"circuit {c.text!r} uses labels outside the gate set: {sorted(missing)}")
    if depths is None:
        depths = default_depth_ladder(max_depth)
    depth_list = tuple(int(d) for d in depths)

    circuits: list[Circuit] = []
    tags: dict[str, GstCircuitTag] = {}
    for germ in germ_circuits:
        for d in depth_list:
            power = d // germ.depth
            if power < 1:
                continue
            block = germ * power
            for fin in fids:
                for fout in fids:
                    c = fin + block + fout
                    if c.text in tags:
                        continue
                    tags[c.text] = GstCircuitTag(fin.text, germ.text, power, fout.text)
                    circuits.append(c)
    return GstDesign(
        fiducials_in=fids,
        fiducials_out=fids,
        germs=germ_circuits,
        depths=depth_list,
        circuits=tuple(circuits),
        tags=tags,
    )
