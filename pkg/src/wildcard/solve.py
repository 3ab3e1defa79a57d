"""Per-gate wildcard families, the feasible set, and minimal-model selection.

A wildcard family assigns each circuit a TVD budget n(C) . w, where n(C)
counts how often each parameter's gates occur (SPAM counts once per circuit)
and w is a vector of nonnegative per-operation rates.  A vector w is
*feasible* when relaxing every prediction to a ball of radius n(C) . w makes
the two-branch consistency test pass; the feasible set is convex, so a
minimal model is found by linear programming over the per-circuit budget
constraints plus a cutting-plane loop for the aggregate branch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from . import stats
from .circuits import Circuit
from .data import DataSet, frequencies
from .stats import (AGG_REL_TOL, ConsistencyReport, CircuitTestRow,
                    chi2_quantile, min_llr_in_ball, min_tvd_budget,
                    _binary_llr_star, _llr_value)

logger = logging.getLogger(__name__)

SPAM = "SPAM"
_FD_STEP = 1e-7           # central-difference step for aggregate subgradients
_CUT_MAX = 200


class SolverError(RuntimeError):
    """Cutting-plane loop or LP failed to converge; carries the iterate trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class WildcardFamily:
    """Parameter labels plus the gate-label -> parameter assignment.

    ``params`` fixes the coordinate order of wildcard vectors; the SPAM
    parameter contributes one count to every circuit.
    """

    params: tuple[str, ...]
    assignment: Mapping[str, str]
    spam_param: str = SPAM

    def __post_init__(self):
        if self.spam_param not in self.params:
            raise ValueError(f"family must include the SPAM parameter {self.spam_param!r}")
        unknown = set(self.assignment.values()) - set(self.params)
        if unknown:
            raise ValueError(f"assignment targets unknown parameters {sorted(unknown)}")

    @property
    def n_params(self) -> int:
        return len(self.params)

    def counts(self, circuit: Circuit) -> np.ndarray:
        """Occurrence vector n(C); the SPAM entry is always 1."""
        idx = {p: i for i, p in enumerate(self.params)}
        n = np.zeros(len(self.params))
        n[idx[self.spam_param]] = 1.0
        for label, k in circuit.gate_counts().items():
            try:
                n[idx[self.assignment[label]]] += k
            except KeyError:
                raise KeyError(f"gate label {label!r} not covered by the wildcard family")
        return n

    def budget(self, circuit: Circuit, w: np.ndarray) -> float:
        return float(self.counts(circuit) @ w)


def per_gate_family(labels: Sequence[str], tie_gates: bool = False,
                    groups: Mapping[str, str] | None = None) -> WildcardFamily:
    """One parameter per gate label (default), or a single tied "gate" rate.

    ``groups`` overrides the assignment of individual labels to named
    parameters, e.g. to tie subsets of gates together.
    """
    if groups is not None:
        assignment = dict(groups)
        params = (SPAM,) + tuple(dict.fromkeys(assignment.values()))
    elif tie_gates:
        assignment = {lab: "gate" for lab in labels}
        params = (SPAM, "gate")
    else:
        assignment = {lab: lab for lab in labels}
        params = (SPAM,) + tuple(labels)
    return WildcardFamily(params=params, assignment=assignment)


def gate_counts(circuit: Circuit, family: WildcardFamily) -> np.ndarray:
    return family.counts(circuit)


# ---------------------------------------------------------------------------
# Problem assembly
# ---------------------------------------------------------------------------

@dataclass
class _Problem:
    circuits: list[Circuit]
    counts: np.ndarray          # (n_circuits, n_params)
    freqs: list[np.ndarray]
    preds: list[np.ndarray]
    n_shots: np.ndarray
    llr_point: np.ndarray
    thresholds: np.ndarray
    budgets: np.ndarray         # t_C
    agg_threshold: float
    binary: bool

    def llr_star(self, radii: np.ndarray) -> np.ndarray:
        radii = np.clip(radii, 0.0, 1.0)
        if self.binary:
            out = np.empty(len(self.circuits))
            for i, (f, p) in enumerate(zip(self.freqs, self.preds)):
                out[i] = _binary_llr_star(f[0], p[0], radii[i], self.n_shots[i])
            return out
        return np.array([
            min_llr_in_ball(f, p, r, n)
            for f, p, r, n in zip(self.freqs, self.preds, radii, self.n_shots)])

    def evaluate(self, w: np.ndarray):
        """(per-circuit lambda*, aggregate, branch verdicts) at wildcard w."""
        lam = self.llr_star(self.counts @ w)
        agg = float(lam.sum())
        circuit_ok = bool(np.all(lam <= self.thresholds))
        agg_ok = agg <= self.agg_threshold * (1.0 + AGG_REL_TOL)
        return lam, agg, circuit_ok, agg_ok


def _build_problem(predictions, data: DataSet, family: WildcardFamily,
                   alpha: float) -> _Problem:
    n_circ = len(data)
    if n_circ == 0:
        raise ValueError("empty dataset")
    per_circuit_conf = 1.0 - (alpha / 2.0) / n_circ
    circuits, freqs, preds, shots, counts = [], [], [], [], []
    for rec in data:
        p, region_radius = stats._prediction_for(predictions, rec.circuit, rec.outcomes)
        if region_radius is not None:
            raise ValueError("wildcard solving expects point predictions, not regions")
        f = frequencies(rec)
        if len(p) != len(f):
            raise ValueError(f"outcome mismatch for circuit {rec.circuit.text!r}")
        circuits.append(rec.circuit)
        freqs.append(f)
        preds.append(p)
        shots.append(rec.n_shots)
        counts.append(family.counts(rec.circuit))
    n_shots = np.array(shots, dtype=float)
    dofs = np.array([len(f) - 1 for f in freqs])
    thresholds = np.array([chi2_quantile(d, per_circuit_conf) for d in dofs])
    llr_point = np.array([
        _llr_value(f, p, n) for f, p, n in zip(freqs, preds, n_shots)])
    budgets = np.array([
        min_tvd_budget(f, p, n, thr)
        for f, p, n, thr in zip(freqs, preds, n_shots, thresholds)])
    return _Problem(
        circuits=circuits,
        counts=np.array(counts),
        freqs=freqs,
        preds=preds,
        n_shots=n_shots,
        llr_point=llr_point,
        thresholds=thresholds,
        budgets=budgets,
        agg_threshold=chi2_quantile(int(dofs.sum()), 1.0 - alpha / 2.0),
        binary=all(len(f) == 2 for f in freqs),
    )


def _report_from_problem(problem: _Problem, lam: np.ndarray, agg: float,
                         circuit_ok: bool, agg_ok: bool, radii: np.ndarray,
                         alpha: float) -> ConsistencyReport:
    rows = [
        CircuitTestRow(
            circuit=c.text, n_shots=int(n), llr_point=lp, radius=float(r),
            budget=float(t), llr_star=float(l), threshold=float(thr),
            passed=bool(l <= thr))
        for c, n, lp, r, t, l, thr in zip(
            problem.circuits, problem.n_shots, problem.llr_point, radii,
            problem.budgets, lam, problem.thresholds)
    ]
    return ConsistencyReport(
        rows=rows, aggregate_stat=agg, aggregate_dof=int(sum(len(f) - 1 for f in problem.freqs)),
        aggregate_threshold=problem.agg_threshold, alpha=alpha,
        branch_circuit_pass=circuit_ok, branch_aggregate_pass=agg_ok)


def feasible(w, predictions, data: DataSet, family: WildcardFamily,
             alpha: float = 0.05, _problem: _Problem | None = None):
    """Whether wildcard vector w reconciles the predictions with the data.

    Returns (bool, ConsistencyReport).
    """
    w = np.asarray(w, dtype=float)
    if (w < 0).any():
        raise ValueError("wildcard rates must be nonnegative")
    problem = _problem if _problem is not None else _build_problem(
        predictions, data, family, alpha)
    lam, agg, circuit_ok, agg_ok = problem.evaluate(w)
    report = _report_from_problem(
        problem, lam, agg, circuit_ok, agg_ok, np.clip(problem.counts @ w, 0, 1), alpha)
    return circuit_ok and agg_ok, report


# ---------------------------------------------------------------------------
# Minimal-model selection
# ---------------------------------------------------------------------------

@dataclass
class WildcardResult:
    """Solver output: the selected wildcard vector and its support data."""

    params: tuple[str, ...]
    w: np.ndarray
    objective_weights: np.ndarray
    objective_value: float
    budgets: np.ndarray
    counts: np.ndarray
    circuits: list[str]
    llr_star: np.ndarray
    thresholds: np.ndarray
    aggregate_stat: float
    aggregate_threshold: float
    active_constraints: list[str]
    n_cuts: int
    converged: bool
    alpha: float

    @property
    def as_dict(self) -> dict[str, float]:
        return {p: float(v) for p, v in zip(self.params, self.w)}

    def to_doc(self) -> dict:
        radii = self.counts @ self.w
        return {
            "params": list(self.params),
            "w": {p: float(v) for p, v in zip(self.params, self.w)},
            "objective_weights": self.objective_weights.tolist(),
            "objective_value": self.objective_value,
            "alpha": self.alpha,
            "aggregate_stat": self.aggregate_stat,
            "aggregate_threshold": self.aggregate_threshold,
            "active_constraints": self.active_constraints,
            "n_cuts": self.n_cuts,
            "converged": self.converged,
            "per_circuit": [
                {"circuit": c, "budget_needed": float(t), "budget": float(r),
                 "llr_star": float(l), "threshold": float(thr)}
                for c, t, r, l, thr in zip(
                    self.circuits, self.budgets, radii, self.llr_star, self.thresholds)
            ],
        }


def _solve_lp(cost: np.ndarray, a_ub: np.ndarray | None, b_ub: np.ndarray | None,
              n_params: int) -> np.ndarray:
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=[(0, None)] * n_params,
                  method="highs")
    if not res.success:
        raise SolverError(f"linear program failed: {res.message}")
    return np.maximum(res.x, 0.0)


def _aggregate_cut(problem: _Problem, w: np.ndarray):
    """Linearize the aggregate statistic at w: returns (gradient row, rhs)."""
    radii = np.clip(problem.counts @ w, 0.0, 1.0)
    lam = problem.llr_star(radii)
    agg = float(lam.sum())
    slopes = np.zeros(len(radii))
    for i in range(len(radii)):
        r = radii[i]
        h = _FD_STEP
        # central difference, one-sided at the boundary
        lo = max(r - h, 0.0)
        hi = min(r + h, 1.0)
        if hi <= lo:
            continue
        f, p, n = problem.freqs[i], problem.preds[i], problem.n_shots[i]
        if problem.binary:
            v_hi = float(_binary_llr_star(f[0], p[0], hi, n))
            v_lo = float(_binary_llr_star(f[0], p[0], lo, n))
        else:
            v_hi = min_llr_in_ball(f, p, hi, n)
            v_lo = min_llr_in_ball(f, p, lo, n)
        slopes[i] = (v_hi - v_lo) / (hi - lo)
    grad = slopes @ problem.counts       # subgradient of A(w)
    rhs = problem.agg_threshold - agg + float(grad @ w)
    return grad, rhs, agg


def solve_min_wildcard(
    predictions,
    data: DataSet,
    family: WildcardFamily,
    objective: Sequence[float] | None = None,
    alpha: float = 0.05,
    tie_break: str | None = "spam",
    max_cuts: int = _CUT_MAX,
) -> WildcardResult:
    """Feasible wildcard vector minimizing a nonnegative linear objective.

    Phase 1 solves the LP over the per-circuit budget constraints
    n(C) . w >= t_C; phase 2 restores the aggregate branch, when violated,
    by cutting planes on its convex statistic.  With ``tie_break="spam"``,
    degenerate optima are resolved toward w_SPAM = 0 at unchanged objective.
    """
    problem = _build_problem(predictions, data, family, alpha)
    n_params = family.n_params
    cost = np.ones(n_params) if objective is None else np.asarray(objective, dtype=float)
    if cost.shape != (n_params,) or (cost < 0).any():
        raise ValueError("objective must be a nonnegative weight per parameter")

    # Per-circuit constraints; circuits already passing at radius 0 add no row
    # but still count toward the aggregate statistic.
    active_rows = problem.budgets > 0.0
    base_a = -problem.counts[active_rows]
    base_b = -problem.budgets[active_rows]
    cut_a: list[np.ndarray] = []
    cut_b: list[float] = []
    trace = []

    def assemble(extra_row=None, extra_rhs=None):
        rows = [base_a]
        rhs = [base_b]
        if cut_a:
            rows.append(np.array(cut_a))
            rhs.append(np.array(cut_b))
        if extra_row is not None:
            rows.append(np.asarray(extra_row).reshape(1, -1))
            rhs.append(np.array([extra_rhs]))
        a = np.vstack(rows)
        return (a, np.concatenate(rhs)) if len(a) else (None, None)

    def run_cut_loop(c, extra_row=None, extra_rhs=None):
        for _ in range(max_cuts):
            a, b = assemble(extra_row, extra_rhs)
            w = np.zeros(n_params) if a is None else _solve_lp(c, a, b, n_params)
            _, agg, _, agg_ok = problem.evaluate(w)
            trace.append((w.copy(), agg))
            if agg_ok:
                return w
            grad, rhs, _ = _aggregate_cut(problem, w)
            if not np.any(grad):
                raise SolverError(
                    "aggregate constraint violated but flat; cannot cut", trace)
            cut_a.append(grad)
            cut_b.append(rhs)
        raise SolverError(
            f"cutting-plane loop did not converge within {max_cuts} cuts", trace)

    w = run_cut_loop(cost)
    value = float(cost @ w)

    if tie_break == "spam" and n_params > 1:
        spam_idx = family.params.index(family.spam_param)
        secondary = np.zeros(n_params)
        secondary[spam_idx] = 1.0
        guard_rhs = value + 1e-12 * max(1.0, value)
        w2 = run_cut_loop(secondary, extra_row=cost.copy(), extra_rhs=guard_rhs)
        if float(cost @ w2) <= guard_rhs:
            w = w2
    elif tie_break not in (None, "spam"):
        raise ValueError(f"unknown tie_break {tie_break!r}")

    lam, agg, circuit_ok, agg_ok = problem.evaluate(w)
    if not (circuit_ok and agg_ok):
        raise SolverError("solver returned an infeasible point", trace)
    radii = problem.counts @ w
    slack = radii - problem.budgets
    active = [c.text for c, s, t in zip(problem.circuits, slack, problem.budgets)
              if t > 0 and s <= 1e-9 * max(1.0, t)]
    return WildcardResult(
        params=family.params,
        w=w,
        objective_weights=cost,
        objective_value=float(cost @ w),
        budgets=problem.budgets,
        counts=problem.counts,
        circuits=[c.text for c in problem.circuits],
        llr_star=lam,
        thresholds=problem.thresholds,
        aggregate_stat=agg,
        aggregate_threshold=problem.agg_threshold,
        active_constraints=active,
        n_cuts=len(cut_a),
        converged=True,
        alpha=alpha,
    )


def certify_minimal(w, predictions, data: DataSet, family: WildcardFamily,
                    alpha: float = 0.05, shrink: float = 1e-3) -> bool:
    """Check that no positive component can shrink by ``shrink`` (relative).

    The zero vector is trivially minimal.  The check is exact at resolution
    ``shrink``: each positive component is reduced in turn with the others
    held fixed, and every such reduction must be infeasible.
    """
    w = np.asarray(w, dtype=float)
    problem = _build_problem(predictions, data, family, alpha)
    for j in range(len(w)):
        if w[j] <= 0.0:
            continue
        trial = w.copy()
        trial[j] *= (1.0 - shrink)
        lam, agg, circuit_ok, agg_ok = problem.evaluate(trial)
        if circuit_ok and agg_ok:
            return False
    return True


# ---------------------------------------------------------------------------
# Two-parameter frontier
# ---------------------------------------------------------------------------

@dataclass
class Frontier:
    """Minimal models traced over objective angles, plus a feasibility grid."""

    points: np.ndarray          # (k, 2), sorted by the first (SPAM) coordinate
    thetas: np.ndarray
    grid_axes: tuple[np.ndarray, np.ndarray] | None
    feasible_mask: np.ndarray | None


def _feasible_grid(problem: _Problem, w0s: np.ndarray, w1s: np.ndarray) -> np.ndarray:
    """Boolean feasibility indicator over a (w0, w1) grid (binary outcomes)."""
    mask = np.ones((len(w0s), len(w1s)), dtype=bool)
    agg = np.zeros((len(w0s), len(w1s)))
    w0g, w1g = np.meshgrid(w0s, w1s, indexing="ij")
    for i, c in enumerate(problem.counts):
        radii = np.clip(c[0] * w0g + c[1] * w1g, 0.0, 1.0)
        f, p, n = problem.freqs[i], problem.preds[i], problem.n_shots[i]
        if len(f) == 2:
            lam = _binary_llr_star(f[0], p[0], radii, n)
        else:
            lam = np.vectorize(lambda r: min_llr_in_ball(f, p, r, n))(radii)
        mask &= lam <= problem.thresholds[i]
        agg += lam
    mask &= agg <= problem.agg_threshold * (1.0 + AGG_REL_TOL)
    return mask


def frontier_2d(
    predictions,
    data: DataSet,
    family: WildcardFamily,
    n_angles: int = 25,
    grid: tuple[Sequence[float], Sequence[float]] | None = None,
    alpha: float = 0.05,
) -> Frontier:
    """Sweep weighted objectives over a 2-parameter family.

    Objectives are (cos theta, sin theta) for theta interior to (0, pi/2);
    solutions are deduplicated and sorted by the first parameter.  When
    ``grid`` axes are given the feasible-region indicator is evaluated on
    the grid for plotting.
    """
    if family.n_params != 2:
        raise ValueError("frontier_2d requires a 2-parameter family")
    thetas = np.linspace(0.0, np.pi / 2.0, n_angles + 2)[1:-1]
    pts = []
    for th in thetas:
        res = solve_min_wildcard(predictions, data, family,
                                 objective=(np.cos(th), np.sin(th)),
                                 alpha=alpha, tie_break=None)
        pts.append(res.w)
    unique: list[np.ndarray] = []
    for w in pts:
        if not any(np.allclose(w, u, atol=1e-9, rtol=0) for u in unique):
            unique.append(w)
    points = np.array(sorted(unique, key=lambda v: (v[0], v[1]))) if unique else np.zeros((0, 2))

    grid_axes = None
    mask = None
    if grid is not None:
        problem = _build_problem(predictions, data, family, alpha)
        w0s = np.asarray(grid[0], dtype=float)
        w1s = np.asarray(grid[1], dtype=float)
        mask = _feasible_grid(problem, w0s, w1s)
        grid_axes = (w0s, w1s)
    return Frontier(points=points, thetas=thetas, grid_axes=grid_axes,
                    feasible_mask=mask)
