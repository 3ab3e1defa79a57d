"""Statistical kernels: TVD, log-likelihood ratios, and the consistency test.

The central quantity is the LLR statistic

    lambda = 2 N sum_k f_k ln(f_k / q_k)      (natural log, 0 ln 0 == 0)

which is asymptotically chi^2 with (#outcomes - 1) degrees of freedom under
the null.  Model/data consistency is a two-branch test: (1) every circuit's
statistic must clear a Bonferroni-corrected per-circuit threshold, and (2)
the summed statistic must clear an aggregate threshold.  Both branches run
at confidence 1 - alpha/2 so the pair forms one test at level alpha.

When predictions are relaxed from points to TVD balls, the per-circuit
statistic becomes lambda* = min over distributions q in the ball of
llr(f, q, N) -- a convex problem solved in closed form for two outcomes and
by an exact KKT-partition search (with a duality-gap certificate) in general.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as _scipy_stats

from .data import DataSet, frequencies

# Tolerances shared across the consistency/feasibility machinery.
BUDGET_TOL = 1e-10          # bisection resolution of min_tvd_budget
CERT_GAP_TOL = 1e-9         # duality-gap certificate for the generic solver
AGG_REL_TOL = 1e-9          # relative slack accepted on the aggregate branch


def tvd(p, q) -> float:
    """Total variation distance, half the l1 distance between distributions."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"mismatched outcome sets: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


@dataclass(frozen=True)
class LlrStat:
    """A log-likelihood-ratio statistic and its degrees of freedom."""

    value: float
    dof: int

    @property
    def infinite(self) -> bool:
        return math.isinf(self.value)


def _llr_value(f: np.ndarray, q: np.ndarray, n_shots: float) -> float:
    support = f > 0
    if np.any(q[support] <= 0.0):
        return math.inf
    return 2.0 * n_shots * float(np.sum(f[support] * np.log(f[support] / q[support])))


def llr(f, q, n_shots: float) -> LlrStat:
    """LLR of empirical distribution f against hypothesis q at N shots.

    f_k > 0 with q_k = 0 yields an infinite statistic, flagged by
    ``LlrStat.infinite``.
    """
    f = np.asarray(f, dtype=float)
    q = np.asarray(q, dtype=float)
    if f.shape != q.shape:
        raise ValueError(f"mismatched outcome sets: {f.shape} vs {q.shape}")
    return LlrStat(value=_llr_value(f, q, n_shots), dof=len(f) - 1)


def chi2_quantile(dof: int, confidence: float) -> float:
    """Inverse chi^2 CDF (inverse regularized incomplete gamma)."""
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    return float(_scipy_stats.chi2.ppf(confidence, dof))


# ---------------------------------------------------------------------------
# lambda* = min LLR over a TVD ball
# ---------------------------------------------------------------------------

def _binary_llr_star(f0: float, p0: float, t, n_shots: float):
    """Closed-form lambda* for two outcomes, vectorized over the radius t.

    The minimizer clamps the observed frequency into [p0 - t, p0 + t] on
    outcome 0 (the other coordinate follows by normalization).
    """
    t = np.asarray(t, dtype=float)
    q0 = np.clip(f0, p0 - t, p0 + t)
    q1 = 1.0 - q0
    out = np.zeros(np.broadcast(t, q0).shape)
    if f0 > 0.0:
        with np.errstate(divide="ignore"):
            out = out + np.where(q0 > 0.0, f0 * np.log(f0 / np.where(q0 > 0, q0, 1.0)), np.inf)
    f1 = 1.0 - f0
    if f1 > 0.0:
        with np.errstate(divide="ignore"):
            out = out + np.where(q1 > 0.0, f1 * np.log(f1 / np.where(q1 > 0, q1, 1.0)), np.inf)
    return 2.0 * n_shots * out


@dataclass(frozen=True)
class BallMinResult:
    """Generic-solver output: optimum, minimizer, and certificate."""

    value: float
    minimizer: np.ndarray
    lower_bound: float

    @property
    def gap(self) -> float:
        return self.value - self.lower_bound


def _dual_value(f, p, t, mu, nu, n_shots):
    """Lagrangian dual of the ball problem at multipliers (mu, nu).

    g = sum_k inf_{q_k >= 0} [-f_k ln q_k + (mu/2)|q_k - p_k| + nu q_k]
        - mu t - nu,
    a valid lower bound on phi(q*) for any mu >= 0.  Reported in LLR units.
    """
    total = 0.0
    hi = nu + 0.5 * mu
    lo = nu - 0.5 * mu
    for fk, pk in zip(f, p):
        if fk > 0.0:
            best = math.inf
            candidates = [pk] if pk > 0.0 else []
            if hi > 0.0:
                candidates.append(max(fk / hi, pk))
            if lo > 0.0 and fk / lo < pk:
                candidates.append(fk / lo)
            for qk in candidates:
                if qk <= 0.0:
                    continue
                val = -fk * math.log(qk) + 0.5 * mu * abs(qk - pk) + nu * qk
                best = min(best, val)
            total += best
        else:
            total += min(0.5 * mu * pk, nu * pk)
    phi_lower = total - mu * t - nu
    base = sum(fk * math.log(fk) for fk in f if fk > 0.0)
    return 2.0 * n_shots * (base + phi_lower)


def _min_llr_ball_general(f: np.ndarray, p: np.ndarray, t: float, n_shots: float) -> BallMinResult:
    """Exact minimizer of llr(f, q, N) over {q : tvd(q, p) <= t}.

    At an optimum with the ball constraint active the coordinates split by
    the ratio f_k / p_k: the largest ratios receive probability mass at a
    common price a (q_k = f_k / a), the smallest donate at price b
    (q_k = f_k / b, or down to 0 where f_k = 0), and the middle band is
    untouched.  Both segment boundaries are found by direct search over the
    sorted ratios; mass balance fixes (a, b) in closed form for each
    candidate split, and the best feasible candidate is certified against
    the Lagrangian dual.
    """
    m = len(f)
    dist = tvd(f, p)
    if dist <= t:
        return BallMinResult(0.0, f.copy(), 0.0)
    if t <= 0.0:
        lam = _llr_value(f, p, n_shots)
        return BallMinResult(lam, p.copy(), lam)

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(p > 0, f / np.where(p > 0, p, 1.0), np.inf)
    ratio = np.where((p == 0) & (f == 0), 1.0, ratio)
    order = np.argsort(-ratio, kind="stable")
    fs, ps = f[order], p[order]
    cf, cp = np.cumsum(fs), np.cumsum(ps)

    best = None
    for i in range(1, m):            # receivers: first i sorted coordinates
        f_r, p_r = cf[i - 1], cp[i - 1]
        if f_r <= 0.0:
            continue
        a = f_r / (t + p_r)
        for j in range(1, m - i + 1):  # donors: last j sorted coordinates
            f_d = cf[m - 1] - cf[m - 1 - j]
            p_d = cp[m - 1] - cp[m - 1 - j]
            q = ps.copy()
            q[:i] = fs[:i] / a
            if f_d > 0.0:
                if p_d - t <= 0.0:
                    continue
                b = f_d / (p_d - t)
                q[m - j:] = fs[m - j:] / b
            else:
                if p_d < t:
                    continue
                scale = 1.0 - t / p_d if p_d > 0 else 0.0
                q[m - j:] = ps[m - j:] * scale
            if q.min() < -1e-14:
                continue
            if 0.5 * np.abs(q - ps).sum() > t + 1e-12:
                continue
            lam = _llr_value(fs, q, n_shots)
            if best is None or lam < best[0]:
                b_price = (f_d / (p_d - t)) if f_d > 0.0 else 0.0
                best = (lam, q.copy(), a, b_price)

    if best is None:
        raise RuntimeError("ball minimization found no feasible split")
    lam, q_sorted, a, b = best
    mu = max(a - b, 0.0)
    nu = 0.5 * (a + b)
    lower = _dual_value(fs, ps, t, mu, nu, n_shots)
    q_out = np.empty_like(q_sorted)
    q_out[order] = q_sorted
    return BallMinResult(lam, q_out, lower)


def min_llr_in_ball(f, p, t: float, n_shots: float, method: str = "auto") -> float:
    """Smallest LLR of f against any distribution within TVD t of p.

    Two-outcome problems use the closed-form clamp; larger ones use the exact
    convex search, whose duality-gap certificate must close to ``CERT_GAP_TOL``
    (relative above 1).
    """
    f = np.asarray(f, dtype=float)
    p = np.asarray(p, dtype=float)
    if f.shape != p.shape:
        raise ValueError("mismatched outcome sets")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"TVD budget {t} outside [0, 1]")
    if method not in ("auto", "closed", "generic"):
        raise ValueError(f"unknown method {method!r}")
    if method == "closed" or (method == "auto" and len(f) == 2):
        if len(f) != 2:
            raise ValueError("closed form only applies to two outcomes")
        return float(_binary_llr_star(float(f[0]), float(p[0]), t, n_shots))
    res = _min_llr_ball_general(f, p, t, n_shots)
    if math.isfinite(res.value) and res.gap > CERT_GAP_TOL * max(1.0, abs(res.value)):
        raise RuntimeError(
            f"ball minimization certificate failed: gap {res.gap:.3e} at value {res.value:.6e}")
    return res.value


def min_tvd_budget(f, p, n_shots: float, threshold: float) -> float:
    """Smallest TVD radius whose ball passes the LLR test at ``threshold``.

    Zero when the point prediction already passes; exactly tvd(f, p) when the
    threshold is zero; otherwise located by bisection to ``BUDGET_TOL``.  As
    N grows this converges to tvd(f, p).
    """
    if threshold < 0.0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    f = np.asarray(f, dtype=float)
    p = np.asarray(p, dtype=float)
    dist = tvd(f, p)
    if threshold == 0.0:
        return dist
    if _llr_value(f, p, n_shots) <= threshold:
        return 0.0
    lo, hi = 0.0, dist
    while hi - lo > BUDGET_TOL:
        mid = 0.5 * (lo + hi)
        if min_llr_in_ball(f, p, mid, n_shots) <= threshold:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# Two-branch consistency test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictionRegion:
    """A TVD ball around a predicted outcome distribution."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        if not 0.0 <= self.radius <= 1.0:
            raise ValueError(f"region radius {self.radius} outside [0, 1]")


@dataclass(frozen=True)
class CircuitTestRow:
    circuit: str
    n_shots: int
    llr_point: float
    radius: float
    budget: float | None
    llr_star: float
    threshold: float
    passed: bool


@dataclass
class ConsistencyReport:
    """Per-circuit and aggregate verdicts of the two-branch LLR test."""

    rows: list[CircuitTestRow]
    aggregate_stat: float
    aggregate_dof: int
    aggregate_threshold: float
    alpha: float
    branch_circuit_pass: bool
    branch_aggregate_pass: bool

    @property
    def passed(self) -> bool:
        return self.branch_circuit_pass and self.branch_aggregate_pass

    def to_rows(self) -> list[dict]:
        out = []
        for r in self.rows:
            out.append({
                "circuit": r.circuit,
                "n_shots": r.n_shots,
                "llr_point": r.llr_point,
                "radius": r.radius,
                "budget": r.budget,
                "llr_star": r.llr_star,
                "threshold": r.threshold,
                "verdict": "pass" if r.passed else "fail",
            })
        return out


def _prediction_for(predictions, circuit, outcomes=None) -> tuple[np.ndarray, float | None]:
    """Resolve a prediction source to (distribution, optional radius)."""
    if hasattr(predictions, "predict"):
        model_outcomes = getattr(predictions, "outcomes", None)
        if outcomes is not None and model_outcomes is not None \
                and tuple(model_outcomes) != tuple(outcomes):
            raise ValueError(
                f"model outcomes {model_outcomes} do not match data outcomes {tuple(outcomes)}")
        return np.asarray(predictions.predict(circuit), dtype=float), None
    value = predictions[circuit.text]
    if isinstance(value, PredictionRegion):
        return value.center, value.radius
    return np.asarray(value, dtype=float), None


def consistency_test(
    predictions,
    data: DataSet,
    alpha: float = 0.05,
    radii: Mapping[str, float] | float | None = None,
    include_budgets: bool = True,
) -> ConsistencyReport:
    """Two-branch LLR test of predictions (or prediction regions) against data.

    ``predictions`` is an error model, a mapping from circuit text to
    distributions, or a mapping to :class:`PredictionRegion`.  ``radii``
    optionally widens point predictions into balls (a scalar applies to all
    circuits).  Branch thresholds are Bonferroni-corrected per circuit at
    confidence 1 - (alpha/2)/|S| and aggregate at 1 - alpha/2.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n_circuits = len(data)
    if n_circuits == 0:
        raise ValueError("empty dataset")
    per_circuit_conf = 1.0 - (alpha / 2.0) / n_circuits
    rows = []
    agg = 0.0
    agg_dof = 0
    all_pass = True
    for rec in data:
        p, region_radius = _prediction_for(predictions, rec.circuit, rec.outcomes)
        f = frequencies(rec)
        if len(p) != len(f):
            raise ValueError(f"outcome mismatch for circuit {rec.circuit.text!r}")
        radius = 0.0
        if region_radius is not None:
            radius = region_radius
        elif radii is not None:
            radius = radii if np.isscalar(radii) else radii[rec.circuit.text]
        radius = min(max(float(radius), 0.0), 1.0)
        n = rec.n_shots
        lam_point = _llr_value(f, p, n)
        lam_star = lam_point if radius == 0.0 else min_llr_in_ball(f, p, radius, n)
        dof = len(f) - 1
        thresh = chi2_quantile(dof, per_circuit_conf)
        budget = min_tvd_budget(f, p, n, thresh) if include_budgets else None
        ok = lam_star <= thresh
        all_pass = all_pass and ok
        agg += lam_star
        agg_dof += dof
        rows.append(CircuitTestRow(
            circuit=rec.circuit.text, n_shots=n, llr_point=lam_point,
            radius=radius, budget=budget, llr_star=lam_star,
            threshold=thresh, passed=ok))
    agg_threshold = chi2_quantile(agg_dof, 1.0 - alpha / 2.0)
    return ConsistencyReport(
        rows=rows,
        aggregate_stat=agg,
        aggregate_dof=agg_dof,
        aggregate_threshold=agg_threshold,
        alpha=alpha,
        branch_circuit_pass=all_pass,
        branch_aggregate_pass=agg <= agg_threshold * (1.0 + AGG_REL_TOL),
    )
