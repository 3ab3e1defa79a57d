"""Model estimation: RB decay fitting, a compact MLE process-matrix fit, and
unitary gauge alignment.

The MLE fit parameterizes each gate by the 12 free entries of a
trace-preserving transfer matrix (first row pinned) plus 7 SPAM parameters,
and ascends the multinomial log-likelihood with analytic gradients computed
by a batched forward/backward sweep over all circuits.  No complete-positivity
constraint is imposed; CP violations are diagnosed downstream, not forbidden.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import ptm
from .circuits import Circuit
from .data import DataSet, frequencies
from .ptm import Effect, GateSet, StateVec

logger = logging.getLogger(__name__)

_LOG_FLOOR = 1e-10   # quadratic extension of ln below this probability


# ---------------------------------------------------------------------------
# RB decay fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RbFit:
    """A + B eta^d decay fit; r = (1 - eta) / 2 for a single qubit."""

    a: float
    b: float
    eta: float
    r: float
    residuals: np.ndarray
    converged: bool


def _spam_ls(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    """Weighted LS for (A, B) in y ~ A + B x, constrained to the physical
    region B >= 0, B <= A, A + B <= 1 (so all state probabilities stay in
    [0, 1] when the pair seeds a POVM).  Two variables, so the constrained
    optimum is found by checking the interior solution and each boundary.
    """
    def sse(a, b):
        return float(np.sum(w * (a + b * x - y) ** 2))

    candidates = []
    # interior
    design = np.stack([np.sqrt(w), np.sqrt(w) * x], axis=1)
    coef, *_ = np.linalg.lstsq(design, np.sqrt(w) * y, rcond=None)
    a0, b0 = float(coef[0]), float(coef[1])
    if b0 >= 0 and b0 <= a0 and a0 + b0 <= 1:
        candidates.append((a0, b0))
    # boundary A + B = 1
    denom = np.sum(w * (1 - x) ** 2)
    if denom > 0:
        b1 = float(np.sum(w * (1 - x) * (1 - y)) / denom)
        b1 = min(max(b1, 0.0), 0.5)
        candidates.append((1 - b1, b1))
    # boundary B = A
    denom = np.sum(w * (1 + x) ** 2)
    if denom > 0:
        a2 = float(np.sum(w * (1 + x) * y) / denom)
        a2 = min(max(a2, 0.0), 0.5)
        candidates.append((a2, a2))
    # boundary B = 0
    a3 = float(np.sum(w * y) / np.sum(w))
    candidates.append((min(max(a3, 0.0), 1.0), 0.0))
    best = min(candidates, key=lambda ab: sse(*ab))
    return best[0], best[1], sse(*best)


def fit_rb_decay(depths, survival, weights=None) -> RbFit:
    """Least-squares fit of mean survival vs depth to A + B eta^d.

    eta is constrained to [0, 1] and (A, B) to the physical SPAM region so
    the resulting depolarizing model makes valid probability predictions.
    """
    d = np.asarray(depths, dtype=float)
    y = np.asarray(survival, dtype=float)
    if len(d) < 3:
        raise ValueError("RB fit needs at least 3 depths")
    if len(d) != len(y):
        raise ValueError("depths and survival lengths differ")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)

    def profiled(eta):
        return _spam_ls(eta ** d, y, w)[2]

    res = optimize.minimize_scalar(profiled, bounds=(0.0, 1.0), method="bounded",
                                   options={"xatol": 1e-13})
    eta = float(res.x)
    # the bounded minimizer never evaluates the exact endpoints; snap if better
    for edge in (0.0, 1.0):
        if profiled(edge) < profiled(eta):
            eta = edge
    a, b, _ = _spam_ls(eta ** d, y, w)
    return RbFit(a=a, b=b, eta=eta, r=(1.0 - eta) / 2.0,
                 residuals=(a + b * eta ** d) - y,
                 converged=bool(res.success))


def rb_survival_means(data: DataSet, success_outcome: str = "0"):
    """Shot-weighted mean survival per depth: (depths, means, total shots)."""
    by_depth: dict[int, list[tuple[float, int]]] = {}
    for rec in data:
        k = rec.outcomes.index(success_outcome)
        by_depth.setdefault(rec.circuit.depth, []).append(
            (float(frequencies(rec)[k]), rec.n_shots))
    depths = sorted(by_depth)
    means, shots = [], []
    for d in depths:
        vals = by_depth[d]
        tot = sum(n for _, n in vals)
        means.append(sum(f * n for f, n in vals) / tot)
        shots.append(tot)
    return np.array(depths), np.array(means), np.array(shots)


# ---------------------------------------------------------------------------
# MLE process-matrix fit
# ---------------------------------------------------------------------------

@dataclass
class GstFitResult:
    gateset: GateSet
    loglikelihood: float
    initial_loglikelihood: float
    max_loglikelihood: float      # saturated model
    sigma_score: float
    dof: int
    n_params: int
    iterations: int
    converged: bool
    grad_norm: float
    trace: list = field(default_factory=list)

    @property
    def total_llr(self) -> float:
        return 2.0 * (self.max_loglikelihood - self.loglikelihood)


def _safe_log(p: np.ndarray) -> np.ndarray:
    eps = _LOG_FLOOR
    out = np.log(np.maximum(p, eps))
    low = p < eps
    if np.any(low):
        z = (p[low] - eps) / eps
        out[low] = np.log(eps) + z - 0.5 * z * z
    return out


def _safe_dlog(p: np.ndarray) -> np.ndarray:
    eps = _LOG_FLOOR
    out = 1.0 / np.maximum(p, eps)
    low = p < eps
    if np.any(low):
        out[low] = (1.0 - (p[low] - eps) / eps) / eps
    return out


class _GstObjective:
    """Batched negative log-likelihood and gradient over a circuit set."""

    def __init__(self, circuits, data: DataSet, labels):
        self.labels = tuple(labels)
        self.n_gates = len(self.labels)
        self._x_ref = None  # set before optimization; overflow-recovery anchor
        label_index = {lab: i for i, lab in enumerate(self.labels)}
        self.n_circ = len(circuits)
        self.lmax = max((c.depth for c in circuits), default=0)
        self.gate_idx = -np.ones((self.n_circ, self.lmax), dtype=np.int64)
        for ci, c in enumerate(circuits):
            for s, lab in enumerate(c.layers):
                self.gate_idx[ci, s] = label_index[lab]
        recs = [data[c] for c in circuits]
        self.freqs = np.stack([frequencies(r) for r in recs])
        self.shots = np.array([r.n_shots for r in recs], dtype=float)
        # per-step row selections, once
        self.step_rows = [
            [np.flatnonzero(self.gate_idx[:, s] == g) for g in range(self.n_gates)]
            for s in range(self.lmax)
        ]
        # per-gate (circuit, step) selections for gradient accumulation
        self.gate_positions = [np.nonzero(self.gate_idx == g) for g in range(self.n_gates)]

    def unpack(self, x: np.ndarray):
        mats = []
        off = 0
        for _ in range(self.n_gates):
            m = np.zeros((4, 4))
            m[0, 0] = 1.0
            m[1:, :] = x[off:off + 12].reshape(3, 4)
            mats.append(m)
            off += 12
        prep = np.concatenate([[1.0], x[off:off + 3]])
        off += 3
        e0 = x[off:off + 4].copy()
        return mats, prep, e0

    @staticmethod
    def pack(gateset: GateSet, labels) -> np.ndarray:
        parts = [gateset.gates[lab].matrix[1:, :].ravel() for lab in labels]
        parts.append(gateset.prep.coeffs[1:])
        parts.append(gateset.povm["0"].coeffs)
        return np.concatenate(parts)

    def gateset_from(self, x: np.ndarray) -> GateSet:
        mats, prep, e0 = self.unpack(x)
        ident = np.array([1.0, 0.0, 0.0, 0.0])
        return GateSet(
            gates={lab: ptm.SuperOp(m, 2) for lab, m in zip(self.labels, mats)},
            prep=StateVec(prep, 2),
            povm={"0": Effect(e0, 2), "1": Effect(ident - e0, 2)},
            dim=2,
        )

    def value_and_grad(self, x: np.ndarray):
        mats, prep, e0 = self.unpack(x)
        ident = np.array([1.0, 0.0, 0.0, 0.0])
        e1 = ident - e0
        n, lmax = self.n_circ, self.lmax

        fwd = np.empty((n, lmax + 1, 4))
        fwd[:, 0, :] = prep
        for s in range(lmax):
            fwd[:, s + 1, :] = fwd[:, s, :]
            for g, rows in enumerate(self.step_rows[s]):
                if len(rows):
                    fwd[rows, s + 1, :] = fwd[rows, s, :] @ mats[g].T
        # Deep circuits can overflow for wildly non-contractive line-search
        # iterates; glue a smooth bowl pulling back toward the reference point
        # so the optimizer backtracks instead of aborting on non-finite values.
        if not np.all(np.isfinite(fwd)) or np.abs(fwd).max() > 1e9:
            delta = x - self._x_ref
            big = 1e3 * self.shots.sum()
            return big * (1.0 + delta @ delta), 2.0 * big * delta
        final = fwd[:, lmax, :]
        p0 = final @ e0
        p1 = final @ e1
        probs = np.stack([p0, p1], axis=1)

        loglik = float(np.sum(self.shots[:, None] * self.freqs * _safe_log(probs)))

        coef = self.shots[:, None] * self.freqs * _safe_dlog(probs)  # dL/dp_k
        ebar = coef[:, 0:1] * e0[None, :] + coef[:, 1:2] * e1[None, :]

        back = np.empty((n, lmax + 1, 4))
        back[:, lmax, :] = ebar
        for s in range(lmax - 1, -1, -1):
            back[:, s, :] = back[:, s + 1, :]
            for g, rows in enumerate(self.step_rows[s]):
                if len(rows):
                    back[rows, s, :] = back[rows, s + 1, :] @ mats[g]

        grad = np.zeros_like(x)
        off = 0
        for g in range(self.n_gates):
            ci, si = self.gate_positions[g]
            if len(ci):
                dm = np.einsum("pa,pb->ab", back[ci, si + 1, :], fwd[ci, si, :])
            else:
                dm = np.zeros((4, 4))
            grad[off:off + 12] = dm[1:, :].ravel()
            off += 12
        dprep = back[:, 0, :].sum(axis=0)
        grad[off:off + 3] = dprep[1:]
        off += 3
        de0 = (coef[:, 0] - coef[:, 1]) @ final
        grad[off:off + 4] = de0
        return -loglik, -grad


def saturated_loglikelihood(data: DataSet, circuits=None) -> float:
    total = 0.0
    recs = data if circuits is None else (data[c] for c in circuits)
    for rec in recs:
        f = frequencies(rec)
        sup = f > 0
        total += rec.n_shots * float(np.sum(f[sup] * np.log(f[sup])))
    return total


def mle_fit_gst(
    circuits,
    data: DataSet,
    target_gateset: GateSet,
    maxiter: int = 3000,
    gtol: float = 1e-10,
) -> GstFitResult:
    """Maximum-likelihood trace-preserving gate-set fit, seeded at the targets.

    ``circuits`` selects the fitted subset of ``data`` (every circuit must be
    present).  The violation score is (total LLR - dof) / sqrt(2 dof), with
    dof counting outcome degrees of freedom minus fitted parameters.
    """
    circuits = list(circuits)
    if not circuits:
        raise ValueError("no circuits to fit")
    labels = target_gateset.labels
    obj = _GstObjective(circuits, data, labels)
    x0 = _GstObjective.pack(target_gateset, labels)
    obj._x_ref = x0
    ll0 = -obj.value_and_grad(x0)[0]

    # Normalize per shot so line searches and stopping rules see O(1) values.
    scale = 1.0 / obj.shots.sum()
    trace = []

    def fun(x):
        v, g = obj.value_and_grad(x)
        return v * scale, g * scale

    def cb(xk):
        trace.append(-obj.value_and_grad(xk)[0])

    opts = {"maxiter": maxiter, "ftol": 1e-16, "gtol": gtol, "maxcor": 30}
    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B",
                            callback=cb, options=opts)
    total_it = int(res.nit)
    # a fresh-memory restart is cheap and recovers the occasional stall
    res2 = optimize.minimize(fun, res.x, jac=True, method="L-BFGS-B",
                             callback=cb, options=opts)
    total_it += int(res2.nit)
    if res2.fun <= res.fun:
        res = res2
    ll = -float(res.fun) / scale
    if not res.success and "ITERATIONS" not in str(res.message).upper():
        logger.warning("MLE fit stalled: %s (|grad| = %.3e)",
                       res.message, np.linalg.norm(res.jac))
    ll_sat = saturated_loglikelihood(data, circuits)
    n_params = len(x0)
    k_outcomes = sum(len(data[c].outcomes) - 1 for c in circuits)
    dof = max(k_outcomes - n_params, 1)
    total_llr = 2.0 * (ll_sat - ll)
    sigma = (total_llr - dof) / np.sqrt(2.0 * dof)
    return GstFitResult(
        gateset=obj.gateset_from(res.x),
        loglikelihood=ll,
        initial_loglikelihood=ll0,
        max_loglikelihood=ll_sat,
        sigma_score=float(sigma),
        dof=dof,
        n_params=n_params,
        iterations=total_it,
        converged=bool(res.success),
        grad_norm=float(np.linalg.norm(res.jac)) / scale,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# Unitary gauge alignment
# ---------------------------------------------------------------------------

def _euler_ptm(angles) -> np.ndarray:
    a, b, g = angles
    m = ptm.channel_rotation("Z", a).matrix
    m = ptm.channel_rotation("Y", b).matrix @ m
    m = ptm.channel_rotation("Z", g).matrix @ m
    return m


def _gauge_transform(gs: GateSet, r: np.ndarray) -> GateSet:
    rt = r.T
    gates = {lab: ptm.SuperOp(r @ g.matrix @ rt, gs.dim) for lab, g in gs.gates.items()}
    prep = StateVec(r @ gs.prep.coeffs, gs.dim)
    povm = {lab: Effect(e.coeffs @ rt, gs.dim) for lab, e in gs.povm.items()}
    return GateSet(gates=gates, prep=prep, povm=povm, dim=gs.dim)


def gauge_fix(fit: GateSet, targets: GateSet) -> GateSet:
    """Conjugate a fitted gate set by the unitary closest to the targets.

    Circuit predictions are exactly invariant under the transformation; only
    the gauge-dependent matrix elements move.
    """
    if fit.dim != 2 or targets.dim != 2:
        raise ValueError("gauge fixing implemented for qubit gate sets only")
    if set(fit.labels) != set(targets.labels):
        raise ValueError("gate sets carry different labels")

    def cost(angles):
        r = _euler_ptm(angles)
        rt = r.T
        total = 0.0
        for lab in fit.labels:
            total += np.sum((r @ fit.gates[lab].matrix @ rt
                             - targets.gates[lab].matrix) ** 2)
        total += np.sum((r @ fit.prep.coeffs - targets.prep.coeffs) ** 2)
        for lab in fit.povm:
            total += np.sum((fit.povm[lab].coeffs @ rt
                             - targets.povm[lab].coeffs) ** 2)
        return total

    rng = np.random.default_rng(0)
    starts = [np.zeros(3)] + [rng.uniform(-np.pi, np.pi, size=3) for _ in range(8)]
    best = None
    for s in starts:
        r = optimize.minimize(cost, s, method="L-BFGS-B",
                              options={"maxiter": 500, "ftol": 1e-16, "gtol": 1e-12})
        if best is None or r.fun < best.fun:
            best = r
    return _gauge_transform(fit, _euler_ptm(best.x))
