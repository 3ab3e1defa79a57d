"""Run configurations, scenario presets, and the pipeline stages behind the CLI.

Every default a demonstration depends on (depths, shots per circuit, error
rates, germ and fiducial sets) lives in the presets here, in one reviewable
place.  Each stage writes plain JSON/CSV/JSONL files into a run directory and
stamps every file with the resolved config hash and master seed, so re-running
a stage from its recorded config reproduces the outputs byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ptm
from .circuits import (Circuit, DEFAULT_FIDUCIALS, GstDesign, clifford_group,
                       gst_design, sample_rb_circuit)
from .data import DataSet, load_dataset, save_dataset, simulate_dataset
from .diamond import diamond_numeric, pauli_channel, pauli_diamond, pauli_probs
from .fitting import fit_rb_decay, gauge_fix, mle_fit_gst, rb_survival_means
from .models import (ErrorModel, GateError, ModelSpec, build_depolarizing_model,
                     build_model, random_error_modelspec, target_model)
from .solve import (WildcardFamily, certify_minimal, feasible, frontier_2d,
                    per_gate_family, solve_min_wildcard)
from .stats import consistency_test, tvd

SCENARIOS = ("rb-dephasing", "total-error", "gst-leakage", "custom")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (a usage error)."""


class DataError(RuntimeError):
    """Missing or malformed run artifacts."""


@dataclass
class RunConfig:
    """Fully resolved run parameters; serialized into every output file."""

    scenario: str
    seed: int = 1
    n_shots: int = 1000
    alpha: float = 0.05
    objective: str = "l1"
    tie_break: str = "spam"
    out_dir: str = "."
    # RB knobs
    depths: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512)
    k_per_depth: int = 30
    dephasing_p: float = 0.02
    # germ-fiducial design knobs
    gates: tuple[str, ...] = ("Gx", "Gy")
    germs: tuple[str, ...] = ()
    fiducials: tuple[str, ...] = DEFAULT_FIDUCIALS
    max_depth: int = 64
    # total-error knobs
    n_sims: int = 1
    error_ranges: dict = field(default_factory=dict)
    # gst-leakage knobs
    markovian_depol: float = 1e-3
    markovian_rot: float = 1e-2
    leak_rates: dict = field(default_factory=dict)
    family: str = "per-gate"        # per-gate | tied

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; pick one of {SCENARIOS}")
        if self.n_shots < 1:
            raise ConfigError("n_shots must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.k_per_depth < 1 or self.n_sims < 1 or self.max_depth < 1:
            raise ConfigError("k_per_depth, n_sims, and max_depth must be >= 1")
        if self.family not in ("per-gate", "tied"):
            raise ConfigError(f"unknown family {self.family!r}")
        if not (self.objective == "l1" or self.objective.startswith("weighted:")):
            raise ConfigError("objective must be 'l1' or 'weighted:<csv>'")
        self.depths = tuple(int(d) for d in self.depths)
        self.gates = tuple(self.gates)
        self.germs = tuple(self.germs)
        self.fiducials = tuple(self.fiducials)

    def to_doc(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def config_hash(self) -> str:
        doc = self.to_doc()
        doc.pop("out_dir", None)   # location does not affect results
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def objective_weights(self, family: WildcardFamily):
        if self.objective == "l1":
            return None
        body = self.objective.split(":", 1)[1]
        try:
            weights = tuple(float(x) for x in body.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad weighted objective {self.objective!r}") from exc
        if len(weights) != family.n_params or any(w < 0 for w in weights):
            raise ConfigError(
                f"objective needs {family.n_params} nonnegative weights "
                f"(family parameters: {family.params})")
        return weights


_PRESETS = {
    "rb-dephasing": dict(
        seed=1, n_shots=1000, depths=(1, 2, 4, 8, 16, 32, 64, 128, 256, 512),
        k_per_depth=30, dephasing_p=0.02, family="tied",
    ),
    "total-error": dict(
        seed=1, n_shots=1000, gates=("Gx", "Gy"),
        germs=("Gx", "Gy", "Gx;Gy"), max_depth=64, n_sims=1,
        error_ranges={"depol": (0.0, 0.02), "rot_angle": (-0.05, 0.05),
                      "spam_depol": (0.0, 0.01)},
        family="per-gate",
    ),
    "gst-leakage": dict(
        seed=11, n_shots=40000, gates=("Gi", "Gx", "Gy", "Gz"),
        germs=("Gi", "Gx", "Gy", "Gz"), max_depth=64,
        markovian_depol=1e-3, markovian_rot=1e-2,
        leak_rates={"Gi": 1e-4, "Gz": 3e-4},
        family="per-gate",
    ),
}


def preset_config(scenario: str, **overrides) -> RunConfig:
    if scenario not in _PRESETS:
        raise ConfigError(f"no preset for scenario {scenario!r}")
    params = dict(_PRESETS[scenario])
    params.update(overrides)
    return RunConfig(scenario=scenario, **params)


def load_config(path, **overrides) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict) or "scenario" not in doc:
        raise ConfigError("config must be a JSON object with a 'scenario' key")
    scenario = doc.pop("scenario")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if scenario in _PRESETS:
        merged = dict(_PRESETS[scenario])
        merged.update(doc)
        merged.update(overrides)
        return RunConfig(scenario=scenario, **merged)
    return RunConfig(scenario=scenario, **{**doc, **overrides})


# ---------------------------------------------------------------------------
# Stamped file helpers
# ---------------------------------------------------------------------------

def _write_json(path: Path, payload: dict, config: RunConfig) -> None:
    payload = dict(payload)
    payload["_provenance"] = {"config_hash": config.config_hash, "seed": config.seed}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise DataError(f"missing artifact {path}")
    return json.loads(path.read_text())


def _write_csv(path: Path, header: list[str], rows, config: RunConfig) -> None:
    lines = [f"# config_hash={config.config_hash} seed={config.seed}",
             ",".join(header)]
    for row in rows:
        lines.append(",".join("" if v is None else repr(v) if isinstance(v, float) else str(v)
                              for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_jsonl(path: Path, rows) -> None:
    path.write_text("\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        raise DataError(f"missing artifact {path}")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# Model construction per scenario
# ---------------------------------------------------------------------------

def rb_truth_model(config: RunConfig) -> ErrorModel:
    """Clifford gate set with Z dephasing following every gate."""
    group = clifford_group()
    ideal = group.ideal_gateset()
    noise = ptm.channel_dephasing(config.dephasing_p)
    gates = {lab: ptm.compose(g, noise) for lab, g in ideal.gates.items()}
    gs = ptm.GateSet(gates=gates, prep=ideal.prep, povm=ideal.povm, dim=2)
    return ErrorModel("process-matrix", gs,
                      {"construction": "clifford-dephasing", "p": config.dephasing_p})


def leakage_modelspec(config: RunConfig) -> ModelSpec:
    """Markovian depolarization plus over-rotation, with leakage on the
    configured gates; the idle picks up no rotation error (it has no axis)."""
    errors = {}
    for lab in config.gates:
        rot = 0.0 if lab == "Gi" else config.markovian_rot
        errors[lab] = GateError(depol=config.markovian_depol, rot_angle=rot,
                                leakage=float(config.leak_rates.get(lab, 0.0)))
    return ModelSpec(gate_errors=errors)


def rb_circuits(config: RunConfig) -> list[Circuit]:
    return [
        sample_rb_circuit(d, seed=config.seed * 100000 + 1000 * d + k)
        for d in config.depths
        for k in range(config.k_per_depth)
    ]


def scenario_family(config: RunConfig, model: ErrorModel) -> WildcardFamily:
    if config.family == "tied":
        return per_gate_family(model.labels, tie_gates=True)
    return per_gate_family(model.labels)


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------

def _sim_dirs(run_dir: Path) -> list[Path]:
    subs = sorted(p for p in run_dir.glob("sim_*") if p.is_dir())
    return subs if subs else [run_dir]


def cmd_simulate(config: RunConfig) -> Path:
    """Generate truth model(s) and dataset(s) for the configured scenario."""
    run_dir = Path(config.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "config.json", config.to_doc(), config)

    if config.scenario == "rb-dephasing":
        truth = rb_truth_model(config)
        circuits = rb_circuits(config)
        ds = simulate_dataset(truth, circuits, config.n_shots, seed=config.seed,
                              provenance={"config_hash": config.config_hash},
                              aggregate_duplicates=True)
        save_dataset(ds, run_dir / "dataset.jsonl")
        _write_json(run_dir / "truth_model.json", truth.to_doc(), config)
        return run_dir

    if config.scenario == "total-error":
        design = gst_design(config.gates, config.germs, config.fiducials,
                            config.max_depth)
        _write_jsonl(run_dir / "design.jsonl", design.to_rows())
        for i in range(config.n_sims):
            sim_dir = run_dir / f"sim_{i:03d}"
            sim_dir.mkdir(exist_ok=True)
            spec = random_error_modelspec(seed=config.seed * 100000 + i,
                                          labels=config.gates,
                                          ranges=config.error_ranges)
            truth = build_model(spec, config.gates)
            ds = simulate_dataset(truth, design.circuits, config.n_shots,
                                  seed=config.seed * 100000 + i,
                                  provenance={"config_hash": config.config_hash,
                                              "sim": i})
            save_dataset(ds, sim_dir / "dataset.jsonl")
            _write_json(sim_dir / "modelspec.json", spec.to_doc(), config)
            _write_json(sim_dir / "truth_model.json", truth.to_doc(), config)
        return run_dir

    if config.scenario == "gst-leakage":
        design = gst_design(config.gates, config.germs, config.fiducials,
                            config.max_depth)
        _write_jsonl(run_dir / "design.jsonl", design.to_rows())
        spec = leakage_modelspec(config)
        truth = build_model(spec, config.gates)
        ds = simulate_dataset(truth, design.circuits, config.n_shots,
                              seed=config.seed,
                              provenance={"config_hash": config.config_hash})
        save_dataset(ds, run_dir / "dataset.jsonl")
        _write_json(run_dir / "modelspec.json", spec.to_doc(), config)
        _write_json(run_dir / "truth_model.json", truth.to_doc(), config)
        return run_dir

    raise ConfigError("cmd_simulate supports the three preset scenarios; "
                      "scenario 'custom' expects externally supplied datasets")


def cmd_fit_rb(config: RunConfig, run_dir: Path) -> dict:
    """Fit the RB decay and write the derived depolarizing model."""
    ds = load_dataset(run_dir / "dataset.jsonl")
    depths, means, shots = rb_survival_means(ds)
    fit = fit_rb_decay(depths, means, weights=shots)
    group = clifford_group()
    model = build_depolarizing_model(group.ideal_gateset(), r=fit.r,
                                     spam=(fit.a, fit.b))
    payload = {
        "a": fit.a, "b": fit.b, "eta": fit.eta, "r": fit.r,
        "converged": fit.converged,
        "depths": depths.tolist(), "mean_survival": means.tolist(),
        "shots": shots.tolist(),
    }
    _write_json(run_dir / "rb_fit.json", payload, config)
    _write_json(run_dir / "model_depolarizing.json", model.to_doc(), config)
    return payload


def cmd_fit_gst(config: RunConfig, run_dir: Path) -> dict:
    """MLE process-matrix fit on the design circuits, gauge-aligned to targets."""
    ds = load_dataset(run_dir / "dataset.jsonl")
    design = GstDesign.from_rows(_read_jsonl(run_dir / "design.jsonl"))
    missing = [c.text for c in design.circuits if c.text not in ds]
    if missing:
        raise DataError(f"dataset is missing {len(missing)} design circuits "
                        f"(first: {missing[0]!r})")
    target = ptm.ideal_qubit_gateset(config.gates)
    fit = mle_fit_gst(design.circuits, ds, target)
    fixed = gauge_fix(fit.gateset, target)
    model = ErrorModel("process-matrix", fixed,
                       {"construction": "gst-mle", "sigma_score": fit.sigma_score})
    doc = model.to_doc()
    doc["diagnostics"] = {
        "loglikelihood": fit.loglikelihood,
        "initial_loglikelihood": fit.initial_loglikelihood,
        "max_loglikelihood": fit.max_loglikelihood,
        "total_llr": fit.total_llr,
        "sigma_score": fit.sigma_score,
        "dof": fit.dof,
        "n_params": fit.n_params,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "grad_norm": fit.grad_norm,
    }
    _write_json(run_dir / "gst_fit.json", doc, config)
    return doc


def _model_for_wildcard(config: RunConfig, sim_dir: Path, run_dir: Path) -> ErrorModel:
    if config.scenario == "rb-dephasing":
        return ErrorModel.from_doc(_read_json(run_dir / "model_depolarizing.json"))
    if config.scenario == "total-error":
        return target_model(ptm.ideal_qubit_gateset(config.gates))
    if config.scenario == "gst-leakage":
        return ErrorModel.from_doc(_read_json(run_dir / "gst_fit.json"))
    raise ConfigError(f"no default model for scenario {config.scenario!r}")


def cmd_wildcard(config: RunConfig, run_dir: Path, model: ErrorModel | None = None) -> list[dict]:
    """Solve the minimal wildcard model and write pre/post consistency reports."""
    results = []
    for sim_dir in _sim_dirs(run_dir):
        ds = load_dataset(sim_dir / "dataset.jsonl")
        m = model if model is not None else _model_for_wildcard(config, sim_dir, run_dir)
        known = set(m.labels)
        for c in ds.circuits:
            uncovered = set(c.layers) - known
            if uncovered:
                raise DataError(
                    f"model does not predict circuit {c.text!r} "
                    f"(unknown gates {sorted(uncovered)})")
        family = scenario_family(config, m)
        pre = consistency_test(m, ds, alpha=config.alpha)
        res = solve_min_wildcard(m, ds, family,
                                 objective=config.objective_weights(family),
                                 alpha=config.alpha, tie_break=config.tie_break)
        certified = certify_minimal(res.w, m, ds, family, alpha=config.alpha)
        post_ok, post = feasible(res.w, m, ds, family, alpha=config.alpha)
        doc = res.to_doc()
        doc["certified_minimal"] = certified
        doc["pre_consistent"] = pre.passed
        doc["post_consistent"] = post_ok
        _write_json(sim_dir / "wildcard.json", doc, config)
        header = ["circuit", "n_shots", "llr_point", "radius", "budget",
                  "llr_star", "threshold", "verdict"]
        _write_csv(sim_dir / "consistency_pre.csv", header,
                   ([r[k] for k in header] for r in pre.to_rows()), config)
        _write_csv(sim_dir / "consistency_post.csv", header,
                   ([r[k] for k in header] for r in post.to_rows()), config)
        results.append(doc)
    return results


def cmd_diamond(model_a: ErrorModel, model_b: ErrorModel, restarts: int = 32,
                seed: int = 0) -> list[dict]:
    """Per-gate half-diamond-norm distances between two models."""
    if set(model_a.labels) != set(model_b.labels):
        raise DataError("models carry different gate labels")
    rows = []
    for lab in model_a.labels:
        r = diamond_numeric(model_a.gateset.gates[lab], model_b.gateset.gates[lab],
                            restarts=restarts, seed=seed)
        rows.append({"gate": lab, "epsilon_diamond": r.value,
                     "converged": r.converged})
    return rows


# ---------------------------------------------------------------------------
# Figure-ready reports
# ---------------------------------------------------------------------------

def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"incomplete run: {path} not found")
    return path


def _report_rb(config: RunConfig, run_dir: Path) -> list[Path]:
    ds = load_dataset(_require(run_dir / "dataset.jsonl"))
    fit_doc = _read_json(run_dir / "rb_fit.json")
    model = ErrorModel.from_doc(_read_json(run_dir / "model_depolarizing.json"))
    wc = _read_json(_require(run_dir / "wildcard.json"))
    w = wc["w"]
    out = []

    rows = []
    for rec in ds:
        p = float(model.predict(rec.circuit)[0])
        f = float(rec.frequencies()[0])
        budget = w["SPAM"] + rec.circuit.depth * w["gate"]
        rows.append((rec.circuit.text, rec.circuit.depth, rec.n_shots, f, p,
                     max(p - budget, 0.0), min(p + budget, 1.0)))
    path = run_dir / "report_rb_band.csv"
    _write_csv(path, ["circuit", "depth", "n_shots", "observed", "predicted",
                      "band_low", "band_high"], rows, config)
    out.append(path)

    family = per_gate_family(clifford_group().labels, tie_gates=True)
    top = max(2.5 * max(w["gate"], w["SPAM"]), 0.02)
    axis = np.linspace(0.0, top, 41)
    frontier = frontier_2d(model, ds, family, n_angles=15, grid=(axis, axis),
                           alpha=config.alpha)
    path = run_dir / "report_rb_region.csv"
    grid_rows = []
    for i, w0 in enumerate(axis):
        for j, w1 in enumerate(axis):
            grid_rows.append((float(w0), float(w1), int(frontier.feasible_mask[i, j])))
    _write_csv(path, ["w_spam", "w_gate", "feasible"], grid_rows, config)
    out.append(path)

    path = run_dir / "report_rb_frontier.csv"
    _write_csv(path, ["w_spam", "w_gate"],
               [(float(a), float(b)) for a, b in frontier.points], config)
    out.append(path)

    truth_vec = pauli_probs(ptm.channel_dephasing(config.dephasing_p))
    fitted_vec = pauli_probs(ptm.channel_depolarizing(1.0 - fit_doc["eta"]))
    summary = {
        "w": w,
        "eta": fit_doc["eta"],
        "r": fit_doc["r"],
        "epsilon_diamond_analytic": pauli_diamond(truth_vec, fitted_vec),
        "certified_minimal": wc["certified_minimal"],
        "pre_consistent": wc["pre_consistent"],
        "post_consistent": wc["post_consistent"],
    }
    path = run_dir / "report_summary.json"
    _write_json(path, summary, config)
    out.append(path)
    return out


def _report_total_error(config: RunConfig, run_dir: Path) -> list[Path]:
    out = []
    scatter = []
    for i, sim_dir in enumerate(_sim_dirs(run_dir)):
        wc = _read_json(_require(sim_dir / "wildcard.json"))
        truth = ErrorModel.from_doc(_read_json(sim_dir / "truth_model.json"))
        target = ptm.ideal_qubit_gateset(config.gates)
        for lab in config.gates:
            eps = diamond_numeric(truth.gateset.gates[lab], target.gates[lab],
                                  seed=config.seed + i).value
            scatter.append((i, lab, wc["w"][lab], eps))
    path = run_dir / "report_total_error_scatter.csv"
    _write_csv(path, ["sim", "gate", "w", "epsilon_diamond"], scatter, config)
    out.append(path)

    sim0 = _sim_dirs(run_dir)[0]
    ds = load_dataset(_require(sim0 / "dataset.jsonl"))
    wc = _read_json(sim0 / "wildcard.json")
    target = target_model(ptm.ideal_qubit_gateset(config.gates))
    fam = per_gate_family(config.gates)
    rows = []
    for rec in ds:
        p = float(target.predict(rec.circuit)[1])
        f = float(rec.frequencies()[1])
        counts = fam.counts(rec.circuit)
        budget = float(counts @ np.array([wc["w"][k] for k in wc["params"]]))
        rows.append((rec.circuit.text, rec.circuit.depth, f, p,
                     max(p - budget, 0.0), min(p + budget, 1.0)))
    path = run_dir / "report_total_error_band.csv"
    _write_csv(path, ["circuit", "depth", "observed_one", "predicted_one",
                      "band_low", "band_high"], rows, config)
    out.append(path)
    return out


def _report_leakage(config: RunConfig, run_dir: Path) -> list[Path]:
    design = GstDesign.from_rows(_read_jsonl(run_dir / "design.jsonl"))
    ds = load_dataset(_require(run_dir / "dataset.jsonl"))
    fit_model = ErrorModel.from_doc(_read_json(run_dir / "gst_fit.json"))
    wc = _read_json(_require(run_dir / "wildcard.json"))
    fam = per_gate_family(config.gates)
    w_vec = np.array([wc["w"][k] for k in wc["params"]])
    out = []

    pre = consistency_test(fit_model, ds, alpha=config.alpha, include_budgets=False)
    radii = {c.text: float(fam.counts(c) @ w_vec) for c in ds.circuits}
    post = consistency_test(fit_model, ds, alpha=config.alpha, radii=radii,
                            include_budgets=False)
    for name, report in (("pre", pre), ("post", post)):
        rows = []
        for r in report.rows:
            tag = design.tags[r.circuit]
            depth = tag.power * Circuit.from_text(tag.germ).depth
            rows.append((r.circuit, tag.germ, depth, r.llr_star, r.threshold,
                         int(r.llr_star > r.threshold)))
        path = run_dir / f"report_llr_{name}.csv"
        _write_csv(path, ["circuit", "germ", "depth", "llr", "threshold",
                          "significant"], rows, config)
        out.append(path)

    rows = []
    for rec in ds:
        p = fit_model.predict(rec.circuit)
        rows.append((rec.circuit.text, radii[rec.circuit.text],
                     tvd(rec.frequencies(), p)))
    path = run_dir / "report_wc_tvd.csv"
    _write_csv(path, ["circuit", "w_c", "tvd"], rows, config)
    out.append(path)

    target = ptm.ideal_qubit_gateset(config.gates)
    rows = []
    for lab in config.gates:
        eps = diamond_numeric(fit_model.gateset.gates[lab], target.gates[lab],
                              seed=config.seed).value
        rows.append((lab, wc["w"][lab], eps))
    path = run_dir / "report_gates.csv"
    _write_csv(path, ["gate", "w", "epsilon_diamond"], rows, config)
    out.append(path)
    return out


def cmd_report(config: RunConfig, run_dir: Path) -> list[Path]:
    """Emit one tabular file per figure panel for the completed run."""
    if config.scenario == "rb-dephasing":
        return _report_rb(config, run_dir)
    if config.scenario == "total-error":
        return _report_total_error(config, run_dir)
    if config.scenario == "gst-leakage":
        return _report_leakage(config, run_dir)
    raise ConfigError(f"no report layout for scenario {config.scenario!r}")


def run_config_from_dir(run_dir: Path) -> RunConfig:
    doc = _read_json(Path(run_dir) / "config.json")
    doc.pop("_provenance", None)
    scenario = doc.pop("scenario")
    return RunConfig(scenario=scenario, **doc)
