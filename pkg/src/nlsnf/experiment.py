"""End-to-end runs: sample, certify, normal form, simulate, summarize."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .lattice import Lattice
from .nonlinearity import expand, parse_nonlinearity
from .normal_form import build, choose_parameters, save_result, verify_conjugacy
from .potential import calibrate, check_nonres, frequencies, sample_potential, trial_seeds
from .simulate import drift_runs, drift_summary, loglog_slope, observables, pcrux_experiment

log = logging.getLogger(__name__)

DRIFT_EXPONENT_MIN = 1.3
CONJUGACY_TOL = 0.2


class StageError(RuntimeError):
    """Failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    d: int = 1
    K: int = 16
    m: float = 2.0
    R: float = 1.0
    seed: int = 0
    beta: float = 0.5
    epsilon: list = field(default_factory=lambda: [1e-2, 3e-3, 1e-3])
    rho: float = 0.5
    nonlinearity: str = "power:p=1,a=1"
    T: float = 100.0
    h: float = 1e-3
    cadence: int = 100
    gamma: float = 1e-6
    nu: float | str = "calibrate"
    c0: float | str = "calibrate"
    r_max: int = 4
    nonres_K: int = 6
    calibration_trials: int = 20
    nf_K: int = 4
    nf_N: int | None = None
    nf_r: int | None = None
    amplitudes: list = field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3])
    pcrux_trajectories: int = 4
    pcrux_K: int = 8
    pcrux_N: int = 3
    pcrux_T: float = 50.0
    pcrux_h: float = 0.005
    outdir: str = "run"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.d < 1 or self.K < 1:
            raise ValueError("d and K must be positive")
        for e in self.epsilon:
            if not 0 < e < 1:
                raise ValueError(f"epsilon values must lie in (0, 1), got {e}")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        for name in ("nu", "c0"):
            v = getattr(self, name)
            if isinstance(v, str) and v != "calibrate":
                raise ValueError(f"{name} must be a number or 'calibrate'")
        if self.T <= 0 or self.h <= 0 or self.cadence < 1:
            raise ValueError("T, h and cadence must be positive")

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        data = json.loads(p.read_text(encoding="utf-8"))
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_json(data)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def run_pipeline(config: ExperimentConfig) -> dict:
    """Run every stage and write the bundle into ``config.outdir``; returns the summary."""
    out = Path(config.outdir)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "config.json", config.to_json())
    summary: dict = {"config": config.to_json(), "criteria": {}}
    crit = summary["criteria"]

    with _Stage("sample"):
        lat = Lattice(config.d, config.K)
        spec = parse_nonlinearity(config.nonlinearity)
        V = sample_potential(config.m, config.R, lat, config.seed)
        V.save(out / "pot.json")
        freqs = frequencies(V)

    with _Stage("certify"):
        nr_lat = Lattice(config.d, min(config.nonres_K, config.K))
        nu, c0 = config.nu, config.c0
        if nu == "calibrate" or c0 == "calibrate":
            # calibration batch is disjoint from the certified potential
            cal = [frequencies(sample_potential(config.m, config.R, nr_lat, s)) for s in trial_seeds(config.seed + 1, config.calibration_trials)]
            nu_c, c0_c = calibrate(cal, config.r_max, config.gamma, nu=None if nu == "calibrate" else nu, m=config.m)
            nu = nu_c if nu == "calibrate" else nu
            c0 = c0_c if c0 == "calibrate" else c0
        report = check_nonres(freqs, config.r_max, config.gamma, nu, c0, K=nr_lat.K)
        _dump(out / "nonres.json", report.to_json())
        (out / "nonres.csv").write_text(report.summary_csv(), encoding="utf-8")
        summary["nonres"] = {
            "gamma": config.gamma,
            "nu": nu,
            "c0": c0,
            "violations": len(report.violations),
            "checked": report.checked_count,
            "complete": report.complete,
            "min_gap": {str(r): g for r, g in sorted(report.min_gap.items())},
        }
        crit["nonres"] = report.ok

    if not config.epsilon:
        _finish(out, summary)
        return summary

    with _Stage("normal_form"):
        eps_nf = min(config.epsilon)
        N, r = choose_parameters(eps_nf, config.beta)
        summary["parameters"] = {"epsilon": eps_nf, "beta": config.beta, "N": N, "r": r}
        N = config.nf_N if config.nf_N is not None else N
        r = config.nf_r if config.nf_r is not None else r
        nf_lat = Lattice(config.d, min(config.nf_K, config.K))
        nf_freqs = frequencies(sample_potential(config.m, config.R, nf_lat, config.seed))
        P_list = expand(spec, nf_lat, r)
        result = build(P_list, nf_freqs, N, r, config.gamma, nu, c0)
        save_result(out / "nf.json", result, {"lattice": nf_lat.to_json()})
        conj = verify_conjugacy(P_list, result, nf_freqs, config.amplitudes, seed=config.seed, tol=CONJUGACY_TOL)
        degs = result.diagnostics["degrees"]
        summary["normal_form"] = {
            "N": N,
            "r": r,
            "K": nf_lat.K,
            "min_divisor": result.diagnostics["min_divisor"],
            "table": {m: {k: degs[m][k] for k in ("Q_norm", "chi_norm", "Z_norm", "residual")} for m in degs},
            "conjugacy": conj,
        }
        crit["homological_bounds"] = all(e.get("homol_bounds_ok", True) and e["normal_form"] for e in degs.values())
        crit["conjugacy_slope"] = bool(conj["passed"])

    with _Stage("pcrux"):
        if config.pcrux_trajectories > 0:
            p_lat = Lattice(config.d, config.pcrux_K)
            p_freqs = frequencies(sample_potential(config.m, config.R, p_lat, config.seed))
            rows = pcrux_experiment(p_freqs, config.pcrux_trajectories, config.pcrux_N, config.rho, config.pcrux_T, config.pcrux_h, seed=config.seed)
            summary["pcrux"] = rows
            crit["pcrux"] = all(r_["tail_ok"] and r_["norm_ok"] for r_ in rows)

    with _Stage("simulate"):
        eps_list = [float(e) for e in config.epsilon]
        trajs = drift_runs(freqs, spec, eps_list, config.rho, config.T, config.h, cadence=config.cadence, seed=config.seed)
        drift = []
        for i, (eps, tr) in enumerate(zip(eps_list, trajs)):
            (out / f"traj_{i}.csv").write_text(observables(tr, config.rho, 0.0).to_csv(), encoding="utf-8")
            row = drift_summary(eps, tr)
            row["file"] = f"traj_{i}.csv"
            drift.append(row)
        summary["drift"] = drift
        crit["drift_bound"] = all(row["max_drift"] <= row["bound"] for row in drift)
        if len(eps_list) >= 2:
            slope = loglog_slope([row["eps"] for row in drift], [row["max_drift"] for row in drift])
            summary["drift_exponent"] = slope
            crit["drift_exponent"] = slope >= DRIFT_EXPONENT_MIN

    with _Stage("plot"):
        from .plotting import plot_drift, plot_normal_form, plot_observables

        plot_observables([out / row["file"] for row in drift], [row["eps"] for row in drift], out / "observables.png")
        plot_drift([row["eps"] for row in drift], [row["max_drift"] for row in drift], out / "drift_vs_eps.png")
        plot_normal_form(summary["normal_form"]["table"], out / "normal_form.png")

    _finish(out, summary)
    return summary


def _finish(out: Path, summary: dict) -> None:
    summary["passed"] = all(summary["criteria"].values())
    _dump(out / "summary.json", summary)


def run_action_drift(config: ExperimentConfig, out_csv) -> list[dict]:
    """The drift-vs-eps sweep alone; writes one row per eps."""
    lat = Lattice(config.d, config.K)
    freqs = frequencies(sample_potential(config.m, config.R, lat, config.seed))
    spec = parse_nonlinearity(config.nonlinearity)
    eps_list = [float(e) for e in config.epsilon]
    trajs = drift_runs(freqs, spec, eps_list, config.rho, config.T, config.h, cadence=config.cadence, seed=config.seed)
    rows = [drift_summary(e, tr) for e, tr in zip(eps_list, trajs)]
    slope = loglog_slope(eps_list, [r["max_drift"] for r in rows]) if len(rows) >= 2 else None
    for r in rows:
        r["slope"] = slope
    _write_rows(Path(out_csv), rows)
    return rows


def _write_rows(path: Path, rows: list[dict]) -> None:
    cols = list(rows[0]) if rows else []
    buf = io.StringIO()
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    path.write_text(buf.getvalue(), encoding="utf-8")


REQUIRED_FIELDS = {"config": dict, "criteria": dict, "passed": bool}
DRIFT_FIELDS = ("eps", "max_drift", "bound")


def _load_summary(path: Path) -> dict:
    if not path.exists():
        raise FileNotFoundError(f"summary not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    for name, typ in REQUIRED_FIELDS.items():
        if name not in data:
            raise ValueError(f"{path}: schema mismatch, missing field '{name}'")
        if not isinstance(data[name], typ):
            raise ValueError(f"{path}: schema mismatch, field '{name}' should be {typ.__name__}")
    for i, row in enumerate(data.get("drift", [])):
        for k in DRIFT_FIELDS:
            if k not in row:
                raise ValueError(f"{path}: schema mismatch, missing field 'drift[{i}].{k}'")
    return data


def report(paths, out_dir) -> dict:
    """Merge summaries into ``report.csv`` / ``report.json`` and draw the drift figure.

    The drift exponent is fitted over all merged rows once at least two
    distinct eps are present.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("no summaries given")
    summaries = [_load_summary(p) for p in paths]
    rows = []
    for p, s in zip(paths, summaries):
        for d in s.get("drift", []):
            rows.append({"run": str(p), "eps": d["eps"], "max_drift": d["max_drift"], "bound": d["bound"], "ratio": d["max_drift"] / d["bound"]})
        if not s.get("drift"):
            rows.append({"run": str(p), "eps": None, "max_drift": None, "bound": None, "ratio": None})
    pts = [(r["eps"], r["max_drift"]) for r in rows if r["eps"] is not None]
    slope = None
    if len({e for e, _ in pts}) >= 2:
        slope = loglog_slope([e for e, _ in pts], [v for _, v in pts])
    for r in rows:
        r["slope"] = slope
    pcrux = []
    for p, s in zip(paths, summaries):
        for row in s.get("pcrux", []):
            pcrux.append({"run": str(p), "trajectory": row["trajectory"], "k": row["k"], "tail_margin": row["min_margin_tail"], "norm_margin": row["min_margin_norm"]})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "report.csv", rows)
    merged = {
        "runs": [str(p) for p in paths],
        "drift": rows,
        "drift_exponent": slope,
        "pcrux": pcrux,
        "passed": all(s["passed"] for s in summaries),
    }
    _dump(out / "report.json", merged)
    if pts:
        from .plotting import plot_drift

        plot_drift([e for e, _ in pts], [v for _, v in pts], out / "report_drift.png")
    return merged
