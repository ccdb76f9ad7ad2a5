import csv
import json
from pathlib import Path

import pytest

from nlsnf.cli import EXIT_ERROR, EXIT_FAIL, EXIT_OK, main
from nlsnf.experiment import ExperimentConfig, StageError, report, run_action_drift, run_pipeline
from nlsnf.normal_form import choose_parameters

SMALL = {
    "K": 6,
    "epsilon": [1e-2, 1e-3],
    "T": 1.0,
    "h": 1e-2,
    "cadence": 10,
    "nonres_K": 3,
    "r_max": 3,
    "calibration_trials": 3,
    "nf_K": 3,
    "pcrux_trajectories": 2,
    "pcrux_K": 4,
    "pcrux_T": 1.0,
    "pcrux_h": 0.01,
}


def small_config(tmp_path, **kw):
    data = dict(SMALL, outdir=str(tmp_path / "run"))
    data.update(kw)
    return ExperimentConfig.from_json(data)


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundle")
    cfg = small_config(root)
    return cfg, run_pipeline(cfg)


def test_pipeline_bundle(bundle):
    cfg, summary = bundle
    out = cfg.outdir
    names = {"config.json", "pot.json", "nonres.json", "nonres.csv", "nf.json", "traj_0.csv", "traj_1.csv",
             "observables.png", "drift_vs_eps.png", "normal_form.png", "summary.json"}
    assert names <= {p.name for p in Path(out).iterdir()}
    assert set(summary["criteria"]) == {"nonres", "homological_bounds", "conjugacy_slope", "pcrux", "drift_bound", "drift_exponent"}
    assert summary["passed"] == all(summary["criteria"].values())
    assert json.loads((Path(out) / "summary.json").read_text()) == summary


def test_parameters_follow_choice(bundle):
    cfg, summary = bundle
    N, r = choose_parameters(min(cfg.epsilon), cfg.beta)
    assert summary["parameters"]["N"] == N and summary["parameters"]["r"] == r
    assert summary["normal_form"]["N"] == N and summary["normal_form"]["r"] == r


def test_pipeline_deterministic(tmp_path):
    cfg = small_config(tmp_path, epsilon=[1e-2], pcrux_trajectories=1)
    run_pipeline(cfg)
    first = (tmp_path / "run" / "summary.json").read_bytes()
    run_pipeline(cfg)
    assert (tmp_path / "run" / "summary.json").read_bytes() == first


def test_empty_epsilon_stops_after_certify(tmp_path):
    summary = run_pipeline(small_config(tmp_path, epsilon=[]))
    assert set(summary["criteria"]) == {"nonres"}
    assert not (tmp_path / "run" / "nf.json").exists()
    assert (tmp_path / "run" / "summary.json").exists()


def test_overrides(tmp_path):
    summary = run_pipeline(small_config(tmp_path, epsilon=[1e-2], nf_N=2, nf_r=4, pcrux_trajectories=0))
    assert summary["normal_form"]["N"] == 2 and summary["normal_form"]["r"] == 4
    assert "pcrux" not in summary["criteria"]


def test_stage_error_names_stage(tmp_path):
    with pytest.raises(StageError) as err:
        run_pipeline(small_config(tmp_path, nonlinearity="cubic"))
    assert err.value.stage == "sample" and str(err.value).startswith("[sample] ValueError")


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="unknown config fields: bogus"):
        ExperimentConfig.from_json({"bogus": 1})
    with pytest.raises(ValueError):
        ExperimentConfig(epsilon=[2.0])
    with pytest.raises(ValueError):
        ExperimentConfig(nu="guess")
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"K": 5, "T": 3.0}))
    cfg = ExperimentConfig.load(path, {"T": 2.0, "seed": None})
    assert cfg.K == 5 and cfg.T == 2.0 and cfg.seed == 0
    with pytest.raises(FileNotFoundError):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_action_drift_csv(tmp_path):
    rows = run_action_drift(small_config(tmp_path), tmp_path / "drift.csv")
    with open(tmp_path / "drift.csv", newline="") as fh:
        back = list(csv.DictReader(fh))
    assert [float(r["eps"]) for r in back] == [1e-2, 1e-3]
    assert float(back[0]["slope"]) == pytest.approx(rows[0]["slope"])


# -- report -------------------------------------------------------------------------------------

def test_report_merge(bundle, tmp_path):
    cfg, summary = bundle
    path = f"{cfg.outdir}/summary.json"
    merged = report([path], tmp_path / "rep")
    assert [r["eps"] for r in merged["drift"]] == [1e-2, 1e-3]
    assert merged["drift_exponent"] == pytest.approx(summary["drift_exponent"])
    assert (tmp_path / "rep" / "report_drift.png").exists()
    assert len(merged["pcrux"]) == 2


def test_report_two_runs_slope(tmp_path):
    paths = []
    for i, eps in enumerate((1e-2, 1e-3)):
        s = {"config": {}, "criteria": {}, "passed": True, "drift": [{"eps": eps, "max_drift": 2 * eps ** 3, "bound": eps ** 1.5}]}
        p = tmp_path / f"s{i}.json"
        p.write_text(json.dumps(s))
        paths.append(p)
    merged = report(paths, tmp_path / "rep")
    assert merged["drift_exponent"] == pytest.approx(3.0)
    assert merged["passed"]


def test_report_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing.json"):
        report([tmp_path / "missing.json"], tmp_path / "rep")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"config": {}, "criteria": {}}))
    with pytest.raises(ValueError, match="bad.json.*'passed'"):
        report([bad], tmp_path / "rep")
    bad.write_text(json.dumps({"config": {}, "criteria": {}, "passed": True, "drift": [{"eps": 0.1}]}))
    with pytest.raises(ValueError, match=r"drift\[0\]\.max_drift"):
        report([bad], tmp_path / "rep")


# -- CLI ------------------------------------------------------------------------------------------

def test_cli_chain(tmp_path, capsys):
    pot = tmp_path / "pot.json"
    assert main(["sample-potential", "--K", "4", "--seed", "2", "--out", str(pot)]) == EXIT_OK
    rep = tmp_path / "nr.json"
    code = main(["check-nonres", "--pot", str(pot), "--K", "3", "--rmax", "3", "--calibration-trials", "3", "--report", str(rep)])
    assert code in (EXIT_OK, EXIT_FAIL)
    assert rep.exists() and rep.with_suffix(".csv").exists()
    nf = tmp_path / "nf.json"
    assert main(["build-nf", "--pot", str(pot), "--epsilon", "1e-3", "--K", "3", "--N", "2", "--r", "4", "--out", str(nf)]) == EXIT_OK
    out = tmp_path / "conj.json"
    assert main(["verify-nf", "--nf", str(nf), "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["slope"] >= 4.8
    obs = tmp_path / "obs.csv"
    code = main(["simulate", "--pot", str(pot), "--eps", "1e-2", "--T", "0.5", "--h", "1e-2", "--cadence", "5",
                 "--out", str(obs), "--plot", str(tmp_path / "obs.png")])
    assert code == EXIT_OK and (tmp_path / "obs.png").exists()
    assert "max drift" in capsys.readouterr().out


def test_cli_experiment_and_report(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(dict(SMALL, epsilon=[1e-2])))
    outdir = tmp_path / "run"
    code = main(["experiment", "pipeline", "--config", str(cfg), "--outdir", str(outdir)])
    summary = json.loads((outdir / "summary.json").read_text())
    assert code == (EXIT_OK if summary["passed"] else EXIT_FAIL)
    status = "PASS" if summary["criteria"]["nonres"] else "FAIL"
    assert f"{status} nonres" in capsys.readouterr().out
    code = main(["experiment", "action-drift", "--config", str(cfg), "--eps-list", "1e-2,1e-3", "--out", str(tmp_path / "d.csv")])
    assert code == EXIT_OK
    assert main(["report", str(outdir / "summary.json"), "--out", str(tmp_path / "rep")]) == code
    assert (tmp_path / "rep" / "report.csv").exists()


def test_cli_errors(tmp_path, capsys):
    assert main(["check-nonres", "--pot", str(tmp_path / "nope.json"), "--report", str(tmp_path / "r.json")]) == EXIT_ERROR
    assert "nope.json" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "none.json")]) == EXIT_ERROR
    assert main(["experiment", "action-drift", "--eps-list", "1e-2"]) == EXIT_ERROR
    assert main(["verify-nf", "--nf", str(tmp_path / "x.json")]) == EXIT_ERROR
    with pytest.raises(SystemExit):
        main(["simulate"])


def test_cli_measure(tmp_path):
    out = tmp_path / "m.json"
    code = main(["measure", "--K", "3", "--rmax", "3", "--trials", "6", "--calibration-trials", "3", "--out", str(out)])
    data = json.loads(out.read_text())
    assert code == (EXIT_OK if data["within_gamma_1_7"] else EXIT_FAIL)
    assert data["trials"] == 6 and 0 <= data["fail_fraction"] <= 1
