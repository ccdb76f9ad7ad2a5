"""Command line entry point ``nlsnf``.

Exit codes: 0 when every checked criterion passes, 2 when a criterion
fails, 1 on operational errors (bad input, missing files, stage failures).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _const(text: str):
    return text if text == "calibrate" else float(text)


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _load_freqs(pot_path, K=None):
    from .potential import Potential, frequencies, restrict

    pot = Path(pot_path)
    if not pot.exists():
        raise FileNotFoundError(f"potential file not found: {pot}")
    freqs = frequencies(Potential.load(pot))
    if K is not None and K < freqs.lattice.K:
        freqs = restrict(freqs, K)
    return freqs


def cmd_sample_potential(args) -> int:
    from .lattice import Lattice
    from .potential import sample_potential

    V = sample_potential(args.m, args.R, Lattice(args.d, args.K), args.seed)
    V.save(args.out)
    print(f"wrote {args.out} ({V.lattice.size} sites)")
    return EXIT_OK


def _resolve_constants(args, lattice, m):
    from .potential import calibrate, frequencies, sample_potential, trial_seeds

    nu, c0 = args.nu, args.c0
    if nu == "calibrate" or c0 == "calibrate":
        cal = [frequencies(sample_potential(m, args.R, lattice, s)) for s in trial_seeds(args.calibration_seed, args.calibration_trials)]
        nu_c, c0_c = calibrate(cal, args.rmax, args.gamma, nu=None if nu == "calibrate" else nu, m=m)
        nu = nu_c if nu == "calibrate" else nu
        c0 = c0_c if c0 == "calibrate" else c0
    return nu, c0


def cmd_check_nonres(args) -> int:
    from .potential import Potential, check_nonres

    pot = Potential.load(args.pot) if Path(args.pot).exists() else None
    if pot is None:
        raise FileNotFoundError(f"potential file not found: {args.pot}")
    freqs = _load_freqs(args.pot, args.K)
    args.R = pot.R
    nu, c0 = _resolve_constants(args, freqs.lattice, pot.m)
    rep = check_nonres(freqs, args.rmax, args.gamma, nu, c0, budget=args.budget, zero_momentum_only=args.zero_momentum)
    _write_json(args.report, rep.to_json())
    csv_path = Path(args.report).with_suffix(".csv")
    csv_path.write_text(rep.summary_csv(), encoding="utf-8")
    status = "complete" if rep.complete else "INCOMPLETE (budget exceeded)"
    print(f"checked {rep.checked_count} tuples, {len(rep.violations)} violations, {status}")
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_measure(args) -> int:
    from .lattice import Lattice
    from .potential import measure_estimate

    lat = Lattice(args.d, args.K)
    nu, c0 = _resolve_constants(args, lat, args.m)
    p, se = measure_estimate(args.m, args.R, lat, args.gamma, nu, c0, args.rmax, args.trials, args.seed, zero_momentum_only=args.zero_momentum)
    b1, b2 = 4 * args.gamma ** (1 / 7), 4 * args.gamma
    out = {
        "trials": args.trials,
        "fail_fraction": p,
        "stderr": se,
        "nu": nu,
        "c0": c0,
        "gamma": args.gamma,
        "bound_gamma_1_7": b1,
        "bound_gamma": b2,
        "within_gamma_1_7": p <= b1 + 3 * se,
        "within_gamma": p <= b2 + 3 * se,
    }
    if args.out:
        _write_json(args.out, out)
    print(f"violation fraction {p:.4f} +- {se:.4f}; 4 gamma^(1/7) = {b1:.4g}; 4 gamma = {b2:.4g}")
    return EXIT_OK if out["within_gamma_1_7"] else EXIT_FAIL


def cmd_build_nf(args) -> int:
    from .nonlinearity import expand, parse_nonlinearity
    from .normal_form import build, choose_parameters, save_result

    freqs = _load_freqs(args.pot, args.K)
    spec = parse_nonlinearity(args.nonlinearity)
    N, r = choose_parameters(args.epsilon, args.beta)
    N = args.N if args.N is not None else N
    r = args.r if args.r is not None else r
    gamma = args.gamma if args.nu is not None else None
    result = build(expand(spec, freqs.lattice, r), freqs, N, r, gamma, args.nu, args.c0 if args.nu is not None else None)
    save_result(args.out, result, {"freqs": freqs.to_json(), "nonlinearity": spec.to_json(), "epsilon": args.epsilon, "beta": args.beta})
    for m, e in result.diagnostics["degrees"].items():
        print(f"m={m}: |Q|={e['Q_norm']:.3e} |chi|={e['chi_norm']:.3e} |Z|={e['Z_norm']:.3e} residual={e['residual']:.1e}")
    ok = all(e["normal_form"] and e.get("homol_bounds_ok", True) for e in result.diagnostics["degrees"].values())
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify_nf(args) -> int:
    from .nonlinearity import SeriesSpec, expand
    from .normal_form import load_result, verify_conjugacy
    from .polynomial import Frequencies

    if not Path(args.nf).exists():
        raise FileNotFoundError(f"normal form file not found: {args.nf}")
    result, data = load_result(args.nf)
    if "freqs" not in data or "nonlinearity" not in data:
        raise ValueError(f"{args.nf}: missing 'freqs' or 'nonlinearity' (write it with build-nf)")
    freqs = Frequencies.from_json(data["freqs"])
    P_list = expand(SeriesSpec.from_json(data["nonlinearity"]), freqs.lattice, result.r)
    rep = verify_conjugacy(P_list, result, freqs, args.amplitudes, seed=args.seed, tol=args.tol)
    if args.out:
        _write_json(args.out, rep)
    if rep["zero"]:
        print("residual indistinguishable from 0")
    else:
        print(f"slope {rep['slope']:.3f} (expected {rep['expected_slope']})")
    return EXIT_OK if rep["passed"] else EXIT_FAIL


def cmd_simulate(args) -> int:
    from .nonlinearity import parse_nonlinearity
    from .simulate import initial_datum, observables, simulate

    freqs = _load_freqs(args.pot)
    spec = parse_nonlinearity(args.nonlinearity)
    z0 = initial_datum(freqs.lattice, args.eps, args.rho, args.seed)
    tr = simulate(z0, args.T, args.h, args.cadence, freqs, spec, lean=True, rho=args.rho, N=args.N)
    obs = observables(tr, args.rho, args.N)
    Path(args.out).write_text(obs.to_csv(), encoding="utf-8")
    drift = float(obs.drift.max())
    print(f"max drift {drift:.3e} (eps^1.5 = {args.eps ** 1.5:.3e})")
    if args.plot:
        from .plotting import plot_observables

        plot_observables([args.out], [args.eps], args.plot)
    return EXIT_OK


def _config(args):
    from .experiment import ExperimentConfig

    over = {
        "epsilon": args.eps_list,
        "T": args.T,
        "h": args.h,
        "seed": args.seed,
        "K": args.K,
        "outdir": getattr(args, "outdir", None),
    }
    if args.config:
        return ExperimentConfig.load(args.config, over)
    return ExperimentConfig.from_json({k: v for k, v in over.items() if v is not None})


def cmd_experiment(args) -> int:
    from .experiment import run_action_drift, run_pipeline

    cfg = _config(args)
    if args.kind == "pipeline":
        summary = run_pipeline(cfg)
        for name, ok in sorted(summary["criteria"].items()):
            print(f"{'PASS' if ok else 'FAIL'} {name}")
        return EXIT_OK if summary["passed"] else EXIT_FAIL
    if not args.out:
        raise ValueError("action-drift needs --out")
    rows = run_action_drift(cfg, args.out)
    for r in rows:
        print(f"eps={r['eps']:g} max_drift={r['max_drift']:.3e} bound={r['bound']:.3e}")
    ok = all(r["max_drift"] <= r["bound"] for r in rows)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_report(args) -> int:
    from .experiment import report

    merged = report(args.summaries, args.out)
    if merged["drift_exponent"] is not None:
        print(f"drift exponent {merged['drift_exponent']:.3f}")
    print(f"wrote {Path(args.out) / 'report.csv'}")
    return EXIT_OK if merged["passed"] else EXIT_FAIL


def _nonres_args(p, calibrate_default=False):
    p.add_argument("--rmax", type=int, default=4)
    p.add_argument("--gamma", type=float, default=1e-6)
    p.add_argument("--nu", type=_const, default="calibrate" if calibrate_default else None, required=not calibrate_default)
    p.add_argument("--c0", type=_const, default="calibrate" if calibrate_default else None, required=not calibrate_default)
    p.add_argument("--calibration-seed", type=int, default=1)
    p.add_argument("--calibration-trials", type=int, default=20)
    p.add_argument("--zero-momentum", action="store_true", help="only check zero-momentum tuples")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlsnf", description="Birkhoff normal forms and stability experiments for NLS on a Fourier lattice")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-potential", help="draw a random convolution potential")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--m", type=float, default=2.0)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample_potential)

    p = sub.add_parser("check-nonres", help="check the small-divisor bound for one potential")
    p.add_argument("--pot", required=True)
    p.add_argument("--K", type=int, default=None, help="restrict to a sub-box")
    p.add_argument("--budget", type=int, default=5_000_000)
    p.add_argument("--report", required=True)
    _nonres_args(p, calibrate_default=True)
    p.set_defaults(func=cmd_check_nonres)

    p = sub.add_parser("measure", help="Monte Carlo estimate of the violating fraction of potentials")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--K", type=int, default=6)
    p.add_argument("--m", type=float, default=2.0)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--out")
    _nonres_args(p, calibrate_default=True)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("build-nf", help="compute the normal form")
    p.add_argument("--pot", required=True)
    p.add_argument("--nonlinearity", default="power:p=1,a=1")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--K", type=int, default=None, help="lattice radius for the normal form (sub-box of the potential)")
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--r", type=int, default=None)
    p.add_argument("--gamma", type=float, default=1e-6)
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--c0", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_nf)

    p = sub.add_parser("verify-nf", help="fit the conjugacy residual slope")
    p.add_argument("--nf", required=True)
    p.add_argument("--amplitudes", type=_floats, default=[1e-2, 5e-3, 2.5e-3])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=0.2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_nf)

    p = sub.add_parser("simulate", help="integrate the truncated NLS and write observables")
    p.add_argument("--pot", required=True)
    p.add_argument("--nonlinearity", default="power:p=1,a=1")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--N", type=float, default=0.0, help="tail cutoff")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--cadence", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", help="also render the observables to this image")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="end-to-end pipeline or the drift sweep")
    p.add_argument("kind", choices=["pipeline", "action-drift"])
    p.add_argument("--config")
    p.add_argument("--eps-list", type=_floats, default=None)
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--outdir", default=None)
    p.add_argument("--out", help="CSV for action-drift")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="merge summary files into tables and figures")
    p.add_argument("summaries", nargs="+")
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError, ArithmeticError) as exc:
        print(f"nlsnf: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
