"""Command-line front end: run scenarios, compare runs, list presets.

``run`` writes three artifacts into the output directory:

* ``trace.csv``     - decimated per-step trace (fixed column order below)
* ``metrics.json``  - run-level metrics over the full-resolution signals
* ``conditions.json`` - empirical convergence-condition diagnostics

Floats are emitted with shortest round-trip formatting, so re-running the
same manifest reproduces the files byte for byte.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .presets import PRESETS, scenario_from_config
from .sim import ConfigError, DivergenceError, condition_checks, run

# one column per scalar; vector quantities get one column per joint/parameter
TRACE_COLUMNS = (
    ["t", "q1", "q2", "qd1", "qd2", "e1", "e2", "e_norm", "r1", "r2"]
    + [f"theta_hat{i}" for i in range(1, 6)]
    + [f"theta_err{i}" for i in range(1, 6)]
    + ["theta_err_norm", "tau1", "tau2", "tau_d1", "tau_d2",
       "tau_d_hat1", "tau_d_hat2", "tau_d_err1", "tau_d_err2", "delta"]
    + [f"ycal{i}" for i in range(1, 6)]
    + [f"wcal{i}" for i in range(1, 6)]
    + ["v_lyap", "fn1", "fn2", "lambda1", "lambda2",
       "cum_delta_sq", "cum_lambda_sq"]
)


def _fmt(value):
    return repr(float(value))


def _trace_row(rec):
    vals = ([rec.t] + list(rec.q) + list(rec.q_d) + list(rec.e) + [rec.e_norm]
            + list(rec.r) + list(rec.theta_hat) + list(rec.theta_err)
            + [rec.theta_err_norm] + list(rec.tau) + list(rec.tau_d)
            + list(rec.tau_d_hat) + list(rec.tau_d_err) + [rec.Delta]
            + list(rec.Ycal) + list(rec.Wcal) + [rec.V] + list(rec.fn)
            + list(rec.lam) + [rec.cum_delta_sq, rec.cum_lambda_sq])
    return ",".join(_fmt(v) for v in vals)


def write_trace_csv(path, trace):
    with open(path, "w") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for rec in trace:
            fh.write(_trace_row(rec) + "\n")


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_manifest(args):
    doc = {}
    if args.config is not None:
        with open(args.config) as fh:
            text = fh.read()
        doc = json.loads(text) if text.strip() else {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: top level must be a JSON object")
    if args.preset is not None:
        doc["preset"] = args.preset
    doc.setdefault("preset", "paper2dof")
    scen_sec = doc.setdefault("scenario", {})
    sim_sec = doc.setdefault("sim", {})
    if args.law is not None:
        sim_sec["law"] = args.law
    if args.t_end is not None:
        sim_sec["t_end"] = args.t_end
    if args.step is not None:
        sim_sec["h"] = args.step
    if args.decimation is not None:
        sim_sec["decimation"] = args.decimation
    if args.disturbance == "off":
        scen_sec["disturbance"] = "off"
    return scenario_from_config(doc)


def cmd_run(args):
    try:
        scenario, config = _load_manifest(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        trace, metrics = run(scenario, config, backend=args.backend)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    report = condition_checks(trace, metrics)
    write_trace_csv(out_dir / "trace.csv", trace)
    write_json(out_dir / "metrics.json", metrics.to_dict())
    write_json(out_dir / "conditions.json", report.to_dict())

    fw = metrics.final_window_seconds
    print(f"run: law={config.law} t=[{config.t0:g},{config.t_end:g}]s "
          f"h={config.h:g} backend={metrics.backend}")
    print(f"final {fw:g}s window means:  ||e|| = {metrics.final_window_mean_e:.4e} rad   "
          f"||theta_err|| = {metrics.final_window_mean_theta_err:.4e}   "
          f"||tau_d_err|| = {metrics.final_window_mean_tau_d_err:.4e} N*m")
    inc = ", ".join(f"{v:.3e}" for v in metrics.delta_l2_quarter_increments)
    print(f"cumulative delta^2 integral = {metrics.delta_l2_final:.4e} "
          f"(quarter increments: {inc})")
    print(f"artifacts written to {out_dir}")
    return 0


_COMPARE_FIELDS = (
    ("final_window_mean_e", "mean ||e||"),
    ("final_window_mean_theta_err", "mean ||theta_err||"),
    ("final_window_mean_tau_d_err", "mean ||tau_d_err||"),
    ("final_window_sup_e", "sup ||e||"),
    ("final_window_sup_theta_err", "sup ||theta_err||"),
    ("final_window_sup_tau_d_err", "sup ||tau_d_err||"),
)


def cmd_compare(args):
    sides = []
    for d in (args.dir_a, args.dir_b):
        path = Path(d) / "metrics.json"
        if not path.exists():
            print(f"error: {path} not found", file=sys.stderr)
            return 2
        with open(path) as fh:
            sides.append(json.load(fh))
    a, b = sides
    missing = [k for k, _ in _COMPARE_FIELDS if k not in a or k not in b]
    if missing:
        print(f"error: incompatible metrics, missing {missing}", file=sys.stderr)
        return 2
    width = max(len(label) for _, label in _COMPARE_FIELDS)
    print(f"A = {args.dir_a} ({a.get('law', '?')})")
    print(f"B = {args.dir_b} ({b.get('law', '?')})")
    print(f"{'metric':<{width}}  {'A':>13}  {'B':>13}  winner")
    for key, label in _COMPARE_FIELDS:
        va, vb = a[key], b[key]
        winner = "A" if va < vb else ("B" if vb < va else "tie")
        print(f"{label:<{width}}  {va:13.5e}  {vb:13.5e}  {winner}")
    return 0


def cmd_presets(args):
    for name in sorted(PRESETS):
        scen = PRESETS[name]()
        print(f"{name}: n={scen.model.n} n_theta={scen.model.n_theta} "
              f"theta={np.array2string(scen.params.theta, separator=', ')}")
    return 0


def cmd_bench(args):
    from .bench import run_benchmark
    return run_benchmark(t_end=args.t_end, h=args.step, law=args.law)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ivdrem",
        description="Composite adaptive disturbance rejection via IV-DREM",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate a scenario and write artifacts")
    p_run.add_argument("--preset", default=None,
                       help=f"built-in scenario ({', '.join(sorted(PRESETS))})")
    p_run.add_argument("--config", default=None, help="JSON config file")
    p_run.add_argument("--law", choices=["proposed", "baseline", "none"], default=None)
    p_run.add_argument("--t-end", type=float, default=None, dest="t_end")
    p_run.add_argument("--step", type=float, default=None, help="integrator step h")
    p_run.add_argument("--decimation", type=int, default=None,
                       help="trace output stride in steps")
    p_run.add_argument("--disturbance", choices=["on", "off"], default="on")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--backend", choices=["compiled", "python"], default=None)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare the metrics of two runs")
    p_cmp.add_argument("dir_a")
    p_cmp.add_argument("dir_b")
    p_cmp.set_defaults(func=cmd_compare)

    p_pre = sub.add_parser("presets", help="list built-in scenarios")
    p_pre.set_defaults(func=cmd_presets)

    p_bench = sub.add_parser("bench", help="benchmark compiled vs python backends")
    p_bench.add_argument("--t-end", type=float, default=5.0, dest="t_end")
    p_bench.add_argument("--step", type=float, default=1e-3)
    p_bench.add_argument("--law", choices=["proposed", "baseline", "none"],
                         default="proposed")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
