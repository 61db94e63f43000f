"""Command-line entry point: scenario runs, oracle, audits, tunnel curves.

Subcommands:
  run-oob / run-ib / run-joint / run-plant  -- simulate a scenario config
  oracle  -- print the convex-program equilibrium for a static scenario
  audit   -- passivity report over an existing trace
  beta    -- tunnel-length curve of a config's graph

Every run writes trace.csv and summary.txt to the output directory, plus
plot images unless --no-plots is given. Exit codes: 0 success, 1 config
error, 2 numerical/model error, 3 audit or acceptance failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import composition, flow, passivity
from .config import load_config
from .errors import (AuditError, ConfigError, InputError, ModelError,
                     NumericalError, SaturationError, WormsimError)
from .inband import beta_estimate, exhaustive_beta
from .trace_io import emit_trace, read_trace


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="wormsim",
        description="Fluid-flow simulator of multipath routing under "
                    "wormhole attacks")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_sim_flags=True):
        p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--out", default="out", help="output directory")
        if with_sim_flags:
            p.add_argument("--seed", type=int, default=None,
                           help="override the config seed")
            p.add_argument("--dt", type=float, default=None,
                           help="override the integration step")
            p.add_argument("--horizon", type=float, default=None,
                           help="override the simulated horizon")
            p.add_argument("--no-plots", action="store_true",
                           help="skip plot rendering")

    for name, help_text in (
            ("run-oob", "out-of-band wormhole scenario"),
            ("run-ib", "in-band wormhole scenario"),
            ("run-joint", "joint out-of-band plus in-band scenario"),
            ("run-plant", "scenario with the sampled-data plant attached")):
        add_common(sub.add_parser(name, help=help_text))

    add_common(sub.add_parser("oracle", help="equilibrium via the convex "
                                             "program"), with_sim_flags=False)

    audit_p = sub.add_parser("audit", help="passivity report on a trace")
    add_common(audit_p, with_sim_flags=False)
    audit_p.add_argument("--trace", required=True, help="trace.csv to audit")
    audit_p.add_argument("--tol", type=float, default=None,
                         help="violation tolerance (default 10*dt)")

    beta_p = sub.add_parser("beta", help="tunnel-length curve for a graph")
    add_common(beta_p, with_sim_flags=False)
    beta_p.add_argument("--trials", type=int, default=None)
    beta_p.add_argument("--no-plots", action="store_true")
    return parser


def _check_scenario_kind(command: str, cfg):
    if command == "run-oob" and cfg.ib is not None:
        raise ConfigError("run-oob: config defines an in-band attack; "
                          "use run-ib or run-joint")
    if command == "run-ib" and cfg.oob is not None:
        raise ConfigError("run-ib: config defines an out-of-band attack; "
                          "use run-oob or run-joint")
    if command == "run-joint" and (cfg.oob is None or cfg.ib is None):
        raise ConfigError("run-joint: config needs both attack sections")
    if command == "run-plant" and cfg.plant is None:
        raise ConfigError("run-plant: config has no plant section")
    if command != "run-plant" and cfg.plant is not None:
        raise ConfigError(f"{command}: plant configs run with run-plant")


def _summary_lines(trace, assembly, elapsed: float) -> list:
    spec, inc = assembly.spec, assembly.inc
    p = assembly.params
    lines = [f"horizon={trace.meta['horizon']} dt={trace.dt} "
             f"seed={trace.meta['seed']}"]
    if trace.n_rows > 1:
        window = min(p.conv_window, trace.n_rows - 1)
        conv = composition.converged(trace, window, p.conv_tol)
        lines.append(f"converged={conv} (window={window}, tol={p.conv_tol})")
    else:
        lines.append("converged=n/a (initial row only)")
    path_totals = {}
    for i, src in enumerate(spec.sources):
        finals = [trace.data[f"r_s{i+1}_p{j+1}"][-1]
                  for j in range(len(src.paths))]
        lines.append(f"source {src.node}: final allocation "
                     + " ".join(f"{v:.6g}" for v in finals))
        for j, v in enumerate(finals):
            path_totals[j] = path_totals.get(j, 0.0) + v
    lines.append("per-path totals: " + " ".join(
        f"p{j+1}={v:.6g}" for j, v in sorted(path_totals.items())))
    for j, link in enumerate(spec.links):
        if link.kind != "valid":
            lines.append(
                f"wormhole link {link.id}: final flow "
                f"{trace.data[f'rl_{link.id}'][-1]:.6g}, drop "
                f"{trace.data[f'drop_{link.id}'][-1]:.6g}")
    for i, src in enumerate(spec.sources):
        avg = composition.average_source_delay(trace, inc, i)
        lines.append(f"source {src.node}: time-averaged delay {avg:.6g}")
    if "x_plant" in trace.data:
        x = trace.data["x_plant"]
        lines.append(f"plant: final x={x[-1]:.6g}, "
                     f"final-third variance={np.var(x[2*len(x)//3:]):.6g}")
    lines.append(f"events={len(trace.events)}")
    for ev in trace.events[:20]:
        lines.append(f"  {ev}")
    if len(trace.events) > 20:
        lines.append(f"  ... {len(trace.events) - 20} more")
    lines.append(f"wall time {elapsed:.2f}s")
    return lines


def _plot(trace, assembly, outdir: str):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib unavailable; skipping plots", file=sys.stderr)
        return
    t = trace.data["t"]
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, src in enumerate(assembly.spec.sources):
        for j in range(len(src.paths)):
            ax.plot(t, trace.data[f"r_s{i+1}_p{j+1}"],
                    label=f"{src.node} path {j+1}")
    ax.set_xlabel("time")
    ax.set_ylabel("path rate")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(os.path.join(outdir, "rates.png"), dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    for i, src in enumerate(assembly.spec.sources):
        for j in range(len(src.paths)):
            ax.plot(t, trace.data[f"q_s{i+1}_p{j+1}"],
                    label=f"{src.node} path {j+1}")
    ax.set_xlabel("time")
    ax.set_ylabel("path price")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(os.path.join(outdir, "delays.png"), dpi=120)
    plt.close(fig)

    if "x_plant" in trace.data:
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(t, trace.data["x_plant"])
        ax.set_xlabel("time")
        ax.set_ylabel("plant state")
        fig.tight_layout()
        fig.savefig(os.path.join(outdir, "plant.png"), dpi=120)
        plt.close(fig)


def _cmd_run(args, command: str) -> int:
    cfg = load_config(args.config)
    _check_scenario_kind(command, cfg)
    assembly = cfg.assembly()
    t0 = time.perf_counter()
    trace = composition.simulate(assembly, horizon=args.horizon,
                                 dt=args.dt, seed=args.seed)
    elapsed = time.perf_counter() - t0
    os.makedirs(args.out, exist_ok=True)
    emit_trace(trace, os.path.join(args.out, "trace.csv"))
    lines = _summary_lines(trace, assembly, elapsed)
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    if not args.no_plots:
        _plot(trace, assembly, args.out)
    return 0


def _cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    assembly = cfg.assembly()
    laws = composition.total_link_laws(assembly)
    result = flow.equilibrium_oracle(assembly.inc, laws,
                                     assembly.source_totals)
    lines = [f"oracle converged in {result.iterations} iterations, "
             f"slack {result.wardrop_slack:.3e}"]
    for i, src in enumerate(assembly.spec.sources):
        vals = " ".join(f"{v:.6g}" for v in result.per_source[i])
        lines.append(f"source {src.node}: equilibrium allocation {vals}")
    totals = {}
    for i, src in enumerate(assembly.spec.sources):
        for j, v in enumerate(result.per_source[i]):
            totals[j] = totals.get(j, 0.0) + v
    lines.append("per-path totals: " + " ".join(
        f"p{j+1}={v:.6g}" for j, v in sorted(totals.items())))
    print("\n".join(lines))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "oracle.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def _cmd_audit(args) -> int:
    cfg = load_config(args.config)
    assembly = cfg.assembly()
    trace = read_trace(args.trace)
    trace.meta.update({
        "link_ids": [l.id for l in assembly.spec.links],
        "penalty": assembly.detector.penalty if assembly.detector else 0.0,
        "source_totals": assembly.source_totals,
    })
    evals = passivity.audit_report(trace, assembly, args.tol)
    os.makedirs(args.out, exist_ok=True)
    lines = []
    with open(os.path.join(args.out, "audit.csv"), "w") as fh:
        fh.write("block,ok,violations,max_violation,min_storage,tol\n")
        for ev in evals:
            fh.write(f"{ev.block},{int(ev.ok)},{ev.violations},"
                     f"{ev.max_violation:.12g},{ev.min_storage:.12g},"
                     f"{ev.tol:.12g}\n")
            status = "PASS" if ev.ok else "FAIL"
            lines.append(f"{status} {ev.block}: violations={ev.violations} "
                         f"max={ev.max_violation:.3e} "
                         f"min_storage={ev.min_storage:.3e} tol={ev.tol:.3g}")
    with open(os.path.join(args.out, "audit.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0 if all(ev.ok for ev in evals) else 3


def _cmd_beta(args) -> int:
    cfg = load_config(args.config)
    if cfg.ib is None or cfg.ib.mode != "beta":
        raise ConfigError("beta: config needs adversary.ib mode = 'beta'")
    tbl = cfg.raw["adversary"]["ib"]
    xs = [float(v) for v in tbl.get("x_grid", [0.2, 0.4, 0.6, 0.8, 1.0])]
    trials = args.trials or int(tbl.get("trials", 400))
    seed = int(tbl.get("beta_seed", 12345))
    w1, w2 = str(tbl["w1"]), str(tbl["w2"])
    fallback = float(tbl["fallback"]) if "fallback" in tbl else None
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for k, x in enumerate(xs):
        mean, se = beta_estimate(cfg.spec, w1, w2, x, trials, seed + k,
                                 fallback)
        rows.append((x, mean, se))
    exact = exhaustive_beta(cfg.spec, w1, w2, fallback)
    with open(os.path.join(args.out, "beta.csv"), "w") as fh:
        fh.write("x,beta_mean,std_err\n")
        for x, mean, se in rows:
            fh.write(f"{x:.12g},{mean:.12g},{se:.12g}\n")
    for x, mean, se in rows:
        print(f"x={x:.3g}: beta={mean:.6g} +- {se:.3g}")
    print(f"exhaustive at x=1: {exact:.6g}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command in ("run-oob", "run-ib", "run-joint", "run-plant"):
            return _cmd_run(args, args.command)
        if args.command == "oracle":
            return _cmd_oracle(args)
        if args.command == "audit":
            return _cmd_audit(args)
        if args.command == "beta":
            return _cmd_beta(args)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, InputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ModelError, NumericalError, SaturationError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except AuditError as exc:
        print(f"audit error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except WormsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
