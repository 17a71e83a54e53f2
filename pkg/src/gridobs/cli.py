"""Command-line front end.

Commands
    linearize   equilibrium + state-space matrices of a grid
    design      scenario set, decompositions, and observer gains
    analyze     convergence report and steady-state variances
    simulate    Monte Carlo error trajectories (CSV + manifest)
    reproduce   run a bundled benchmark experiment and check its claim

Exit codes: 0 success, 1 usage error, 2 model or numerical failure,
3 a reproduce-mode check failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, experiments, grid, observer, sim
from .grid import GridError
from .observer import ObserverError


def _load_config(args):
    cfg = {}
    if args.config:
        with open(args.config) as f:
            cfg = json.load(f)
    if getattr(args, "grid", None):
        cfg["grid"] = args.grid
    if getattr(args, "seed", None) is not None:
        cfg.setdefault("sim", {})["seed"] = args.seed
    if getattr(args, "replicas", None) is not None:
        cfg.setdefault("sim", {})["replicas"] = args.replicas
    return cfg


def _outdir(args):
    out = args.out or os.environ.get("GRIDOBS_OUT", "out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(path, command, cfg, extra=None):
    doc = {"tool": "gridobs", "version": __version__, "command": command,
           "config": cfg}
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, default=_jsonable)
    return doc


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj)}")


def _write_trajectory_csv(path, traj):
    n = traj.per_state_mean_sq.shape[1]
    header = ["k", "t_seconds", "mean_err_sq", "var_err_sq"]
    header += [f"mean_e{i + 1}" for i in range(n)]
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for k in range(traj.mean_err_sq.size):
            row = [k, k * traj.tau, traj.mean_err_sq[k], traj.var_err_sq[k]]
            row += list(traj.per_state_mean_sq[k])
            f.write(",".join(f"{v:.10g}" if isinstance(v, float) or hasattr(v, "item")
                             else str(v) for v in row) + "\n")


_GNUPLOT = """set datafile separator ','
set logscale y
set xlabel 'interval k'
set ylabel 'mean squared error'
plot '{csv}' using 1:3 with lines title 'mean ||eps||^2'
"""


def _maybe_gnuplot(outdir, cfg, csv_name):
    if cfg.get("outputs", {}).get("gnuplot"):
        (outdir / "plot.gp").write_text(_GNUPLOT.format(csv=csv_name))


def cmd_linearize(args):
    cfg = _load_config(args)
    g = grid.builtin(cfg["grid"]) if "/" not in str(cfg["grid"]) else grid.load_grid(cfg["grid"])
    lin = grid.linearize(g)
    outdir = _outdir(args)
    doc = {
        "grid": g.name,
        "state_labels": lin.state_labels,
        "A": lin.A, "B1": lin.B1, "B2": lin.B2, "D1": lin.D1, "D2": lin.D2,
        "eigenvalues_A": sorted(np.linalg.eigvals(lin.A).real.tolist()),
        "equilibrium": {
            "angles_rad": lin.equilibrium.angles,
            "dispatch": lin.equilibrium.p_in,
            "network_angles_rad": lin.equilibrium.network.angles,
            "network_voltages": lin.equilibrium.network.voltages,
            "residual": lin.equilibrium.residual,
        },
        "fd_step": lin.fd_step,
        "richardson_defect": lin.richardson_defect,
    }
    with open(outdir / "linearized.json", "w") as f:
        json.dump(doc, f, indent=2, default=_jsonable)
    _manifest(outdir / "manifest.json", "linearize", cfg)
    print(f"wrote {outdir / 'linearized.json'}")
    return 0


def _pipeline(cfg):
    if "channels" not in cfg or "observer" not in cfg:
        raise SystemExit2("config needs 'channels' and 'observer' sections")
    return experiments.build_pipeline(cfg)


class SystemExit2(Exception):
    pass


def cmd_design(args):
    cfg = _load_config(args)
    g, lin, scs, obs = _pipeline(cfg)
    outdir = _outdir(args)
    report = observer.check_combined_observability(scs, lin.A)
    doc = {"grid": g.name, "scenarios": [], "combined_rank": report.combined_rank,
           "state_dim": report.n}
    for s in scs:
        d = obs.decomps[s.index]
        doc["scenarios"].append({
            "index": s.index, "probability": s.probability,
            "rank": report.ranks[s.index], "n_i": d.n_i,
            "C": s.C, "L": d.L, "closed_loop_poles":
                sorted(np.linalg.eigvals(d.Ac).real.tolist()) if d.Ac is not None else None,
        })
    if obs.pole_truncations:
        doc["pole_truncations"] = {
            str(k): f"used first {v[1]} of {v[0]} requested poles"
            for k, v in obs.pole_truncations.items()}
    with open(outdir / "design.json", "w") as f:
        json.dump(doc, f, indent=2, default=_jsonable)
    _manifest(outdir / "manifest.json", "design", cfg)
    print(f"wrote {outdir / 'design.json'}")
    return 0


def cmd_analyze(args):
    cfg = _load_config(args)
    g, lin, scs, obs = _pipeline(cfg)
    rep = analysis.contraction(obs, scs)
    doc = {"grid": g.name, "convergence": rep.as_dict()}
    if rep.stable:
        ss = analysis.steady_state(obs, scs)
        doc["steady_state"] = ss.as_dict(matrices=True)
    else:
        doc["steady_state"] = {"unstable": True}
    outdir = _outdir(args)
    with open(outdir / "analysis.json", "w") as f:
        json.dump(doc, f, indent=2, default=_jsonable)
    _manifest(outdir / "manifest.json", "analyze", cfg, {"report": doc})
    print(json.dumps(doc, indent=2, default=_jsonable))
    return 0


def cmd_simulate(args):
    cfg = _load_config(args)
    g, lin, scs, obs = _pipeline(cfg)
    simcfg, traj = experiments.run_simulation(cfg, lin, obs, scs,
                                              workers=args.workers)
    outdir = _outdir(args)
    _write_trajectory_csv(outdir / "trajectory.csv", traj)
    _maybe_gnuplot(outdir, cfg, "trajectory.csv")
    rep = analysis.contraction(obs, scs)
    extra = {
        "report": rep.as_dict(),
        "seeds": traj.seeds,
        "switching_paths": traj.paths,
    }
    if rep.stable:
        extra["steady_state"] = analysis.steady_state(obs, scs).as_dict()
    _manifest(outdir / "manifest.json", "simulate", cfg, extra)
    print(f"wrote {outdir / 'trajectory.csv'} ({simcfg.replicas} replicas, "
          f"K={simcfg.K})")
    return 0


def cmd_reproduce(args):
    result = experiments.run_experiment(args.name, workers=args.workers,
                                        seed=args.seed, replicas=args.replicas)
    outdir = _outdir(args)
    traj = result.get("trajectory")
    if traj is not None:
        _write_trajectory_csv(outdir / f"{args.name}.csv", traj)
    for i, t in enumerate(result.get("all_trajectories", [])):
        _write_trajectory_csv(outdir / f"{args.name}_case{i + 1}.csv", t)
    payload = {k: v for k, v in result.items()
               if k not in ("trajectory", "all_trajectories")}
    if traj is not None:
        payload["seeds"] = traj.seeds
        payload["switching_paths"] = traj.paths
    _manifest(outdir / f"{args.name}_manifest.json", f"reproduce {args.name}",
              result["config"], {"result": payload})
    for name, ok in result["checks"].items():
        print(f"{args.name}: {name}: {'pass' if ok else 'FAIL'}")
    return 0 if result["passed"] else 3


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="gridobs",
        description="Grid state estimation under randomly interrupted sensing.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--grid", help="builtin grid name or grid JSON path")
        p.add_argument("--out", help="output directory (default: $GRIDOBS_OUT or ./out)")
        p.add_argument("--seed", type=int, help="override the simulation seed")
        p.add_argument("--replicas", type=int, help="override the replica count")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel workers for Monte Carlo replicas")

    for name, fn in (("linearize", cmd_linearize), ("design", cmd_design),
                     ("analyze", cmd_analyze), ("simulate", cmd_simulate)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(fn=fn)
    p = sub.add_parser("reproduce", help="run a bundled benchmark experiment")
    p.add_argument("name", choices=experiments.EXPERIMENTS)
    common(p)
    p.set_defaults(fn=cmd_reproduce)

    args = parser.parse_args(argv)
    if args.command in ("linearize",) and not (args.grid or args.config):
        parser.error("linearize needs --grid or --config")
    if args.command in ("design", "analyze", "simulate") and not args.config:
        parser.error(f"{args.command} needs --config")
    try:
        return args.fn(args)
    except (GridError, ObserverError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"usage error: config is missing a required field: {exc}",
              file=sys.stderr)
        return 1
    except SystemExit2 as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
