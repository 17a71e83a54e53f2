"""Bundled benchmark experiments (fig3 .. fig8) and their pass checks.

Each experiment is a versioned JSON config under gridobs/experiments/.
Running one builds the full pipeline (grid -> linearization -> scenario
set -> observer -> analysis -> Monte Carlo), writes trajectory data, and
evaluates the qualitative claim the experiment was designed to show.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from . import analysis, grid, observer, shs, sim

EXPERIMENTS = ("fig3", "fig4", "fig5", "fig6", "fig7", "fig8")


def load_experiment(name):
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    text = resources.files("gridobs").joinpath("experiments").joinpath(
        name + ".json").read_text()
    return json.loads(text)


def channel_row(labels, measure):
    """Selector row for a '<bus>.<delta|omega>' measurement spec."""
    bus, quantity = measure.split(".")
    label = f"{quantity}_{bus}"
    if label not in labels:
        raise ValueError(f"no state {label!r}; states are {labels}")
    row = np.zeros(len(labels))
    row[labels.index(label)] = 1.0
    return row


def build_scenarios(cfg, lin):
    channels = [
        shs.SensorChannel(
            name=c.get("name", c["measure"]),
            row=channel_row(lin.state_labels, c["measure"]),
            delivery_ratio=c["rho"],
            noise_std=c.get("sigma", 0.0),
        )
        for c in cfg["channels"]
    ]
    overrides = {int(k): v for k, v in cfg.get("scenario_sigma_overrides", {}).items()}
    return shs.scenarios_from_channels(channels, overrides or None)


def build_pipeline(cfg):
    """grid -> linearization -> scenarios -> designed observer."""
    g = grid.builtin(cfg["grid"]) if isinstance(cfg["grid"], str) and "/" not in cfg["grid"] \
        else grid.load_grid(cfg["grid"])
    lin = grid.linearize(g)
    scs = build_scenarios(cfg, lin)
    ocfg = cfg["observer"]
    poles = ocfg["poles"]
    if isinstance(poles, dict):
        poles = {int(k): v for k, v in poles.items()}
    obs = observer.design(
        lin.A, scs, poles, ocfg["tau"],
        completion=ocfg.get("completion", "orthonormal"),
        n_sub=ocfg.get("n_sub", 64))
    return g, lin, scs, obs


def run_simulation(cfg, lin, obs, scs, workers=1, **overrides):
    scfg = dict(cfg["sim"])
    scfg.update({k: v for k, v in overrides.items() if v is not None})
    simcfg = sim.SimConfig(
        K=scfg["K"], replicas=scfg.get("replicas", 1), seed=scfg.get("seed", 0),
        x0=scfg.get("x0"), e0=scfg.get("e0"), xhat0=scfg.get("xhat0"))
    return simcfg, sim.monte_carlo(lin.A, obs, scs, simcfg, workers=workers)


def _with_rhos(cfg, rhos):
    out = json.loads(json.dumps(cfg))
    for ch, rho in zip(out["channels"], rhos):
        ch["rho"] = rho
    return out


def mean_crossing_time(eps_sq, fraction=0.01):
    """Average over replicas of the first interval where the squared error
    drops below fraction * initial; censors at K+1 for replicas that never
    get there.  eps_sq has shape (R, K+1)."""
    R, Kp1 = eps_sq.shape
    target = fraction * eps_sq[:, 0]
    times = np.full(R, float(Kp1))
    for r in range(R):
        below = np.flatnonzero(eps_sq[r] <= target[r])
        if below.size:
            times[r] = float(below[0])
    return float(times.mean())


def run_experiment(name, workers=1, seed=None, replicas=None):
    """Execute one bundled experiment; returns (result dict, checks dict).

    `checks` maps check names to booleans; the experiment passes when all
    are true.  `result` carries the trajectory and analysis numbers used.
    """
    cfg = load_experiment(name)
    kind = cfg["check"]["type"]
    result = {"name": name, "config": cfg}
    checks = {}

    if kind == "convergence":
        g, lin, scs, obs = build_pipeline(cfg)
        rep = analysis.contraction(obs, scs)
        simcfg, traj = run_simulation(cfg, lin, obs, scs, workers,
                                      seed=seed, replicas=replicas)
        result.update(report=rep.as_dict(), trajectory=traj,
                      steady=analysis.steady_state(obs, scs).as_dict())
        checks["gamma_below_one"] = rep.gamma_exact < 1.0
        kmax = cfg["check"]["max_intervals_to_1pct"]
        checks["error_reaches_1pct"] = traj.time_to_fraction(0.01) <= kmax

    elif kind == "tradeoff":
        g, lin, scs, obs = build_pipeline(cfg)
        base_poles = cfg["check"]["baseline_poles"]
        base_obs = observer.design(lin.A, scs, base_poles, cfg["observer"]["tau"],
                                   n_sub=cfg["observer"].get("n_sub", 64))
        rep = analysis.contraction(obs, scs)
        rep0 = analysis.contraction(base_obs, scs)
        ss = analysis.steady_state(obs, scs)
        ss0 = analysis.steady_state(base_obs, scs)
        simcfg, traj = run_simulation(cfg, lin, obs, scs, workers,
                                      seed=seed, replicas=replicas)
        result.update(report=rep.as_dict(), baseline_report=rep0.as_dict(),
                      steady=ss.as_dict(), baseline_steady=ss0.as_dict(),
                      trajectory=traj)
        checks["steady_error_larger"] = ss.mu_state > ss0.mu_state
        checks["decay_faster"] = rep.gamma_exact < rep0.gamma_exact

    elif kind == "reliability_sweep":
        times = []
        gammas = []
        trajs = []
        for rhos in cfg["check"]["cases"]:
            case_cfg = _with_rhos(cfg, rhos)
            g, lin, scs, obs = build_pipeline(case_cfg)
            rep = analysis.contraction(obs, scs)
            simcfg, traj = run_simulation(case_cfg, lin, obs, scs, workers,
                                          seed=seed, replicas=replicas)
            times.append(mean_crossing_time(traj.err_sq))
            gammas.append(rep.gamma_exact)
            trajs.append(traj)
        result.update(times_to_1pct=times, gammas=gammas, trajectory=trajs[0],
                      all_trajectories=trajs)
        checks["faster_with_higher_delivery"] = all(
            times[i] < times[i + 1] for i in range(len(times) - 1))

    elif kind == "degraded":
        case_cfg = _with_rhos(cfg, cfg["check"]["case"])
        ref_cfg = _with_rhos(cfg, cfg["check"]["reference_case"])
        g, lin, scs, obs = build_pipeline(case_cfg)
        rep = analysis.contraction(obs, scs)
        g2, lin2, scs2, obs2 = build_pipeline(ref_cfg)
        rep_ref = analysis.contraction(obs2, scs2)
        ss_ref = analysis.steady_state(obs2, scs2)
        result.update(report=rep.as_dict(), reference_report=rep_ref.as_dict(),
                      reference_steady=ss_ref.as_dict())
        checks["gamma_strictly_worse"] = rep.gamma_exact > rep_ref.gamma_exact
        if rep.stable:
            ss = analysis.steady_state(obs, scs)
            result["steady"] = ss.as_dict()
            checks["diverges_or_much_larger_floor"] = (
                ss.mu_state > 10.0 * ss_ref.mu_state)
        else:
            result["steady"] = {"unstable": True}
            checks["diverges_or_much_larger_floor"] = True
        simcfg, traj = run_simulation(case_cfg, lin, obs, scs, workers,
                                      seed=seed, replicas=replicas)
        result["trajectory"] = traj

    elif kind == "sensor_selection":
        g, lin, scs, obs = build_pipeline(cfg)
        base = load_experiment(cfg["check"]["baseline"])
        gb, linb, scsb, obsb = build_pipeline(base)
        ss = analysis.steady_state(obs, scs)
        ssb = analysis.steady_state(obsb, scsb)
        simcfg, traj = run_simulation(cfg, lin, obs, scs, workers,
                                      seed=seed, replicas=replicas)
        result.update(steady=ss.as_dict(), baseline_steady=ssb.as_dict(),
                      trajectory=traj)
        ratio = ss.mu_state / ssb.mu_state
        result["floor_ratio"] = ratio
        checks["selection_changes_error"] = ratio > 1.5 or ratio < 1 / 1.5

    elif kind == "steady_floor":
        g, lin, scs, obs = build_pipeline(cfg)
        rep = analysis.contraction(obs, scs)
        ss = analysis.steady_state(obs, scs)
        simcfg, traj = run_simulation(cfg, lin, obs, scs, workers,
                                      seed=seed, replicas=replicas)
        result.update(report=rep.as_dict(), steady=ss.as_dict(), trajectory=traj)
        k0 = cfg["check"]["floor_window_start"]
        floor = float(np.mean(traj.mean_err_sq[k0:]))
        result["simulated_floor"] = floor
        tol = cfg["check"]["floor_rel_tol"]
        checks["floor_matches_analysis"] = abs(floor - ss.mu_state) <= tol * ss.mu_state
        checks["error_reaches_1pct"] = traj.time_to_fraction(0.01) <= cfg["check"][
            "max_intervals_to_1pct"]

    else:
        raise ValueError(f"unknown check type {kind!r}")

    result["passed"] = all(checks.values())
    result["checks"] = checks
    return result
