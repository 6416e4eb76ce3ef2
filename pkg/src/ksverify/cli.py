"""Command-line entry point.

    ksverify <scenario> --config <path> [--out <dir>] [--override key=value ...]

Exit status: 0 every enabled check passed, 1 a check failed, 2 usage or
configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .chemo import loglip_modulus, weighted_loglip_profile
from .config import SCENARIOS, ConfigError, RunConfig, build_profile, load_config, parallel_map, parse_config
from .dynamics import Trajectory, simulate
from .laws import AdmissibilityError
from .transport import ProductState, displacement_interpolate, w2_1d
from .verify import contraction_check, evi_check, fit_geodesic_constants, omega_convexity_check

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3
VERIFY_COLUMNS = ("check", "t_or_s", "lhs", "rhs", "slack", "constant_used")
ENERGY_SLACK = 1e-6

log = logging.getLogger("ksverify")


@dataclass
class Outcome:
    status: int
    summary: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    trajectories: dict = field(default_factory=dict)  # sub-directory name ("" = run root) -> Trajectory


# -- output helpers -----------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_verify_csv(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERIFY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def _append_block(path: Path, title: str, items: dict) -> None:
    with open(path, "a") as fh:
        fh.write(f"# {title}\n")
        for k, v in items.items():
            fh.write(f"{title}.{k}={_fmt(v)}\n")


def energy_monotone(traj: Trajectory) -> tuple[bool, float]:
    F = traj.column("energy")
    if F.size < 2:
        return True, -math.inf
    excess = np.diff(F) - ENERGY_SLACK * (1.0 + np.abs(F[:-1]))
    return bool(excess.max() <= 0.0), float(excess.max())


def _trajectory_summary(traj: Trajectory) -> dict:
    mass = traj.column("mass")
    ok, worst = energy_monotone(traj)
    return {
        "run_status": traj.status,
        "t_final": float(traj.column("t")[-1]),
        "mass_drift": float(abs(mass[-1] / mass[0] - 1.0)),
        "min_value": float(np.min(traj.column("min_value"))),
        "linf_max": float(np.max(traj.column("linf"))),
        "energy_monotone": ok,
        "energy_worst_increase": worst,
    }


def _abort_status(*trajs) -> int | None:
    return EXIT_ABORT if any(t.status == "aborted" for t in trajs) else None


# -- scenarios ------------------------------------------------------------------------

def run_simulate(cfg: RunConfig) -> Outcome:
    grid = cfg.grid()
    rho0 = cfg.initial_density(grid)
    traj = simulate(cfg.system_params(), rho0, cfg.initial_chemo(rho0))
    summary = _trajectory_summary(traj)
    ok = traj.status == "ok" and summary["energy_monotone"] and summary["min_value"] >= 0
    status = _abort_status(traj) or (EXIT_PASS if ok else EXIT_FAIL)
    rows = []
    F = traj.column("energy")
    for t, a, b in zip(traj.column("t")[1:], F[1:], F[:-1]):
        rhs = b + ENERGY_SLACK * (1.0 + abs(b))
        rows.append(("energy-monotone", t, a, rhs, rhs - a, ENERGY_SLACK))
    return Outcome(status, summary, rows, {"": traj})


def run_verify_evi(cfg: RunConfig) -> Outcome:
    grid = cfg.grid()
    rho0 = cfg.initial_density(grid)
    traj = simulate(cfg.system_params(), rho0, cfg.initial_chemo(rho0))
    summary = _trajectory_summary(traj)
    if (code := _abort_status(traj)) is not None:
        return Outcome(code, summary, [], {"": traj})
    rows, ok = [], True
    for i, ref in enumerate(cfg.references(grid)):
        z = ProductState(ref, cfg.initial_chemo(ref) if cfg.epsilon > 0 else None)
        rep = evi_check(traj, z, weighted=cfg.weighted, C=cfg.C)
        rows += rep.rows(f"evi-ref{i}")
        summary[f"C_min_ref{i}"] = rep.C_min
        ok &= rep.passed()
    return Outcome(EXIT_PASS if ok else EXIT_FAIL, summary, rows, {"": traj})


def _partner_at_distance(rho0, partner, target: float):
    """Point on the geodesic towards ``partner`` at W2 distance ``target`` from rho0 (capped at the partner)."""
    W = w2_1d(rho0, partner)
    if target >= W:
        return partner
    # grid projection shortens the geodesic slightly, so solve for s rather than use target / W
    gap = lambda s: w2_1d(rho0, displacement_interpolate(rho0, partner, s)) - target
    s = brentq(gap, 0.0, 1.0, xtol=1e-14, rtol=1e-12)
    return displacement_interpolate(rho0, partner, s)


def run_verify_contraction(cfg: RunConfig) -> Outcome:
    grid = cfg.grid()
    rho0 = cfg.initial_density(grid)
    if cfg.perturbation > 0:
        rho1 = _partner_at_distance(rho0, build_profile(cfg.partner, grid, cfg.mass), cfg.perturbation)
    else:
        rho1 = rho0
    params = cfg.system_params()
    v0 = cfg.initial_chemo(rho0)
    a, b = parallel_map(lambda r: simulate(params, r, v0), [rho0, rho1])
    summary = _trajectory_summary(a)
    trajs = {"": a, "partner": b}
    if (code := _abort_status(a, b)) is not None:
        return Outcome(code, summary, [], trajs)
    rep = contraction_check(a, b, C=cfg.C, weighted=cfg.weighted, tol=1e-9 * cfg.perturbation**2)
    summary.update(D0=math.sqrt(rep.d2[0]), D_final=math.sqrt(rep.d2[-1]), C=rep.C,
                   min_slack=float(rep.slack.min()), uniqueness_mode=rep.uniqueness_mode)
    return Outcome(EXIT_PASS if rep.passed else EXIT_FAIL, summary, rep.rows(), trajs)


def run_verify_convexity(cfg: RunConfig) -> Outcome:
    grid = cfg.grid()
    r0, r1 = cfg.initial_density(grid), build_profile(cfg.endpoint, grid, cfg.mass)
    chemo = (lambda r: cfg.initial_chemo(r)) if cfg.epsilon > 0 else (lambda r: None)
    z0, z1 = ProductState(r0, chemo(r0)), ProductState(r1, chemo(r1))
    s = np.linspace(0.0, 1.0, cfg.s_samples)
    params = cfg.system_params()
    law = cfg.diffusion_law()
    if cfg.C is None:
        fitted = fit_geodesic_constants(z0, z1, params, s, T_fit=cfg.fit_T, sample_dt=cfg.fit_sample_dt,
                                        runner=parallel_map)
        C, Q, R_T = fitted.C_evi, fitted.Q, fitted.R_T
    else:
        C, Q = cfg.C, max(float(r0.values.max()), float(r1.values.max()))
        R_T = C * Q
    rep = omega_convexity_check(z0, z1, R_T, cfg.epsilon, cfg.alpha, law, s, tol=cfg.convexity_tol)
    summary = {"C_evi": C, "Q": Q, "R_T": R_T, "min_slack": float(rep.slack.min()), "tol": cfg.convexity_tol}
    return Outcome(EXIT_PASS if rep.passed else EXIT_FAIL, summary, rep.rows(), {})


def run_estimate_loglip(cfg: RunConfig) -> Outcome:
    grid = cfg.grid()
    rho0 = cfg.initial_density(grid)
    traj = simulate(cfg.system_params(), rho0, cfg.initial_chemo(rho0))
    summary = _trajectory_summary(traj)
    if (code := _abort_status(traj)) is not None:
        return Outcome(code, summary, [], {"": traj})
    samples = [(t, traj.v_at(k)) for k, t in enumerate(traj.times)]
    moduli = [(t, loglip_modulus(v, cfg.pair_budget)) for t, v in samples]
    profile = weighted_loglip_profile(samples, cfg.pair_budget)
    C_sup = max(c for _, c in moduli)
    K = max((w for _, w, _ in profile), default=0.0)
    G = max((g for _, _, g in profile), default=0.0)
    rows = [("loglip", t, c, C_sup, C_sup - c, C_sup) for t, c in moduli]
    rows += [("loglip-weighted", t, w, K, K - w, K) for t, w, _ in profile]
    rows += [("grad-sup-log", t, g, G, G - g, G) for t, _, g in profile]
    summary.update(loglip_sup=C_sup, weighted_sup=K, grad_log_sup=G, pair_budget=cfg.pair_budget)
    return Outcome(EXIT_PASS, summary, rows, {"": traj})


def run_suite(cfg: RunConfig, criteria=None, echo=print) -> Outcome:
    from .acceptance import run_all

    results = run_all(criteria, echo=echo)
    if echo:
        width = max(len(r.title) for r in results)
        echo("")
        echo(f"{'#':>3}  {'criterion':<{width}}  result  seconds")
        for r in results:
            echo(f"{r.number:>3}  {r.title:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:7.1f}")
    rows = [(f"criterion-{r.number}", r.number, int(r.passed), 1, int(r.passed) - 1, "") for r in results]
    summary = {f"criterion_{r.number}": ("pass" if r.passed else "fail") + f" | {r.summary}" for r in results}
    ok = all(r.passed for r in results)
    return Outcome(EXIT_PASS if ok else EXIT_FAIL, summary, rows, {})


RUNNERS = {
    "simulate": run_simulate,
    "verify-evi": run_verify_evi,
    "verify-contraction": run_verify_contraction,
    "verify-convexity": run_verify_convexity,
    "estimate-loglip": run_estimate_loglip,
    "suite": run_suite,
}


def run_scenario(cfg: RunConfig, out_dir=None, plots: bool = True, **kwargs) -> tuple[int, Outcome]:
    """Execute ``cfg.scenario`` and write its run directory; returns the exit status and outcome."""
    outcome = RUNNERS[cfg.scenario](cfg, **kwargs)
    out = Path(out_dir or cfg.out or f"runs/{cfg.scenario}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.as_text())
    meta = out / "meta.txt"
    for sub, traj in outcome.trajectories.items():
        traj.save(out / sub)
    if "" not in outcome.trajectories:
        meta.write_text("")
    _append_block(meta, "config", {k: v for k, v in (line.split("=", 1) for line in cfg.as_text().splitlines())})
    _append_block(meta, "summary", {"exit_status": outcome.status, **outcome.summary})
    write_verify_csv(outcome.rows, out / "verify.csv")
    if plots:
        from . import plotting

        for sub, traj in outcome.trajectories.items():
            prefix = f"{sub}_" if sub else ""
            plotting.plot_diagnostics(traj, out / f"{prefix}diagnostics.png")
            plotting.plot_snapshots(traj, out / f"{prefix}snapshots.png")
        if outcome.rows and cfg.scenario != "suite":
            plotting.plot_checks(outcome.rows, out / "verify.png")
    return outcome.status, outcome


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ksverify", description=__doc__.split("\n\n")[0])
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--config", help="key=value configuration file (omit for defaults)")
    p.add_argument("--out", help="run directory (default runs/<scenario>)")
    p.add_argument("--override", nargs="+", action="extend", default=[], metavar="KEY=VALUE",
                   help="settings applied after the config file")
    p.add_argument("--criteria", help="suite only: comma-separated criterion numbers")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    overrides = [f"scenario={args.scenario}", *args.override]
    try:
        cfg = load_config(args.config, overrides) if args.config else parse_config("", overrides)
        kwargs = {}
        if args.criteria:
            if args.scenario != "suite":
                raise ConfigError("--criteria applies to the suite scenario only")
            kwargs["criteria"] = [int(c) for c in args.criteria.split(",") if c.strip()]
        if args.quiet and args.scenario == "suite":
            kwargs["echo"] = None
    except (ConfigError, AdmissibilityError, OSError, ValueError) as exc:
        print(f"ksverify: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        status, outcome = run_scenario(cfg, args.out, plots=not args.no_plots, **kwargs)
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"ksverify: numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    if not args.quiet and cfg.scenario != "suite":
        for k, v in outcome.summary.items():
            print(f"{k} = {_fmt(v)}")
    print(f"{cfg.scenario}: {'PASS' if status == EXIT_PASS else 'ABORT' if status == EXIT_ABORT else 'FAIL'}")
    return status


if __name__ == "__main__":
    sys.exit(main())
