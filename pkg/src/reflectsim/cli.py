"""Batch scenario runner.

Subcommands, one per experiment family:

    simulate        integrate a scenario (exact, penalty, or both) and write
                    trajectory CSVs, event logs, and requested analyses
    penalty-sweep   run the stiff-wall solver over run.k_list and fit the
                    penetration-vs-stiffness slope
    counterexample  build and certify the non-uniqueness construction
    validate        check geometry identities, force metadata, and initial
                    admissibility without simulating
    compare         run exact and stiff-wall solvers and report their gaps

Artifacts are deterministic: identical configs produce byte-identical files.
Exit codes: 0 all requested checks passed, 1 runtime/check failure,
2 configuration error.  A machine-readable summary.json is always written.
The REFLECTSIM_THREADS environment variable caps the sweep worker pool.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis as ana
from .config import ScenarioConfig, load_config
from .counterexample import make_params, profile_to_csv, verify_counterexample
from .errors import ConfigError, ReflectSimError
from .exact import simulate_exact
from .forces import estimate_lipschitz
from .geometry import validate_geometry
from .penalty import convergence_sweep, simulate_penalty
from .serialize import write_json

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("REFLECTSIM_THREADS", "1")))
    except ValueError:
        return 1


def _emit(out_dir: Path, summary: dict, quiet: bool) -> None:
    write_json(out_dir / "summary.json", summary)
    if not quiet:
        status = "ok" if summary.get("ok") else "FAILED"
        print(f"[{summary.get('command')}] {status}")
        for line in summary.get("notes", []):
            print(f"  {line}")


def _analysis_outputs(cfg: ScenarioConfig, traj, out_dir: Path, tag: str,
                      notes: list, checks: list) -> None:
    a = cfg.analysis
    traj.to_csv(out_dir / f"trajectory_{tag}.csv")
    traj.events_to_json(out_dir / f"events_{tag}.json")
    if a.get("energy_windows"):
        rep = ana.energy_report(traj, cfg.force,
                                [tuple(w) for w in a["energy_windows"]])
        rep.to_json(out_dir / f"energy_{tag}.json")
        rep.to_csv(out_dir / f"energy_{tag}.csv")
        notes.append(f"energy[{tag}]: max residual {rep.max_abs_residual:.3e}")
        tol = float(a.get("energy_tolerance", 1e-8))
        checks.append(("energy_" + tag, rep.max_abs_residual <= tol))
    if a.get("measure", False) and traj.source == "exact":
        measure = ana.extract_measure(traj)
        write_json(out_dir / f"measure_{tag}.json", measure.to_dict())
        if a.get("weak_form", False):
            fns = ana.default_test_functions(
                traj, int(a.get("n_test_functions", 20)))
            res = ana.weak_form_residual(traj, measure, cfg.force, fns)
            write_json(out_dir / f"weak_form_{tag}.json",
                       {"max_residual": res, "n_test_functions": len(fns)})
            notes.append(f"weak form[{tag}]: max residual {res:.3e}")
            tol = float(a.get("weak_form_tolerance", 1e-6))
            checks.append(("weak_form_" + tag, res <= tol))
    t0 = ana.first_grazing_time(traj)
    if t0 is not None:
        notes.append(f"first grazing contact[{tag}] at t = {t0:.12g}")


def cmd_simulate(cfg: ScenarioConfig, out_dir: Path) -> dict:
    notes: list[str] = []
    checks: list[tuple[str, bool]] = []
    trajs = {}
    if cfg.solver in ("exact", "both"):
        traj = simulate_exact(cfg.domain, cfg.force, cfg.initial, cfg.horizon,
                              cfg.options)
        trajs["exact"] = traj
        notes.append(f"exact: {len(traj.events)} events, status {traj.status}")
        jump = ana.max_speed_jump(traj)
        notes.append(f"max event speed jump {jump:.3e}")
        checks.append(("speed_continuity", jump <= cfg.options.refl_tol))
        _analysis_outputs(cfg, traj, out_dir, "exact", notes, checks)
    if cfg.solver in ("penalty", "both"):
        if cfg.k is None:
            raise ConfigError("simulate with penalty solver needs run.k")
        run = simulate_penalty(cfg.domain, cfg.force, cfg.initial, cfg.horizon,
                               cfg.k, cfg.options)
        trajs["penalty"] = run.trajectory
        notes.append(f"penalty k={cfg.k:g}: max penetration "
                     f"{run.max_penetration:.3e}")
        run.trajectory.to_csv(out_dir / "trajectory_penalty.csv")
        write_json(out_dir / "penalty_run.json",
                   {"k": run.k, "max_penetration": run.max_penetration,
                    "excursions": [[e.to_dict() for e in excs]
                                   for excs in run.excursions]})
    if cfg.solver == "both" and cfg.analysis.get("compare", True):
        gap = ana.compare_trajectories(trajs["penalty"], trajs["exact"],
                                       "sup_pos")
        vgap = ana.compare_trajectories(trajs["penalty"], trajs["exact"],
                                        "l1_vel")
        write_json(out_dir / "comparison.json",
                   {"sup_pos_gap": gap, "l1_vel_gap": vgap})
        notes.append(f"penalty vs exact: sup gap {gap:.3e}")
    ok = all(passed for _, passed in checks)
    return {"command": "simulate", "ok": ok, "notes": notes,
            "checks": [{"name": n, "pass": p} for n, p in checks]}


def cmd_penalty_sweep(cfg: ScenarioConfig, out_dir: Path) -> dict:
    if not cfg.k_list:
        raise ConfigError("penalty-sweep needs run.k_list")
    reference = simulate_exact(cfg.domain, cfg.force, cfg.initial,
                               cfg.horizon, cfg.options)
    report = convergence_sweep(cfg.domain, cfg.force, cfg.initial, cfg.horizon,
                               cfg.k_list, reference, cfg.options,
                               workers=_workers())
    report.to_csv(out_dir / "sweep.csv")
    report.to_json(out_dir / "sweep.json")
    ok = all(r.valid for r in report.rows)
    notes = [f"penetration slope {report.penetration_slope:.4f}",
             f"sup gap monotone: {report.sup_gap_monotone}"]
    return {"command": "penalty-sweep", "ok": ok, "notes": notes,
            "penetration_slope": report.penetration_slope}


def cmd_counterexample(args, out_dir: Path) -> dict:
    if args.L < 1:
        raise ConfigError("--L must be >= 1")
    if args.n_max < 1:
        raise ConfigError("--n-max must be >= 1")
    params = make_params(L=args.L)
    report = verify_counterexample(params, n_max=args.n_max)
    report.to_json(out_dir / "certificate.json")
    profile_to_csv(out_dir / "profile.csv", params, n_max=args.n_max)
    notes = [f"{c.name}: {'pass' if c.passed else 'FAIL'} "
             f"(value {c.value:.3e})" for c in report.checks]
    return {"command": "counterexample", "ok": report.passed, "notes": notes}


def cmd_validate(cfg: ScenarioConfig, out_dir: Path) -> dict:
    n_samples = int(cfg.validate.get("n_samples", 10000))
    geo = validate_geometry(cfg.domain, n_samples, cfg.seed)
    write_json(out_dir / "geometry_report.json", geo.to_dict())
    notes = [f"geometry {c.name}: {c.max_residual:.3e} "
             f"({'pass' if c.passed else 'FAIL'})" for c in geo.checks]
    ok = geo.passed

    n_lip = int(cfg.validate.get("lipschitz_samples", 1000))
    box = (cfg.domain.bounding_box.lo, cfg.domain.bounding_box.hi)
    est = estimate_lipschitz(cfg.force, n_lip, cfg.seed, box=box,
                             t_range=(0.0, cfg.horizon))
    declared = cfg.force.lipschitz_constant
    lip_ok = declared is None or est <= declared * (1 + 1e-9)
    ok = ok and lip_ok
    notes.append(f"force lipschitz estimate {est:.3e}"
                 + (f" <= declared {declared:.3e}: "
                    f"{'pass' if lip_ok else 'FAIL'}" if declared is not None
                    else " (no declared constant)"))

    d = cfg.domain.signed_distance(cfg.initial.X)
    admissible = bool(np.all(d <= cfg.options.pos_tol))
    ok = ok and admissible
    for i, di in enumerate(d):
        if di > cfg.options.pos_tol:
            notes.append(f"particle {i} inadmissible: signed distance {di:.3e}")
    return {"command": "validate", "ok": ok, "notes": notes,
            "geometry_passed": geo.passed, "lipschitz_estimate": est}


def cmd_compare(cfg: ScenarioConfig, out_dir: Path) -> dict:
    if cfg.k is None:
        raise ConfigError("compare needs run.k")
    exact = simulate_exact(cfg.domain, cfg.force, cfg.initial, cfg.horizon,
                           cfg.options)
    run = simulate_penalty(cfg.domain, cfg.force, cfg.initial, cfg.horizon,
                           cfg.k, cfg.options)
    gap = ana.compare_trajectories(run.trajectory, exact, "sup_pos")
    vgap = ana.compare_trajectories(run.trajectory, exact, "l1_vel")
    exact.to_csv(out_dir / "trajectory_exact.csv")
    run.trajectory.to_csv(out_dir / "trajectory_penalty.csv")
    write_json(out_dir / "comparison.json",
               {"k": cfg.k, "sup_pos_gap": gap, "l1_vel_gap": vgap,
                "max_penetration": run.max_penetration})
    notes = [f"sup position gap {gap:.3e}", f"L1 velocity gap {vgap:.3e}"]
    return {"command": "compare", "ok": True, "notes": notes}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reflectsim",
                                description="confined-particle dynamics lab")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", required=True, help="scenario TOML file")
        sp.add_argument("--out", default="out", help="artifact directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override run.seed")
        sp.add_argument("--quiet", action="store_true")

    common(sub.add_parser("simulate", help="run the configured solver(s)"))
    common(sub.add_parser("penalty-sweep", help="stiffness convergence study"))
    ce = sub.add_parser("counterexample",
                        help="certify the non-uniqueness construction")
    ce.add_argument("--L", type=int, default=2,
                    help="smoothness order of the forcing")
    ce.add_argument("--n-max", dest="n_max", type=int, default=10,
                    help="number of bounce arcs to certify")
    common(ce, needs_config=False)
    common(sub.add_parser("validate", help="check a scenario without running"))
    common(sub.add_parser("compare", help="exact vs stiff-wall gap"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "counterexample":
            summary = cmd_counterexample(args, out_dir)
        else:
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            handler = {"simulate": cmd_simulate,
                       "penalty-sweep": cmd_penalty_sweep,
                       "validate": cmd_validate,
                       "compare": cmd_compare}[args.command]
            summary = handler(cfg, out_dir)
    except ConfigError as exc:
        summary = {"command": args.command, "ok": False,
                   "error": "config", "notes": [str(exc)]}
        _emit(out_dir, summary, args.quiet)
        return EXIT_USAGE
    except ReflectSimError as exc:
        summary = {"command": args.command, "ok": False,
                   "error": type(exc).__name__, "notes": [str(exc)]}
        _emit(out_dir, summary, args.quiet)
        return EXIT_RUNTIME
    _emit(out_dir, summary, args.quiet)
    return EXIT_OK if summary.get("ok") else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
