"""Command-line entry point.

Subcommands:

* ``reference``     build and certify the grid-converged benchmark fluxes
* ``mc``            one plain Monte Carlo run (flux + optional raw tallies)
* ``hybrid``        one-shot hybrid run: histories, closures, low-order solve
* ``study``         full paired replicate study (win ratios, error tables)
* ``dump-closures`` closure factors of one history ensemble

Flags override config-file values.  Outputs land in a run directory named
from the configuration digest and seed under ``--out``, the
``SLABHYBRID_OUT`` environment variable, or ``./runs``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .closures import build_closures, write_closures_csv
from .engine import run_histories, write_tally_csv
from .experiments import (
    config_digest,
    grid_refinement_study,
    linf_error,
    relative_l2_error,
    write_study_outputs,
)
from .lo_solver import solve_hybrid, write_solution_csv
from .problem import (
    ConfigurationError,
    ParsedConfig,
    RunConfig,
    SlabProblem,
    StudyConfig,
    benchmark_problem,
    build_uniform_mesh,
    load_config,
)
from .sn import CertificationError, refine_and_extrapolate

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_CERTIFICATION = 3


def _default_parsed() -> ParsedConfig:
    return ParsedConfig(
        problem=benchmark_problem(),
        run=RunConfig(histories=10000, rng_seed=0),
        cells=16,
        study=StudyConfig(),
    )


def _load(args) -> ParsedConfig:
    parsed = load_config(args.config) if args.config else _default_parsed()
    run = parsed.run
    overrides = {}
    if getattr(args, "histories", None) is not None:
        overrides["histories"] = args.histories
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        overrides["capture_mode"] = args.mode
    if overrides:
        run = replace(run, **overrides)
    cells = args.cells if getattr(args, "cells", None) is not None else parsed.cells
    return ParsedConfig(problem=parsed.problem, run=run, cells=cells, study=parsed.study)


def _problem_payload(problem: SlabProblem) -> dict:
    return {
        "length": problem.length,
        "regions": [
            {"x_left": r.x_left, "x_right": r.x_right, "sigma_t": r.sigma_t,
             "sigma_s": r.sigma_s, "q": r.q}
            for r in problem.regions
        ],
    }


def _run_dir(args, kind: str, payload: dict, seed) -> Path:
    root = Path(args.out) if args.out else Path(os.environ.get("SLABHYBRID_OUT", "runs"))
    digest = config_digest(payload)
    rundir = root / f"{kind}-{digest}-s{seed}"
    rundir.mkdir(parents=True, exist_ok=True)
    manifest = dict(payload)
    manifest["config_digest"] = digest
    manifest["version"] = __version__
    with open(rundir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return rundir


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


def cmd_reference(args) -> int:
    parsed = _load(args)
    cells_list = _int_list(args.cells) if args.cells else [4, 8, 16, 32, 64]
    payload = {"command": "reference", "problem": _problem_payload(parsed.problem), "cells": cells_list}
    rundir = _run_dir(args, "reference", payload, "na")
    for cells in cells_list:
        mesh = build_uniform_mesh(parsed.problem, cells)
        bench = refine_and_extrapolate(parsed.problem, mesh, min_digits=args.min_digits)
        with open(rundir / f"reference_I{cells}.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["cell", "x_center", "phi_ex", "certified_digits"])
            for i, xc in enumerate(mesh.centers):
                wr.writerow([i, repr(float(xc)), repr(float(bench.phi[i])), int(bench.cell_digits[i])])
        with open(rundir / f"reference_I{cells}_ladder.json", "w") as fh:
            json.dump(
                {"cells": cells, "certified_digits": bench.certified_digits,
                 "ladder": [dict(lv) for lv in bench.ladder]},
                fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"I={cells}: certified {bench.certified_digits} significant digits -> {rundir}")
    return EXIT_OK


def cmd_mc(args) -> int:
    parsed = _load(args)
    mesh = build_uniform_mesh(parsed.problem, parsed.cells)
    payload = {"command": "mc", "problem": _problem_payload(parsed.problem),
               "cells": parsed.cells, "histories": parsed.run.histories,
               "capture_mode": parsed.run.capture_mode, "seed": parsed.run.rng_seed}
    rundir = _run_dir(args, "mc", payload, parsed.run.rng_seed)
    tallies = run_histories(parsed.problem, mesh, parsed.run, workers=args.workers)
    closures = build_closures(tallies, mesh)
    bench = refine_and_extrapolate(parsed.problem, mesh)
    with open(rundir / "mc_flux.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["cell", "x_center", "phi_mc", "phi_rel_se", "phi_ex"])
        for i, xc in enumerate(mesh.centers):
            wr.writerow([i, repr(float(xc)), repr(float(closures.phi_mc[i])),
                         repr(float(closures.phi_rel_se[i])), repr(float(bench.phi[i]))])
    if args.dump_tallies:
        write_tally_csv(tallies, mesh, rundir / "tallies.csv")
    err_l2 = relative_l2_error(closures.phi_mc, bench.phi, mesh)
    err_linf = linf_error(closures.phi_mc, bench.phi)
    _write_error_summary(rundir, {"mc": {"l2": err_l2, "linf": err_linf}})
    if tallies.anomalous_histories:
        print(f"warning: {tallies.anomalous_histories} histories hit the event cap")
    print(f"mc: N={parsed.run.histories} I={parsed.cells} rel_l2={err_l2:.4e} -> {rundir}")
    return EXIT_OK


def cmd_hybrid(args) -> int:
    parsed = _load(args)
    mesh = build_uniform_mesh(parsed.problem, parsed.cells)
    payload = {"command": "hybrid", "method": args.method,
               "problem": _problem_payload(parsed.problem),
               "cells": parsed.cells, "histories": parsed.run.histories,
               "capture_mode": parsed.run.capture_mode, "seed": parsed.run.rng_seed}
    rundir = _run_dir(args, "hybrid", payload, parsed.run.rng_seed)
    tallies = run_histories(parsed.problem, mesh, parsed.run, workers=args.workers)
    closures = build_closures(tallies, mesh)
    bench = refine_and_extrapolate(parsed.problem, mesh)
    write_closures_csv(closures, mesh, rundir / "closures.csv")
    if tallies.anomalous_histories:
        print(f"warning: {tallies.anomalous_histories} histories hit the event cap")
    summary = {}
    methods = ("hqd", "hsm") if args.method == "both" else (args.method,)
    for method in methods:
        sol = solve_hybrid(parsed.problem, mesh, closures, method)
        write_solution_csv(sol, mesh, rundir / f"solution_{method}.csv")
        summary[method] = {
            "l2": relative_l2_error(sol.phi, bench.phi, mesh),
            "linf": linf_error(sol.phi, bench.phi),
        }
    summary["mc"] = {
        "l2": relative_l2_error(closures.phi_mc, bench.phi, mesh),
        "linf": linf_error(closures.phi_mc, bench.phi),
    }
    _write_error_summary(rundir, summary)
    for method, errs in summary.items():
        print(f"{method}: rel_l2={errs['l2']:.4e} rel_linf={errs['linf']:.4e}")
    print(f"outputs -> {rundir}")
    return EXIT_OK


def cmd_study(args) -> int:
    parsed = _load(args)
    study = parsed.study
    if args.replicates is not None:
        study = replace(study, replicates=args.replicates)
    if args.master_seed is not None:
        study = replace(study, master_seed=args.master_seed)
    payload = {"command": "study", "problem": _problem_payload(parsed.problem),
               "histories": list(study.histories), "cells": list(study.cells),
               "replicates": study.replicates, "capture_mode": study.capture_mode,
               "master_seed": study.master_seed}
    rundir = _run_dir(args, "study", payload, study.master_seed)
    report = grid_refinement_study(parsed.problem, study, workers=args.workers)
    write_study_outputs(report, rundir)
    print(f"study: {len(study.histories) * len(study.cells) * study.replicates} replicates -> {rundir}")
    return EXIT_OK


def cmd_dump_closures(args) -> int:
    parsed = _load(args)
    mesh = build_uniform_mesh(parsed.problem, parsed.cells)
    payload = {"command": "dump-closures", "problem": _problem_payload(parsed.problem),
               "cells": parsed.cells, "histories": parsed.run.histories,
               "capture_mode": parsed.run.capture_mode, "seed": parsed.run.rng_seed}
    rundir = _run_dir(args, "closures", payload, parsed.run.rng_seed)
    tallies = run_histories(parsed.problem, mesh, parsed.run, workers=args.workers)
    closures = build_closures(tallies, mesh)
    write_closures_csv(closures, mesh, rundir / "closures.csv")
    print(f"closures -> {rundir}")
    return EXIT_OK


def _write_error_summary(rundir: Path, summary: dict) -> None:
    with open(rundir / "errors.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slabhybrid",
        description="Hybrid Monte Carlo / deterministic transport in 1D slabs",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_run_flags=True):
        p.add_argument("--config", help="INI configuration file (defaults to the built-in benchmark)")
        p.add_argument("--out", help="output root (default $SLABHYBRID_OUT or ./runs)")
        p.add_argument("--workers", type=int, default=None, help="worker threads (default: all cores)")
        if with_run_flags:
            p.add_argument("--histories", type=int, help="override run.histories")
            p.add_argument("--cells", type=int, help="override run.cells")
            p.add_argument("--seed", type=int, help="override run.seed")
            p.add_argument("--mode", choices=("analog", "implicit"), help="override run.capture_mode")

    p = sub.add_parser("reference", help="build and certify the benchmark solution")
    p.add_argument("--cells", help="comma-separated cell counts (default 4,8,16,32,64)")
    p.add_argument("--min-digits", type=int, default=6, help="required certified significant digits")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", help="output root")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("mc", help="plain Monte Carlo run")
    common(p)
    p.add_argument("--dump-tallies", action="store_true", help="write the raw tally CSV")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("hybrid", help="one-shot hybrid run (histories, closures, low-order solve)")
    common(p)
    p.add_argument("--method", choices=("hqd", "hsm", "both"), default="both")
    p.set_defaults(func=cmd_hybrid)

    p = sub.add_parser("study", help="paired replicate study over the configured grid")
    common(p, with_run_flags=False)
    p.add_argument("--replicates", type=int, help="override study.replicates")
    p.add_argument("--master-seed", type=int, help="override study.master_seed")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("dump-closures", help="closure factors of one ensemble")
    common(p)
    p.set_defaults(func=cmd_dump_closures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificationError as exc:
        print(f"certification failure: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATION
    except Exception as exc:  # runtime failures keep a distinct exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
