"""Statistical experiment harness: paired replicate studies and error tables.

Each replicate runs one history ensemble and derives the Monte Carlo flux and
both hybrid fluxes from that same tally set, so the error comparison is
paired by construction.  Replicate seeds derive from a master seed by counter
offset and the report assembly is an ordered reduction, which makes the whole
study byte-reproducible regardless of worker count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .closures import build_closures
from .engine import run_histories
from .lo_solver import solve_hybrid
from .problem import Mesh1D, RunConfig, SlabProblem, StudyConfig, build_uniform_mesh
from .sn import BenchmarkSolution, refine_and_extrapolate

__all__ = [
    "METHODS",
    "ReplicateResult",
    "StudyReport",
    "relative_l2_error",
    "linf_error",
    "run_paired_replicate",
    "win_ratio",
    "grid_refinement_study",
    "write_study_outputs",
]

METHODS = ("mc", "hqd", "hsm")
NORMS = ("l2", "linf")


def relative_l2_error(phi, phi_ex, mesh: Mesh1D) -> float:
    """Width-weighted relative L2 error of phi against the reference phi_ex."""
    phi = np.asarray(phi, dtype=np.float64)
    phi_ex = np.asarray(phi_ex, dtype=np.float64)
    if phi.shape != phi_ex.shape:
        raise ValueError("flux arrays must have equal length")
    dx = mesh.widths
    denom = float(np.sum(phi_ex * phi_ex * dx))
    if denom <= 0.0:
        raise ValueError("reference flux is identically zero")
    num = float(np.sum((phi - phi_ex) ** 2 * dx))
    return float(np.sqrt(num / denom))


def linf_error(phi, phi_ex) -> float:
    """Relative sup-norm error: max|phi - phi_ex| / max|phi_ex|."""
    phi = np.asarray(phi, dtype=np.float64)
    phi_ex = np.asarray(phi_ex, dtype=np.float64)
    if phi.shape != phi_ex.shape:
        raise ValueError("flux arrays must have equal length")
    denom = float(np.max(np.abs(phi_ex)))
    if denom <= 0.0:
        raise ValueError("reference flux is identically zero")
    return float(np.max(np.abs(phi - phi_ex)) / denom)


@dataclass(frozen=True)
class ReplicateResult:
    """Paired error record of one history ensemble on one mesh."""

    seed: int
    histories: int
    cells: int
    mc_l2: float
    hqd_l2: float
    hsm_l2: float
    mc_linf: float
    hqd_linf: float
    hsm_linf: float
    fallback_cells: int
    wall_time_s: float

    def error(self, method: str, norm: str = "l2") -> float:
        return getattr(self, f"{method}_{norm}")


def run_paired_replicate(
    problem: SlabProblem,
    mesh: Mesh1D,
    config: RunConfig,
    reference: BenchmarkSolution,
    workers: int | None = None,
) -> ReplicateResult:
    """One ensemble, three solutions, six error norms.

    The Monte Carlo flux and both hybrid solves all derive from the same
    tally set; closure provenance is asserted to guarantee the pairing.
    """
    t0 = time.perf_counter()
    tallies = run_histories(problem, mesh, config, workers=workers)
    closures = build_closures(tallies, mesh)
    if closures.rng_seed != config.rng_seed or closures.histories != config.histories:
        raise RuntimeError("closure provenance does not match the ensemble configuration")
    hqd = solve_hybrid(problem, mesh, closures, "hqd")
    hsm = solve_hybrid(problem, mesh, closures, "hsm")
    if hqd.rng_seed != closures.rng_seed or hsm.rng_seed != closures.rng_seed:
        raise RuntimeError("solution provenance does not match the closure set")
    phi_ex = reference.phi
    elapsed = time.perf_counter() - t0
    return ReplicateResult(
        seed=config.rng_seed,
        histories=config.histories,
        cells=mesh.ncells,
        mc_l2=relative_l2_error(closures.phi_mc, phi_ex, mesh),
        hqd_l2=relative_l2_error(hqd.phi, phi_ex, mesh),
        hsm_l2=relative_l2_error(hsm.phi, phi_ex, mesh),
        mc_linf=linf_error(closures.phi_mc, phi_ex),
        hqd_linf=linf_error(hqd.phi, phi_ex),
        hsm_linf=linf_error(hsm.phi, phi_ex),
        fallback_cells=len(closures.fallback_cells),
        wall_time_s=elapsed,
    )


def win_ratio(results: list[ReplicateResult], method: str, norm: str = "l2") -> float:
    """Fraction of replicates where the hybrid beats its paired MC error.

    Exact ties count as losses.
    """
    if not results:
        raise ValueError("no replicates given")
    wins = sum(1 for r in results if r.error(method, norm) < r.error("mc", norm))
    return wins / len(results)


@dataclass
class StudyReport:
    """Full study over a (histories, cells) grid of paired replicates."""

    problem: SlabProblem
    study: StudyConfig
    results: dict[tuple[int, int], list[ReplicateResult]] = field(default_factory=dict)
    references: dict[int, BenchmarkSolution] = field(default_factory=dict)

    def replicates(self, histories: int, cells: int) -> list[ReplicateResult]:
        return self.results[(histories, cells)]

    def win_ratio(self, histories: int, cells: int, method: str, norm: str = "l2") -> float:
        return win_ratio(self.results[(histories, cells)], method, norm)

    def errors(self, histories: int, cells: int, method: str, norm: str = "l2") -> np.ndarray:
        return np.array([r.error(method, norm) for r in self.results[(histories, cells)]])

    def mean_error(self, histories: int, cells: int, method: str, norm: str = "l2") -> float:
        return float(self.errors(histories, cells, method, norm).mean())

    def error_ratios(self, histories: int, method: str, norm: str = "l2") -> dict[int, float]:
        """Mean-error ratio between each grid and the next coarser one,
        keyed by the finer cell count."""
        cells = sorted(self.study.cells)
        out = {}
        for coarse, fine in zip(cells, cells[1:]):
            out[fine] = self.mean_error(histories, coarse, method, norm) / self.mean_error(
                histories, fine, method, norm
            )
        return out


def grid_refinement_study(
    problem: SlabProblem,
    study: StudyConfig,
    workers: int | None = None,
    references: dict[int, BenchmarkSolution] | None = None,
) -> StudyReport:
    """Run the full paired study over the configured (histories, cells) grid.

    The seed of replicate r in configuration c (row-major over histories then
    cells) is ``master_seed + c * replicates + r``.
    """
    report = StudyReport(problem=problem, study=study)
    if references is None:
        references = {}
    for cells in study.cells:
        if cells not in references:
            references[cells] = refine_and_extrapolate(problem, build_uniform_mesh(problem, cells))
    report.references = references

    config_index = 0
    for histories in study.histories:
        for cells in study.cells:
            mesh = build_uniform_mesh(problem, cells)
            reference = references[cells]
            replicates = []
            base = study.master_seed + config_index * study.replicates
            for r in range(study.replicates):
                config = RunConfig(
                    histories=histories,
                    rng_seed=base + r,
                    capture_mode=study.capture_mode,
                )
                replicates.append(
                    run_paired_replicate(problem, mesh, config, reference, workers=workers)
                )
            report.results[(histories, cells)] = replicates
            config_index += 1
    return report


def _fmt(x: float) -> str:
    return repr(float(x))


def _package_version() -> str:
    from . import __version__

    return __version__


def config_digest(payload: dict) -> str:
    """Stable short hash of a JSON-serializable configuration."""
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def write_study_outputs(report: StudyReport, outdir: str | Path) -> None:
    """Emit the five study CSVs plus a reproducibility manifest.

    All files are byte-deterministic for a fixed master seed: rows follow the
    configuration grid order and floats are written with shortest round-trip
    formatting.  Timing is intentionally excluded.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    study = report.study
    length = report.problem.length

    with open(outdir / "errors.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["cells", "dx", "histories", "replicate", "seed"]
                    + [f"{m}_{n}" for m in METHODS for n in NORMS] + ["fallback_cells"])
        for histories in study.histories:
            for cells in study.cells:
                for idx, r in enumerate(report.results[(histories, cells)]):
                    wr.writerow(
                        [cells, _fmt(length / cells), histories, idx, r.seed]
                        + [_fmt(r.error(m, n)) for m in METHODS for n in NORMS]
                        + [r.fallback_cells]
                    )

    with open(outdir / "win_ratio.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["cells", "dx", "histories", "method", "norm", "win_ratio"])
        for histories in study.histories:
            for cells in study.cells:
                for method in ("hqd", "hsm"):
                    for norm in NORMS:
                        wr.writerow(
                            [cells, _fmt(length / cells), histories, method, norm,
                             _fmt(report.win_ratio(histories, cells, method, norm))]
                        )

    with open(outdir / "error_means.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["cells", "dx", "histories", "method", "norm", "mean", "median", "std"])
        for histories in study.histories:
            for cells in study.cells:
                for method in METHODS:
                    for norm in NORMS:
                        errs = report.errors(histories, cells, method, norm)
                        wr.writerow(
                            [cells, _fmt(length / cells), histories, method, norm,
                             _fmt(errs.mean()), _fmt(np.median(errs)),
                             _fmt(errs.std(ddof=1) if errs.size > 1 else 0.0)]
                        )

    with open(outdir / "error_ratios.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["histories", "method", "cells_fine", "dx_fine", "ratio_coarse_over_fine"])
        for histories in study.histories:
            for method in METHODS:
                for fine, ratio in report.error_ratios(histories, method).items():
                    wr.writerow([histories, method, fine, _fmt(length / fine), _fmt(ratio)])

    with open(outdir / "sorted_errors.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["cells", "histories", "method", "rank", "l2_error"])
        for histories in study.histories:
            for cells in study.cells:
                for method in METHODS:
                    errs = np.sort(report.errors(histories, cells, method, "l2"))
                    for rank, err in enumerate(errs):
                        wr.writerow([cells, histories, method, rank, _fmt(err)])

    payload = {
        "master_seed": study.master_seed,
        "histories": list(study.histories),
        "cells": list(study.cells),
        "replicates": study.replicates,
        "capture_mode": study.capture_mode,
        "problem": {
            "length": report.problem.length,
            "regions": [
                {"x_left": r.x_left, "x_right": r.x_right, "sigma_t": r.sigma_t,
                 "sigma_s": r.sigma_s, "q": r.q}
                for r in report.problem.regions
            ],
        },
        "linf_normalization": "max-abs of the reference flux (relative sup norm)",
        "aggregation": "error_means.csv lists mean, median and sample std per configuration",
        "version": _package_version(),
    }
    payload["config_digest"] = config_digest(payload)
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
