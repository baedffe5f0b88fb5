"""Closure functionals derived from Monte Carlo tallies.

The track-length sums of a :class:`~slabhybrid.engine.TallySet` yield the
cell-average Eddington factor, the second-moment correction factor, and the
scalar-flux estimate; the face-crossing sums yield the boundary factors that
close the low-order boundary conditions.  A noise-free variant built from
converged discrete-ordinates moments supports testing the low-order solvers
in isolation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import TallySet
from .problem import Mesh1D, SlabProblem

__all__ = [
    "THIRD",
    "BoundaryFactors",
    "ClosureSet",
    "estimate_eddington",
    "estimate_sm_factor",
    "estimate_scalar_flux",
    "estimate_boundary_factors",
    "build_closures",
    "closures_from_moments",
    "oracle_closures",
    "write_closures_csv",
]

THIRD = 1.0 / 3.0


@dataclass(frozen=True)
class BoundaryFactors:
    """Face closure data for one vacuum boundary.

    ``flux_to_current`` is the magnitude of the net current divided by the
    face scalar flux (the Robin coefficient of the low-order boundary
    condition); ``eddington`` and ``sm_factor`` are the face analogues of the
    cell factors.  ``fallback`` marks the diffusion values (1/2, 1/3, 0, 0)
    used when no particle crossed the face.
    """

    flux_to_current: float
    eddington: float
    sm_factor: float
    flux: float
    fallback: bool = False


_FALLBACK_BOUNDARY = BoundaryFactors(
    flux_to_current=0.5, eddington=THIRD, sm_factor=0.0, flux=0.0, fallback=True
)


@dataclass(frozen=True)
class ClosureSet:
    """Cell and boundary closure factors estimated from one history ensemble."""

    eddington: np.ndarray
    sm_factor: np.ndarray
    phi_mc: np.ndarray
    eddington_rel_se: np.ndarray
    phi_rel_se: np.ndarray
    left: BoundaryFactors
    right: BoundaryFactors
    fallback_cells: tuple[int, ...]
    rng_seed: int | None
    histories: int | None

    @property
    def ncells(self) -> int:
        return self.eddington.size


def estimate_eddington(tallies: TallySet, i: int) -> float:
    """Cell Eddington factor: ratio of the mu^2-weighted to plain track sums.

    Falls back to the diffusion value 1/3 for cells without tracks.
    """
    t = tallies.sum_wl[i]
    if t > 0.0:
        return float(tallies.sum_mu2_wl[i] / t)
    return THIRD


def estimate_scalar_flux(tallies: TallySet, i: int, histories: int, dx_i: float) -> float:
    """Track-length scalar-flux estimate S_tot * sum(w l) / (N dx)."""
    return float(tallies.total_source * tallies.sum_wl[i] / (histories * dx_i))


def estimate_sm_factor(tallies: TallySet, i: int, histories: int, dx_i: float) -> float:
    """Second-moment correction factor S_tot * sum((1/3 - mu^2) w l) / (N dx).

    Evaluated as (sum_wl/3 - sum_mu2_wl); algebraically this equals
    (1/3 - E_i) * phi_i under the shared normalization.
    """
    resid = tallies.sum_wl[i] / 3.0 - tallies.sum_mu2_wl[i]
    return float(tallies.total_source * resid / (histories * dx_i))


def estimate_boundary_factors(tallies: TallySet, side: str, histories: int) -> BoundaryFactors:
    """Boundary factors from the face-crossing sums of the outermost face.

    With no crossings the diffusion fallback (1/2, 1/3, 0, 0) is returned.
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    face = 0 if side == "left" else tallies.ncells
    fsum = tallies.face_w_over_mu[face]
    if fsum <= 0.0:
        return _FALLBACK_BOUNDARY
    phi_b = float(tallies.total_source * fsum / histories)
    c_b = float(abs(tallies.face_w_signed[face]) / fsum)
    e_b = float(tallies.face_mu_w[face] / fsum)
    f_b = (THIRD - e_b) * phi_b
    return BoundaryFactors(flux_to_current=c_b, eddington=e_b, sm_factor=f_b, flux=phi_b)


def _history_stats(tallies: TallySet, i: int):
    """Per-history mean/variance/covariance of the two track sums of cell i."""
    n = tallies.histories
    if n < 2:
        return None
    t_mean = tallies.sum_wl[i] / n
    u_mean = tallies.sum_mu2_wl[i] / n
    var_t = (tallies.sum_wl_sq[i] - n * t_mean * t_mean) / (n - 1)
    var_u = (tallies.sum_mu2_wl_sq[i] - n * u_mean * u_mean) / (n - 1)
    cov = (tallies.sum_wl_cross[i] - n * t_mean * u_mean) / (n - 1)
    return t_mean, u_mean, var_t, var_u, cov


def build_closures(tallies: TallySet, mesh: Mesh1D) -> ClosureSet:
    """Assemble the full closure set (all cells plus both boundaries)."""
    n = tallies.histories
    if n < 1:
        raise ValueError("tally set holds no completed histories")
    ncells = tallies.ncells
    dx = mesh.widths
    edd = np.empty(ncells)
    smf = np.empty(ncells)
    phi = np.empty(ncells)
    edd_se = np.full(ncells, np.nan)
    phi_se = np.full(ncells, np.nan)
    fallback = []
    for i in range(ncells):
        if tallies.sum_wl[i] > 0.0:
            edd[i] = estimate_eddington(tallies, i)
            phi[i] = estimate_scalar_flux(tallies, i, n, dx[i])
            smf[i] = estimate_sm_factor(tallies, i, n, dx[i])
            stats = _history_stats(tallies, i)
            if stats is not None:
                t_mean, u_mean, var_t, var_u, cov = stats
                if t_mean > 0.0:
                    phi_se[i] = math.sqrt(max(var_t, 0.0) / n) / t_mean
                if t_mean > 0.0 and u_mean > 0.0:
                    relvar = (
                        var_u / (n * u_mean * u_mean)
                        + var_t / (n * t_mean * t_mean)
                        - 2.0 * cov / (n * u_mean * t_mean)
                    )
                    edd_se[i] = math.sqrt(max(relvar, 0.0))
        else:
            edd[i] = THIRD
            smf[i] = 0.0
            phi[i] = 0.0
            fallback.append(i)
    return ClosureSet(
        eddington=edd,
        sm_factor=smf,
        phi_mc=phi,
        eddington_rel_se=edd_se,
        phi_rel_se=phi_se,
        left=estimate_boundary_factors(tallies, "left", n),
        right=estimate_boundary_factors(tallies, "right", n),
        fallback_cells=tuple(fallback),
        rng_seed=tallies.rng_seed,
        histories=n,
    )


def closures_from_moments(
    phi: np.ndarray,
    second_moment: np.ndarray,
    left: BoundaryFactors,
    right: BoundaryFactors,
) -> ClosureSet:
    """Noise-free closure set from exact cell-average angular moments."""
    phi = np.asarray(phi, dtype=np.float64)
    m2 = np.asarray(second_moment, dtype=np.float64)
    edd = m2 / phi
    smf = (THIRD - edd) * phi
    zeros = np.zeros_like(phi)
    return ClosureSet(
        eddington=edd,
        sm_factor=smf,
        phi_mc=phi.copy(),
        eddington_rel_se=zeros.copy(),
        phi_rel_se=zeros.copy(),
        left=left,
        right=right,
        fallback_cells=(),
        rng_seed=None,
        histories=None,
    )


def oracle_closures(
    problem: SlabProblem,
    target_mesh: Mesh1D,
    refine_factor: int | None = None,
    quad_order: int = 128,
    tol: float = 1e-12,
) -> ClosureSet:
    """Closures from a converged discrete-ordinates solve, restricted to the mesh.

    Used to exercise the low-order solvers with zero statistical noise.  The
    solve runs on half-range Gauss ordinates on a mesh refined to roughly
    2048 cells unless ``refine_factor`` is given explicitly.
    """
    from . import sn

    ncells = target_mesh.ncells
    if refine_factor is None:
        refine_factor = max(1, -(-2048 // ncells))
    fine_edges = np.empty(ncells * refine_factor + 1)
    for i in range(ncells):
        fine_edges[i * refine_factor : (i + 1) * refine_factor + 1] = np.linspace(
            target_mesh.edges[i], target_mesh.edges[i + 1], refine_factor + 1
        )
    fine_mesh = Mesh1D(fine_edges)
    sol = sn.source_iteration(problem, fine_mesh, sn.double_gauss(quad_order), tol=tol)

    phi = sol.phi.reshape(ncells, refine_factor).mean(axis=1)
    m2 = sol.second_moment.reshape(ncells, refine_factor).mean(axis=1)

    def face_factors(psi_edge: np.ndarray) -> BoundaryFactors:
        w = sol.quad.weight
        mu = sol.quad.mu
        flux = float(np.sum(w * psi_edge))
        cur = float(np.sum(w * mu * psi_edge))
        mom2 = float(np.sum(w * mu * mu * psi_edge))
        c_b = abs(cur) / flux
        e_b = mom2 / flux
        return BoundaryFactors(
            flux_to_current=c_b, eddington=e_b, sm_factor=(THIRD - e_b) * flux, flux=flux
        )

    return closures_from_moments(
        phi, m2, face_factors(sol.psi_left), face_factors(sol.psi_right)
    )


def write_closures_csv(closures: ClosureSet, mesh: Mesh1D, path: str | Path) -> None:
    """Closure dump: one row per cell plus a two-row boundary section."""
    fallback = set(closures.fallback_cells)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["cell", "x_center", "eddington", "sm_factor", "phi_mc", "eddington_rel_se", "phi_rel_se", "fallback"])
        centers = mesh.centers
        for i in range(closures.ncells):
            wr.writerow(
                [
                    i,
                    repr(float(centers[i])),
                    repr(float(closures.eddington[i])),
                    repr(float(closures.sm_factor[i])),
                    repr(float(closures.phi_mc[i])),
                    repr(float(closures.eddington_rel_se[i])),
                    repr(float(closures.phi_rel_se[i])),
                    int(i in fallback),
                ]
            )
        wr.writerow(["boundary", "side", "flux_to_current", "eddington", "sm_factor", "flux", "fallback", ""])
        for side, b in (("left", closures.left), ("right", closures.right)):
            wr.writerow(
                [
                    "boundary",
                    side,
                    repr(b.flux_to_current),
                    repr(b.eddington),
                    repr(b.sm_factor),
                    repr(b.flux),
                    int(b.fallback),
                    "",
                ]
            )
