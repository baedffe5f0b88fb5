"""Second-order finite-volume low-order solvers closed by Monte Carlo factors.

Two closed forms of the cell-balance equation are supported:

* the quasidiffusion form, whose face currents difference the product
  E_i * phi_i against the width-weighted face cross section, and
* the second-moment form, a plain diffusion operator (coefficient 1/3) with
  the closure moved entirely into additive right-hand-side corrections built
  from the factors F.

Both use the same Robin-type boundary closure: the face current equals the
measured flux-to-current ratio times the (eliminated) face flux, with a
half-cell gradient relation supplying the second equation.  With diffusion
closures (E = 1/3, F = 0, face factors 1/2 and 1/3) both forms assemble the
identical Marshak-like system.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .closures import THIRD, ClosureSet
from .problem import Mesh1D, SlabProblem

__all__ = [
    "AssemblyError",
    "SingularSystemError",
    "SolverError",
    "TridiagonalSystem",
    "LoSolution",
    "face_sigma_and_width",
    "assemble_hqd",
    "assemble_hsm",
    "solve_tridiagonal",
    "solve_hybrid",
    "balance_residual",
    "write_solution_csv",
]

_RESIDUAL_REL = 1e-10


class AssemblyError(RuntimeError):
    """The closure set does not cover the mesh."""


class SingularSystemError(RuntimeError):
    """Forward elimination hit a zero pivot."""


class SolverError(RuntimeError):
    """The direct solve failed its residual postcondition."""


@dataclass
class TridiagonalSystem:
    """Assembled cell-balance system plus the boundary bookkeeping needed to
    evaluate discrete particle balance after the solve.

    ``lower[0]`` and ``upper[-1]`` are zero by construction.  ``leak_coeff``
    and ``leak_rhs`` give the outflow through each boundary face as
    leak_coeff * phi_cell - leak_rhs.
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    rhs: np.ndarray
    leak_coeff: tuple[float, float] = (0.0, 0.0)
    leak_rhs: tuple[float, float] = (0.0, 0.0)

    @property
    def size(self) -> int:
        return self.diag.size


@dataclass(frozen=True)
class LoSolution:
    """Cell-average scalar flux of one low-order solve."""

    phi: np.ndarray
    method: str
    rng_seed: int | None
    histories: int | None


def face_sigma_and_width(
    sigma_t_i: float, sigma_t_ip1: float, dx_i: float, dx_ip1: float
) -> tuple[float, float]:
    """Width-weighted face cross section and the face width (half-cell sum)."""
    sigma_face = (sigma_t_i * dx_i + sigma_t_ip1 * dx_ip1) / (dx_i + dx_ip1)
    return sigma_face, 0.5 * (dx_i + dx_ip1)


def _check_closures(mesh: Mesh1D, closures: ClosureSet) -> None:
    if closures.ncells != mesh.ncells:
        raise AssemblyError(
            f"closure set covers {closures.ncells} cells, mesh has {mesh.ncells}"
        )
    if not (np.all(np.isfinite(closures.eddington)) and np.all(np.isfinite(closures.sm_factor))):
        raise AssemblyError("closure set contains non-finite factors")


def _assemble(
    mesh: Mesh1D,
    sig_t: np.ndarray,
    sig_a: np.ndarray,
    q: np.ndarray,
    edd: np.ndarray,
    edd_left: float,
    edd_right: float,
    c_left: float,
    c_right: float,
) -> TridiagonalSystem:
    """Cell-balance system for face currents -(E phi)' / Sigma_t.

    The second-moment form routes through here with edd = 1/3 everywhere, so
    diffusion-closure equivalence of the two methods is structural.
    """
    n = mesh.ncells
    dx = mesh.widths
    denom = np.empty(max(n - 1, 0))
    for k in range(n - 1):
        sf, wf = face_sigma_and_width(sig_t[k], sig_t[k + 1], dx[k], dx[k + 1])
        denom[k] = sf * wf

    lower = np.zeros(n)
    diag = np.zeros(n)
    upper = np.zeros(n)
    rhs = q * dx

    h_left = sig_t[0] * dx[0] / 2.0
    h_right = sig_t[n - 1] * dx[n - 1] / 2.0
    a_left = c_left * edd[0] / (c_left * h_left + edd_left)
    a_right = c_right * edd[n - 1] / (c_right * h_right + edd_right)

    for i in range(n):
        d = sig_a[i] * dx[i]
        if i > 0:
            lower[i] = -edd[i - 1] / denom[i - 1]
            d += edd[i] / denom[i - 1]
        else:
            d += a_left
        if i < n - 1:
            upper[i] = -edd[i + 1] / denom[i]
            d += edd[i] / denom[i]
        else:
            d += a_right
        diag[i] = d

    return TridiagonalSystem(
        lower=lower,
        diag=diag,
        upper=upper,
        rhs=rhs,
        leak_coeff=(a_left, a_right),
        leak_rhs=(0.0, 0.0),
    )


def assemble_hqd(problem: SlabProblem, mesh: Mesh1D, closures: ClosureSet) -> TridiagonalSystem:
    """Quasidiffusion-form system closed by the measured Eddington factors."""
    _check_closures(mesh, closures)
    sig_t, sig_s, q = mesh.cell_data(problem)
    sig_a = sig_t - sig_s
    return _assemble(
        mesh,
        sig_t,
        sig_a,
        q,
        closures.eddington,
        closures.left.eddington,
        closures.right.eddington,
        closures.left.flux_to_current,
        closures.right.flux_to_current,
    )


def assemble_hsm(problem: SlabProblem, mesh: Mesh1D, closures: ClosureSet) -> TridiagonalSystem:
    """Second-moment-form system: diffusion operator plus F-difference sources.

    The right-hand-side corrections are the unique ones consistent with the
    quasidiffusion form under the identity F = (1/3 - E) phi, face terms
    included, so exact closures reproduce the quasidiffusion solution.
    """
    _check_closures(mesh, closures)
    sig_t, sig_s, q = mesh.cell_data(problem)
    sig_a = sig_t - sig_s
    n = mesh.ncells
    dx = mesh.widths
    third = np.full(n, THIRD)
    sys = _assemble(
        mesh,
        sig_t,
        sig_a,
        q,
        third,
        THIRD,
        THIRD,
        closures.left.flux_to_current,
        closures.right.flux_to_current,
    )

    f = closures.sm_factor
    denom = np.empty(max(n - 1, 0))
    for k in range(n - 1):
        sf, wf = face_sigma_and_width(sig_t[k], sig_t[k + 1], dx[k], dx[k + 1])
        denom[k] = sf * wf

    h_left = sig_t[0] * dx[0] / 2.0
    h_right = sig_t[n - 1] * dx[n - 1] / 2.0
    c_left = closures.left.flux_to_current
    c_right = closures.right.flux_to_current
    corr_left = c_left * (f[0] - closures.left.sm_factor) / (c_left * h_left + THIRD)
    corr_right = c_right * (f[n - 1] - closures.right.sm_factor) / (c_right * h_right + THIRD)

    for i in range(n):
        if i > 0:
            sys.rhs[i] += (f[i] - f[i - 1]) / denom[i - 1]
        else:
            sys.rhs[i] += corr_left
        if i < n - 1:
            sys.rhs[i] -= (f[i + 1] - f[i]) / denom[i]
        else:
            sys.rhs[i] += corr_right

    sys.leak_rhs = (corr_left, corr_right)
    return sys


def solve_tridiagonal(system: TridiagonalSystem) -> np.ndarray:
    """Direct Thomas solve with a residual postcondition.

    Raises
    ------
    SingularSystemError
        On a zero pivot (names the row).
    SolverError
        If the residual exceeds 1e-10 * max|rhs|.
    """
    n = system.size
    lower, diag, upper, rhs = system.lower, system.diag, system.upper, system.rhs
    cp = np.empty(n)
    dp = np.empty(n)
    piv = diag[0]
    if piv == 0.0:
        raise SingularSystemError("zero pivot in row 0")
    cp[0] = upper[0] / piv
    dp[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - lower[i] * cp[i - 1]
        if piv == 0.0:
            raise SingularSystemError(f"zero pivot in row {i}")
        cp[i] = upper[i] / piv
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / piv
    phi = np.empty(n)
    phi[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        phi[i] = dp[i] - cp[i] * phi[i + 1]

    resid = diag * phi - rhs
    if n > 1:
        resid[1:] += lower[1:] * phi[:-1]
        resid[:-1] += upper[:-1] * phi[1:]
    scale = float(np.max(np.abs(rhs)))
    if scale > 0.0 and float(np.max(np.abs(resid))) > _RESIDUAL_REL * scale:
        raise SolverError(
            f"residual {float(np.max(np.abs(resid))):.3e} exceeds {_RESIDUAL_REL:.1e} * max|rhs|"
        )
    return phi


def solve_hybrid(
    problem: SlabProblem, mesh: Mesh1D, closures: ClosureSet, method: str
) -> LoSolution:
    """Assemble and solve the requested low-order form ('hqd' or 'hsm')."""
    method = method.lower()
    if method == "hqd":
        system = assemble_hqd(problem, mesh, closures)
    elif method == "hsm":
        system = assemble_hsm(problem, mesh, closures)
    else:
        raise ValueError(f"method must be 'hqd' or 'hsm', got {method!r}")
    phi = solve_tridiagonal(system)
    return LoSolution(phi=phi, method=method, rng_seed=closures.rng_seed, histories=closures.histories)


def balance_residual(
    problem: SlabProblem, mesh: Mesh1D, system: TridiagonalSystem, phi: np.ndarray
) -> float:
    """Relative discrete particle balance: |absorption + leakage - source| / source."""
    sig_t, sig_s, q = mesh.cell_data(problem)
    sig_a = sig_t - sig_s
    dx = mesh.widths
    absorption = float(np.sum(sig_a * dx * phi))
    leak_left = system.leak_coeff[0] * phi[0] - system.leak_rhs[0]
    leak_right = system.leak_coeff[1] * phi[-1] - system.leak_rhs[1]
    source = float(np.sum(q * dx))
    return abs(absorption + leak_left + leak_right - source) / source


def write_solution_csv(
    solution: LoSolution, mesh: Mesh1D, path: str | Path
) -> None:
    """Solution dump: cell index, cell center, flux, method, provenance."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["cell", "x_center", "phi", "method", "seed", "histories"])
        centers = mesh.centers
        seed = "" if solution.rng_seed is None else solution.rng_seed
        hist = "" if solution.histories is None else solution.histories
        for i, value in enumerate(solution.phi):
            wr.writerow([i, repr(float(centers[i])), repr(float(value)), solution.method, seed, hist])
