"""Monte Carlo transport engine: particle histories and tally accumulation.

Histories perform surface tracking across the mesh: collision sites are found
by spending a sampled optical depth cell by cell, every traversed segment
contributes to the track-length tallies of its cell, and every mesh-face
crossing contributes to that face's surface tallies.  Per-history sums are
also squared into the tally set so closure standard errors can be estimated
at the history level.

Two implementations exist: the plain-Python walk in this module (reference,
also the diagnostic single-history hook) and the compiled chunk kernel in
:mod:`slabhybrid.kernels` used by :func:`run_histories`.  They are written to
execute identical floating-point operations in identical order, and the test
suite asserts their tallies agree bit for bit.  Results are independent of
the worker count because histories are partitioned into fixed chunks whose
partial tallies merge in chunk order.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .problem import ConfigurationError, Mesh1D, RunConfig, SlabProblem
from .rng import RandomStream

__all__ = [
    "CHUNK_HISTORIES",
    "InvariantError",
    "ParticleState",
    "TallySet",
    "TransportTables",
    "transport_tables",
    "sample_source_particle",
    "distance_to_collision",
    "fly_and_tally",
    "collide",
    "simulate_history",
    "run_histories",
    "write_tally_csv",
]

# Fixed chunk size for history partitioning; never depends on worker count,
# so the merge order (and therefore every floating-point sum) is invariant.
CHUNK_HISTORIES = 4096


class InvariantError(RuntimeError):
    """An internal invariant of the random walk was violated."""


@dataclass
class ParticleState:
    """Mutable state of one particle in flight."""

    x: float
    mu: float
    w: float
    alive: bool
    cell: int


@dataclass
class TallySet:
    """Accumulated Monte Carlo sums for one history ensemble.

    Cell arrays hold track-length sums (weight * path length and mu^2 *
    weight * path length) plus per-history squared and cross sums for
    variance estimation.  Face arrays hold the crossing sums w/|mu|,
    w*sign(mu) and |mu|*w for all ncells+1 faces.
    """

    ncells: int
    sum_wl: np.ndarray
    sum_mu2_wl: np.ndarray
    sum_wl_sq: np.ndarray
    sum_mu2_wl_sq: np.ndarray
    sum_wl_cross: np.ndarray
    face_w_over_mu: np.ndarray
    face_w_signed: np.ndarray
    face_mu_w: np.ndarray
    histories: int = 0
    total_source: float = 0.0
    anomalous_histories: int = 0
    rng_seed: int | None = None
    capture_mode: str = "implicit"

    @classmethod
    def empty(cls, ncells: int) -> "TallySet":
        nf = ncells + 1
        return cls(
            ncells=ncells,
            sum_wl=np.zeros(ncells),
            sum_mu2_wl=np.zeros(ncells),
            sum_wl_sq=np.zeros(ncells),
            sum_mu2_wl_sq=np.zeros(ncells),
            sum_wl_cross=np.zeros(ncells),
            face_w_over_mu=np.zeros(nf),
            face_w_signed=np.zeros(nf),
            face_mu_w=np.zeros(nf),
        )

    def merge(self, other: "TallySet") -> None:
        """Accumulate another partial tally set (associative, order fixed by caller)."""
        if other.ncells != self.ncells:
            raise ValueError("cannot merge tallies from different meshes")
        self.sum_wl += other.sum_wl
        self.sum_mu2_wl += other.sum_mu2_wl
        self.sum_wl_sq += other.sum_wl_sq
        self.sum_mu2_wl_sq += other.sum_mu2_wl_sq
        self.sum_wl_cross += other.sum_wl_cross
        self.face_w_over_mu += other.face_w_over_mu
        self.face_w_signed += other.face_w_signed
        self.face_mu_w += other.face_mu_w
        self.histories += other.histories
        self.anomalous_histories += other.anomalous_histories


@dataclass(frozen=True)
class TransportTables:
    """Mesh-aligned cross-section arrays and region source tables."""

    edges: np.ndarray
    cell_sigma_t: np.ndarray
    cell_sigma_s: np.ndarray
    cell_q: np.ndarray
    reg_left: np.ndarray
    reg_q: np.ndarray
    reg_cum: np.ndarray      # cumulative source, reg_cum[-1] == total_source
    total_source: float


def transport_tables(problem: SlabProblem, mesh: Mesh1D) -> TransportTables:
    st, ss, q = mesh.cell_data(problem)
    reg_left = np.array([r.x_left for r in problem.regions])
    reg_q = np.array([r.q for r in problem.regions])
    widths = np.array([r.width for r in problem.regions])
    reg_cum = np.concatenate(([0.0], np.cumsum(reg_q * widths)))
    total = float(reg_cum[-1])
    if total <= 0.0:
        raise ConfigurationError("source density is zero everywhere; nothing to sample")
    return TransportTables(
        edges=mesh.edges,
        cell_sigma_t=st,
        cell_sigma_s=ss,
        cell_q=q,
        reg_left=reg_left,
        reg_q=reg_q,
        reg_cum=reg_cum,
        total_source=total,
    )


def _locate_cell(edges: np.ndarray, x: float, mu: float) -> int:
    """Cell index containing x; on a shared face the travel direction decides."""
    i = int(np.searchsorted(edges, x, side="right")) - 1
    last = edges.size - 2
    if i > last:
        i = last
    if i < 0:
        i = 0
    if x == edges[i] and mu < 0.0 and i > 0:
        i -= 1
    return i


def sample_source_particle(problem: SlabProblem, stream, mesh: Mesh1D | None = None) -> ParticleState:
    """Birth a particle: x proportional to q(x), mu isotropic, unit weight.

    mu = 0 draws are rejected and resampled.  ``stream`` only needs a
    ``uniform()`` method returning variates in (0, 1).
    """
    tables = transport_tables(problem, mesh) if mesh is not None else None
    if tables is None:
        reg_left = [r.x_left for r in problem.regions]
        reg_q = [r.q for r in problem.regions]
        cum = [0.0]
        for r in problem.regions:
            cum.append(cum[-1] + r.q * r.width)
        total = cum[-1]
        if total <= 0.0:
            raise ConfigurationError("source density is zero everywhere; nothing to sample")
    else:
        reg_left, reg_q, cum, total = tables.reg_left, tables.reg_q, tables.reg_cum, tables.total_source

    target = stream.uniform() * total
    r = 0
    nreg = len(reg_q)
    while r < nreg - 1 and (reg_q[r] == 0.0 or target >= cum[r + 1]):
        r += 1
    x = reg_left[r] + (target - cum[r]) / reg_q[r]

    mu = 2.0 * stream.uniform() - 1.0
    while mu == 0.0:
        mu = 2.0 * stream.uniform() - 1.0

    cell = _locate_cell(mesh.edges, x, mu) if mesh is not None else -1
    return ParticleState(x=x, mu=mu, w=1.0, alive=True, cell=cell)


def distance_to_collision(sigma_t: float, stream) -> float:
    """Exponentially distributed flight distance -ln(xi)/sigma_t."""
    if sigma_t <= 0.0:
        raise ValueError(f"sigma_t must be positive, got {sigma_t}")
    return -math.log(stream.uniform()) / sigma_t


def fly_and_tally(
    p: ParticleState,
    tau: float,
    mesh: Mesh1D,
    tallies: TallySet,
    cell_sigma_t: np.ndarray,
    hist_wl: np.ndarray,
    hist_mu2: np.ndarray,
    face_mu_floor: float = 1e-3,
) -> None:
    """Advance the particle until it spends optical depth ``tau`` or leaks.

    Every traversed cell segment of path length ell adds w*ell and
    mu^2*w*ell to the per-history cell buffers; every face crossing adds
    w/max(|mu|, floor), w*sign(mu) and |mu|*w to the face sums.  A particle
    that exits the slab is marked dead after the boundary-face tally.
    """
    edges = mesh.edges
    ncells = tallies.ncells
    x = p.x
    mu = p.mu
    w = p.w
    i = p.cell
    amu = abs(mu)
    while True:
        if mu > 0.0:
            x_face = edges[i + 1]
            d_face = (x_face - x) / mu
        else:
            x_face = edges[i]
            d_face = (x - x_face) / (-mu)
        if d_face < 0.0:
            raise InvariantError(f"negative segment length {d_face} in cell {i}")
        sig = cell_sigma_t[i]
        tau_cell = sig * d_face
        if tau_cell >= tau:
            ell = tau / sig
            wl = w * ell
            hist_wl[i] += wl
            hist_mu2[i] += mu * mu * wl
            p.x = x + mu * ell
            p.cell = i
            return
        wl = w * d_face
        hist_wl[i] += wl
        hist_mu2[i] += mu * mu * wl
        tau = tau - tau_cell
        x = x_face
        if mu > 0.0:
            face = i + 1
            tallies.face_w_signed[face] += w
        else:
            face = i
            tallies.face_w_signed[face] -= w
        tallies.face_w_over_mu[face] += w / max(amu, face_mu_floor)
        tallies.face_mu_w[face] += amu * w
        if mu > 0.0:
            i += 1
            if i >= ncells:
                p.x = x
                p.alive = False
                return
        else:
            i -= 1
            if i < 0:
                p.x = x
                p.alive = False
                return


def collide(
    p: ParticleState,
    sigma_t: float,
    sigma_s: float,
    mode: str,
    stream,
    weight_cutoff: float = 0.01,
    roulette_survival: float = 0.5,
) -> None:
    """Resolve a collision in place.

    Analog mode scatters with probability sigma_s/sigma_t and otherwise kills
    the particle.  Implicit mode multiplies the weight by sigma_s/sigma_t,
    always scatters, and plays Russian roulette once the weight drops below
    the cutoff (survivors continue at weight w / roulette_survival).
    """
    ratio = sigma_s / sigma_t
    if mode == "analog":
        if stream.uniform() < ratio:
            mu = 2.0 * stream.uniform() - 1.0
            while mu == 0.0:
                mu = 2.0 * stream.uniform() - 1.0
            p.mu = mu
        else:
            p.alive = False
        return
    p.w = p.w * ratio
    if p.w <= 0.0:
        p.alive = False
        return
    mu = 2.0 * stream.uniform() - 1.0
    while mu == 0.0:
        mu = 2.0 * stream.uniform() - 1.0
    p.mu = mu
    if p.w < weight_cutoff:
        if stream.uniform() < roulette_survival:
            p.w = p.w / roulette_survival
        else:
            p.alive = False


def simulate_history(
    problem: SlabProblem,
    mesh: Mesh1D,
    config: RunConfig,
    history_index: int,
    tallies: TallySet,
    tables: TransportTables | None = None,
) -> None:
    """Run one birth-to-death random walk and accumulate its tallies.

    The walk for history n depends only on (config.rng_seed, n).  This is the
    reference implementation mirrored by the compiled chunk kernel.
    """
    if tables is None:
        tables = transport_tables(problem, mesh)
    stream = RandomStream(config.rng_seed, history_index)
    implicit = config.capture_mode == "implicit"

    p = _sample_source(tables, stream)
    hist_wl = np.zeros(tallies.ncells)
    hist_mu2 = np.zeros(tallies.ncells)

    events = 0
    while p.alive:
        events += 1
        if events > config.max_events:
            tallies.anomalous_histories += 1
            p.alive = False
            break
        tau = -math.log(stream.uniform())
        fly_and_tally(p, tau, mesh, tallies, tables.cell_sigma_t, hist_wl, hist_mu2, config.face_mu_floor)
        if not p.alive:
            break
        i = p.cell
        collide(
            p,
            tables.cell_sigma_t[i],
            tables.cell_sigma_s[i],
            "implicit" if implicit else "analog",
            stream,
            config.weight_cutoff,
            config.roulette_survival,
        )

    for i in range(tallies.ncells):
        t = hist_wl[i]
        if t != 0.0 or hist_mu2[i] != 0.0:
            u = hist_mu2[i]
            tallies.sum_wl[i] += t
            tallies.sum_mu2_wl[i] += u
            tallies.sum_wl_sq[i] += t * t
            tallies.sum_mu2_wl_sq[i] += u * u
            tallies.sum_wl_cross[i] += t * u
    tallies.histories += 1


def _sample_source(tables: TransportTables, stream) -> ParticleState:
    """Source sampling against precomputed tables (mirrors the kernel exactly)."""
    target = stream.uniform() * tables.total_source
    r = 0
    nreg = tables.reg_q.size
    while r < nreg - 1 and (tables.reg_q[r] == 0.0 or target >= tables.reg_cum[r + 1]):
        r += 1
    x = tables.reg_left[r] + (target - tables.reg_cum[r]) / tables.reg_q[r]
    mu = 2.0 * stream.uniform() - 1.0
    while mu == 0.0:
        mu = 2.0 * stream.uniform() - 1.0
    cell = _locate_cell(tables.edges, x, mu)
    return ParticleState(x=x, mu=mu, w=1.0, alive=True, cell=cell)


def _chunks(n: int) -> list[tuple[int, int]]:
    return [(n0, min(CHUNK_HISTORIES, n - n0)) for n0 in range(0, n, CHUNK_HISTORIES)]


def run_histories(
    problem: SlabProblem,
    mesh: Mesh1D,
    config: RunConfig,
    workers: int | None = None,
    compiled: bool = True,
) -> TallySet:
    """Simulate ``config.histories`` independent histories and merge their tallies.

    The result is bit-identical for a fixed seed regardless of ``workers``:
    histories are partitioned into fixed-size chunks and the per-chunk
    partial tallies are merged in chunk order.  ``compiled=False`` selects
    the plain-Python walk (slow; used for verification).
    """
    tables = transport_tables(problem, mesh)
    total = TallySet.empty(mesh.ncells)
    total.total_source = tables.total_source
    total.rng_seed = config.rng_seed
    total.capture_mode = config.capture_mode

    chunk_list = _chunks(config.histories)
    if compiled:
        from . import kernels

        def one_chunk(span: tuple[int, int]) -> TallySet:
            n0, count = span
            part = TallySet.empty(mesh.ncells)
            part.total_source = tables.total_source
            counters = np.zeros(2, dtype=np.int64)
            kernels.run_chunk(
                np.uint64(config.rng_seed & kernels.PYMASK64),
                n0,
                count,
                tables.edges,
                tables.cell_sigma_t,
                tables.cell_sigma_s,
                tables.cell_q,
                tables.reg_left,
                tables.reg_q,
                tables.reg_cum,
                tables.total_source,
                config.capture_mode == "implicit",
                config.weight_cutoff,
                config.roulette_survival,
                config.face_mu_floor,
                config.max_events,
                part.sum_wl,
                part.sum_mu2_wl,
                part.sum_wl_sq,
                part.sum_mu2_wl_sq,
                part.sum_wl_cross,
                part.face_w_over_mu,
                part.face_w_signed,
                part.face_mu_w,
                counters,
            )
            part.histories = int(counters[0])
            part.anomalous_histories = int(counters[1])
            return part

        if workers is None:
            workers = os.cpu_count() or 1
        if workers <= 1 or len(chunk_list) == 1:
            parts = [one_chunk(span) for span in chunk_list]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(one_chunk, chunk_list))
        for part in parts:
            total.merge(part)
    else:
        for n0, count in chunk_list:
            part = TallySet.empty(mesh.ncells)
            for n in range(n0, n0 + count):
                simulate_history(problem, mesh, config, n, part, tables)
            total.merge(part)
    return total


def write_tally_csv(tallies: TallySet, mesh: Mesh1D, path: str | Path) -> None:
    """Raw tally dump: one row per cell, then one row per face."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["kind", "index", "sum_wl", "sum_mu2_wl", "sum_wl_sq", "sum_mu2_wl_sq", "sum_wl_cross"])
        for i in range(tallies.ncells):
            wr.writerow(
                [
                    "cell",
                    i,
                    repr(float(tallies.sum_wl[i])),
                    repr(float(tallies.sum_mu2_wl[i])),
                    repr(float(tallies.sum_wl_sq[i])),
                    repr(float(tallies.sum_mu2_wl_sq[i])),
                    repr(float(tallies.sum_wl_cross[i])),
                ]
            )
        wr.writerow(["kind", "index", "w_over_mu", "w_signed", "mu_w", "", ""])
        for f in range(tallies.ncells + 1):
            wr.writerow(
                [
                    "face",
                    f,
                    repr(float(tallies.face_w_over_mu[f])),
                    repr(float(tallies.face_w_signed[f])),
                    repr(float(tallies.face_mu_w[f])),
                    "",
                    "",
                ]
            )
