"""Slab transport problem definition: geometry, materials, mesh, run settings.

All solvers in the package (Monte Carlo engine, low-order finite-volume
solvers, discrete-ordinates reference) share the data types defined here.
Instances are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ConfigurationError",
    "DomainError",
    "MaterialRegion",
    "SlabProblem",
    "Mesh1D",
    "RunConfig",
    "StudyConfig",
    "ParsedConfig",
    "benchmark_problem",
    "build_uniform_mesh",
    "cross_sections_at",
    "load_config",
]

_EDGE_TOL = 1e-12


class ConfigurationError(ValueError):
    """Invalid problem or run configuration."""


class DomainError(ValueError):
    """A coordinate outside the slab was queried."""


@dataclass(frozen=True)
class MaterialRegion:
    """Homogeneous material slice with an isotropic volumetric source.

    Parameters
    ----------
    x_left, x_right : float
        Region bounds (cm), ``x_left < x_right``.
    sigma_t : float
        Total macroscopic cross section (1/cm), strictly positive.
    sigma_s : float
        Scattering cross section (1/cm), ``0 <= sigma_s <= sigma_t``.
    q : float
        Isotropic source density (particles / cm^3 s), nonnegative.
    """

    x_left: float
    x_right: float
    sigma_t: float
    sigma_s: float
    q: float

    def __post_init__(self) -> None:
        if not self.x_left < self.x_right:
            raise ConfigurationError(
                f"region bounds must satisfy x_left < x_right, got [{self.x_left}, {self.x_right}]"
            )
        if not self.sigma_t > 0.0:
            raise ConfigurationError(f"sigma_t must be positive, got {self.sigma_t}")
        if not 0.0 <= self.sigma_s <= self.sigma_t:
            raise ConfigurationError(
                f"need 0 <= sigma_s <= sigma_t, got sigma_s={self.sigma_s}, sigma_t={self.sigma_t}"
            )
        if self.q < 0.0:
            raise ConfigurationError(f"source density must be nonnegative, got {self.q}")

    @property
    def sigma_a(self) -> float:
        """Absorption cross section, derived as sigma_t - sigma_s."""
        return self.sigma_t - self.sigma_s

    @property
    def width(self) -> float:
        return self.x_right - self.x_left


@dataclass(frozen=True)
class SlabProblem:
    """1D slab of total length ``length`` tiled by contiguous material regions.

    Both boundaries are vacuum (zero incoming angular flux); no other
    boundary condition is supported.
    """

    length: float
    regions: tuple[MaterialRegion, ...]

    def __post_init__(self) -> None:
        if not self.length > 0.0:
            raise ConfigurationError(f"slab length must be positive, got {self.length}")
        if not self.regions:
            raise ConfigurationError("at least one material region is required")
        regions = tuple(sorted(self.regions, key=lambda r: r.x_left))
        object.__setattr__(self, "regions", regions)
        if abs(regions[0].x_left) > _EDGE_TOL * self.length:
            raise ConfigurationError("regions must start at x = 0")
        for a, b in zip(regions, regions[1:]):
            if abs(a.x_right - b.x_left) > _EDGE_TOL * self.length:
                raise ConfigurationError(
                    f"regions must tile the slab; gap/overlap between {a.x_right} and {b.x_left}"
                )
        if abs(regions[-1].x_right - self.length) > _EDGE_TOL * self.length:
            raise ConfigurationError(
                f"regions must end at x = length ({self.length}), got {regions[-1].x_right}"
            )

    @classmethod
    def homogeneous(cls, length: float, sigma_t: float, sigma_s: float, q: float) -> "SlabProblem":
        return cls(length, (MaterialRegion(0.0, length, sigma_t, sigma_s, q),))

    @property
    def total_source(self) -> float:
        """Integral of the source density over the slab."""
        return float(sum(r.q * r.width for r in self.regions))

    def region_at(self, x: float) -> MaterialRegion:
        """Region containing ``x``; half-open [x_left, x_right), closed at x = length."""
        if x < 0.0 or x > self.length:
            raise DomainError(f"x = {x} outside slab [0, {self.length}]")
        for r in self.regions:
            if x < r.x_right:
                return r
        return self.regions[-1]


def benchmark_problem() -> SlabProblem:
    """Unit slab with sigma_t = 1.0, sigma_s = 0.9, q = 1.0 and vacuum boundaries.

    This is the standard verification problem used throughout the test and
    experiment suites.
    """
    return SlabProblem.homogeneous(1.0, 1.0, 0.9, 1.0)


def cross_sections_at(problem: SlabProblem, x: float) -> tuple[float, float, float]:
    """Return ``(sigma_t, sigma_s, q)`` at position ``x``.

    At interior region interfaces the right-hand region wins (half-open
    interval convention); x = length belongs to the last region.
    """
    r = problem.region_at(x)
    return (r.sigma_t, r.sigma_s, r.q)


@dataclass(frozen=True)
class Mesh1D:
    """Spatial mesh given by strictly increasing cell-edge positions."""

    edges: np.ndarray

    def __post_init__(self) -> None:
        edges = np.asarray(self.edges, dtype=np.float64)
        object.__setattr__(self, "edges", edges)
        if edges.ndim != 1 or edges.size < 2:
            raise ConfigurationError("mesh needs at least two edges")
        if not np.all(np.diff(edges) > 0.0):
            raise ConfigurationError("mesh edges must be strictly increasing")
        self.edges.setflags(write=False)

    @property
    def ncells(self) -> int:
        return self.edges.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def cell_data(self, problem: SlabProblem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-cell ``(sigma_t, sigma_s, q)`` arrays, exact for region-aligned meshes."""
        st = np.empty(self.ncells)
        ss = np.empty(self.ncells)
        q = np.empty(self.ncells)
        for i, xc in enumerate(self.centers):
            st[i], ss[i], q[i] = cross_sections_at(problem, float(xc))
        return st, ss, q


def build_uniform_mesh(problem: SlabProblem, cells: int) -> Mesh1D:
    """Uniform mesh with ``cells`` cells over the slab.

    Every material interface must coincide with a mesh edge so that surface
    tracking and cell-average data stay exact.
    """
    if cells < 1:
        raise ConfigurationError(f"cell count must be >= 1, got {cells}")
    edges = np.linspace(0.0, problem.length, cells + 1)
    dx = problem.length / cells
    for r in problem.regions[:-1]:
        k = round(r.x_right / dx)
        if abs(r.x_right - k * dx) > _EDGE_TOL * problem.length:
            raise ConfigurationError(
                f"region boundary {r.x_right} does not land on the uniform mesh with {cells} cells"
            )
    return Mesh1D(edges)


@dataclass(frozen=True)
class RunConfig:
    """Monte Carlo run settings.

    ``capture_mode`` selects analog transport (absorption kills the particle)
    or implicit capture (weight reduction plus Russian roulette below
    ``weight_cutoff``: survive with probability ``roulette_survival`` at
    weight w / roulette_survival).  ``face_mu_floor`` bounds the 1/|mu|
    surface-flux contribution of near-grazing crossings; the induced bias is
    far below statistical error at the default setting.
    """

    histories: int
    rng_seed: int
    capture_mode: str = "implicit"
    replicate_count: int = 1
    weight_cutoff: float = 0.01
    roulette_survival: float = 0.5
    face_mu_floor: float = 1e-3
    max_events: int = 10**6

    def __post_init__(self) -> None:
        if self.histories < 1:
            raise ConfigurationError(f"histories must be >= 1, got {self.histories}")
        if self.replicate_count < 1:
            raise ConfigurationError(f"replicate_count must be >= 1, got {self.replicate_count}")
        if self.capture_mode not in ("analog", "implicit"):
            raise ConfigurationError(f"capture_mode must be 'analog' or 'implicit', got {self.capture_mode!r}")
        if not 0.0 < self.roulette_survival < 1.0:
            raise ConfigurationError("roulette_survival must be in (0, 1)")
        if self.weight_cutoff < 0.0:
            raise ConfigurationError("weight_cutoff must be nonnegative")


@dataclass(frozen=True)
class StudyConfig:
    """Grid of study configurations for the replication experiments."""

    histories: tuple[int, ...] = (100, 1000, 10000)
    cells: tuple[int, ...] = (4, 8, 16, 32, 64)
    replicates: int = 100
    capture_mode: str = "analog"
    master_seed: int = 0


@dataclass(frozen=True)
class ParsedConfig:
    problem: SlabProblem
    run: RunConfig
    cells: int
    study: StudyConfig


def _get_float(section, key: str, default: float | None = None) -> float:
    try:
        if default is not None and key not in section:
            return default
        return float(section[key])
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"bad or missing key {key!r}: {exc}") from exc


def _get_int(section, key: str, default: int | None = None) -> int:
    try:
        if default is not None and key not in section:
            return default
        return int(section[key])
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"bad or missing key {key!r}: {exc}") from exc


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigurationError(f"bad integer list {text!r}") from exc


def load_config(path: str | Path) -> ParsedConfig:
    """Parse an INI-style configuration file.

    Schema (see README for the full description)::

        [problem]
        length = 1.0

        [region.1]          ; one section per region, ordered by x_left
        x_left = 0.0
        x_right = 1.0
        sigma_t = 1.0
        sigma_s = 0.9
        q = 1.0

        [run]
        cells = 16
        histories = 100000
        seed = 7
        capture_mode = implicit
        replicates = 100
        ; optional: weight_cutoff, roulette_survival, face_mu_floor

        [study]             ; optional, used by the `study` subcommand
        histories = 100, 1000, 10000
        cells = 4, 8, 16, 32, 64
        replicates = 100
        capture_mode = analog
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc

    if "problem" not in parser:
        raise ConfigurationError("missing [problem] section")
    length = _get_float(parser["problem"], "length")

    regions = []
    for name in parser.sections():
        if name == "region" or name.startswith("region."):
            sec = parser[name]
            regions.append(
                MaterialRegion(
                    x_left=_get_float(sec, "x_left"),
                    x_right=_get_float(sec, "x_right"),
                    sigma_t=_get_float(sec, "sigma_t"),
                    sigma_s=_get_float(sec, "sigma_s"),
                    q=_get_float(sec, "q"),
                )
            )
    if not regions:
        raise ConfigurationError("at least one [region.*] section is required")
    problem = SlabProblem(length, tuple(regions))

    run_sec = parser["run"] if "run" in parser else {}
    run = RunConfig(
        histories=_get_int(run_sec, "histories", 10000),
        rng_seed=_get_int(run_sec, "seed", 0),
        capture_mode=str(run_sec.get("capture_mode", "implicit")).strip(),
        replicate_count=_get_int(run_sec, "replicates", 1),
        weight_cutoff=_get_float(run_sec, "weight_cutoff", 0.01),
        roulette_survival=_get_float(run_sec, "roulette_survival", 0.5),
        face_mu_floor=_get_float(run_sec, "face_mu_floor", 1e-3),
    )
    cells = _get_int(run_sec, "cells", 16)

    if "study" in parser:
        st = parser["study"]
        study = StudyConfig(
            histories=_int_list(st.get("histories", "100, 1000, 10000")),
            cells=_int_list(st.get("cells", "4, 8, 16, 32, 64")),
            replicates=_get_int(st, "replicates", 100),
            capture_mode=str(st.get("capture_mode", "analog")).strip(),
            master_seed=_get_int(st, "master_seed", run.rng_seed),
        )
    else:
        study = StudyConfig(master_seed=run.rng_seed)
    if study.capture_mode not in ("analog", "implicit"):
        raise ConfigurationError(f"study capture_mode must be 'analog' or 'implicit', got {study.capture_mode!r}")

    return ParsedConfig(problem=problem, run=run, cells=cells, study=study)
