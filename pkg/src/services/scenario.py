"""
Scenario construction: candidate grids, source clouds, seed derivation and
the forward bindings every selector and scorer consumes.
"""

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from services.design import SOURCE_LOCATION, VELOCITY_MODEL, CandidateSet, ScenarioBinding
from services.forward import (
    GaussianDerivativeSTF,
    MediumSpec,
    NoiseModel,
    SourceSpec,
    TimeGrid,
    green_analytic,
    green_import,
    noise_for_reference,
    precision_summary,
)
from services.inference import MT_DIM, GaussianBelief, MomentTensor
from utils.errors import InvalidCardinality, InvalidExtent, NumericalBreakdown

logger = logging.getLogger(__name__)

EXTENT_RTOL = 1e-9


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StationGrid:
    """
    Candidate receivers enumerated row-major: south-to-north rows, each
    running west to east. Station id = enumeration index.
    """

    locations: np.ndarray
    n_east: int
    n_north: int
    spacing_east: float
    spacing_north: float

    def __len__(self):
        return self.n_east * self.n_north

    @property
    def station_ids(self):
        return np.arange(len(self))

    @property
    def cell_spacing(self):
        spacings = [s for s in (self.spacing_east, self.spacing_north) if s > 0]
        return min(spacings) if spacings else 1.0

    def station_id(self, row, col):
        if not (0 <= row < self.n_north and 0 <= col < self.n_east):
            raise IndexError(f"(row={row}, col={col}) is outside the {self.n_north}x{self.n_east} grid")
        return row * self.n_east + col

    def rowcol(self, station_id):
        if not 0 <= station_id < len(self):
            raise IndexError(f"Station id {station_id} is outside the grid")
        return divmod(int(station_id), self.n_east)


def _axis_count(lo, hi, spacing, axis):
    extent = hi - lo
    if extent < 0:
        raise InvalidExtent(f"{axis} extent is empty: [{lo}, {hi}]")
    steps = extent / spacing
    n = round(steps)
    if abs(steps - n) > EXTENT_RTOL * max(1.0, steps):
        raise InvalidExtent(f"Spacing {spacing} m does not divide the {axis} extent {extent} m")
    return int(n) + 1


def build_grid(spec):
    """
    Enumerate the candidate receivers of a GridSpec.

    Returns:
        StationGrid: locations (n, 3) as (east_m, north_m, depth_m = 0)
    """
    if spec.uses_counts:
        n_east, n_north = spec.n_east, spec.n_north
        for lo, hi, n, axis in ((spec.east_min, spec.east_max, n_east, 'east'),
                                (spec.north_min, spec.north_max, n_north, 'north')):
            if hi < lo or (n > 1 and hi == lo):
                raise InvalidExtent(f"{axis} extent [{lo}, {hi}] cannot hold {n} stations")
    else:
        n_east = _axis_count(spec.east_min, spec.east_max, spec.spacing_m, 'east')
        n_north = _axis_count(spec.north_min, spec.north_max, spec.spacing_m, 'north')

    east = np.linspace(spec.east_min, spec.east_max, n_east)
    north = np.linspace(spec.north_min, spec.north_max, n_north)
    ee, nn = np.meshgrid(east, north)
    locations = np.column_stack([ee.ravel(), nn.ravel(), np.zeros(ee.size)])
    spacing_e = (spec.east_max - spec.east_min) / (n_east - 1) if n_east > 1 else 0.0
    spacing_n = (spec.north_max - spec.north_min) / (n_north - 1) if n_north > 1 else 0.0
    return StationGrid(locations, n_east, n_north, spacing_e, spacing_n)


# ---------------------------------------------------------------------------
# Seeds and source clouds
# ---------------------------------------------------------------------------

def _purpose_key(purpose):
    return int(hashlib.sha256(purpose.encode('utf-8')).hexdigest()[:8], 16)


def derive_seed(root, purpose, *keys):
    """
    Child seed for one purpose ("noise", "cloud", "random", "scoring", ...)
    split off a single root seed. Extra integer keys select a branch.
    """
    seq = np.random.SeedSequence([int(root), _purpose_key(purpose), *(int(k) for k in keys)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def sample_source_cloud(bounds, count, seed, depth):
    """
    i.i.d. uniform horizontal source positions at a fixed depth.

    Args:
        bounds: ((east_min, east_max), (north_min, north_max)) in meters
        count (int): number of locations
        seed: int seed
        depth (float): source depth in meters

    Returns:
        np.ndarray: (count, 3) rows of (east_m, north_m, depth_m)
    """
    if count < 1:
        raise InvalidCardinality(f"Source cloud needs count >= 1, got {count}")
    (e_lo, e_hi), (n_lo, n_hi) = bounds
    rng = np.random.default_rng(seed)
    east = rng.uniform(e_lo, e_hi, size=count)
    north = rng.uniform(n_lo, n_hi, size=count)
    return np.column_stack([east, north, np.full(count, float(depth))])


def cloud_for_config(cfg):
    cloud = cfg.source_cloud
    bounds = ((cloud.center_east_m - cloud.half_width_m, cloud.center_east_m + cloud.half_width_m),
              (cloud.center_north_m - cloud.half_width_m, cloud.center_north_m + cloud.half_width_m))
    return sample_source_cloud(bounds, cloud.count, derive_seed(cfg.seed, 'cloud'), cloud.depth_m)


# ---------------------------------------------------------------------------
# Bindings
# ---------------------------------------------------------------------------

def time_grid(cfg):
    return TimeGrid(cfg.time_grid.n_t, cfg.time_grid.dt)


def medium_spec(medium_cfg):
    return MediumSpec(medium_cfg.vp, medium_cfg.vs, medium_cfg.rho, medium_cfg.label)


def source_spec(cfg, location):
    stf = GaussianDerivativeSTF(cfg.stf_corner_hz)
    return SourceSpec(tuple(location), stf, cfg.moment_scale)


def prior_belief(cfg):
    return GaussianBelief.isotropic(cfg.prior.sigma_p, MT_DIM)


def calibrated_binding(label, kind, greens_at, n, grid, noise_cfg, reference_mt, threads=1):
    """
    Build a ScenarioBinding from a Green-matrix provider.

    Each station's noise is calibrated on its own reference waveform. H is
    computed once at unit noise level and rescaled by 1 / sigma_eps^2.
    """
    reference_mt = MomentTensor(reference_mt)
    corr_time = grid.duration if noise_cfg.corr_time_s is None else noise_cfg.corr_time_s
    unit_noise = NoiseModel(1.0, corr_time, grid)
    project = partial(_project_station, greens_at, unit_noise, reference_mt)
    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(project, range(n)))
    else:
        results = [project(i) for i in range(n)]
    norms = np.array([r[0] for r in results])
    H_unit = np.stack([r[1] for r in results])

    sigma_floor = noise_cfg.sigma_floor
    if sigma_floor is None:
        global_rms = math.sqrt(float(np.sum(norms ** 2)) / (n * 3 * grid.n_t))
        sigma_floor = 1e-12 * max(1.0, global_rms)

    noises, H = [], np.empty_like(H_unit)
    for i in range(n):
        noise = noise_for_reference(norms[i], grid, noise_cfg.rel, corr_time, sigma_floor, station_id=i)
        if noise.sigma_eps == 0:
            raise NumericalBreakdown(f"Scenario {label}: station {i} has zero noise level and zero signal")
        noises.append(noise)
        H[i] = H_unit[i] / noise.sigma_eps ** 2
    binding = ScenarioBinding(label, kind, H, tuple(noises), greens_at, grid)
    logger.info("Built binding %s: %d stations, %d at the noise floor", label, n, binding.zero_signal_count)
    return binding


def _project_station(greens_at, unit_noise, reference_mt, index):
    green = greens_at(index)
    u = green.response(reference_mt)
    return float(np.linalg.norm(u)), precision_summary(green, unit_noise).H


def _analytic_provider(src, medium, locations, grid, cell_spacing, station_ids):
    def greens_at(index):
        return green_analytic(src, medium, locations[index], grid, cell_spacing, int(station_ids[index]))
    return greens_at


def build_binding(cfg, medium_cfg, location, label, kind, station_grid, threads=1):
    """Analytic-provider binding for one (medium, source location) scenario."""
    grid = time_grid(cfg)
    provider = _analytic_provider(source_spec(cfg, location), medium_spec(medium_cfg),
                                  station_grid.locations, grid, station_grid.cell_spacing,
                                  station_grid.station_ids)
    return calibrated_binding(label, kind, provider, len(station_grid), grid,
                              cfg.noise, cfg.reference_mt, threads)


def imported_candidates(cfg, threads=1):
    """Candidates and binding from an imported Green manifest."""
    collection = green_import(cfg.greens_manifest)
    greens = collection.greens

    def greens_at(index):
        return greens[index]

    binding = calibrated_binding('imported', VELOCITY_MODEL, greens_at, len(greens), collection.grid,
                                 cfg.noise, cfg.reference_mt, threads)
    return CandidateSet(np.array(collection.station_ids), collection.locations, binding)


def primary_source(cfg, depth=None):
    src = cfg.sources[0]
    return (src.east_m, src.north_m, src.depth_m if depth is None else depth)


def build_candidates(cfg, station_grid=None, medium_index=0, location=None, label=None,
                     kind=VELOCITY_MODEL, threads=1):
    """CandidateSet over the config grid for one medium and source location."""
    if cfg.greens_manifest is not None:
        return imported_candidates(cfg, threads)
    station_grid = station_grid if station_grid is not None else build_grid(cfg.grid)
    medium_cfg = cfg.mediums[medium_index]
    location = location if location is not None else primary_source(cfg)
    label = label or medium_cfg.label
    binding = build_binding(cfg, medium_cfg, location, label, kind, station_grid, threads)
    return CandidateSet(station_grid.station_ids, station_grid.locations, binding)


def velocity_scenarios(cfg, station_grid, threads=1):
    """One binding per configured medium, all with the primary source."""
    labels = unique_labels([m.label for m in cfg.mediums])
    return [build_binding(cfg, medium, primary_source(cfg), label, VELOCITY_MODEL, station_grid, threads)
            for medium, label in zip(cfg.mediums, labels)]


def source_scenarios(cfg, station_grid, cloud, threads=1):
    """One binding per source-cloud location, all in the first medium."""
    return [build_binding(cfg, cfg.mediums[0], loc, f"source-{i:02d}", SOURCE_LOCATION, station_grid, threads)
            for i, loc in enumerate(cloud)]


def unique_labels(labels):
    """Disambiguate repeated labels by suffixing their position."""
    seen = {}
    for label in labels:
        seen[label] = seen.get(label, 0) + 1
    return [label if seen[label] == 1 else f"{label}-{i}" for i, label in enumerate(labels)]
