"""
Forward modeling: per-station Green matrices, noisy observations and the
exponential-kernel noise model.

Coordinates are east-north-up. A source at depth d sits at x3 = -d, receivers
sit on the free surface. Green matrices stack the three displacement
components (east, north, up) row-block by row-block, with all time samples
of one component before the next.
"""

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from services.exports import write_csv
from services.inference import MT_DIM, MomentTensor, PrecisionSummary
from utils.errors import (
    ConfigError,
    DataIOError,
    DegenerateGeometry,
    DuplicateStationId,
    ManifestParseError,
    NonFiniteSample,
    NumericalBreakdown,
    ShapeMismatch,
    ZeroSignalWarning,
)
from utils.linalg import symmetrize

logger = logging.getLogger(__name__)

N_COMPONENTS = 3
STF_SUPPORT_SIGMAS = 8.0
DEFAULT_MOMENT_SCALE = 1e15


# ---------------------------------------------------------------------------
# Time grid and source description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    n_t: int
    dt: float

    def __post_init__(self):
        if int(self.n_t) != self.n_t or self.n_t < 2:
            raise ConfigError(f"TimeGrid needs n_t >= 2, got {self.n_t}")
        if not self.dt > 0:
            raise ConfigError(f"TimeGrid needs dt > 0, got {self.dt}")
        object.__setattr__(self, 'n_t', int(self.n_t))
        object.__setattr__(self, 'dt', float(self.dt))

    @property
    def duration(self):
        return self.n_t * self.dt

    @property
    def times(self):
        return np.arange(self.n_t) * self.dt


@dataclass(frozen=True)
class GaussianDerivativeSTF:
    """
    Moment history shaped as a derivative-of-Gaussian pulse.

    sigma = 1 / (2 pi corner_hz); the pulse is centered 4 sigma after the onset
    and truncated to [onset, onset + 8 sigma], so it is exactly zero before
    the onset. The peak of s is normalized to 1.
    """

    corner_hz: float = 10.0
    onset_s: float = 0.0

    def __post_init__(self):
        if not 0 < self.corner_hz <= 15.0:
            raise ConfigError(f"STF corner frequency must be in (0, 15] Hz, got {self.corner_hz}")
        if self.onset_s < 0:
            raise ConfigError(f"STF onset must be >= 0, got {self.onset_s}")

    @property
    def sigma(self):
        return 1.0 / (2.0 * math.pi * self.corner_hz)

    @property
    def center(self):
        return self.onset_s + 0.5 * STF_SUPPORT_SIGMAS * self.sigma

    @property
    def support(self):
        return STF_SUPPORT_SIGMAS * self.sigma

    def _inside(self, tau):
        return (tau >= self.onset_s) & (tau <= self.onset_s + self.support)

    def value(self, tau):
        tau = np.asarray(tau, dtype=float)
        x = (tau - self.center) / self.sigma
        s = -math.exp(0.5) * x * np.exp(-0.5 * x ** 2)
        return np.where(self._inside(tau), s, 0.0)

    def rate(self, tau):
        """Time derivative of the moment history, evaluated analytically."""
        tau = np.asarray(tau, dtype=float)
        x = (tau - self.center) / self.sigma
        ds = -math.exp(0.5) / self.sigma * (1.0 - x ** 2) * np.exp(-0.5 * x ** 2)
        return np.where(self._inside(tau), ds, 0.0)

    def sample(self, grid):
        return self.value(grid.times)


@dataclass(frozen=True)
class SourceSpec:
    """Point source: location (east_m, north_m, depth_m) and its time function."""

    location: tuple
    stf: GaussianDerivativeSTF = field(default_factory=GaussianDerivativeSTF)
    moment_scale: float = DEFAULT_MOMENT_SCALE

    def __post_init__(self):
        loc = tuple(float(v) for v in self.location)
        if len(loc) != 3:
            raise ConfigError(f"Source location needs (east, north, depth), got {self.location}")
        if not loc[2] > 0:
            raise ConfigError(f"Source depth must be > 0 (below the free surface), got {loc[2]}")
        if not self.moment_scale > 0:
            raise ConfigError(f"moment_scale must be > 0, got {self.moment_scale}")
        object.__setattr__(self, 'location', loc)

    @property
    def enu(self):
        east, north, depth = self.location
        return np.array([east, north, -depth])


@dataclass(frozen=True)
class MediumSpec:
    """Homogeneous medium for the analytic provider."""

    vp: float
    vs: float
    rho: float
    label: str = ''

    def __post_init__(self):
        if not (self.vp > self.vs > 0):
            raise ConfigError(f"Medium needs vp > vs > 0, got vp={self.vp}, vs={self.vs}")
        if not self.rho > 0:
            raise ConfigError(f"Medium needs rho > 0, got {self.rho}")


# ---------------------------------------------------------------------------
# Green matrices
# ---------------------------------------------------------------------------

def _first_nonfinite_row(samples):
    bad = ~np.all(np.isfinite(samples), axis=1)
    return int(np.argmax(bad)) if np.any(bad) else None


@dataclass(frozen=True, eq=False)
class GreenMatrix:
    """Displacement per unit moment-tensor component, shape (3 n_t, 6)."""

    station_id: int
    samples: np.ndarray

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float, copy=True)
        if samples.ndim != 2 or samples.shape[1] != MT_DIM or samples.shape[0] % N_COMPONENTS:
            raise ShapeMismatch(
                f"Green matrix for station {self.station_id} must be (3 n_t, {MT_DIM}), "
                f"got {samples.shape}"
            )
        row = _first_nonfinite_row(samples)
        if row is not None:
            raise NonFiniteSample(self.station_id, row)
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'station_id', int(self.station_id))

    @property
    def n_t(self):
        return self.samples.shape[0] // N_COMPONENTS

    def response(self, mt):
        m = mt.m if isinstance(mt, MomentTensor) else np.asarray(mt, dtype=float)
        return self.samples @ m

    def scaled(self, factor):
        return GreenMatrix(self.station_id, self.samples * factor)


def arrival_index(distance, velocity, dt):
    """Sample index of a phase arriving after distance / velocity seconds."""
    return int(round(distance / velocity / dt))


def green_analytic(src, medium, receiver, grid, cell_spacing=1.0, station_id=0):
    """
    Far-field P + S radiation of a moment-tensor point source in a
    homogeneous full space.

    For basis tensor E_q, component i of the displacement is
        gi gj gk E_jk / (4 pi rho Vp^3 r) * s'(t - r/Vp)
      + (d_ij - gi gj) gk E_jk / (4 pi rho Vs^3 r) * s'(t - r/Vs)
    scaled by the source's moment_scale, with g the unit source-to-receiver
    vector.

    Args:
        src (SourceSpec): source location and time function
        medium (MediumSpec): homogeneous medium
        receiver: (east_m, north_m) or (east_m, north_m, depth_m)
        grid (TimeGrid): sampling of the output
        cell_spacing (float): minimum admissible source-receiver distance
        station_id (int): id recorded on the returned matrix

    Returns:
        GreenMatrix
    """
    receiver = tuple(float(v) for v in receiver)
    depth = receiver[2] if len(receiver) > 2 else 0.0
    rec_enu = np.array([receiver[0], receiver[1], -depth])
    offset = rec_enu - src.enu
    r = float(np.linalg.norm(offset))
    if r < cell_spacing:
        raise DegenerateGeometry(
            f"Station {station_id} is {r:.3f} m from the source (< {cell_spacing} m)"
        )
    gamma = offset / r

    t = grid.times
    rate_p = src.stf.rate(t - r / medium.vp)
    rate_s = src.stf.rate(t - r / medium.vs)
    coef_p = src.moment_scale / (4.0 * math.pi * medium.rho * medium.vp ** 3 * r)
    coef_s = src.moment_scale / (4.0 * math.pi * medium.rho * medium.vs ** 3 * r)

    basis = np.stack([MomentTensor.basis_tensor(q) for q in range(MT_DIM)])
    e_gamma = basis @ gamma                       # (6, 3): E_jk g_k
    radial = e_gamma @ gamma                      # (6,):   g_j E_jk g_k
    amp_p = radial[:, None] * gamma[None, :]      # gi gj gk E_jk
    amp_s = e_gamma - amp_p                       # (d_ij - gi gj) gk E_jk

    cols = (coef_p * amp_p[:, :, None] * rate_p[None, None, :]
            + coef_s * amp_s[:, :, None] * rate_s[None, None, :])   # (6, 3, n_t)
    samples = cols.transpose(1, 2, 0).reshape(N_COMPONENTS * grid.n_t, MT_DIM)
    return GreenMatrix(station_id, samples)


# ---------------------------------------------------------------------------
# Green manifest import / export
# ---------------------------------------------------------------------------

class ManifestStation(BaseModel):
    model_config = ConfigDict(extra='forbid')

    id: int
    east_m: float
    north_m: float
    file: str


class GreenManifest(BaseModel):
    model_config = ConfigDict(extra='forbid')

    n_t: int = Field(ge=2)
    dt: float = Field(gt=0)
    stations: list[ManifestStation] = Field(min_length=1)
    metadata: dict = Field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class GreenCollection:
    """Green matrices for a set of surface stations on one time grid."""

    grid: TimeGrid
    greens: tuple
    locations: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def station_ids(self):
        return tuple(g.station_id for g in self.greens)


def read_manifest(manifest_path):
    """Parse and validate a Green manifest without loading the binaries."""
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text())
    except FileNotFoundError as e:
        raise ManifestParseError(f"Manifest not found: {manifest_path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestParseError(f"Could not parse manifest {manifest_path}: {e}") from e
    try:
        manifest = GreenManifest.model_validate(raw)
    except ValidationError as e:
        fields = ', '.join('.'.join(str(p) for p in err['loc']) for err in e.errors())
        raise ManifestParseError(f"Invalid manifest {manifest_path}: {fields}") from e
    seen = set()
    for station in manifest.stations:
        if station.id in seen:
            raise DuplicateStationId(f"Duplicate station id {station.id} in {manifest_path}")
        seen.add(station.id)
    return manifest


def green_import(manifest_path):
    """
    Load externally computed Green matrices listed in a manifest.

    Each station file holds little-endian float64 values, row-major
    (3 n_t rows x 6 columns), component-major row blocks.

    Returns:
        GreenCollection
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    grid = TimeGrid(manifest.n_t, manifest.dt)
    expected = N_COMPONENTS * grid.n_t * MT_DIM
    greens = []
    for station in manifest.stations:
        path = manifest_path.parent / station.file
        try:
            data = np.fromfile(path, dtype='<f8')
        except OSError as e:
            raise ManifestParseError(f"Could not read station {station.id} file {path}: {e}") from e
        if data.size != expected:
            raise ShapeMismatch(
                f"Station {station.id}: {data.size} values in {path.name}, expected "
                f"{expected} for n_t={grid.n_t}"
            )
        greens.append(GreenMatrix(station.id, data.reshape(N_COMPONENTS * grid.n_t, MT_DIM)))
    locations = np.array([[s.east_m, s.north_m, 0.0] for s in manifest.stations])
    logger.info("Imported %d Green matrices from %s", len(greens), manifest_path)
    return GreenCollection(grid, tuple(greens), locations, dict(manifest.metadata))


def green_export(collection, directory, manifest_name='manifest.json'):
    """Write a GreenCollection as a manifest plus one binary file per station."""
    directory = Path(directory)
    stations = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for green, loc in zip(collection.greens, collection.locations):
            name = f"station_{green.station_id:06d}.bin"
            green.samples.astype('<f8').tofile(directory / name)
            stations.append({
                'id': green.station_id,
                'east_m': float(loc[0]),
                'north_m': float(loc[1]),
                'file': name,
            })
        manifest = {
            'n_t': collection.grid.n_t,
            'dt': collection.grid.dt,
            'stations': stations,
            'metadata': collection.metadata,
        }
        path = directory / manifest_name
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    except OSError as e:
        raise DataIOError(f"Could not export Green matrices to {directory}: {e}") from e
    logger.info("Exported %d Green matrices to %s", len(stations), directory)
    return path


def write_waveform_csv(path, grid, waveform):
    """Export a (3 n_t) waveform as CSV with header t,u1,u2,u3."""
    waveform = np.asarray(waveform, dtype=float)
    if waveform.shape != (N_COMPONENTS * grid.n_t,):
        raise ShapeMismatch(f"Waveform length {waveform.size} does not match 3 x {grid.n_t}")
    u = waveform.reshape(N_COMPONENTS, grid.n_t)
    rows = zip(grid.times, u[0], u[1], u[2])
    return write_csv(path, ['t', 'u1', 'u2', 'u3'], rows)


# ---------------------------------------------------------------------------
# Noise model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """
    Stationary Gaussian noise with kernel sigma^2 exp(-|ti - tj| / T) on each
    component, components independent. On a uniform grid the precision is
    tridiagonal; only its two bands are ever stored. T <= 0 means white noise.
    """

    sigma_eps: float
    corr_time: float
    grid: TimeGrid
    zero_signal: bool = False

    def __post_init__(self):
        if self.sigma_eps < 0 or not math.isfinite(self.sigma_eps):
            raise ConfigError(f"sigma_eps must be finite and >= 0, got {self.sigma_eps}")

    @property
    def rho(self):
        if self.corr_time is None or self.corr_time <= 0:
            return 0.0
        return math.exp(-self.grid.dt / self.corr_time)

    def precision_bands(self):
        """(diagonal, off-diagonal) of one component's precision matrix."""
        if self.sigma_eps == 0:
            raise NumericalBreakdown("Noise precision is undefined for sigma_eps = 0")
        rho = self.rho
        n_t = self.grid.n_t
        scale = 1.0 / (self.sigma_eps ** 2 * (1.0 - rho ** 2))
        diag = np.full(n_t, (1.0 + rho ** 2) * scale)
        diag[0] = diag[-1] = scale
        off = np.full(n_t - 1, -rho * scale)
        return diag, off

    def apply_precision(self, x):
        """Multiply a (3 n_t,) or (3 n_t, c) array by the block-tridiagonal precision."""
        x = np.asarray(x, dtype=float)
        n_t = self.grid.n_t
        if x.shape[0] != N_COMPONENTS * n_t:
            raise ShapeMismatch(f"Expected {N_COMPONENTS * n_t} rows, got {x.shape[0]}")
        vector = x.ndim == 1
        X = x.reshape(N_COMPONENTS, n_t, -1)
        diag, off = self.precision_bands()
        Y = diag[None, :, None] * X
        Y[:, :-1] += off[None, :, None] * X[:, 1:]
        Y[:, 1:] += off[None, :, None] * X[:, :-1]
        Y = Y.reshape(N_COMPONENTS * n_t, -1)
        return Y[:, 0] if vector else Y

    def component_covariance(self):
        t = self.grid.times
        lag = np.abs(t[:, None] - t[None, :])
        if self.rho == 0.0:
            return self.sigma_eps ** 2 * np.eye(self.grid.n_t)
        return self.sigma_eps ** 2 * np.exp(-lag / self.corr_time)

    def component_precision(self):
        diag, off = self.precision_bands()
        return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)

    def dense_covariance(self):
        return la.block_diag(*[self.component_covariance()] * N_COMPONENTS)

    def dense_precision(self):
        return la.block_diag(*[self.component_precision()] * N_COMPONENTS)

    def sample(self, rng, size=None):
        """
        Draw noise vectors through the Cholesky factor of the tridiagonal
        precision: with Q = U^T U (U upper bidiagonal), eps = U^-1 z.

        Returns:
            np.ndarray: (3 n_t,) when size is None, else (size, 3 n_t)
        """
        n_t = self.grid.n_t
        count = 1 if size is None else int(size)
        if self.sigma_eps == 0:
            out = np.zeros((count, N_COMPONENTS * n_t))
            return out[0] if size is None else out
        diag, off = self.precision_bands()
        bands = np.zeros((2, n_t))
        bands[0, 1:] = off
        bands[1] = diag
        upper = la.cholesky_banded(bands, lower=False)
        z = rng.standard_normal((n_t, N_COMPONENTS * count))
        eps = la.solve_banded((0, 1), upper, z)
        out = eps.reshape(n_t, count, N_COMPONENTS).transpose(1, 2, 0).reshape(count, -1)
        return out[0] if size is None else out


def noise_for_reference(norm, grid, rel=0.1, T=None, sigma_floor=0.0, station_id=None):
    """
    Noise model for a reference waveform of Euclidean norm `norm` on `grid`.

    sigma_eps = rel * norm / sqrt(3 n_t), never below sigma_floor. A waveform
    whose RMS is below the floor is flagged as zero-signal and gets
    sigma_eps = sigma_floor.
    """
    if not 0 < rel <= 1:
        raise ConfigError(f"Relative noise level must be in (0, 1], got {rel}")
    if sigma_floor < 0:
        raise ConfigError(f"sigma_floor must be >= 0, got {sigma_floor}")
    n = N_COMPONENTS * grid.n_t
    corr_time = grid.duration if T is None else float(T)
    if norm < sigma_floor * math.sqrt(n):
        where = f"station {station_id}" if station_id is not None else "reference waveform"
        warnings.warn(f"Zero signal at {where}; sigma_eps set to floor {sigma_floor!r}",
                      ZeroSignalWarning, stacklevel=2)
        logger.warning("Zero signal at %s, using noise floor %g", where, sigma_floor)
        return NoiseModel(float(sigma_floor), corr_time, grid, zero_signal=True)
    sigma = max(rel * norm / math.sqrt(n), sigma_floor)
    return NoiseModel(sigma, corr_time, grid)


def calibrate_noise(g, reference_mt, grid, rel=0.1, T=None, sigma_floor=None):
    """
    Set the station noise level so that the expected noise energy is about
    rel^2 times the energy of the reference waveform u = G m_ref.

    Args:
        g (GreenMatrix): station Green matrix
        reference_mt (MomentTensor): MT defining the reference waveform
        grid (TimeGrid): time grid of g
        rel (float): relative noise level in (0, 1]
        T (float): correlation time in seconds; None means the trace duration
        sigma_floor (float): lower bound on sigma_eps; None means
            1e-12 * max(1, RMS of the reference waveform)

    Returns:
        NoiseModel
    """
    if g.n_t != grid.n_t:
        raise ShapeMismatch(f"Green matrix has n_t={g.n_t}, grid has n_t={grid.n_t}")
    u = g.response(reference_mt)
    norm = float(np.linalg.norm(u))
    if sigma_floor is None:
        sigma_floor = 1e-12 * max(1.0, norm / math.sqrt(u.size))
    return noise_for_reference(norm, grid, rel, T, sigma_floor, station_id=g.station_id)


def precision_summary(g, noise, y=None):
    """
    H = G^T Sigma_eps^-1 G (and b = G^T Sigma_eps^-1 y when y is given),
    using the tridiagonal noise precision.
    """
    if g.n_t != noise.grid.n_t:
        raise ShapeMismatch(f"Green matrix has n_t={g.n_t}, noise grid has n_t={noise.grid.n_t}")
    weighted = noise.apply_precision(g.samples)
    H = symmetrize(g.samples.T @ weighted)
    b = None
    if y is not None:
        y = np.asarray(y, dtype=float)
        if y.shape != (g.samples.shape[0],):
            raise ShapeMismatch(f"Observation length {y.size} does not match {g.samples.shape[0]}")
        b = weighted.T @ y
    return PrecisionSummary(H, b)


def synthesize_observation(g, true_mt, noise, seed):
    """
    Noisy record y = G m_true + eps for one station.

    Args:
        seed: int seed or a numpy Generator; the same seed gives the same record
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if g.n_t != noise.grid.n_t:
        raise ShapeMismatch(f"Green matrix has n_t={g.n_t}, noise grid has n_t={noise.grid.n_t}")
    return g.response(true_mt) + noise.sample(rng)
