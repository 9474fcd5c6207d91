"""
Experiment configuration.

Experiment files are JSON documents validated by the pydantic models below.
Unknown keys are rejected, and each mode's required fields are checked before
any compute starts. Process-level settings (thread count, log level, runs
directory) come from the environment, usually via a .env file.
"""

import copy
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

# Normalized true moment tensor used for synthetic data and noise calibration
DEFAULT_TRUE_MT = (0.269, 0.700, -0.969, -0.454, -0.195, 0.0592)
VP_VS_RATIO = 1.73

MODES = (
    'greedy',
    'consensus-velocity',
    'consensus-source',
    'depth-study',
    'misspec-sweep',
    'random-baseline',
)


class _Model(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class GridSpec(_Model):
    """Candidate grid: extents in meters plus a spacing or per-axis counts."""

    east_min: float = -4000.0
    east_max: float = 4000.0
    north_min: float = -4000.0
    north_max: float = 4000.0
    spacing_m: float | None = Field(default=400.0, gt=0)
    n_east: int | None = Field(default=None, ge=1)
    n_north: int | None = Field(default=None, ge=1)

    @model_validator(mode='after')
    def _spacing_or_counts(self):
        counts = (self.n_east is not None, self.n_north is not None)
        if any(counts) and not all(counts):
            raise ValueError("n_east and n_north must be given together")
        if self.spacing_m is None and not all(counts):
            raise ValueError("either spacing_m or n_east/n_north is required")
        return self

    @property
    def uses_counts(self):
        return self.n_east is not None


class TimeGridConfig(_Model):
    n_t: int = Field(default=300, ge=2)
    dt: float = Field(default=0.01, gt=0)


class MediumConfig(_Model):
    label: str = 'homogeneous'
    vp: float = Field(default=4000.0, gt=0)
    vs: float = Field(default=round(4000.0 / VP_VS_RATIO, 3), gt=0)
    rho: float = Field(default=2000.0, gt=0)

    @model_validator(mode='after')
    def _vp_above_vs(self):
        if not self.vp > self.vs:
            raise ValueError(f"vp ({self.vp}) must exceed vs ({self.vs})")
        return self


class SourceConfig(_Model):
    label: str | None = None
    east_m: float = 0.0
    north_m: float = 0.0
    depth_m: float = Field(default=2000.0, gt=0)


class SourceCloudConfig(_Model):
    """Uniform horizontal cloud of plausible source locations at a fixed depth."""

    center_east_m: float = 0.0
    center_north_m: float = 0.0
    half_width_m: float = Field(default=500.0, ge=0)
    count: int = Field(default=25, ge=1)
    design_count: int = Field(default=20, ge=1)
    depth_m: float = Field(default=2000.0, gt=0)

    @model_validator(mode='after')
    def _design_within_count(self):
        if self.design_count > self.count:
            raise ValueError(f"design_count ({self.design_count}) exceeds count ({self.count})")
        return self


class PriorConfig(_Model):
    sigma_p: float = Field(default=0.5, gt=0)


class NoiseConfig(_Model):
    rel: float = Field(default=0.1, gt=0, le=1)
    # None: the trace duration
    corr_time_s: float | None = Field(default=None, ge=0)
    # None: 1e-12 * max(1, global RMS of the reference waveforms)
    sigma_floor: float | None = Field(default=None, ge=0)
    # None: the experiment's true_mt
    reference_mt: tuple[float, float, float, float, float, float] | None = None


class ExperimentConfig(_Model):
    name: str = 'experiment'
    mode: Literal[MODES]
    k: int = Field(ge=1)
    seed: int = Field(default=0, ge=0)

    grid: GridSpec = GridSpec()
    time_grid: TimeGridConfig = TimeGridConfig()
    mediums: tuple[MediumConfig, ...] = Field(default=(MediumConfig(),), min_length=1)
    sources: tuple[SourceConfig, ...] = Field(default=(SourceConfig(),), min_length=1)
    source_cloud: SourceCloudConfig | None = None
    prior: PriorConfig = PriorConfig()
    noise: NoiseConfig = NoiseConfig()

    true_mt: tuple[float, float, float, float, float, float] = DEFAULT_TRUE_MT
    stf_corner_hz: float = Field(default=10.0, gt=0, le=15)
    moment_scale: float = Field(default=1e15, gt=0)

    greens_manifest: str | None = None
    n_random: int = Field(default=50, ge=1)
    depths_m: tuple[float, ...] = (1000.0, 2000.0, 3000.0)
    scoring_seeds: int = Field(default=1, ge=1)
    misspec_pairs: tuple[tuple[int, int], ...] | None = None
    consensus_subsets: tuple[tuple[int, ...], ...] = ()
    exhaustive_guard: int = Field(default=10 ** 6, ge=1)

    @field_validator('depths_m')
    @classmethod
    def _positive_depths(cls, depths):
        if any(d <= 0 for d in depths):
            raise ValueError("every depth must be > 0")
        return depths

    @model_validator(mode='after')
    def _mode_requirements(self):
        n_med = len(self.mediums)
        if self.mode == 'consensus-source' and self.source_cloud is None:
            raise ValueError("consensus-source mode requires source_cloud")
        if self.mode == 'depth-study' and not self.depths_m:
            raise ValueError("depth-study mode requires at least one depth in depths_m")
        if self.mode == 'misspec-sweep' and n_med < 2 and not self.misspec_pairs:
            raise ValueError("misspec-sweep mode requires at least two mediums or explicit misspec_pairs")
        if self.greens_manifest is not None and self.mode not in ('greedy', 'random-baseline'):
            raise ValueError("greens_manifest is only supported in greedy and random-baseline modes")
        for pair in self.misspec_pairs or ():
            if any(not 0 <= i < n_med for i in pair):
                raise ValueError(f"misspec pair {list(pair)} refers to a missing medium")
        for subset in self.consensus_subsets:
            if not subset or any(not 0 <= i < n_med for i in subset):
                raise ValueError(f"consensus subset {list(subset)} is empty or refers to a missing medium")
        return self

    @property
    def reference_mt(self):
        return self.noise.reference_mt if self.noise.reference_mt is not None else self.true_mt


# ---------------------------------------------------------------------------
# Loading, overrides, hashing
# ---------------------------------------------------------------------------

def _parse_override_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw, overrides):
    """
    Apply KEY=VALUE overrides with dotted paths to a raw config dict.

    VALUE is parsed as JSON, falling back to a plain string. Integer path
    segments index into lists ("mediums.0.vp=4200").

    Returns:
        dict: a modified deep copy of raw
    """
    result = copy.deepcopy(raw)
    for item in overrides or ():
        key, sep, text = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"Override must look like KEY=VALUE, got {item!r}")
        parts = key.strip().split('.')
        value = _parse_override_value(text)
        node = result
        try:
            for i, part in enumerate(parts):
                last = i == len(parts) - 1
                if isinstance(node, list):
                    idx = int(part)
                    if last:
                        node[idx] = value
                    else:
                        node = node[idx]
                else:
                    if last:
                        node[part] = value
                    else:
                        if node.get(part) is None:
                            node[part] = {}
                        node = node[part]
        except (ValueError, IndexError, TypeError, AttributeError) as e:
            raise ConfigError(f"Cannot apply override {item!r}: {e}") from e
        logger.debug("Override %s = %r", key, value)
    return result


def format_validation_error(error):
    lines = []
    for err in error.errors():
        path = '.'.join(str(p) for p in err['loc']) or '<root>'
        lines.append(f"{path}: {err['msg']}")
    return '; '.join(lines)


def parse_config(raw, overrides=()):
    """Validate a raw dict (after overrides) into an ExperimentConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("Config must be a JSON object")
    raw = apply_overrides(raw, overrides)
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid config: {format_validation_error(e)}") from e


def load_config(path, overrides=()):
    """
    Load and validate an experiment config file.

    Args:
        path: JSON config file
        overrides (list[str]): KEY=VALUE strings

    Returns:
        ExperimentConfig
    """
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except OSError as e:
        raise ConfigError(f"Could not read config {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    cfg = parse_config(raw, overrides)
    # relative manifest paths resolve against the config file's directory
    if cfg.greens_manifest is not None and not Path(cfg.greens_manifest).is_absolute():
        resolved = (path.parent / cfg.greens_manifest).as_posix()
        cfg = cfg.model_copy(update={'greens_manifest': resolved})
    return cfg


def canonical_json(cfg):
    return json.dumps(cfg.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))


def config_hash(cfg):
    """First 16 hex chars of SHA-256 over the canonical JSON of the config."""
    return hashlib.sha256(canonical_json(cfg).encode('utf-8')).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

def get_thread_count(cli_value=None):
    """Worker threads: --threads wins over OEDMT_THREADS, which wins over cpu_count."""
    if cli_value is not None:
        value = cli_value
    else:
        env = os.getenv('OEDMT_THREADS')
        if env:
            try:
                value = int(env)
            except ValueError as e:
                raise ConfigError(f"OEDMT_THREADS must be an integer, got {env!r}") from e
        else:
            value = os.cpu_count() or 1
    return max(1, int(value))


def get_log_level():
    return os.getenv('OEDMT_LOG_LEVEL', 'INFO').upper()


def get_runs_dir():
    return Path(os.getenv('OEDMT_RUNS_DIR', 'runs'))
