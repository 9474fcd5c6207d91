"""
Station-network selection: greedy, consensus greedy, random baseline and the
exhaustive oracle.

All selectors work on precomputed per-station precision matrices (one stack
of shape (n, 6, 6) per scenario), so a greedy step is a single batched EIG
sweep over the remaining candidates against a fixed covariance snapshot.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from services.inference import (
    MT_DIM,
    GaussianBelief,
    PrecisionSummary,
    eig_batch,
    posterior_update,
)
from utils.errors import (
    CombinatorialBlowup,
    DuplicateStationId,
    EmptyCandidates,
    InvalidCardinality,
    KTooLarge,
    ScenarioForwardMissing,
    ShapeMismatch,
)
from utils.linalg import safe_cholesky

logger = logging.getLogger(__name__)

TIE_RTOL = 1e-12
SWEEP_CHUNK = 4096
EXHAUSTIVE_CHUNK = 65536

VELOCITY_MODEL = 'velocity-model'
SOURCE_LOCATION = 'source-location'


# ---------------------------------------------------------------------------
# Candidates and scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScenarioBinding:
    """
    Forward binding of one scenario over a candidate set: per-station
    precision matrices, noise models and (lazily) Green matrices.

    `green_provider(index)` builds the Green matrix of the candidate at that
    position; results are cached.
    """

    label: str
    kind: str
    H: np.ndarray
    noises: tuple = ()
    green_provider: object = field(default=None, repr=False)
    grid: object = None

    def __post_init__(self):
        H = np.array(self.H, dtype=float, copy=True)
        if H.ndim != 3 or H.shape[1:] != (MT_DIM, MT_DIM):
            raise ShapeMismatch(f"Scenario {self.label}: H stack must be (n, 6, 6), got {H.shape}")
        H.setflags(write=False)
        object.__setattr__(self, 'H', H)
        object.__setattr__(self, 'noises', tuple(self.noises))
        if self.noises and len(self.noises) != H.shape[0]:
            raise ShapeMismatch(
                f"Scenario {self.label}: {len(self.noises)} noise models for {H.shape[0]} stations"
            )
        provider = self.green_provider
        object.__setattr__(self, '_green_cache', lru_cache(maxsize=None)(provider) if provider else None)

    @property
    def n_stations(self):
        return self.H.shape[0]

    def summary(self, index):
        return PrecisionSummary(self.H[index])

    def green_for(self, index):
        if self._green_cache is None:
            raise ScenarioForwardMissing(f"Scenario {self.label} has no Green provider")
        if not 0 <= index < self.n_stations:
            raise ScenarioForwardMissing(f"Scenario {self.label} has no station at position {index}")
        return self._green_cache(int(index))

    def noise_for(self, index):
        if not self.noises:
            raise ScenarioForwardMissing(f"Scenario {self.label} has no noise models")
        return self.noises[index]

    @property
    def zero_signal_count(self):
        return sum(1 for n in self.noises if n.zero_signal)


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Candidate stations (ids, surface locations) bound to one scenario."""

    station_ids: np.ndarray
    locations: np.ndarray
    binding: ScenarioBinding

    def __post_init__(self):
        ids = np.asarray(self.station_ids, dtype=np.int64).reshape(-1)
        locations = np.asarray(self.locations, dtype=float)
        if ids.size == 0:
            raise EmptyCandidates("Candidate set is empty")
        if np.unique(ids).size != ids.size:
            raise DuplicateStationId("Candidate station ids must be unique")
        if locations.shape[0] != ids.size:
            raise ShapeMismatch(f"{locations.shape[0]} locations for {ids.size} stations")
        if self.binding.n_stations != ids.size:
            raise ScenarioForwardMissing(
                f"Scenario {self.binding.label} binds {self.binding.n_stations} stations, "
                f"candidate set has {ids.size}"
            )
        ids.setflags(write=False)
        object.__setattr__(self, 'station_ids', ids)
        object.__setattr__(self, 'locations', locations)

    def __len__(self):
        return self.station_ids.size

    def with_binding(self, binding):
        return CandidateSet(self.station_ids, self.locations, binding)

    def index_of(self, station_id):
        hits = np.flatnonzero(self.station_ids == station_id)
        if hits.size == 0:
            raise KeyError(f"Unknown station id {station_id}")
        return int(hits[0])


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    scenarios: tuple

    def __post_init__(self):
        scenarios = tuple(self.scenarios)
        if not scenarios:
            raise EmptyCandidates("Scenario set is empty")
        object.__setattr__(self, 'scenarios', scenarios)

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    @property
    def labels(self):
        return tuple(s.label for s in self.scenarios)

    def check_against(self, cands):
        for s in self.scenarios:
            if s.n_stations != len(cands):
                raise ScenarioForwardMissing(
                    f"Scenario {s.label} binds {s.n_stations} stations, candidate set has {len(cands)}"
                )


# ---------------------------------------------------------------------------
# Design record
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DesignRecord:
    """
    Ordered selection with per-step incremental EIG.

    `covariances` has shape (n_scenarios, k, 6, 6): the belief covariance
    after each step, per scenario. `eig_fields` has shape (k, n): the EIG of
    every candidate at each step, NaN where the candidate was already chosen.
    """

    method: str
    indices: tuple
    station_ids: tuple
    locations: np.ndarray
    eig_increments: np.ndarray
    covariances: np.ndarray
    scenario_labels: tuple = ()
    eig_fields: np.ndarray | None = None
    config_hash: str = ''
    seed: int | None = None
    label: str = ''

    @property
    def k(self):
        return len(self.station_ids)

    @property
    def cum_eig(self):
        return np.cumsum(self.eig_increments)

    @property
    def joint_eig(self):
        return float(np.sum(self.eig_increments))

    def snapshots(self, scenario=0):
        return self.covariances[scenario]

    def steps(self):
        cum = self.cum_eig
        return [
            {
                'rank': rank + 1,
                'station_id': int(sid),
                'east_m': float(self.locations[rank, 0]),
                'north_m': float(self.locations[rank, 1]),
                'eig_increment': float(self.eig_increments[rank]),
                'cum_eig': float(cum[rank]),
            }
            for rank, sid in enumerate(self.station_ids)
        ]

    def to_json(self):
        return {
            'config_hash': self.config_hash,
            'seed': self.seed,
            'method': self.method,
            'label': self.label,
            'scenarios': list(self.scenario_labels),
            'steps': self.steps(),
        }

    def eig_field_rows(self, step, cands):
        """Rows (station_id, east_m, north_m, eig) of the step's EIG field."""
        if self.eig_fields is None:
            return []
        values = self.eig_fields[step]
        rows = []
        for idx in np.flatnonzero(np.isfinite(values)):
            loc = cands.locations[idx]
            rows.append((int(cands.station_ids[idx]), float(loc[0]), float(loc[1]), float(values[idx])))
        return rows


# ---------------------------------------------------------------------------
# Selection core
# ---------------------------------------------------------------------------

def argmax_lowest_id(values, station_ids):
    """
    Position of the maximum of `values` (NaN / -inf entries ignored). Values
    within 1e-12 * max(1, |max|) of the maximum count as tied, and the tied
    candidate with the lowest station id wins.
    """
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    if not np.any(finite):
        raise EmptyCandidates("No candidate left to select")
    best = float(np.max(values[finite]))
    tol = TIE_RTOL * max(1.0, abs(best))
    tied = np.flatnonzero(finite & (values >= best - tol))
    ids = np.asarray(station_ids)[tied]
    return int(tied[np.argmin(ids)])


def _check_cardinality(n, k):
    if n == 0:
        raise EmptyCandidates("Candidate set is empty")
    if k < 1:
        raise InvalidCardinality(f"k must be >= 1, got {k}")
    if k > n:
        raise KTooLarge(f"k = {k} exceeds the {n} available candidates")


def eig_sweep(H_stack, cov, threads=1, chunk=SWEEP_CHUNK):
    """EIG of every matrix in H_stack under one covariance snapshot."""
    chol = safe_cholesky(cov, what="belief covariance")
    n = H_stack.shape[0]
    if threads <= 1 or n <= chunk:
        return eig_batch(H_stack, cov, prior_chol=chol)
    starts = range(0, n, chunk)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(lambda s: eig_batch(H_stack[s:s + chunk], cov, prior_chol=chol), starts)
        return np.concatenate(list(parts))


def _sequential_select(H_stacks, prior_cov, station_ids, k, threads, method):
    """
    Shared loop of greedy and consensus selection. The objective at every
    step is the arithmetic mean over scenarios of the single-station EIG
    under each scenario's current covariance.
    """
    n = H_stacks[0].shape[0]
    n_scen = len(H_stacks)
    covs = [np.array(prior_cov, dtype=float) for _ in range(n_scen)]
    remaining = np.ones(n, dtype=bool)
    chosen, increments = [], []
    snapshots = np.empty((n_scen, k, MT_DIM, MT_DIM))
    fields = np.full((k, n), np.nan)

    for step in range(k):
        open_idx = np.flatnonzero(remaining)
        per_scenario = np.stack([eig_sweep(H[open_idx], cov, threads) for H, cov in zip(H_stacks, covs)])
        fields[step, open_idx] = per_scenario.mean(axis=0)
        pick = argmax_lowest_id(fields[step], station_ids)
        chosen.append(pick)
        increments.append(fields[step, pick])
        remaining[pick] = False

        # mean reset to zero: only the covariance carries over between steps
        for s in range(n_scen):
            belief = GaussianBelief(np.zeros(MT_DIM), covs[s])
            covs[s] = posterior_update(belief, PrecisionSummary(H_stacks[s][pick])).cov
            snapshots[s, step] = covs[s]
        logger.info("%s step %d: station %d, dEIG=%.6g", method, step + 1,
                    int(station_ids[pick]), increments[-1])
        logger.debug("%s step %d: %d candidates evaluated", method, step + 1, open_idx.size)

    return chosen, np.array(increments), snapshots, fields


def _record(method, cands, chosen, increments, snapshots, labels, fields=None,
            config_hash='', seed=None, label=''):
    return DesignRecord(
        method=method,
        indices=tuple(int(i) for i in chosen),
        station_ids=tuple(int(cands.station_ids[i]) for i in chosen),
        locations=np.array(cands.locations[list(chosen)], dtype=float),
        eig_increments=np.asarray(increments, dtype=float),
        covariances=snapshots,
        scenario_labels=tuple(labels),
        eig_fields=fields,
        config_hash=config_hash,
        seed=seed,
        label=label,
    )


def greedy_select(cands, k, prior, config_hash='', seed=None, threads=1, label=''):
    """
    Sequentially pick the k stations of largest single-station EIG, updating
    the belief covariance after each pick.

    Args:
        cands (CandidateSet): candidates bound to one scenario
        k (int): number of stations, 1 <= k <= n
        prior (GaussianBelief): prior belief; only its covariance matters
        config_hash (str): recorded on the DesignRecord
        seed: recorded on the DesignRecord
        threads (int): worker threads for the candidate sweep

    Returns:
        DesignRecord
    """
    _check_cardinality(len(cands), k)
    chosen, inc, snaps, fields = _sequential_select(
        [cands.binding.H], prior.cov, cands.station_ids, k, threads, 'greedy')
    return _record('greedy', cands, chosen, inc, snaps, [cands.binding.label], fields,
                   config_hash, seed, label or cands.binding.label)


def consensus_select(cands, scenarios, k, prior, config_hash='', seed=None, threads=1, label='consensus'):
    """
    Greedy selection on the EIG averaged over several scenarios. Each scenario
    keeps its own belief covariance, updated with that scenario's H of the
    chosen station. The recorded increment is the mean over scenarios.
    """
    _check_cardinality(len(cands), k)
    scenarios = scenarios if isinstance(scenarios, ScenarioSet) else ScenarioSet(tuple(scenarios))
    scenarios.check_against(cands)
    H_stacks = [s.H for s in scenarios]
    chosen, inc, snaps, fields = _sequential_select(
        H_stacks, prior.cov, cands.station_ids, k, threads, 'consensus')
    return _record('consensus', cands, chosen, inc, snaps, scenarios.labels, fields,
                   config_hash, seed, label)


def network_increments(H_stack, prior_cov, order):
    """Incremental EIGs and covariance snapshots along a fixed station order."""
    cov = np.array(prior_cov, dtype=float)
    increments = np.empty(len(order))
    snapshots = np.empty((len(order), MT_DIM, MT_DIM))
    for step, idx in enumerate(order):
        increments[step] = eig_batch(H_stack[idx][None], cov)[0]
        belief = GaussianBelief(np.zeros(MT_DIM), cov)
        cov = posterior_update(belief, PrecisionSummary(H_stack[idx])).cov
        snapshots[step] = cov
    return increments, snapshots


def random_select(cands, k, seed, prior=None, config_hash='', label=''):
    """
    Uniform random network of k stations, drawn without replacement.
    Increments are computed afterwards in draw order.
    """
    _check_cardinality(len(cands), k)
    rng = np.random.default_rng(seed)
    order = rng.choice(len(cands), size=k, replace=False)
    prior = prior if prior is not None else GaussianBelief.isotropic(0.5)
    inc, snaps = network_increments(cands.binding.H, prior.cov, order)
    return _record('random', cands, order, inc, snaps[None], [cands.binding.label],
                   None, config_hash, seed, label or f"random-{seed}")


def exhaustive_select(cands, k, prior, max_subsets=10 ** 6):
    """
    Exact maximizer of the joint EIG over all k-subsets.

    Subsets are enumerated in lexicographic order of station ids and the
    first subset within the tie tolerance of the maximum is kept.

    Returns:
        tuple: (station ids of the best subset, its EIG)
    """
    n = len(cands)
    _check_cardinality(n, k)
    total = math.comb(n, k)
    if total > max_subsets:
        raise CombinatorialBlowup(f"C({n}, {k}) = {total} subsets exceeds the guard of {max_subsets}")
    if total > max_subsets // 2:
        logger.warning("Exhaustive search over %d subsets is close to the guard (%d)", total, max_subsets)

    order = np.argsort(cands.station_ids, kind='stable')
    H = cands.binding.H[order]
    chol = safe_cholesky(prior.cov, what="prior covariance")
    combos = itertools.combinations(range(n), k)
    best_val, best_subset = -np.inf, None
    while True:
        block = np.array(list(itertools.islice(combos, EXHAUSTIVE_CHUNK)), dtype=np.int64)
        if block.size == 0:
            break
        values = eig_batch(H[block].sum(axis=1), prior.cov, prior_chol=chol)
        top = float(np.max(values))
        first = int(np.flatnonzero(values >= top - TIE_RTOL * max(1.0, abs(top)))[0])
        if best_subset is None or values[first] > best_val + TIE_RTOL * max(1.0, abs(best_val)):
            best_val, best_subset = float(values[first]), block[first]
    ids = tuple(int(cands.station_ids[order[i]]) for i in best_subset)
    logger.info("Exhaustive search over %d subsets: best EIG %.6g at %s", total, best_val, ids)
    return ids, best_val
