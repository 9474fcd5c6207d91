"""
Misspecification Feature - Bayes risk of consensus and per-scenario greedy
networks when the data come from a different velocity model than the one
used for inference.
"""

import itertools
import logging

import numpy as np

from services.design import CandidateSet, consensus_select, greedy_select
from services.evaluation import misspec_risk_series
from services.run_context import ModeResult
from services.scenario import build_grid, velocity_scenarios

logger = logging.getLogger(__name__)

SWEEP_HEADER = ['model_scenario', 'data_scenario', 'network', 'k',
                'consensus_risk', 'greedy_risk', 'risk_difference']
SUMMARY_HEADER = ['k', 'count', 'mean', 'min', 'q1', 'median', 'q3', 'max']


def scenario_pairs(cfg):
    """Configured (model, data) pairs, or every ordered pair of distinct mediums."""
    if cfg.misspec_pairs:
        return [tuple(p) for p in cfg.misspec_pairs]
    return list(itertools.permutations(range(len(cfg.mediums)), 2))


def difference_summary(rows, k_max):
    """Per-k distribution of the risk differences (column 6 of the sweep rows)."""
    summary = []
    for k in range(1, k_max + 1):
        diffs = np.array([r[6] for r in rows if r[3] == k])
        if diffs.size == 0:
            continue
        q1, median, q3 = np.percentile(diffs, [25, 50, 75])
        summary.append((k, diffs.size, diffs.mean(), diffs.min(), q1, median, q3, diffs.max()))
    return summary


class MisspecFeature:
    """
    Handles the misspec-sweep mode.
    """

    def __init__(self):
        self.name = "Misspec"
        self.description = "Misspecified Bayes risk of consensus versus greedy networks over scenario pairs"
        self.modes = ('misspec-sweep',)

    def get_capabilities(self):
        return """
This feature can:
- Design a greedy network per velocity model and one consensus network
- Evaluate the misspecified Bayes risk for every (model, data) pair and k
- Summarize the consensus-minus-greedy risk differences per k
        """.strip()

    async def handle(self, cfg, context):
        result = ModeResult(cfg.mode)
        station_grid = build_grid(cfg.grid)
        with context.stage('forward'):
            bindings = await context.run(velocity_scenarios, cfg, station_grid, context.threads)
        cands = CandidateSet(station_grid.station_ids, station_grid.locations, bindings[0])

        with context.stage('design'):
            consensus = await context.run(consensus_select, cands, bindings, cfg.k, context.prior,
                                          context.config_hash, cfg.seed, context.threads, 'consensus')
            greedy = await context.gather(
                (greedy_select, (cands.with_binding(b), cfg.k, context.prior, context.config_hash, cfg.seed, 1,
                                 f"greedy-{b.label}"), {})
                for b in bindings
            )
        result.add_design('consensus', consensus, cands)
        for record in greedy:
            result.add_design(record.label, record)

        pairs = scenario_pairs(cfg)
        networks = [consensus] + list(greedy)
        with context.stage('evaluation'):
            calls = [(misspec_risk_series, (net, bindings[i], bindings[j], context.prior), {})
                     for i, j in pairs for net in networks]
            series = await context.gather(calls)
        per_pair = iter(series)

        rows = []
        for i, j in pairs:
            risks = [next(per_pair) for _ in networks]
            consensus_risk = risks[0]
            for record, greedy_risk in zip(greedy, risks[1:]):
                for k in range(1, cfg.k + 1):
                    rows.append((bindings[i].label, bindings[j].label, record.label, k,
                                 consensus_risk[k], greedy_risk[k], consensus_risk[k] - greedy_risk[k]))
        result.add_table('misspec', SWEEP_HEADER, rows)
        result.add_table('misspec_summary', SUMMARY_HEADER, difference_summary(rows, cfg.k))

        result.summary.update({
            'scenarios': [b.label for b in bindings],
            'pairs': [[bindings[i].label, bindings[j].label] for i, j in pairs],
            'rows': len(rows),
        })
        logger.info("Misspecification sweep: %d pairs x %d networks x %d k values", len(pairs), len(greedy), cfg.k)
        return result
