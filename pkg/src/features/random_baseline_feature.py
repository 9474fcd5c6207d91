"""
Random Baseline Feature - compares the greedy network with uniformly random
networks of the same size.
"""

import logging

import numpy as np

from features.greedy_feature import GreedyFeature
from services.design import TIE_RTOL, random_select
from services.evaluation import score_network
from services.inference import COMPONENT_NAMES
from services.run_context import ModeResult
from services.scenario import derive_seed

logger = logging.getLogger(__name__)

COMPARISON_HEADER = ['k', 'greedy_cum_eig', 'random_min_cum_eig', 'random_mean_cum_eig', 'random_max_cum_eig']
CRPS_HEADER = ['component', 'greedy_crps', 'random_mean_crps']


class RandomBaselineFeature:
    """
    Handles the random-baseline mode.
    """

    def __init__(self):
        self.name = "RandomBaseline"
        self.description = "Greedy network versus n_random random networks of the same size"
        self.modes = ('random-baseline',)
        self._greedy = GreedyFeature()

    def get_capabilities(self):
        return """
This feature can:
- Draw n_random random k-station networks with seeds split off the root seed
- Report cumulative EIG envelopes (min / mean / max) next to the greedy curve
- Compare per-component CRPS of greedy and the random mean at the largest k
        """.strip()

    async def handle(self, cfg, context):
        result = ModeResult(cfg.mode)
        cands, greedy, greedy_report = await self._greedy.design(cfg, context, result)

        seeds = [derive_seed(cfg.seed, 'random', i) for i in range(cfg.n_random)]
        with context.stage('design', scenario=cands.binding.label):
            randoms = await context.gather(
                (random_select, (cands, cfg.k, seed, context.prior, context.config_hash, f"random-{i:03d}"), {})
                for i, seed in enumerate(seeds)
            )
        with context.stage('evaluation', scenario=cands.binding.label):
            reports = await context.gather(
                (score_network, (rec, cands.binding, cfg.true_mt, range(cfg.scoring_seeds), context.prior, cfg.seed),
                 {'network': rec.label, 'config_hash': context.config_hash})
                for rec in randoms
            )
        for rec, report in zip(randoms, reports):
            result.add_design(rec.label, rec)
            result.reports.append(report)

        random_cum = np.stack([rec.cum_eig for rec in randoms])
        greedy_cum = greedy.cum_eig
        rows = [
            (k + 1, greedy_cum[k], random_cum[:, k].min(), random_cum[:, k].mean(), random_cum[:, k].max())
            for k in range(cfg.k)
        ]
        result.add_table('comparison', COMPARISON_HEADER, rows)

        random_crps = np.mean([r.crps[-1] for r in reports], axis=0)
        crps_rows = [(c, g, r) for c, g, r in zip(COMPONENT_NAMES, greedy_report.crps[-1], random_crps)]
        result.add_table('crps_comparison', CRPS_HEADER, crps_rows)

        best_random = random_cum.max(axis=0)
        dominates = [bool(greedy_cum[k] >= best_random[k] - TIE_RTOL * max(1.0, abs(best_random[k])))
                     for k in range(cfg.k)]
        result.summary.update({
            'n_random': cfg.n_random,
            'greedy_dominates': dominates,
            'greedy_dominates_all': all(dominates),
            'greedy_crps_better': [bool(g <= r) for g, r in zip(greedy_report.crps[-1], random_crps)],
        })
        if not all(dominates):
            logger.warning("A random network beat greedy at k = %s",
                           [k + 1 for k, ok in enumerate(dominates) if not ok])
        return result
