"""
Consensus Feature - networks that stay informative across several plausible
velocity models or source locations.

Builds one scenario binding per velocity model (consensus-velocity) or per
source-cloud location (consensus-source), selects the consensus network on
the mean EIG, selects a greedy network per scenario, and scores every
network in every evaluation scenario.
"""

import logging

import numpy as np

from services.design import SOURCE_LOCATION, VELOCITY_MODEL, CandidateSet, consensus_select, greedy_select
from services.evaluation import score_network
from services.run_context import ModeResult
from services.scenario import (
    build_binding,
    build_grid,
    cloud_for_config,
    primary_source,
    unique_labels,
)

logger = logging.getLogger(__name__)

FINAL_HEADER = ['network', 'scenario', 'k', 'trace_risk', 'logdet_pos', 'mean_crps']
CLOUD_HEADER = ['scenario', 'east_m', 'north_m', 'depth_m', 'used_for_design']


class ConsensusFeature:
    """
    Handles both consensus modes.
    """

    def __init__(self):
        self.name = "Consensus"
        self.description = "Greedy design on the EIG averaged over velocity models or source locations"
        self.modes = ('consensus-velocity', 'consensus-source')

    def get_capabilities(self):
        return """
This feature can:
- Design a consensus network over all configured velocity models
- Design consensus networks over chosen subsets of velocity models
- Design a consensus network over a random cloud of source locations
- Compare consensus and per-scenario greedy networks in every scenario
        """.strip()

    async def _bindings(self, cfg, context, station_grid):
        if cfg.mode == 'consensus-velocity':
            labels = unique_labels([m.label for m in cfg.mediums])
            calls = [(build_binding, (cfg, medium, primary_source(cfg), label, VELOCITY_MODEL, station_grid), {})
                     for medium, label in zip(cfg.mediums, labels)]
            bindings = await context.gather(calls)
            return bindings, bindings, None
        cloud = cloud_for_config(cfg)
        calls = [(build_binding, (cfg, cfg.mediums[0], loc, f"source-{i:02d}", SOURCE_LOCATION, station_grid), {})
                 for i, loc in enumerate(cloud)]
        bindings = await context.gather(calls)
        return bindings[:cfg.source_cloud.design_count], bindings, cloud

    async def handle(self, cfg, context):
        result = ModeResult(cfg.mode)
        station_grid = build_grid(cfg.grid)
        with context.stage('forward'):
            design_bindings, eval_bindings, cloud = await self._bindings(cfg, context, station_grid)
        cands = CandidateSet(station_grid.station_ids, station_grid.locations, design_bindings[0])

        networks = []
        with context.stage('design'):
            consensus = await context.run(consensus_select, cands, design_bindings, cfg.k, context.prior,
                                          context.config_hash, cfg.seed, context.threads, 'consensus')
            networks.append(('consensus', consensus))
            if cfg.mode == 'consensus-velocity':
                for subset in cfg.consensus_subsets:
                    name = 'consensus-' + '-'.join(str(i) for i in subset)
                    record = await context.run(consensus_select, cands, [design_bindings[i] for i in subset],
                                               cfg.k, context.prior, context.config_hash, cfg.seed,
                                               context.threads, name)
                    networks.append((name, record))
            greedy = await context.gather(
                (greedy_select, (cands.with_binding(b), cfg.k, context.prior, context.config_hash, cfg.seed, 1,
                                 f"greedy-{b.label}"), {})
                for b in eval_bindings
            )
            networks.extend((rec.label, rec) for rec in greedy)

        for name, record in networks:
            result.add_design(name, record, cands if name == 'consensus' else None)

        with context.stage('evaluation'):
            calls = [(score_network, (record, b, cfg.true_mt, range(cfg.scoring_seeds), context.prior, cfg.seed),
                      {'network': name, 'config_hash': context.config_hash})
                     for name, record in networks for b in eval_bindings]
            reports = await context.gather(calls)
        result.reports.extend(reports)

        rows = [(r.network, r.scenario, int(r.ks[-1]), r.trace_risk[-1], r.logdet_pos[-1], float(np.mean(r.crps[-1])))
                for r in reports]
        result.add_table('final_scores', FINAL_HEADER, rows)
        if cloud is not None:
            n_design = cfg.source_cloud.design_count
            result.add_table('source_cloud', CLOUD_HEADER,
                             [(f"source-{i:02d}", e, n, d, i < n_design) for i, (e, n, d) in enumerate(cloud)])

        consensus_risk = [r.trace_risk[-1] for r in reports if r.network == 'consensus']
        result.summary.update({
            'scenarios': [b.label for b in eval_bindings],
            'design_scenarios': [b.label for b in design_bindings],
            'consensus_joint_eig': consensus.joint_eig,
            'consensus_mean_final_trace_risk': float(np.mean(consensus_risk)),
        })
        logger.info("Consensus network over %d scenarios: %s", len(design_bindings), list(consensus.station_ids))
        return result
