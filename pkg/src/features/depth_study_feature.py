"""
Depth Study Feature - how the greedy ring of stations widens with source depth.
"""

import logging

import numpy as np

from services.design import greedy_select
from services.run_context import ModeResult
from services.scenario import build_candidates, build_grid, primary_source

logger = logging.getLogger(__name__)

DEPTH_HEADER = ['depth_m', 'mean_radius_m', 'inner_radius_m', 'outer_radius_m']


def epicentral_radii(record, epicentre):
    """Horizontal distance of stations 2..k from the source epicentre."""
    offsets = record.locations[1:, :2] - np.asarray(epicentre[:2], dtype=float)
    return np.hypot(offsets[:, 0], offsets[:, 1])


def nondecreasing(values):
    values = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(values) >= 0))


class DepthStudyFeature:
    """
    Handles the depth-study mode.
    """

    def __init__(self):
        self.name = "DepthStudy"
        self.description = "Greedy networks for the same source at several depths"
        self.modes = ('depth-study',)

    def get_capabilities(self):
        return """
This feature can:
- Run the greedy design once per configured source depth
- Report mean, inner and outer epicentral radius of stations 2..k per depth
- Record whether the radii grow with depth (reported, not enforced)
        """.strip()

    async def handle(self, cfg, context):
        result = ModeResult(cfg.mode)
        station_grid = build_grid(cfg.grid)
        depths = list(cfg.depths_m)

        with context.stage('forward'):
            cands_list = await context.gather(
                (build_candidates, (cfg, station_grid),
                 {'location': primary_source(cfg, depth), 'label': f"depth-{depth:g}m"})
                for depth in depths
            )
        with context.stage('design'):
            records = await context.gather(
                (greedy_select, (cands, cfg.k, context.prior, context.config_hash, cfg.seed, 1,
                                 cands.binding.label), {})
                for cands in cands_list
            )

        rows = []
        for depth, cands, record in zip(depths, cands_list, records):
            result.add_design(record.label, record, cands)
            radii = epicentral_radii(record, primary_source(cfg, depth))
            if radii.size:
                rows.append((depth, radii.mean(), radii.min(), radii.max()))
            else:
                rows.append((depth, float('nan'), float('nan'), float('nan')))
        result.add_table('depth_report', DEPTH_HEADER, rows)

        mean_r = [r[1] for r in rows]
        outer_r = [r[3] for r in rows]
        trend = nondecreasing(mean_r) and nondecreasing(outer_r)
        result.summary.update({
            'depths_m': depths,
            'mean_radius_m': mean_r,
            'trend_holds': trend,
        })
        logger.info("Depth study: mean radii %s, trend holds: %s", [f"{r:.0f}" for r in mean_r], trend)
        return result
