"""
Experiment runner.

run_experiment routes a validated config to its mode feature, awaits the
mode's pipeline (forward precompute, design, evaluation) and writes every
artifact under <runs dir>/<config hash>/. Nothing time-dependent is written,
so a rerun of the same config produces byte-identical files.
"""

import asyncio
import logging
from dataclasses import dataclass, field
from pathlib import Path

from config.experiment_config import config_hash, get_runs_dir, get_thread_count
from features.consensus_feature import ConsensusFeature
from features.depth_study_feature import DepthStudyFeature
from features.greedy_feature import GreedyFeature
from features.misspec_feature import MisspecFeature
from features.random_baseline_feature import RandomBaselineFeature
from services.evaluation import SCORE_HEADER
from services.exports import write_csv, write_json
from services.mode_router import ModeRouter
from services.run_context import DESIGN_HEADER, RunContext, slug
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

EIG_FIELD_HEADER = ['station_id', 'east_m', 'north_m', 'eig']


@dataclass
class RunBundle:
    """Everything a run produced, plus where it was written."""

    config_hash: str
    mode: str
    out_dir: Path
    result: object
    files: list = field(default_factory=list)

    @property
    def designs(self):
        return self.result.designs

    @property
    def reports(self):
        return self.result.reports

    @property
    def tables(self):
        return self.result.tables

    @property
    def summary(self):
        return self.result.summary


def build_router():
    """Router with every experiment mode registered."""
    router = ModeRouter()
    router.register_feature(GreedyFeature())
    router.register_feature(RandomBaselineFeature())
    router.register_feature(ConsensusFeature())
    router.register_feature(DepthStudyFeature())
    router.register_feature(MisspecFeature())
    return router


def _score_rows(reports):
    with_misspec = any(r.misspec_risk is not None for r in reports)
    header = ['network', 'scenario'] + SCORE_HEADER + (['misspec_risk'] if with_misspec else [])
    rows = []
    for report in reports:
        for row in report.rows():
            if with_misspec and report.misspec_risk is None:
                row = row + [None]
            rows.append([report.network, report.scenario] + row)
    return header, rows


def write_bundle(context, result):
    """Write all artifacts of a finished mode; returns the written paths."""
    out = context.out_dir
    cfg = context.cfg
    files = [write_json(out / 'config.json', {
        'config_hash': context.config_hash,
        'config': cfg.model_dump(mode='json'),
    })]

    for name, record in result.designs.items():
        files.append(write_json(out / 'designs' / f"{slug(name)}.json", record.to_json()))
        cands = result.candidates.get(name)
        if cands is not None and record.eig_fields is not None:
            for step in range(record.k):
                path = out / 'eig_fields' / slug(name) / f"step_{step + 1:03d}.csv"
                files.append(write_csv(path, EIG_FIELD_HEADER, record.eig_field_rows(step, cands)))
    files.append(write_csv(out / 'designs.csv', DESIGN_HEADER, result.design_rows()))

    if result.reports:
        header, rows = _score_rows(result.reports)
        files.append(write_csv(out / 'scores.csv', header, rows))

    for name, (header, rows) in result.tables.items():
        files.append(write_csv(out / f"{slug(name)}.csv", header, rows))

    summary = {
        'config_hash': context.config_hash,
        'name': cfg.name,
        'mode': cfg.mode,
        'k': cfg.k,
        'seed': cfg.seed,
        'networks': {name: {'station_ids': list(rec.station_ids), 'joint_eig': rec.joint_eig}
                     for name, rec in result.designs.items()},
        'scores': [r.summary() for r in result.reports],
        'results': result.summary,
    }
    files.append(write_json(out / 'summary.json', summary))
    logger.info("Wrote %d artifacts to %s", len(files), out)
    return files


async def run_experiment_async(cfg, out_root=None, threads=None, router=None):
    """
    Run one experiment.

    Args:
        cfg (ExperimentConfig): validated config
        out_root: parent of the run directory (default: OEDMT_RUNS_DIR)
        threads (int): worker bound (default: OEDMT_THREADS / cpu count)
        router (ModeRouter): optional router override

    Returns:
        RunBundle
    """
    threads = get_thread_count(threads)
    digest = config_hash(cfg)
    out_dir = Path(out_root) if out_root is not None else get_runs_dir()
    out_dir = out_dir / digest
    router = router or build_router()

    feature = router.route(cfg.mode)
    if feature is None:
        raise ConfigError(f"No feature handles mode {cfg.mode!r}")
    context = RunContext(cfg, digest, out_dir, threads)
    logger.info("Running %s (%s, hash %s) with %d threads", cfg.name, cfg.mode, digest, threads)

    result = await feature.handle(cfg, context)
    with context.stage('export'):
        files = write_bundle(context, result)
    return RunBundle(digest, cfg.mode, out_dir, result, files)


def run_experiment(cfg, out_root=None, threads=None):
    """Synchronous wrapper around run_experiment_async."""
    return asyncio.run(run_experiment_async(cfg, out_root, threads))
