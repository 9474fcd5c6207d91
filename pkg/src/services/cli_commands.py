"""
CLI subcommands.

Every subcommand is a thin shell over load_config + run_experiment. Tables go
to standard output as tab-separated text; diagnostics go to the log on
standard error.
"""

import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from config.experiment_config import config_hash, get_runs_dir, load_config
from services.experiment_runner import run_experiment
from services.exports import csv_text
from services.forward import GreenCollection, green_export, read_manifest, write_waveform_csv
from services.inference import MomentTensor
from services.run_context import DESIGN_HEADER
from services.scenario import build_candidates, build_grid, time_grid
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Command:
    name: str
    help: str
    handler: object
    modes: tuple = ()


COMMANDS = {}


def command(name, help, modes=()):
    """Register a subcommand handler taking the parsed argparse namespace."""
    def decorator(fn):
        COMMANDS[name] = Command(name, help, fn, tuple(modes))
        return fn
    return decorator


def emit(header, rows, stream=None):
    (stream or sys.stdout).write(csv_text(header, rows, delimiter='\t'))


def _load(args, modes=()):
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)
    if modes and cfg.mode not in modes:
        raise ConfigError(f"Subcommand {args.command!r} needs mode {' or '.join(modes)}, config has {cfg.mode!r}")
    return cfg


def _run(args, modes=()):
    cfg = _load(args, modes)
    out_root = Path(args.out) if args.out else get_runs_dir()
    return run_experiment(cfg, out_root, args.threads)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

@command('design', "Greedy (or random-baseline / depth-study) network design",
         modes=('greedy', 'random-baseline', 'depth-study'))
def cmd_design(args):
    bundle = _run(args, COMMANDS['design'].modes)
    emit(DESIGN_HEADER, bundle.result.design_rows())
    return 0


@command('consensus', "Consensus design over velocity models or source locations",
         modes=('consensus-velocity', 'consensus-source'))
def cmd_consensus(args):
    bundle = _run(args, COMMANDS['consensus'].modes)
    emit(DESIGN_HEADER, bundle.result.design_rows())
    return 0


@command('evaluate', "Design and score networks; prints the per-k score table",
         modes=('greedy', 'random-baseline', 'consensus-velocity', 'consensus-source'))
def cmd_evaluate(args):
    bundle = _run(args, COMMANDS['evaluate'].modes)
    header = ['network', 'scenario'] + bundle.reports[0].header
    rows = ([r.network, r.scenario] + row for r in bundle.reports for row in r.rows())
    emit(header, rows)
    return 0


@command('compare', "Greedy versus random networks: cumulative EIG envelopes per k",
         modes=('random-baseline',))
def cmd_compare(args):
    bundle = _run(args, COMMANDS['compare'].modes)
    emit(*bundle.tables['comparison'])
    return 0


@command('misspec', "Misspecified Bayes risk sweep over scenario pairs",
         modes=('misspec-sweep',))
def cmd_misspec(args):
    bundle = _run(args, COMMANDS['misspec'].modes)
    emit(*bundle.tables['misspec'])
    return 0


@command('gen-greens', "Export analytic Green matrices of the config grid as a manifest")
def cmd_gen_greens(args):
    cfg = _load(args)
    if cfg.greens_manifest is not None:
        raise ConfigError("gen-greens builds analytic Green matrices; remove greens_manifest from the config")
    out = Path(args.out) if args.out else get_runs_dir() / f"greens-{config_hash(cfg)}"
    station_grid = build_grid(cfg.grid)
    cands = build_candidates(cfg, station_grid, threads=args.threads or 1)
    greens = tuple(cands.binding.green_for(i) for i in range(len(cands)))
    collection = GreenCollection(time_grid(cfg), greens, station_grid.locations,
                                 {'config_hash': config_hash(cfg), 'medium': cfg.mediums[0].label})
    manifest = green_export(collection, out)
    if args.waveforms:
        truth = MomentTensor(cfg.true_mt)
        for green in greens:
            write_waveform_csv(out / 'waveforms' / f"station_{green.station_id:06d}.csv",
                               collection.grid, green.response(truth))
    emit(['manifest', 'stations'], [(manifest.as_posix(), len(greens))])
    return 0


@command('validate-config', "Parse and check a config without running anything")
def cmd_validate_config(args):
    cfg = _load(args)
    station_grid = build_grid(cfg.grid)
    if cfg.greens_manifest is not None:
        manifest = read_manifest(cfg.greens_manifest)
        n_stations = len(manifest.stations)
    else:
        n_stations = len(station_grid)
    if cfg.k > n_stations:
        raise ConfigError(f"k = {cfg.k} exceeds the {n_stations} candidate stations")
    payload = {'config_hash': config_hash(cfg), 'stations': n_stations, 'config': cfg.model_dump(mode='json')}
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + '\n')
    logger.info("Config %s is valid (%d candidate stations)", args.config, n_stations)
    return 0

