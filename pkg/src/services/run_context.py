"""
Shared state of one experiment run: thread limit, output location, error
provenance, and the result container each mode fills in.
"""

import asyncio
import logging
import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from services.scenario import prior_belief
from utils.errors import ExperimentError, OedmtError

logger = logging.getLogger(__name__)

DESIGN_HEADER = ['network', 'rank', 'station_id', 'east_m', 'north_m', 'delta_eig', 'cum_eig']


def slug(text):
    return re.sub(r'[^A-Za-z0-9_.-]+', '_', str(text)).strip('_') or 'unnamed'


class RunContext:
    """
    Per-run context handed to every feature.

    Independent branches go through `run` / `gather`: each call executes in a
    worker thread via asyncio.to_thread, at most `threads` at a time, and
    gather returns results in submission order.
    """

    def __init__(self, cfg, config_hash, out_dir, threads=1):
        self.cfg = cfg
        self.config_hash = config_hash
        self.out_dir = Path(out_dir)
        self.threads = max(1, int(threads))
        self.prior = prior_belief(cfg)
        self._semaphore = None

    @property
    def semaphore(self):
        # created lazily so it binds to the running event loop
        if self._semaphore is None:
            self._semaphore = asyncio.Semaphore(self.threads)
        return self._semaphore

    async def run(self, fn, *args, **kwargs):
        async with self.semaphore:
            return await asyncio.to_thread(fn, *args, **kwargs)

    async def gather(self, calls):
        """Run (fn, args, kwargs) triples concurrently; results keep call order."""
        return await asyncio.gather(*(self.run(fn, *args, **kwargs) for fn, args, kwargs in calls))

    @contextmanager
    def stage(self, name, scenario=None):
        """Attach mode/stage/scenario provenance to errors raised inside the block."""
        try:
            yield
        except ExperimentError:
            raise
        except OedmtError as e:
            raise ExperimentError(self.cfg.mode, name, e, scenario) from e


@dataclass
class ModeResult:
    """What a mode produced; the runner writes it out."""

    mode: str
    designs: dict = field(default_factory=dict)
    candidates: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def add_design(self, name, record, cands=None):
        self.designs[name] = record
        if cands is not None:
            self.candidates[name] = cands

    def add_table(self, name, header, rows):
        self.tables[name] = (list(header), [list(r) for r in rows])

    def design_rows(self):
        for name, record in self.designs.items():
            for step in record.steps():
                yield [name, step['rank'], step['station_id'], step['east_m'], step['north_m'],
                       step['eig_increment'], step['cum_eig']]
