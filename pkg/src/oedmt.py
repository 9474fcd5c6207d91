import argparse
import logging
import sys

from dotenv import load_dotenv

from config.experiment_config import get_log_level
from services.cli_commands import COMMANDS
from utils.errors import OedmtError

# Load environment variables
load_dotenv()

logger = logging.getLogger('oedmt')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='oedmt',
        description="Seismic station-network design by expected information gain",
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name, cmd in COMMANDS.items():
        sub = subparsers.add_parser(name, help=cmd.help, description=cmd.help)
        sub.add_argument('--config', required=True, help="experiment config (JSON)")
        sub.add_argument('--out', help="output root (default: OEDMT_RUNS_DIR or ./runs)")
        sub.add_argument('--override', action='append', metavar='KEY=VALUE',
                         help="dotted config override, repeatable")
        sub.add_argument('--threads', type=int, help="worker threads (default: OEDMT_THREADS)")
        sub.add_argument('--seed', type=int, help="root seed, overrides the config")
        if name == 'gen-greens':
            sub.add_argument('--waveforms', action='store_true',
                             help="also write the true-MT waveform CSV of every station")
    return parser


def main(argv=None):
    """
    Entry point: parse arguments, run one subcommand, return its exit code.
    Exit codes: 0 ok, 2 config, 3 numerical, 4 I/O.
    """
    logging.basicConfig(
        level=get_log_level(),
        stream=sys.stderr,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        logger.error("--threads must be >= 1")
        return 2
    try:
        return COMMANDS[args.command].handler(args)
    except OedmtError as e:
        logger.error("%s", e)
        return e.exit_code


if __name__ == '__main__':
    sys.exit(main())
