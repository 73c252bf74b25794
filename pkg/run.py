# run.py
import argparse
import logging
import sys
from typing import List, Optional

from commands import cmd_converge, cmd_diagnose, cmd_evolve, cmd_generate
from config import init_logging, load_run_config
from exceptions import FilamentError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='FilamentFlow: rough vortex filament evolution')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument('--config', help='run config (key=value or YAML)')
        p.add_argument('--out', help='output directory (overrides output.dir)')
        p.add_argument('--seed', type=int, help='seed (overrides loop.seed and run.seed)')
        p.add_argument('--threads', type=int, help='worker threads (overrides run.threads)')
        p.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                       help='override a single config key')

    common(sub.add_parser('generate', help='sample a loop and its area process'))

    evolve = sub.add_parser('evolve', help='evolve a loop and write snapshots')
    common(evolve)
    evolve.add_argument('--loop', help='loop CSV to evolve instead of sampling one')
    evolve.add_argument('--area', help='area CSV matching --loop')
    evolve.add_argument('--resume', metavar='MANIFEST', help='continue from the last snapshot of a run')

    diagnose = sub.add_parser('diagnose', help='covariation, stretching and Lipschitz diagnostics')
    common(diagnose)
    diagnose.add_argument('--trajectory', metavar='MANIFEST', help='evolve manifest to diagnose')

    common(sub.add_parser('converge', help='refinement study with empirical orders'))
    return parser


def overrides_from(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    overrides = {}
    for item in args.set:
        if '=' not in item:
            parser.error(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split('=', 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides['loop.seed'] = args.seed
        overrides['run.seed'] = args.seed
    if args.threads is not None:
        overrides['run.threads'] = args.threads
    if args.out:
        overrides['output.dir'] = args.out
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and return the exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    init_logging()

    try:
        run_config = load_run_config(args.config, overrides_from(args, parser))
    except (FilamentError, OSError) as e:
        logger.error(f"Configuration error: {str(e)}")
        return 1

    if args.command == 'generate':
        result = cmd_generate(run_config)
    elif args.command == 'evolve':
        result = cmd_evolve(run_config, loop_path=args.loop, area_path=args.area, resume=args.resume)
    elif args.command == 'diagnose':
        result = cmd_diagnose(run_config, trajectory=args.trajectory)
    else:
        result = cmd_converge(run_config)

    if result['status'] != 'success':
        print(f"error: {result['message']}", file=sys.stderr)
        return 1
    print(f"{args.command}: {result.get('manifest')}")
    return 0


if __name__ == '__main__':
    sys.exit(main())
