"""
smlc: sliding mode learning control simulator.

    python app.py run --preset scenario1 --out ./out
    python app.py run --config my.cfg --ts 0.0001 --horizon 1.0 --emit-plots
    python app.py verify --trace ./out/trace.csv
    python app.py sweep --config my.cfg --vary gamma_k=0.1,0.5,1.0
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

sys.path.append(str(Path(__file__).parent))

from modules.commands import run_command, sweep_command, verify_command
from modules.config import PRESETS, RunManifest

logger = logging.getLogger('smlc')

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='smlc', description='Sliding mode learning control simulator')
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR (default: $SMLC_LOG_LEVEL or INFO)')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='Run a scenario and write trace.csv, diagnostics.txt and run_config.txt')
    source = run.add_mutually_exclusive_group()
    source.add_argument('--preset', choices=sorted(PRESETS), default=None, help='Built-in scenario (default scenario1)')
    source.add_argument('--config', default=None, help='Path to a key = value config file')
    run.add_argument('--seed', type=int, default=None, help='Override the noise seed')
    run.add_argument('--ts', type=float, default=None, help='Override the sampling time dt in seconds')
    run.add_argument('--horizon', type=float, default=None, help='Override the simulated horizon in seconds')
    run.add_argument('--out', default=None, help='Output directory (default: $SMLC_OUTPUT_DIR or ./out)')
    run.add_argument('--emit-plots', action='store_true', help='Also write a gnuplot script plot.gp')
    run.add_argument('--render', action='store_true', help='Also render PNG figure panels (headless)')

    verify = sub.add_parser('verify', help='Run the diagnostics on an existing trace')
    verify.add_argument('--trace', required=True, help='Path to trace.csv')
    verify.add_argument('--out', default=None, help='Optional path for a diagnostics file')

    sweep = sub.add_parser('sweep', help='Run a config once per value of one key')
    sweep.add_argument('--config', required=True, help='Path to a key = value config file')
    sweep.add_argument('--vary', required=True, help='KEY=a,b,c')
    sweep.add_argument('--out', default=None, help='Output directory (default: $SMLC_OUTPUT_DIR or ./out)')
    sweep.add_argument('--workers', type=int, default=None, help='Concurrent runs (default: $SMLC_MAX_WORKERS or 4)')
    sweep.add_argument('--threads', action='store_true', help='Use threads instead of worker processes')
    return parser


def configure_logging(level: Optional[str]) -> None:
    name = (level or os.environ.get('SMLC_LOG_LEVEL') or 'INFO').upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    default_out = os.environ.get('SMLC_OUTPUT_DIR', './out')

    if args.command == 'run':
        manifest = RunManifest(
            scenario_name=args.preset or 'scenario1',
            config_path=args.config,
            output_dir=args.out or default_out,
            seed_override=args.seed,
            dt_override=args.ts,
            horizon_override=args.horizon,
            emit_plots=args.emit_plots,
            render=args.render,
        )
        return run_command(manifest)
    if args.command == 'verify':
        return verify_command(args.trace, args.out)
    workers = args.workers or int(os.environ.get('SMLC_MAX_WORKERS', '4'))
    return sweep_command(args.config, args.vary, args.out or default_out, max_workers=workers, use_processes=not args.threads)


if __name__ == '__main__':
    sys.exit(main())
