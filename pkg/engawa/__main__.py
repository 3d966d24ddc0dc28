import argparse
import logging
import os
import sys

from colorama import Fore, Style

from engawa import __version__
from engawa.config import OUTPUT_DIR_VARIABLE, ConfigErrors, defaults_document, load_config, load_dotenv_files
from engawa.core import ConfigError, EngawaError, NumericError
from engawa.output import ensure_dir, write_json
from engawa.runner import run
from engawa.validation import InvariantViolation
from engawa.verify import Outcome, run_acceptance

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ACCEPTANCE = 4


def _set_verbosity(verbose: int) -> None:
    if verbose > 0:
        logger = logging.getLogger('engawa')
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter('%(name)s (%(levelname)s): %(message)s'))
        logger.addHandler(handler)

        if verbose == 1:
            logger.setLevel(logging.INFO)

        elif verbose >= 2:
            logger.setLevel(logging.DEBUG)


def _error(message: str) -> None:
    print(f'{Fore.RED}{message}{Style.RESET_ALL}', file=sys.stderr)


def _run(parsed_args) -> int:
    load_dotenv_files(os.getcwd())
    try:
        cfg = load_config(parsed_args.config)
    except ConfigErrors as e:
        _error(f'{len(e.errors)} problem(s) in {parsed_args.config}:')
        for issue in e.errors:
            _error(f'  • {issue}')
        return EXIT_CONFIG
    except ConfigError as e:
        _error(str(e))
        return EXIT_CONFIG

    print(f'{Fore.GREEN}{Style.BRIGHT}🌿 engawa {__version__}{Style.RESET_ALL}')
    print(f'{Fore.GREEN}{Style.BRIGHT}     • Geometry: {Style.RESET_ALL}{Fore.GREEN}{cfg.geometry}{Fore.RESET}')
    print(f'{Fore.GREEN}{Style.BRIGHT}     • Particles: {Style.RESET_ALL}{Fore.GREEN}{cfg.n_particles} ({cfg.density}, delta={cfg.delta}){Fore.RESET}')
    print(f'{Fore.GREEN}{Style.BRIGHT}     • Scheme: {Style.RESET_ALL}{Fore.GREEN}{cfg.scheme}, dt={cfg.dt}, T={cfg.horizon}, {cfg.paths} path(s){Fore.RESET}')

    try:
        result = run(cfg)
    except (NumericError, InvariantViolation) as e:
        logging.getLogger('engawa').exception('Run aborted')
        _error(f'{type(e).__name__}: {e}')
        return EXIT_NUMERIC
    except EngawaError as e:
        _error(f'{type(e).__name__}: {e}')
        return EXIT_CONFIG

    print(f'Wrote {len(result.files)} files to {Style.BRIGHT}{result.output_dir}{Style.RESET_ALL} in {result.summary["wall_time"]:.2f}s')
    return EXIT_OK


def _verify(parsed_args) -> int:
    mode = 'fast' if parsed_args.fast else 'full'
    print(f'🩺 engawa is checking itself ({mode} mode)...')
    report = run_acceptance(fast=parsed_args.fast, seed=parsed_args.seed, only=parsed_args.only)

    for result in report.detail:
        if result.outcome == Outcome.PASS:
            print(f'{Fore.GREEN}✔ PASS{Fore.RESET} [{result.number}] {result.name}: {result.message} ({result.elapsed:.1f}s)')
        elif result.outcome == Outcome.FAIL:
            print(f'{Fore.RED}✘ FAIL{Fore.RESET} [{result.number}] {result.name}: {result.message} ({result.elapsed:.1f}s)')
        else:
            print(f'{Fore.RED}{Style.BRIGHT}!!! ERROR{Style.RESET_ALL} [{result.number}] {result.name}: {result.message}')

    load_dotenv_files(os.getcwd())
    report_path = parsed_args.report or os.path.join(os.environ.get(OUTPUT_DIR_VARIABLE) or 'output', 'verify_report.json')
    ensure_dir(os.path.dirname(report_path) or '.')
    write_json(report_path, report.model_dump(mode='json'))

    print()
    summary = report.summary
    if report.ok:
        print(f'{Fore.GREEN}{Style.BRIGHT}✅ All {summary.passed} criteria passed{Style.RESET_ALL} (report: {report_path})')
        return EXIT_OK
    print(f'{Fore.RED}{Style.BRIGHT}❌ {summary.failed} failed, {summary.errors} errored{Style.RESET_ALL} (report: {report_path})')
    return EXIT_ACCEPTANCE


def main(argv=None) -> int:
    parser = argparse.ArgumentParser('engawa')
    parser.add_argument('--version', action='version', version=f'engawa {__version__}')

    subparsers = parser.add_subparsers(dest='action', help='The action to perform')
    run_parser = subparsers.add_parser('run', help='Simulate a configured ensemble and write its artifacts')
    run_parser.add_argument('config', action='store', help='Path to a YAML run configuration')
    run_parser.add_argument('-v', '--verbose', action='count', default=0, help='How verbose should I be?')

    verify_parser = subparsers.add_parser('verify', help='Run the acceptance suite')
    verify_parser.add_argument('--fast', action='store_true', help='Shorter runs with wider tolerances')
    verify_parser.add_argument('--seed', type=int, default=0, help='Seed of every criterion')
    verify_parser.add_argument('--only', type=int, nargs='+', default=None, help='Run only the criteria with these numbers')
    verify_parser.add_argument('--report', action='store', default=None, help='Where to write the JSON report')
    verify_parser.add_argument('-v', '--verbose', action='count', default=0, help='How verbose should I be?')

    subparsers.add_parser('print-defaults', help='Print a complete configuration with every default value')

    parsed_args = parser.parse_args(sys.argv[1:] if argv is None else argv)

    if parsed_args.action == 'run':
        _set_verbosity(parsed_args.verbose)
        return _run(parsed_args)

    elif parsed_args.action == 'verify':
        _set_verbosity(parsed_args.verbose)
        return _verify(parsed_args)

    elif parsed_args.action == 'print-defaults':
        print(defaults_document(), end='')
        return EXIT_OK

    parser.print_help()
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
