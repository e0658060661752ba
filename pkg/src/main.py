"""
Command-line experiment runner for Berezin Lab
"""

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.bundles import (
    CASIMIR, KAPPA, BundleSpec, bundle_berezin_spectrum, casimir_levels, gap_deviation, kodaira_spectrum_oracle,
    oracle_level_match, round_bundle_setup, weitzenbock_gap,
)
from src.config import Config
from src.errors import NumericalError, ValidationError
from src.geometry import constants_ledger
from src.iterations import (
    CANONICAL, NU_BALANCED, IterationConfig, balanced_product, check_moment_identity, fixed_point_certificate,
    iterate_to_fixed_point, jacobian_at, moment_identity_at_identity, random_product,
)
from src.quantization import (
    berezin_eigenvalue, berezin_spectrum, fit_inverse_power, gap_table, hermitize, round_setup, versions,
)
from src.stages import FibrationSetup, TotalSymbol, check_functoriality, check_symbol_functoriality

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2


def setup_logging(level=None):
    """Configure logging for the application"""
    log_level = getattr(logging, (level or Config.LOG_LEVEL).upper(), logging.INFO)

    # Create logs directory if it doesn't exist
    Config.LOGS_DIR.mkdir(exist_ok=True)

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(Config.LOGS_DIR / 'berezin_lab.log'),
            logging.StreamHandler(sys.stderr)
        ]
    )
    logging.getLogger().setLevel(log_level)

    return logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting on bad input"""

    def error(self, message):
        raise ValidationError(message)


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _dumps(payload):
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default)


def _resolved_numerics():
    skip = {'DATABASE_URL', 'LOG_LEVEL', 'THREADS'}
    return {
        name.lower(): value for name, value in sorted(vars(Config).items())
        if name.isupper() and name not in skip and isinstance(value, (int, float, str))
    }


def _degrees(text):
    try:
        return BundleSpec.parse(text)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _p_range(args):
    if args.p_min > args.p_max or args.step < 1:
        raise ValidationError(f"empty level range {args.p_min}..{args.p_max} step {args.step}")
    return list(range(args.p_min, args.p_max + 1, args.step))


def _iteration_config(args, p=None):
    try:
        return IterationConfig(
            variant=args.variant,
            p=args.p if p is None else p,
            bundle=_degrees(args.degrees),
            tol_fixed=getattr(args, 'tol', None),
            max_iters=getattr(args, 'max_iters', None),
            normalization=getattr(args, 'gauge', None),
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _require_balanced_bundle(spec, variant):
    if variant == NU_BALANCED and len(set(spec.degrees)) != 1:
        raise ValidationError(f"degrees {list(spec.degrees)} have no balanced product; use equal degrees")


# Subcommands return (payload, rows or None, headline, exit code)

def cmd_berezin_spectrum(args):
    if args.p < 1:
        raise ValidationError("--p must be at least 1")
    report = berezin_spectrum(round_setup(args.p))
    gamma1 = report.levels[1] if len(report.levels) > 1 else None
    return report.to_dict(), None, gamma1, EXIT_OK


def cmd_bundle_spectrum(args):
    spec = _degrees(args.degrees)
    try:
        setup = round_bundle_setup(spec, args.p)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    report = bundle_berezin_spectrum(setup)
    payload = report.to_dict()
    payload['oracle_units'] = CASIMIR
    payload['kappa'] = KAPPA
    headline = None
    if spec.rank == 2:
        k = abs(spec.degrees[1] - spec.degrees[0])
        extracted, predicted = weitzenbock_gap(report, args.p, k, args.count)
        payload['casimir_levels'] = [{'value': v, 'multiplicity': m}
                                     for v, m in casimir_levels(report, args.p, args.count)]
        payload['oracle_match'] = oracle_level_match(report, args.p, k, args.count)
        payload['multiplicities_match'] = all(row['aligned'] for row in payload['oracle_match'])
        payload['kodaira_oracle'] = kodaira_spectrum_oracle(k, args.count)
        payload['gap_deviation'] = gap_deviation(report, args.p, k, args.count)
        payload['weitzenbock_gap'] = {'extracted': extracted, 'predicted': predicted}
        headline = payload['gap_deviation']
    return payload, None, headline, EXIT_OK


def cmd_iterate(args):
    cfg = _iteration_config(args)
    seed = Config.SEED if args.seed is None else args.seed
    q0 = random_product(cfg.dim, seed)
    q, trace = iterate_to_fixed_point(q0, cfg)

    payload = {'trace': trace.to_dict(), 'seed': seed, 'iteration': cfg.describe()}
    if not trace.converged:
        payload['status'] = 'not_converged'
        return payload, None, None, EXIT_NUMERICAL

    payload['certificate'] = fixed_point_certificate(q, cfg)
    payload['beta'], payload['neutral_dim'], payload['jacobian_eigs'] = None, None, None
    if args.jacobian != 'none':
        report = jacobian_at(q, cfg, args.jacobian)
        payload.update({
            'beta': report.beta,
            'neutral_dim': report.neutral_dim,
            'jacobian_eigs': [float(v) for v in report.eigenvalues],
            'jacobian_deviation': report.deviation,
        })
    return payload, None, payload['beta'], EXIT_OK


def _predicted_beta(variant, n):
    if variant == CANONICAL:
        return (n + 6) * (n - 1) / ((n + 2) * (n + 3))
    return berezin_eigenvalue(1, n)


def cmd_rates_sweep(args):
    spec = _degrees(args.degrees)
    _require_balanced_bundle(spec, args.variant)
    rows = []
    for p in _p_range(args):
        cfg = _iteration_config(args, p)
        report = jacobian_at(balanced_product(spec, p), cfg)
        beta = report.beta
        rows.append({
            'p': p,
            'beta': beta,
            'neutral_dim': report.neutral_dim,
            'p_gap': None if beta is None else p * (1 - beta),
            'p2_gap': None if beta is None else p ** 2 * (1 - beta),
            'predicted_beta': _predicted_beta(args.variant, p + spec.degrees[0]),
        })
    return {'rows': rows}, rows, rows[-1]['beta'], EXIT_OK


def cmd_functoriality_check(args):
    spec = _degrees(args.degrees)
    try:
        setup = FibrationSetup.build(spec, args.p)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    seed = Config.SEED if args.seed is None else args.seed
    rng = np.random.default_rng(seed)

    residual_T, residual_Tstar = 0.0, 0.0
    for _ in range(args.samples):
        f = TotalSymbol.random(rng)
        residual_T = max(residual_T, check_functoriality(setup, f))
        x = rng.standard_normal((setup.bundle.dim,) * 2) + 1j * rng.standard_normal((setup.bundle.dim,) * 2)
        residual_Tstar = max(residual_Tstar, check_symbol_functoriality(setup, hermitize(x), seed=seed))

    residual = max(residual_T, residual_Tstar)
    payload = {
        'p': args.p,
        'bundle': list(spec.degrees),
        'residual_T': residual_T,
        'residual_Tstar': residual_Tstar,
        'nodes': {'base': len(setup.bundle.rule), 'fiber': len(setup.fiber_rule)},
        'tolerance': Config.FUNCTORIALITY_TOL,
        'seed': seed,
    }
    exit_code = EXIT_OK if residual <= Config.FUNCTORIALITY_TOL else EXIT_NUMERICAL
    return payload, None, residual, exit_code


def cmd_moment_check(args):
    cfg = _iteration_config(args)
    _require_balanced_bundle(cfg.bundle, cfg.variant)
    q_hat = balanced_product(cfg.bundle, cfg.p)
    seed = Config.SEED if args.seed is None else args.seed
    residual = check_moment_identity(q_hat, cfg, tests=args.tests, seed=seed)
    payload = {
        'identity_residual': residual,
        'identity_at_identity': moment_identity_at_identity(q_hat, cfg),
        'tolerance': Config.MOMENT_TOL,
        'seed': seed,
        'iteration': cfg.describe(),
    }
    exit_code = EXIT_OK if residual <= Config.MOMENT_TOL else EXIT_NUMERICAL
    return payload, None, residual, exit_code


def cmd_gap_table(args):
    rows = gap_table(_p_range(args))
    ps = [row['p'] for row in rows]
    constant = fit_inverse_power(ps, [row['residual'] for row in rows], 3)
    return {'rows': rows, 'fitted_constant': constant}, rows, constant, EXIT_OK


COMMANDS = {
    'berezin-spectrum': cmd_berezin_spectrum,
    'bundle-spectrum': cmd_bundle_spectrum,
    'iterate': cmd_iterate,
    'rates-sweep': cmd_rates_sweep,
    'functoriality-check': cmd_functoriality_check,
    'moment-check': cmd_moment_check,
    'gap-table': cmd_gap_table,
}

TABLE_COMMANDS = {'rates-sweep', 'gap-table'}


def build_parser():
    common = ArgumentParser(add_help=False)
    common.add_argument('--out', help='write the artifact here instead of stdout')
    common.add_argument('--format', choices=['json', 'csv'], help='artifact format (csv only for sweeps)')
    common.add_argument('--threads', type=int, help='worker cap for finite-difference columns')
    common.add_argument('--record', action='store_true', help='store the run in the experiment ledger')
    common.add_argument('--log-level', help='override LOG_LEVEL')

    parser = ArgumentParser(prog='berezin-lab', description='Berezin-Toeplitz quantization experiments on CP^1')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=ArgumentParser)

    p = sub.add_parser('berezin-spectrum', parents=[common], help='scalar Berezin transform spectrum')
    p.add_argument('--p', type=int, required=True)

    p = sub.add_parser('bundle-spectrum', parents=[common], help='Berezin spectrum of a split bundle')
    p.add_argument('--p', type=int, required=True)
    p.add_argument('--degrees', default='0,1')
    p.add_argument('--count', type=int, default=4, help='oracle levels to compare')

    def iteration_flags(p, single_level=True):
        p.add_argument('--variant', choices=[NU_BALANCED, CANONICAL], default=NU_BALANCED)
        if single_level:
            p.add_argument('--p', type=int, required=True)
        p.add_argument('--degrees', default='0')
        p.add_argument('--seed', type=int)

    p = sub.add_parser('iterate', parents=[common], help='run a Donaldson iteration')
    iteration_flags(p)
    p.add_argument('--tol', type=float)
    p.add_argument('--max-iters', type=int)
    p.add_argument('--gauge', choices=['trace', 'det'])
    p.add_argument('--jacobian', choices=['analytic', 'fd', 'none'], default='analytic')

    p = sub.add_parser('rates-sweep', parents=[common], help='contraction rates at balanced products')
    iteration_flags(p, single_level=False)
    p.add_argument('--p-min', type=int, default=8)
    p.add_argument('--p-max', type=int, default=24)
    p.add_argument('--step', type=int, default=4)

    p = sub.add_parser('functoriality-check', parents=[common], help='quantization in stages residuals')
    p.add_argument('--p', type=int, required=True)
    p.add_argument('--degrees', default='0,1')
    p.add_argument('--samples', type=int, default=20)
    p.add_argument('--seed', type=int)

    p = sub.add_parser('moment-check', parents=[common], help='moment map differential identity')
    iteration_flags(p)
    p.add_argument('--tests', type=int)

    p = sub.add_parser('gap-table', parents=[common], help='second-order spectral gap table')
    p.add_argument('--p-min', type=int, default=8)
    p.add_argument('--p-max', type=int, default=32)
    p.add_argument('--step', type=int, default=4)

    return parser


def render(payload, rows, fmt):
    if fmt == 'json':
        return _dumps(payload) + '\n'
    buffer = io.StringIO()
    for key, value in sorted(payload.items()):
        if key != 'rows':
            buffer.write(f"# {key}: {json.dumps(value, sort_keys=True, default=_json_default)}\n")
    writer = csv.DictWriter(buffer, fieldnames=list(rows[0].keys()), lineterminator='\n')
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def _emit(text, out):
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding='utf-8')
        logger.info(f"Wrote {path}")
    else:
        sys.stdout.write(text)


def _record(args, config, payload, exit_code, headline):
    if not getattr(args, 'record', False):
        return
    from src.database import record_run
    record_run(args.command, config, payload, exit_code, headline)


def run(argv=None):
    """Parse argv, run one experiment, return the exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as exc:
        sys.stderr.write(_dumps({'error': 'validation', 'message': str(exc)}) + '\n')
        return EXIT_INVALID
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_OK

    setup_logging(args.log_level)
    if args.threads is not None:
        Config.THREADS = args.threads

    config = {
        'task': args.command,
        'args': {k: v for k, v in sorted(vars(args).items()) if k not in ('command', 'out', 'record', 'log_level', 'threads')},
        'numerics': _resolved_numerics(),
    }

    try:
        Config.validate()
        if args.format == 'csv' and args.command not in TABLE_COMMANDS:
            raise ValidationError(f"--format csv is only available for {', '.join(sorted(TABLE_COMMANDS))}")
        payload, rows, headline, exit_code = COMMANDS[args.command](args)
    except ValueError as exc:
        logger.error(f"Invalid input: {exc}")
        sys.stderr.write(_dumps({'error': 'validation', 'message': str(exc)}) + '\n')
        return EXIT_INVALID
    except NumericalError as exc:
        logger.error(f"Numerical failure in {args.command}: {exc}")
        diagnostic = {'error': type(exc).__name__, 'message': str(exc), 'diagnostics': exc.diagnostics,
                      'config': config}
        sys.stderr.write(_dumps(diagnostic) + '\n')
        _record(args, config, diagnostic, EXIT_NUMERICAL, None)
        return EXIT_NUMERICAL

    payload = {**payload, 'config': config, 'constants': constants_ledger(), 'versions': versions()}
    fmt = args.format or ('csv' if args.command in TABLE_COMMANDS else 'json')
    _emit(render(payload, rows, fmt), args.out)
    if exit_code != EXIT_OK:
        sys.stderr.write(_dumps({'error': payload.get('status', 'tolerance_exceeded'), 'payload': payload}) + '\n')
    _record(args, config, payload, exit_code, headline)
    return exit_code


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
