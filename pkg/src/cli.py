"""
CLI - Subcommands simulate, spectral, tail and reproduce
"""
import argparse
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .core.chain import ChainSpec, simulate_path
from .core.config import RunConfig, apply_overrides, load_config
from .core.errors import ConfigError, NonConvergence, NumericalError, ToolkitError
from .core.ldp_lab import (TailQuery, exact_tail_dp, mc_tail, ordered_fraction, reproduce_figure,
                           steady_state_mean, trajectory_columns)
from .core.lyapunov import batch_means_stderr, running_estimates
from .core.output_generator import OutputGenerator
from .core.spectral import bahadur_rao, lambda_profile, rate_function, truncate_kernel

logger = logging.getLogger(__name__)

PROFILE_COLUMNS = ['a', 'Lambda', 'dLambda_twisted', 'dLambda_fd', 'd2Lambda', 'status']
DUAL_COLUMNS = ['c', 'I', 'a_star', 'sigma_a_star', 'g_c_at_x0']
TAIL_COLUMNS = ['n', 'c', 'p_exact', 'p_mc', 'mc_stderr', 'bahadur_rao', 'ratio_exact_over_br']
DEFAULT_DUAL_POINTS = 11
NAN = float('nan')


@dataclass
class CommandResult:
    files: List[Path]
    summary: Dict[str, Any]


def setup_logging(level=logging.INFO, log_file: Optional[str] = None):
    """Set up logging configuration"""
    log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    handlers = [logging.StreamHandler(sys.stdout)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=level, format=log_format, handlers=handlers, force=True)
    return logging.getLogger(__name__)


class ToolkitArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors map to the configuration exit code"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def cmd_simulate(config: RunConfig, output: OutputGenerator, folder: Path, threads: int = 1) -> CommandResult:
    """
    Simulate one path and write the standard and controlled running estimates

    Args:
        config: Effective run configuration
        output: CSV writer
        folder: Output folder
        threads: Unused; a single path is simulated

    Returns:
        CommandResult with trajectory.csv
    """
    model = config.build_model()
    lyap = config.build_lyapunov(model)
    F = config.build_observable(model, truncate_kernel(model, config.spectral.N)
                                if config.observable.centered else None)
    run = config.run
    estimator = config.estimator

    path = simulate_path(model, run.n, run.master_seed, 0)
    grid = None
    if run.n_grid is not None:
        grid = np.unique(np.linspace(1, run.n, min(run.n_grid, run.n)).round().astype(np.int64))
    series = running_estimates(path, F, lyap, estimator.theta_minus, estimator.theta_plus, grid)
    files = [output.write_columns(folder, 'trajectory.csv', trajectory_columns(series, estimator.epsilon))]

    points = path.points[:-1]
    values = F.values(points)
    summary = {'final': dict(zip(('phi_n', 'phi_minus', 'phi_plus'), series.final)),
               'ordered_fraction': ordered_fraction(series)}
    try:
        summary['batch_means_stderr'] = {
            'phi_n': batch_means_stderr(values)[1],
            'phi_minus': batch_means_stderr(values - estimator.theta_minus * lyap.H(points))[1],
            'phi_plus': batch_means_stderr(values - estimator.theta_plus * lyap.H(points))[1],
        }
    except ValueError as e:
        logger.warning(f"Batch-means standard errors unavailable: {e}")
    if not F.centered and isinstance(model, ChainSpec):
        try:
            summary['phi_true'] = steady_state_mean(model, F, config.spectral.N)
        except ToolkitError as e:
            logger.warning(f"Steady-state mean unavailable: {e}")

    logger.info(f"Final estimates: phi_n={series.final[0]:.10g}, phi_minus={series.final[1]:.10g}, "
                f"phi_plus={series.final[2]:.10g}")
    return CommandResult(files, summary)


def _dual_thresholds(config: RunConfig, profile) -> List[float]:
    if config.spectral.c_values:
        return [float(c) for c in config.spectral.c_values]
    return list(np.linspace(profile.c_bar, profile.mean, DEFAULT_DUAL_POINTS))


def cmd_spectral(config: RunConfig, output: OutputGenerator, folder: Path, threads: int = 1) -> CommandResult:
    """
    Tabulate Lambda over the tilt grid and the rate function over thresholds

    Args:
        config: Effective run configuration
        output: CSV writer
        folder: Output folder
        threads: Worker threads over grid points

    Returns:
        CommandResult with lambda_profile.csv and rate_function.csv
    """
    model = config.build_model()
    section = config.spectral
    kernel = truncate_kernel(model, section.N)
    F = config.build_observable(model, kernel)
    small = config.build_small(kernel.n_states)

    profile = lambda_profile(kernel, F, section.a_grid(), small, tol=section.tol, threads=threads,
                             cross_check=section.cross_check)
    if not profile.ok.any():
        raise NonConvergence("No tilt on the grid could be evaluated")

    rows = zip(profile.a_grid, profile.Lambda, profile.dLambda, profile.dLambda_fd,
               profile.d2Lambda, profile.status)
    files = [output.write_csv(folder, 'lambda_profile.csv', PROFILE_COLUMNS, rows)]

    dual_rows = []
    forms = set()
    for c in _dual_thresholds(config, profile):
        try:
            dual = rate_function(profile, c)
        except NumericalError as e:
            logger.warning(f"Rate function unavailable at c={c:g}: {e}")
            dual_rows.append((c, NAN, NAN, NAN, NAN))
            continue
        g_c = NAN
        if dual.a_star < 0:
            try:
                prefactor = bahadur_rao(profile, config.run.x0, c, config.run.n)
                g_c = prefactor.g_c
                forms.add(prefactor.form)
            except NumericalError as e:
                logger.warning(f"Prefactor unavailable at c={c:g}: {e}")
        dual_rows.append((c, dual.I, dual.a_star, dual.sigma_a_star, g_c))
        profile.dual.append((c, dual))
    files.append(output.write_csv(folder, 'rate_function.csv', DUAL_COLUMNS, dual_rows))

    ok = profile.ok
    summary = {
        'phi': profile.mean,
        'c_bar': profile.c_bar,
        'failed_tilts': int((~ok).sum()),
        'max_dLambda_fd_gap': float(np.nanmax(np.abs(profile.dLambda - profile.dLambda_fd)[ok])),
        'max_d2Lambda_fd_gap': float(np.nanmax(np.abs(profile.d2Lambda - profile.d2Lambda_fd)[ok])),
        'prefactor_forms': sorted(forms),
        'prefactor_horizon': config.run.n,
    }
    return CommandResult(files, summary)


def cmd_tail(config: RunConfig, output: OutputGenerator, folder: Path, threads: int = 1,
             mode: str = 'both') -> CommandResult:
    """
    Exact, Monte Carlo and Bahadur-Rao tail probabilities over tail.n_list

    Args:
        config: Effective run configuration
        output: CSV writer
        folder: Output folder
        threads: Worker threads over replications
        mode: 'exact', 'mc' or 'both'

    Returns:
        CommandResult with tail.csv
    """
    model = config.build_model()
    kernel = truncate_kernel(model, config.spectral.N)
    F = config.build_observable(model, kernel)
    section = config.tail
    run = config.run

    profile = None
    if section.side == 'lower':
        try:
            profile = lambda_profile(kernel, F, config.spectral.a_grid(), config.build_small(kernel.n_states),
                                     tol=config.spectral.tol, threads=threads)
        except NumericalError as e:
            logger.warning(f"Lambda profile unavailable; prefactor column left empty: {e}")

    rows = []
    for n in section.n_list:
        query = TailQuery(F=F, x0=run.x0, n=n, c=section.c, side=section.side)
        p_exact = exact_tail_dp(kernel, query, int(section.budget)) if mode in ('exact', 'both') else NAN
        p_mc, stderr = NAN, NAN
        if mode in ('mc', 'both'):
            estimate = mc_tail(model, query, run.replications, run.master_seed, threads=threads)
            p_mc, stderr = estimate.p_hat, estimate.std_err
        p_br = NAN
        if profile is not None and section.c < profile.mean:
            try:
                p_br = bahadur_rao(profile, run.x0, section.c, n).value
            except NumericalError as e:
                logger.warning(f"Bahadur-Rao value unavailable at n={n}: {e}")
        ratio = p_exact / p_br if p_br > 0 and not math.isnan(p_exact) else NAN
        rows.append((n, section.c, p_exact, p_mc, stderr, p_br, ratio))
        logger.info(f"n={n}: exact={p_exact:.6g}, mc={p_mc:.6g}, bahadur_rao={p_br:.6g}")

    files = [output.write_csv(folder, 'tail.csv', TAIL_COLUMNS, rows)]
    event = f"L_n(F) {query.inequality} c"
    return CommandResult(files, {'mode': mode, 'side': section.side, 'event': event})


def cmd_reproduce(figure_id: int, output: OutputGenerator, folder: Path, master_seed: int,
                  n_seeds: int = 1, threads: int = 1, horizon: Optional[int] = None) -> CommandResult:
    """
    Write the trajectory tables of figure 1, 2 or 3

    Returns:
        CommandResult with the figure tables and manifest entries
    """
    result = reproduce_figure(figure_id, folder, master_seed=master_seed, n_seeds=n_seeds,
                              threads=threads, horizon=horizon, output=output)
    return CommandResult(result.files, result.manifest)


def build_parser() -> argparse.ArgumentParser:
    common = ToolkitArgumentParser(add_help=False)
    common.add_argument('--config', help='Path to the JSON run configuration')
    common.add_argument('--out', help='Output folder (default: output/<command>_<timestamp>)')
    common.add_argument('--seed', type=int, help='Master seed, overrides run.master_seed')
    common.add_argument('--threads', type=int, default=1, help='Worker threads (default: 1)')
    common.add_argument('--n', type=int, help='Horizon, overrides run.n')
    common.add_argument('--verbose', action='store_true', help='Enable verbose logging')
    common.add_argument('--log-file', help='Also write the log to this file')

    parser = ToolkitArgumentParser(description='Large-deviation toolkit for reflected random walks')
    subparsers = parser.add_subparsers(dest='command', required=True)
    subparsers.add_parser('simulate', parents=[common], help='Running estimates along one path')
    subparsers.add_parser('spectral', parents=[common], help='Lambda profile and rate function')
    tail = subparsers.add_parser('tail', parents=[common], help='Tail probabilities')
    mode = tail.add_mutually_exclusive_group()
    mode.add_argument('--exact', dest='mode', action='store_const', const='exact')
    mode.add_argument('--mc', dest='mode', action='store_const', const='mc')
    mode.add_argument('--both', dest='mode', action='store_const', const='both')
    tail.set_defaults(mode='both')
    reproduce = subparsers.add_parser('reproduce', parents=[common], help='Figure trajectory tables')
    reproduce.add_argument('--figure', type=int, required=True, help='Figure id (1, 2 or 3)')
    reproduce.add_argument('--seeds', type=int, default=1, help='Independent runs per variant (default: 1)')
    return parser


def run_command(args: argparse.Namespace) -> List[Path]:
    if args.threads < 1:
        raise ConfigError(f"--threads must be at least 1, got {args.threads}")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")

    config = None
    if args.config:
        config = apply_overrides(load_config(args.config), seed=args.seed, n=args.n)
    elif args.command != 'reproduce':
        raise ConfigError(f"--config is required for {args.command}")

    directory = config.output.directory if config else 'output'
    precision = config.output.precision if config else 17
    output = OutputGenerator(directory, precision)

    if args.command == 'reproduce':
        if args.figure not in (1, 2, 3):
            raise ConfigError(f"Unknown figure id {args.figure}; expected 1, 2 or 3")
        if args.n is not None and args.n < 1:
            raise ConfigError(f"--n must be a positive integer, got {args.n}")
        seed = args.seed if args.seed is not None else (config.run.master_seed if config else 1)
        folder = output.create_output_folder(args.command, args.out)
        result = cmd_reproduce(args.figure, output, folder, seed, args.seeds, args.threads, args.n)
        seeds = {'master_seed': seed, 'replication_indices': list(range(args.seeds))}
    else:
        folder = output.create_output_folder(args.command, args.out)
        command = {'simulate': cmd_simulate, 'spectral': cmd_spectral, 'tail': cmd_tail}[args.command]
        kwargs = {'mode': args.mode} if args.command == 'tail' else {}
        result = command(config, output, folder, args.threads, **kwargs)
        seeds = {'master_seed': config.run.master_seed}

    output.write_manifest(folder, args.command, config.to_dict() if config else {}, seeds, result.files,
                          {'summary': result.summary})
    return result.files


def main(argv: Optional[List[str]] = None) -> int:
    """Main function"""
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        setup_logging()
        logger.error(str(e))
        return e.exit_code

    log_level = logging.DEBUG if args.verbose else logging.INFO
    setup_logging(log_level, args.log_file)

    try:
        files = run_command(args)
    except ToolkitError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        return ConfigError.exit_code

    logger.info(f"Wrote {len(files)} files")
    return 0


if __name__ == "__main__":
    sys.exit(main())
