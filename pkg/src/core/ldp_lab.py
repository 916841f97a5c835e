"""
LDP Lab - Exact and simulated tail probabilities, slope fits and figure runs

The exact oracle is a forward dynamic program over (state, integer-scaled
partial sum) on a truncated kernel. Monte Carlo tails reuse the seeded
replications of the chain module, and the figure runs write the trajectory
tables of the controlled estimators.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse

from .chain import (ChainSpec, Model, lattice_span, make_queue_increments, map_replications,
                    simulate_path)
from .errors import BudgetExceeded, ConfigError, NonLatticeObservable, ZeroProbability
from .lyapunov import (Observable, analytic_mean_mm1, batch_means_stderr, confidence_band,
                       reflected_walk_lyapunov, running_estimates)
from .output_generator import OutputGenerator
from .spectral import TruncatedKernel, stationary, truncate_kernel

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 10 ** 9
THRESHOLD_TOL = 1e-9
TRAJECTORY_COLUMNS = ['n', 'phi_n', 'phi_minus', 'phi_plus', 'delta_n', 'band_lo', 'band_hi']
ORDERED_FRACTION_NOTE = "share of steps n in [T/10, T] with phi_minus < phi_plus"


@dataclass(frozen=True)
class TailQuery:
    """Event {L_n(F) <= c} (lower) or {L_n(F) >= c} (upper) started from x0"""

    F: Observable
    x0: float
    n: int
    c: float
    side: str = 'lower'

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"Horizon must be at least 1, got {self.n}")
        if self.side not in ('lower', 'upper'):
            raise ValueError(f"Tail side must be 'lower' or 'upper', got {self.side!r}")

    @property
    def inequality(self) -> str:
        return '<=' if self.side == 'lower' else '>='


@dataclass(frozen=True)
class TailEstimate:
    p_hat: float
    std_err: float
    replications: int
    exact: Optional[float] = None
    bahadur_rao: Optional[float] = None


@dataclass(frozen=True, eq=False)
class SumDistribution:
    """
    Joint law of (Phi(n-1), sum_{k<n} F(Phi(k)))

    The sum equals offset + span * s for the column index s of table.
    """

    table: np.ndarray
    offset: float
    span: float

    @property
    def marginal(self) -> np.ndarray:
        """Law of Phi(n-1), i.e. the row of P^{n-1} from x0"""
        return self.table.sum(axis=1)

    @property
    def sums(self) -> np.ndarray:
        return self.offset + self.span * np.arange(self.table.shape[1])


def _scaled_observable(kernel: TruncatedKernel, F: Observable) -> Tuple[np.ndarray, float, float]:
    """Integer levels m, base and span with F = base + span * m on the states"""
    values = F.values(kernel.states)
    base = float(values.min())
    differences = values - base
    if np.all(np.abs(differences) <= THRESHOLD_TOL):
        return np.zeros(kernel.n_states, dtype=np.int64), base, 1.0
    span = lattice_span(differences)
    if span is None:
        raise NonLatticeObservable("F does not take values on a rational lattice over the truncation")
    levels = np.rint(differences / span).astype(np.int64)
    return levels, base, span


def sum_distribution(kernel: TruncatedKernel, F: Observable, x0: float, n: int,
                     budget: int = DEFAULT_BUDGET) -> SumDistribution:
    """
    Forward dynamic program for the partial sums of F along the chain

    The first summand is F(x0) itself, so a horizon of n terms spans n - 1
    transitions: the state marginal is the row of P^{n-1} from x0, and the
    row of P^n belongs to the sum over n + 1 terms.

    Args:
        kernel: Truncated kernel
        F: Observable on a rational lattice
        x0: Initial lattice point
        n: Number of summed terms, Phi(0), ..., Phi(n-1)
        budget: Cap on n * (states) * (sum range) cell updates

    Returns:
        SumDistribution
    """
    if n < 1:
        raise ValueError(f"Horizon must be at least 1, got {n}")
    levels, base, span = _scaled_observable(kernel, F)
    width = n * int(levels.max()) + 1
    cells = n * kernel.n_states * width
    if cells > budget:
        raise BudgetExceeded(f"DP needs {cells:.3g} cell updates, above the budget of {budget:.3g}; "
                             f"reduce n or N")

    start = kernel.index_of(x0)
    table = np.zeros((kernel.n_states, width))
    table[start, levels[start]] = 1.0
    transpose = scipy.sparse.csr_matrix(kernel.P.T)
    groups = [(int(m), np.flatnonzero(levels == m)) for m in np.unique(levels)]

    for _ in range(n - 1):
        moved = transpose @ table
        table = np.zeros_like(moved)
        for shift, rows in groups:
            if shift:
                table[rows, shift:] = moved[rows, :-shift]
            else:
                table[rows] = moved[rows]

    logger.debug(f"Sum distribution for n={n} over {kernel.n_states} states x {width} sums")
    return SumDistribution(table=table, offset=n * base, span=span)


def exact_tail_dp(kernel: TruncatedKernel, query: TailQuery, budget: int = DEFAULT_BUDGET) -> float:
    """
    Exact P_x0{sum_{k<n} F(Phi(k)) <= n c} (or >= for the upper tail)

    The threshold is compared on the integer scale of F's lattice.

    Args:
        kernel: Truncated kernel
        query: Tail event
        budget: Cap on DP cell updates

    Returns:
        Probability, with compensated summation over the accepted cells
    """
    dist = sum_distribution(kernel, query.F, query.x0, query.n, budget)
    scaled = (query.n * query.c - dist.offset) / dist.span
    columns = np.arange(dist.table.shape[1])
    if query.side == 'lower':
        accepted = columns <= math.floor(scaled + THRESHOLD_TOL)
    else:
        accepted = columns >= math.ceil(scaled - THRESHOLD_TOL)
    probability = math.fsum(dist.table[:, accepted].ravel())
    return min(max(probability, 0.0), 1.0)


def _tail_event(model: Model, query: TailQuery, master_seed: int, index: int) -> bool:
    if query.n == 1:
        points = np.array([query.x0])
    else:
        points = simulate_path(model, query.n - 1, master_seed, index).points
    total = math.fsum(query.F.values(points))
    threshold = query.n * query.c
    slack = THRESHOLD_TOL * max(1.0, abs(threshold))
    if query.side == 'lower':
        return total <= threshold + slack
    return total >= threshold - slack


def mc_tail(model: Model, query: TailQuery, replications: int, master_seed: int,
            threads: int = 1, progress: bool = False) -> TailEstimate:
    """
    Fraction of independent replications whose path lies in the tail event

    Args:
        model: ChainSpec or FiniteChain; its initial state is replaced by query.x0
        query: Tail event
        replications: Number of replications M >= 1
        master_seed: Experiment seed
        threads: Worker threads
        progress: Show a progress bar

    Returns:
        TailEstimate with the binomial standard error
    """
    if replications < 1:
        raise ValueError(f"Need at least one replication, got {replications}")
    started = model.with_x0(query.x0)
    hits = map_replications(lambda index: _tail_event(started, query, master_seed, index),
                            replications, threads=threads, desc=f"tail n={query.n}", progress=progress)
    p_hat = sum(hits) / replications
    std_err = math.sqrt(p_hat * (1.0 - p_hat) / replications)
    logger.info(f"Monte Carlo tail at n={query.n}, c={query.c:g}: {p_hat:.6g} +/- {std_err:.3g}")
    return TailEstimate(p_hat=p_hat, std_err=std_err, replications=replications)


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares fits of log p against n, plain and with the 1/2 log n term"""

    slope: float
    intercept: float
    corrected_slope: float
    corrected_intercept: float


def ldp_slope(estimates: Sequence[Tuple[int, float]]) -> SlopeFit:
    """
    Fit log p_n = slope * n + intercept, and log p_n + 1/2 log n the same way

    Args:
        estimates: (n, p) pairs over at least three horizons

    Returns:
        SlopeFit
    """
    if len(estimates) < 3:
        raise ValueError(f"Need at least 3 horizons, got {len(estimates)}")
    for n, p in estimates:
        if p <= 0:
            raise ZeroProbability(f"Probability at n={n} is zero; the log-linear fit is undefined")

    n = np.array([float(e[0]) for e in estimates])
    log_p = np.log(np.array([float(e[1]) for e in estimates]))
    slope, intercept = np.polyfit(n, log_p, 1)
    corrected_slope, corrected_intercept = np.polyfit(n, log_p + 0.5 * np.log(n), 1)
    return SlopeFit(slope=float(slope), intercept=float(intercept),
                    corrected_slope=float(corrected_slope),
                    corrected_intercept=float(corrected_intercept))


@dataclass(frozen=True)
class FigureVariant:
    """One curve set of a figure: model, observable, estimator coefficients, horizon"""

    name: str
    spec: ChainSpec
    F: Observable
    theta_minus: float
    theta_plus: float
    horizon: int
    parameters: Dict[str, float] = field(default_factory=dict)


def figure_variants(figure_id: int, horizon: Optional[int] = None) -> List[FigureVariant]:
    """
    Model setups behind the three figures

    Figure 1 is the uncontrolled M/M/1 estimator of E[e^{0.1 X}]; figures 2
    and 3 use the on/off queue increments with theta_- = 1.05, theta_+ = 1.
    The kappa = 1 variant matches the stated increment variance of 25.
    """
    if figure_id == 1:
        alpha, beta = 9.0 / 19.0, 0.1
        return [FigureVariant('mm1', ChainSpec.mm1(alpha), Observable.exponential(beta), 0.0, 0.0,
                              horizon or 5_000_000, {'alpha': alpha, 'beta': beta})]
    if figure_id in (2, 3):
        default = 2000 if figure_id == 2 else 20_000
        kappas = (2.0, 1.0) if figure_id == 2 else (2.0, 5.0, 1.0)
        variants = []
        for kappa in kappas:
            law = make_queue_increments(4.0, 3.0, kappa)
            variants.append(FigureVariant(
                f"kappa{kappa:g}", ChainSpec.reflected_rw(law), Observable.identity(), 1.05, 1.0,
                horizon or default,
                {'mu': 4.0, 'alpha': 3.0, 'kappa': kappa, 'delta': law.delta, 'variance': law.variance}))
        return variants
    raise ConfigError(f"Unknown figure id {figure_id}; expected 1, 2 or 3")


def steady_state_mean(spec: ChainSpec, F: Observable, N: int = 400) -> float:
    """Closed form for M/M/1, truncated stationary mean otherwise"""
    if spec.kind == 'mm1':
        return analytic_mean_mm1(spec.alpha, F)
    kernel = truncate_kernel(spec, N)
    return float(stationary(kernel) @ F.raw(kernel.states))


def ordered_fraction(series) -> float:
    """Share of grid horizons n in [T/10, T] with phi_minus < phi_plus"""
    T = int(series.n_grid[-1])
    window = series.n_grid * 10 >= T
    return float(np.mean(series.phi_minus[window] < series.phi_plus[window]))


def trajectory_grid(horizon: int, max_rows: int = 20_000) -> np.ndarray:
    if horizon <= max_rows:
        return np.arange(1, horizon + 1, dtype=np.int64)
    return np.unique(np.linspace(1, horizon, max_rows).round().astype(np.int64))


def trajectory_columns(series, epsilon: float = 0.0) -> Dict[str, np.ndarray]:
    band_lo, band_hi = confidence_band(series, epsilon)
    return dict(zip(TRAJECTORY_COLUMNS, (series.n_grid, series.phi_n, series.phi_minus,
                                         series.phi_plus, series.delta_n, band_lo, band_hi)))


@dataclass(frozen=True, eq=False)
class SeedRun:
    columns: Dict[str, np.ndarray]
    final: Tuple[float, float, float]
    fraction: float
    stderr_phi: float
    stderr_plus: float


@dataclass
class FigureRun:
    figure_id: int
    files: List[Path]
    manifest: Dict


class FigureReproducer:
    """Runs the figure variants over one or more seeds and writes their tables"""

    def __init__(self, output: OutputGenerator, master_seed: int, n_seeds: int = 1,
                 threads: int = 1, progress: bool = False):
        """
        Initialize the reproducer

        Args:
            output: Writer for the CSV tables
            master_seed: Experiment seed; seed k uses replication index k
            n_seeds: Independent runs per variant
            threads: Worker threads across seeds
            progress: Show progress bars
        """
        if n_seeds < 1:
            raise ConfigError(f"Need at least one seed, got {n_seeds}")
        self.output = output
        self.master_seed = master_seed
        self.n_seeds = n_seeds
        self.threads = threads
        self.progress = progress
        self.logger = logging.getLogger(__name__)

    def _run_seed(self, variant: FigureVariant, lyap, index: int) -> SeedRun:
        path = simulate_path(variant.spec, variant.horizon, self.master_seed, index)
        grid = trajectory_grid(variant.horizon)
        series = running_estimates(path, variant.F, lyap, variant.theta_minus, variant.theta_plus, grid)
        points = path.points[:-1]
        f_values = variant.F.values(points)
        _, stderr_phi = batch_means_stderr(f_values)
        _, stderr_plus = batch_means_stderr(f_values - variant.theta_plus * lyap.H(points))
        return SeedRun(columns=trajectory_columns(series), final=series.final,
                       fraction=ordered_fraction(series), stderr_phi=stderr_phi, stderr_plus=stderr_plus)

    def run_variant(self, variant: FigureVariant, folder: Path, figure_id: int) -> Tuple[List[Path], Dict]:
        """
        Simulate one variant over all seeds

        Returns:
            Files written and the manifest entry of the variant
        """
        lyap = reflected_walk_lyapunov(variant.spec.law)
        phi_true = steady_state_mean(variant.spec, variant.F)
        self.logger.info(f"Figure {figure_id} variant {variant.name}: T={variant.horizon}, "
                         f"true mean {phi_true:.10g}")

        runs = map_replications(lambda index: self._run_seed(variant, lyap, index), self.n_seeds,
                                threads=self.threads, desc=f"figure {figure_id} {variant.name}",
                                progress=self.progress)

        files = [self.output.write_columns(
            folder, f"figure{figure_id}_{variant.name}_trajectory.csv", runs[0].columns)]
        summary = {
            'variant': variant.name,
            'parameters': dict(variant.parameters),
            'horizon': variant.horizon,
            'theta_minus': variant.theta_minus,
            'theta_plus': variant.theta_plus,
            'phi_true': phi_true,
            'phi_T': runs[0].final[0],
            'ordered_fraction': runs[0].fraction,
            'ordered_fraction_definition': ORDERED_FRACTION_NOTE,
            'batch_means_stderr': {'phi_n': runs[0].stderr_phi, 'phi_plus': runs[0].stderr_plus},
        }

        if self.n_seeds > 1:
            finals = np.array([run.final for run in runs])
            fractions = [run.fraction for run in runs]
            rows = [(index, variant.name, *run.final, run.fraction) for index, run in enumerate(runs)]
            files.append(self.output.write_csv(
                folder, f"figure{figure_id}_{variant.name}_seeds.csv",
                ['seed_index', 'variant', 'phi_T', 'phi_minus_T', 'phi_plus_T', 'ordered_fraction'], rows))
            std = finals.std(axis=0, ddof=1)
            summary['cross_seed_std'] = {'phi_T': std[0], 'phi_minus_T': std[1], 'phi_plus_T': std[2]}
            summary['ordered_fraction_min'] = min(fractions)
            summary['ordered_fraction_median'] = float(np.median(fractions))

        return files, summary

    def reproduce(self, figure_id: int, folder: Path, horizon: Optional[int] = None) -> FigureRun:
        variants = figure_variants(figure_id, horizon)
        files = []
        summaries = []
        for variant in variants:
            variant_files, summary = self.run_variant(variant, folder, figure_id)
            files.extend(variant_files)
            summaries.append(summary)

        manifest = {'figure_id': figure_id, 'variants': summaries}
        return FigureRun(figure_id=figure_id, files=files, manifest=manifest)


def reproduce_figure(figure_id: int, out_dir: Path, master_seed: int = 1, n_seeds: int = 1,
                     threads: int = 1, horizon: Optional[int] = None,
                     output: Optional[OutputGenerator] = None, progress: bool = False) -> FigureRun:
    """
    Simulate the estimators behind figure 1, 2 or 3 and write their tables

    Args:
        figure_id: 1, 2 or 3
        out_dir: Folder for the tables
        master_seed: Experiment seed
        n_seeds: Independent runs per variant; above 1 a per-seed table is added
        threads: Worker threads across seeds
        horizon: Override of the figure's run length
        output: CSV writer (default: 17 significant digits)
        progress: Show progress bars

    Returns:
        FigureRun with the files written and the manifest entries
    """
    output = output or OutputGenerator()
    folder = Path(out_dir)
    folder.mkdir(parents=True, exist_ok=True)
    reproducer = FigureReproducer(output, master_seed, n_seeds, threads, progress)
    return reproducer.reproduce(figure_id, folder, horizon)
