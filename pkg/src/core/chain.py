"""
Chain - Reflected random walk models, exact sampling and first-passage runs

Models live on the lattice {0, h, 2h, ...}. Internally every state is an
integer lattice index so reflection and the dynamic programs downstream are
exact; lattice points are only formed (index * h) when an observable is
evaluated.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from tqdm import tqdm

from .errors import HorizonExceeded, ModelError, NonLatticeIncrements

logger = logging.getLogger(__name__)

T = TypeVar('T')

MASK64 = (1 << 64) - 1
PROB_TOL = 1e-12
LATTICE_TOL = 1e-9
DEFAULT_PASSAGE_CAP = 10 ** 8


def lattice_span(values: Sequence[float], tol: float = LATTICE_TOL,
                 max_denominator: int = 10 ** 4) -> Optional[float]:
    """
    Largest step h such that every value is an integer multiple of h

    Args:
        values: Real values to place on a common lattice
        tol: Absolute tolerance for the rational reconstruction
        max_denominator: Bound on each denominator and on their common multiple

    Returns:
        The lattice step, or None if the values are not on a rational lattice
        (or are all zero)
    """
    fractions = []
    for value in values:
        if abs(value) <= tol:
            continue
        frac = Fraction(value).limit_denominator(max_denominator)
        if abs(float(frac) - value) > tol * max(1.0, abs(value)):
            return None
        fractions.append(frac)

    if not fractions:
        return None

    common = 1
    for frac in fractions:
        common = common * frac.denominator // math.gcd(common, frac.denominator)
        if common > max_denominator:
            return None
    numerators = [int(frac * common) for frac in fractions]
    step = Fraction(math.gcd(*numerators), common)
    return float(step)


@dataclass(frozen=True)
class IncrementLaw:
    """Finite-support lattice law of the i.i.d. increments D(k)"""

    atoms: Tuple[Tuple[float, float], ...]
    lattice_step: float

    def __post_init__(self):
        atoms = tuple((float(value), float(prob)) for value, prob in self.atoms)
        object.__setattr__(self, 'atoms', atoms)
        object.__setattr__(self, 'lattice_step', float(self.lattice_step))

        if not atoms:
            raise ModelError("Increment law needs at least one atom")
        if self.lattice_step <= 0:
            raise ModelError(f"Lattice step must be positive, got {self.lattice_step}")
        for value, prob in atoms:
            if not 0.0 < prob <= 1.0:
                raise ModelError(f"Atom probability {prob} outside (0, 1]")
        total = math.fsum(prob for _, prob in atoms)
        if abs(total - 1.0) > PROB_TOL:
            raise ModelError(f"Atom probabilities sum to {total!r}, not 1")
        for value, _ in atoms:
            ratio = value / self.lattice_step
            if abs(ratio - round(ratio)) > LATTICE_TOL:
                raise NonLatticeIncrements(
                    f"Atom {value} is not a multiple of the lattice step {self.lattice_step}")
        if not any(value > 0 for value, _ in atoms):
            raise ModelError("Increment law needs an atom with positive value")
        if self.delta <= 0:
            raise ModelError(f"Increment mean must be negative (delta = {self.delta:.6g})")

    @classmethod
    def from_atoms(cls, atoms: Sequence[Tuple[float, float]],
                   lattice_step: Optional[float] = None) -> 'IncrementLaw':
        """
        Build a law, inferring the lattice step when it is not given

        Args:
            atoms: Sequence of (value, probability) pairs
            lattice_step: Lattice step h; inferred from the values if None

        Returns:
            Validated IncrementLaw
        """
        if lattice_step is None:
            lattice_step = lattice_span([value for value, _ in atoms])
            if lattice_step is None:
                raise NonLatticeIncrements(f"Atoms {list(atoms)} are not on a common lattice")
        return cls(tuple(atoms), lattice_step)

    @property
    def values(self) -> np.ndarray:
        return np.array([value for value, _ in self.atoms])

    @property
    def probs(self) -> np.ndarray:
        return np.array([prob for _, prob in self.atoms])

    @property
    def units(self) -> np.ndarray:
        """Atom values as integer multiples of the lattice step"""
        return np.rint(self.values / self.lattice_step).astype(np.int64)

    @property
    def mean(self) -> float:
        return math.fsum(value * prob for value, prob in self.atoms)

    @property
    def delta(self) -> float:
        return -self.mean

    @property
    def second_moment(self) -> float:
        return math.fsum(value * value * prob for value, prob in self.atoms)

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2

    @property
    def min_value(self) -> float:
        return min(value for value, _ in self.atoms)

    @property
    def max_value(self) -> float:
        return max(value for value, _ in self.atoms)


@dataclass(frozen=True)
class ChainSpec:
    """Reflected random walk, or its M/M/1 special case"""

    law: IncrementLaw
    kind: str = 'reflected_rw'
    alpha: Optional[float] = None
    x0: float = 0.0

    def __post_init__(self):
        if self.kind not in ('mm1', 'reflected_rw'):
            raise ModelError(f"Unknown chain kind: {self.kind}")
        if self.x0 < 0:
            raise ModelError(f"Initial state must be nonnegative, got {self.x0}")
        ratio = self.x0 / self.law.lattice_step
        if abs(ratio - round(ratio)) > LATTICE_TOL:
            raise ModelError(f"Initial state {self.x0} is not a lattice point")
        if self.kind == 'mm1':
            if self.alpha is None or not 0.0 < self.alpha < 0.5:
                raise ModelError(f"M/M/1 requires alpha in (0, 1/2), got {self.alpha}")

    @classmethod
    def mm1(cls, alpha: float, x0: float = 0.0) -> 'ChainSpec':
        """M/M/1 model: increments +1 w.p. alpha and -1 w.p. 1 - alpha"""
        if not 0.0 < alpha < 0.5:
            raise ModelError(f"M/M/1 requires alpha in (0, 1/2), got {alpha}")
        law = IncrementLaw(((1.0, alpha), (-1.0, 1.0 - alpha)), 1.0)
        return cls(law=law, kind='mm1', alpha=alpha, x0=x0)

    @classmethod
    def reflected_rw(cls, law: IncrementLaw, x0: float = 0.0) -> 'ChainSpec':
        return cls(law=law, kind='reflected_rw', x0=x0)

    @property
    def lattice_step(self) -> float:
        return self.law.lattice_step

    @property
    def delta(self) -> float:
        return self.law.delta

    @property
    def rho(self) -> float:
        """Load alpha / (1 - alpha); only defined for the M/M/1 model"""
        if self.kind != 'mm1':
            raise ModelError("Load rho is only defined for the M/M/1 model")
        return self.alpha / (1.0 - self.alpha)

    @property
    def x0_index(self) -> int:
        return int(round(self.x0 / self.lattice_step))

    def with_x0(self, x0: float) -> 'ChainSpec':
        return replace(self, x0=x0)


@dataclass(frozen=True, eq=False)
class FiniteChain:
    """Chain given by an explicit row-stochastic matrix on lattice points 0..(m-1)h"""

    matrix: np.ndarray
    lattice_step: float = 1.0
    x0: float = 0.0

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ModelError(f"Kernel matrix must be square, got shape {matrix.shape}")
        if np.any(matrix < 0):
            raise ModelError("Kernel matrix has negative entries")
        row_sums = matrix.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > PROB_TOL:
            raise ModelError("Kernel matrix rows must sum to 1")
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)
        if not 0 <= self.x0_index < matrix.shape[0]:
            raise ModelError(f"Initial state {self.x0} outside the kernel's state space")

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def x0_index(self) -> int:
        return int(round(self.x0 / self.lattice_step))

    def with_x0(self, x0: float) -> 'FiniteChain':
        return replace(self, x0=x0)


Model = Union[ChainSpec, FiniteChain]


@dataclass(frozen=True, eq=False)
class PathSample:
    """One simulated path Phi(0), ..., Phi(n), stored as lattice indices"""

    states: np.ndarray
    lattice_step: float
    seed: int
    replication_index: int

    @property
    def points(self) -> np.ndarray:
        return self.states * self.lattice_step

    @property
    def horizon(self) -> int:
        return len(self.states) - 1


@dataclass(frozen=True)
class FirstPassageResult:
    tau0: int
    area: float


def reflect_step(x, d):
    """One step of the recursion Phi(k+1) = [Phi(k) + D(k+1)]_+"""
    return max(x + d, 0)


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, replication_index: int) -> int:
    """
    Per-replication stream seed: splitmix64(splitmix64(master) XOR index)

    The mix is fixed so that a replication's stream depends only on the pair
    (master_seed, replication_index), never on scheduling.
    """
    return _splitmix64(_splitmix64(master_seed & MASK64) ^ (replication_index & MASK64))


def make_rng(master_seed: int, replication_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, replication_index)))


def make_queue_increments(mu: float, alpha: float, kappa: float) -> IncrementLaw:
    """
    Law of D = A - S for the on/off arrival and service sequences

    S equals (1 + kappa) mu with probability 1 / (1 + kappa) and 0 otherwise;
    A equals (1 + kappa) alpha with the same probability. The four atoms of the
    product law are merged where values coincide.

    Args:
        mu: Mean service amount
        alpha: Mean arrival amount, 0 < alpha < mu
        kappa: Burstiness parameter, kappa > 0

    Returns:
        IncrementLaw with delta = mu - alpha
    """
    if not (mu > alpha > 0 and kappa > 0):
        raise ModelError(f"Queue increments need mu > alpha > 0 and kappa > 0 "
                         f"(mu={mu}, alpha={alpha}, kappa={kappa})")
    p_on = 1.0 / (1.0 + kappa)
    arrival = ((0.0, 1.0 - p_on), ((1.0 + kappa) * alpha, p_on))
    service = ((0.0, 1.0 - p_on), ((1.0 + kappa) * mu, p_on))

    merged = {}
    for a_value, a_prob in arrival:
        for s_value, s_prob in service:
            key = round(a_value - s_value, 12)
            merged[key] = merged.get(key, 0.0) + a_prob * s_prob

    atoms = sorted(merged.items(), key=lambda atom: atom[0])
    return IncrementLaw.from_atoms(atoms)


def _lindley(x0_index: int, steps: np.ndarray) -> np.ndarray:
    """Reflected partial sums: Phi(k) = S_k - min(-x0, min_{j<=k} S_j)"""
    partial = np.empty(len(steps) + 1, dtype=np.int64)
    partial[0] = 0
    np.cumsum(steps, out=partial[1:])
    floor = partial.copy()
    floor[0] = -x0_index
    np.minimum.accumulate(floor, out=floor)
    return partial - floor


def _draw_steps(law: IncrementLaw, rng: np.random.Generator, n: int) -> np.ndarray:
    picks = rng.choice(len(law.atoms), size=n, p=law.probs)
    return law.units[picks]


def _simulate_finite(chain: FiniteChain, rng: np.random.Generator, n: int) -> np.ndarray:
    cdf = np.cumsum(chain.matrix, axis=1)
    uniforms = rng.random(n)
    states = np.empty(n + 1, dtype=np.int64)
    state = chain.x0_index
    states[0] = state
    last = chain.n_states - 1
    for k in range(n):
        state = min(int(np.searchsorted(cdf[state], uniforms[k], side='right')), last)
        states[k + 1] = state
    return states


def simulate_path(model: Model, n: int, master_seed: int,
                  replication_index: int = 0) -> PathSample:
    """
    Simulate Phi(0), ..., Phi(n) from the model's initial state

    Args:
        model: ChainSpec or FiniteChain
        n: Horizon, at least 1
        master_seed: Experiment seed
        replication_index: Index of the independent replication

    Returns:
        PathSample, a deterministic function of the arguments
    """
    if n < 1:
        raise ValueError(f"Horizon must be at least 1, got {n}")
    seed = derive_seed(master_seed, replication_index)
    rng = np.random.Generator(np.random.PCG64(seed))

    if isinstance(model, FiniteChain):
        states = _simulate_finite(model, rng, n)
    else:
        states = _lindley(model.x0_index, _draw_steps(model.law, rng, n))

    return PathSample(states=states, lattice_step=model.lattice_step,
                      seed=seed, replication_index=replication_index)


def first_passage(spec: ChainSpec, x0: float, master_seed: int, replication_index: int = 0,
                  max_steps: int = DEFAULT_PASSAGE_CAP) -> FirstPassageResult:
    """
    Run the walk from x0 until the first k >= 1 with Phi(k) = 0

    Args:
        spec: Reflected random walk model
        x0: Starting lattice point
        master_seed: Experiment seed
        replication_index: Index of the independent replication
        max_steps: Cap on tau0

    Returns:
        FirstPassageResult with tau0 and the area sum_{k < tau0} Phi(k)
    """
    rng = make_rng(master_seed, replication_index)
    h = spec.lattice_step
    current = int(round(x0 / h))
    chunk = max(1024, int(2.0 * x0 / spec.delta) + 1)
    tau = 0
    area_units = 0

    while tau < max_steps:
        size = min(chunk, max_steps - tau)
        path = _lindley(current, _draw_steps(spec.law, rng, size))
        zeros = np.flatnonzero(path[1:] == 0)
        if zeros.size:
            hit = int(zeros[0]) + 1
            area_units += int(path[:hit].sum())
            return FirstPassageResult(tau0=tau + hit, area=area_units * h)
        area_units += int(path[:-1].sum())
        tau += size
        current = int(path[-1])
        chunk = min(chunk * 2, 1 << 22)

    raise HorizonExceeded(f"No return to 0 from x0={x0} within {max_steps} steps")


def occupation_frequencies(path: PathSample, n_states: int) -> np.ndarray:
    """Empirical frequencies of lattice indices 0..n_states-1 along the path"""
    counts = np.bincount(path.states, minlength=n_states)[:n_states]
    return counts / len(path.states)


def map_replications(func: Callable[[int], T], n_replications: int, threads: int = 1,
                     desc: Optional[str] = None, progress: bool = False) -> List[T]:
    """
    Evaluate func(index) for index = 0..n_replications-1

    Results are returned in index order whatever the thread count.

    Args:
        func: Function of the replication index
        n_replications: Number of replications
        threads: Worker threads (1 runs inline)
        desc: Progress bar label
        progress: Show a tqdm progress bar

    Returns:
        List of results ordered by replication index
    """
    indices = range(n_replications)
    if threads <= 1:
        iterator = tqdm(indices, desc=desc, disable=not progress)
        return [func(index) for index in iterator]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = pool.map(func, indices)
        return list(tqdm(results, total=n_replications, desc=desc, disable=not progress))


def mean_first_passage(spec: ChainSpec, x0: float, replications: int, master_seed: int,
                       threads: int = 1, progress: bool = False) -> Tuple[float, float]:
    """
    Monte Carlo means of tau0 and of the area from x0

    Returns:
        (mean tau0, mean area)
    """
    results = map_replications(
        lambda index: first_passage(spec, x0, master_seed, index),
        replications, threads=threads, desc=f"first passage from {x0:g}", progress=progress)
    logger.info(f"Completed {replications} first-passage replications from x0={x0:g}")
    mean_tau = math.fsum(result.tau0 for result in results) / replications
    mean_area = math.fsum(result.area for result in results) / replications
    return mean_tau, mean_area
