"""
Lyapunov - Observables, drift data and the controlled estimator pair

The quadratic Lyapunov function V(x) = 1 + (x^2 + delta x) / (2 delta) of the
reflected random walk gives the control variate H = V - PV = x - R(x), with a
remainder R that is constant outside the reflection zone. The M/M/1 model also
has an exponential solution V = k e^{beta x} of the drift inequality.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, FrozenSet, Optional, Sequence, Tuple

import numpy as np

from .chain import ChainSpec, IncrementLaw, PathSample
from .errors import BetaOutOfRange, EmptyPath, ModelError

logger = logging.getLogger(__name__)

ArrayFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Observable:
    """Function F on lattice points, optionally centered by its steady-state mean"""

    kind: str
    beta: float = 0.0
    table: Tuple[float, ...] = ()
    table_step: float = 1.0
    centered: bool = False
    center_value: float = 0.0

    def __post_init__(self):
        if self.kind not in ('identity', 'exponential', 'tabulated'):
            raise ValueError(f"Unknown observable kind: {self.kind}")
        if self.kind == 'exponential' and self.beta <= 0:
            raise BetaOutOfRange(f"Exponential observable needs beta > 0, got {self.beta}")
        if self.kind == 'tabulated' and not self.table:
            raise ValueError("Tabulated observable needs at least one value")
        object.__setattr__(self, 'table', tuple(float(v) for v in self.table))

    @classmethod
    def identity(cls) -> 'Observable':
        return cls('identity')

    @classmethod
    def exponential(cls, beta: float) -> 'Observable':
        return cls('exponential', beta=beta)

    @classmethod
    def tabulated(cls, values: Sequence[float], step: float = 1.0) -> 'Observable':
        return cls('tabulated', table=tuple(values), table_step=step)

    def raw(self, x) -> np.ndarray:
        """F(x) without centering"""
        x = np.asarray(x, dtype=float)
        if self.kind == 'identity':
            return x.copy()
        if self.kind == 'exponential':
            return np.exp(self.beta * x)
        index = np.rint(x / self.table_step).astype(np.int64)
        if np.any(index < 0) or np.any(index >= len(self.table)):
            raise ValueError(f"Tabulated observable has {len(self.table)} values; "
                             f"state index out of range")
        return np.asarray(self.table)[index]

    def values(self, x) -> np.ndarray:
        """F(x), minus the center value when centered"""
        out = self.raw(x)
        if self.centered:
            out = out - self.center_value
        return out

    __call__ = values

    def center(self, phi: float) -> 'Observable':
        return replace(self, centered=True, center_value=float(phi))

    def uncentered(self) -> 'Observable':
        return replace(self, centered=False, center_value=0.0)


@dataclass(frozen=True, eq=False)
class LyapunovData:
    """Solution (V, W, b, C) of PV <= V - W + b 1_C, with H = V - PV = x - R"""

    V: ArrayFunction
    W: ArrayFunction
    b: float
    C: FrozenSet[float]
    H: ArrayFunction
    R: ArrayFunction
    J: ArrayFunction
    law: IncrementLaw

    @property
    def delta(self) -> float:
        return self.law.delta

    def indicator_C(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        members = np.array(sorted(self.C)) if self.C else np.empty(0)
        return np.isclose(x[..., None], members).any(axis=-1).astype(float)

    def drift_slack(self, x) -> np.ndarray:
        """V - W + b 1_C - PV; nonnegative wherever the drift inequality holds"""
        x = np.asarray(x, dtype=float)
        pv = one_step_expectation(self.V, x, self.law)
        return self.V(x) - self.W(x) + self.b * self.indicator_C(x) - pv


def one_step_expectation(G: ArrayFunction, x, law: IncrementLaw) -> np.ndarray:
    """
    Exact PG(x) = E[G([x + D]_+)] as a finite sum over the atoms

    Args:
        G: Vectorized function on lattice points
        x: Lattice point or array of lattice points
        law: Increment law

    Returns:
        Array shaped like x
    """
    x = np.asarray(x, dtype=float)
    targets = np.maximum(x[..., None] + law.values, 0.0)
    return (G(targets) * law.probs).sum(axis=-1)


def fluid_V(x, delta: float):
    """Quadratic Lyapunov function 1 + (x^2 + delta x) / (2 delta)"""
    x = np.asarray(x, dtype=float)
    out = 1.0 + (x * x + delta * x) / (2.0 * delta)
    return out if out.ndim else float(out)


def remainder_R(x, law: IncrementLaw):
    """
    Bounded remainder R in PV = V - x + R

    R(x) = sigma^2 / (2 delta) - E[((x + D)^2 + delta (x + D)) 1(x < -D)] / (2 delta),
    an exact sum over the atoms with value below -x.

    Args:
        x: Lattice point or array of lattice points
        law: Increment law

    Returns:
        R evaluated at x
    """
    delta = law.delta
    x = np.asarray(x, dtype=float)
    shifted = x[..., None] + law.values
    reflected = shifted < 0
    terms = np.where(reflected, shifted * shifted + delta * shifted, 0.0) * law.probs
    out = law.variance / (2.0 * delta) - terms.sum(axis=-1) / (2.0 * delta)
    return out if out.ndim else float(out)


def control_variate_H(x, lyap: LyapunovData):
    """H(x) = V(x) - PV(x) = x - R(x)"""
    out = np.asarray(lyap.H(np.asarray(x, dtype=float)))
    return out if out.ndim else float(out)


def _small_set(V: ArrayFunction, W: ArrayFunction, law: IncrementLaw,
               states: np.ndarray) -> Tuple[FrozenSet[float], float]:
    excess = one_step_expectation(V, states, law) - V(states) + W(states)
    failing = excess > 1e-12
    C = frozenset(float(x) for x in states[failing])
    b = float(excess[failing].max()) if failing.any() else 0.0
    return C, b


def reflected_walk_lyapunov(law: IncrementLaw) -> LyapunovData:
    """
    Quadratic drift data for the reflected random walk

    V is the fluid-based quadratic, W(x) = 1 + x/2. C collects the lattice
    points where PV > V - W, and b is the smallest constant closing the
    inequality on C.

    Args:
        law: Increment law with delta > 0

    Returns:
        LyapunovData
    """
    delta = law.delta
    h = law.lattice_step

    def V(x):
        return fluid_V(np.asarray(x, dtype=float), delta)

    def W(x):
        return 1.0 + 0.5 * np.asarray(x, dtype=float)

    def R(x):
        return remainder_R(np.asarray(x, dtype=float), law)

    def H(x):
        x = np.asarray(x, dtype=float)
        return x - R(x)

    def J(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x * x / delta

    reflection_zone = np.arange(int(round(-law.min_value / h)) + 2) * h
    r_max = float(np.max(R(reflection_zone)))
    scan = np.arange(int(math.ceil(2.0 * (r_max + 1.0) / h)) + 2) * h
    C, b = _small_set(V, W, law, scan)
    logger.debug(f"Quadratic drift: |C|={len(C)}, b={b:.6g}, sup R on zone={r_max:.6g}")

    return LyapunovData(V=V, W=W, b=b, C=C, H=H, R=R, J=J, law=law)


def mm1_exponential_lyapunov(alpha: float, beta: float) -> LyapunovData:
    """
    Exponential drift data V = k e^{beta x}, W = e^{beta x}, C = {0} for M/M/1

    Args:
        alpha: Arrival probability, 0 < alpha < 1/2
        beta: Exponent, 0 < beta < |log rho|

    Returns:
        LyapunovData with k = 1 / (1 - (alpha e^beta + (1 - alpha) e^{-beta}))
    """
    spec = ChainSpec.mm1(alpha)
    law = spec.law
    rho = spec.rho
    growth = alpha * math.exp(beta) + (1.0 - alpha) * math.exp(-beta)
    if beta <= 0 or beta >= abs(math.log(rho)) or growth >= 1.0:
        raise BetaOutOfRange(f"beta={beta} outside (0, |log rho|) = (0, {abs(math.log(rho)):.6g})")
    k = 1.0 / (1.0 - growth)
    delta = law.delta

    def V(x):
        return k * np.exp(beta * np.asarray(x, dtype=float))

    def W(x):
        return np.exp(beta * np.asarray(x, dtype=float))

    def H(x):
        x = np.asarray(x, dtype=float)
        return V(x) - one_step_expectation(V, x, law)

    def R(x):
        x = np.asarray(x, dtype=float)
        return x - H(x)

    def J(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x * x / delta

    pv0 = k * (alpha * math.exp(beta) + 1.0 - alpha)
    b = max(0.0, pv0 - k + 1.0)
    logger.debug(f"Exponential drift for M/M/1: k={k:.6g}, b={b:.6g}")

    return LyapunovData(V=V, W=W, b=b, C=frozenset({0.0}), H=H, R=R, J=J, law=law)


def weighted_norm(F: Observable, W: ArrayFunction, states: np.ndarray) -> float:
    """sup |F| / W over the given lattice points"""
    states = np.asarray(states, dtype=float)
    return float(np.max(np.abs(F.values(states)) / W(states)))


@dataclass(frozen=True, eq=False)
class EstimatorSeries:
    """Standard and controlled running estimates on a grid of horizons"""

    n_grid: np.ndarray
    phi_n: np.ndarray
    phi_minus: np.ndarray
    phi_plus: np.ndarray
    delta_n: np.ndarray
    theta_minus: float
    theta_plus: float

    @property
    def final(self) -> Tuple[float, float, float]:
        """(phi_n, phi_minus, phi_plus) at the last grid point"""
        return float(self.phi_n[-1]), float(self.phi_minus[-1]), float(self.phi_plus[-1])


def running_estimates(path: PathSample, F: Observable, lyap: LyapunovData,
                      theta_minus: float, theta_plus: float,
                      n_grid: Optional[Sequence[int]] = None) -> EstimatorSeries:
    """
    L_n(F), Delta_n = L_n(H) and phi_n^- = phi_n - theta_- Delta_n,
    phi_n^+ = phi_n - theta_+ Delta_n along one path

    Args:
        path: Simulated path
        F: Observable
        lyap: Drift data supplying H
        theta_minus: Coefficient of the lower estimator (> 1 in the usual setup)
        theta_plus: Coefficient of the upper estimator (<= 1 in the usual setup)
        n_grid: Increasing horizons in 1..path.horizon; every horizon if None

    Returns:
        EstimatorSeries aligned with n_grid
    """
    horizon = path.horizon
    if horizon < 1:
        raise EmptyPath("Path has no transitions")
    if n_grid is None:
        grid = np.arange(1, horizon + 1, dtype=np.int64)
    else:
        grid = np.asarray(n_grid, dtype=np.int64)
    if grid.size == 0:
        raise EmptyPath("Empty grid of horizons")
    if np.any(np.diff(grid) <= 0) or grid[0] < 1 or grid[-1] > horizon:
        raise ValueError(f"Grid of horizons must be increasing within 1..{horizon}")
    if not (theta_minus > 1.0 and theta_plus <= 1.0):
        logger.warning(f"theta_minus={theta_minus}, theta_plus={theta_plus} fall outside the "
                       f"one-sided bound convention theta_minus > 1 >= theta_plus")

    points = path.points[:grid[-1]]
    cumulative_f = np.cumsum(F.values(points))
    cumulative_h = np.cumsum(lyap.H(points))
    phi_n = cumulative_f[grid - 1] / grid
    delta_n = cumulative_h[grid - 1] / grid

    return EstimatorSeries(
        n_grid=grid,
        phi_n=phi_n,
        phi_minus=phi_n - theta_minus * delta_n,
        phi_plus=phi_n - theta_plus * delta_n,
        delta_n=delta_n,
        theta_minus=float(theta_minus),
        theta_plus=float(theta_plus),
    )


def confidence_band(series: EstimatorSeries, epsilon: float) -> Tuple[np.ndarray, np.ndarray]:
    """[phi_n^- - epsilon, phi_n^+ + epsilon] at every grid point"""
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    return series.phi_minus - epsilon, series.phi_plus + epsilon


def analytic_mean_mm1(alpha: float, F: Observable) -> float:
    """
    Steady-state mean of F for M/M/1, whose invariant law is geometric(rho)

    Args:
        alpha: Arrival probability
        F: Identity or Exponential observable (centering ignored)

    Returns:
        rho / (1 - rho) or (1 - rho) / (1 - rho e^beta)
    """
    rho = ChainSpec.mm1(alpha).rho
    if F.kind == 'identity':
        return rho / (1.0 - rho)
    if F.kind == 'exponential':
        if F.beta >= abs(math.log(rho)):
            raise BetaOutOfRange(f"beta={F.beta} >= |log rho|; the steady-state mean is infinite")
        return (1.0 - rho) / (1.0 - rho * math.exp(F.beta))
    raise ModelError(f"No closed-form M/M/1 mean for a {F.kind} observable")


def batch_means_stderr(values: np.ndarray, n_batches: int = 20) -> Tuple[float, float]:
    """
    Mean and batch-means standard error of a correlated sequence

    Args:
        values: Observations along one path
        n_batches: Number of non-overlapping batches

    Returns:
        (mean of the batched observations, standard error)
    """
    values = np.asarray(values, dtype=float)
    batch_size = len(values) // n_batches
    if n_batches < 2 or batch_size < 1:
        raise ValueError(f"Need at least 2 batches of size 1, got {len(values)} values")
    used = values[:batch_size * n_batches]
    batches = used.reshape(n_batches, batch_size).mean(axis=1)
    mean = float(batches.mean())
    variance = batch_size * float(np.sum((batches - mean) ** 2)) / (n_batches - 1)
    return mean, math.sqrt(variance / len(used))
