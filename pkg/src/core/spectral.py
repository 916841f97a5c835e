"""
Spectral - Finite-truncation spectral theory of the tilted kernels

Everything here works on a TruncatedKernel: the reflected walk restricted to
lattice points 0..Nh, with the mass that would leave through the top lumped
onto state N. On that finite matrix the module computes stationary laws,
Poisson solutions and asymptotic variances, the generalized principal
eigenvalue of P_a = diag(e^{aF}) P with its eigenvectors, the twisted kernel,
the resolvent and potential-kernel representations of the eigenfunction, the
log-moment generating function Lambda(a), its convex dual I(c) and the exact
large-deviation prefactor.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .chain import ChainSpec, FiniteChain, Model, lattice_span, map_replications
from .errors import (DegenerateControl, ModelError, NonConvergence, NumericalError,
                     OutOfDualRange, ResolventDivergent, SingularSystem, TiltOverflow,
                     TruncationTooSmall, ZeroDenominator)
from .lyapunov import Observable, analytic_mean_mm1

logger = logging.getLogger(__name__)

LOG_FLOAT_MAX = math.log(np.finfo(float).max)
ROW_SUM_TOL = 1e-12
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10 ** 6
DENSE_AGREEMENT = 1e-9
DUAL_TOL = 1e-10
TWIST_FLOOR = 1e-200


@dataclass(frozen=True, eq=False)
class TruncatedKernel:
    """Row-stochastic transition matrix on lattice points 0, h, ..., Nh"""

    N: int
    lattice_step: float
    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.shape != (self.N + 1, self.N + 1):
            raise ModelError(f"Kernel shape {P.shape} does not match N={self.N}")
        if np.any(P < 0):
            raise ModelError("Kernel has negative entries")
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise ModelError("Kernel rows must sum to 1")
        P.setflags(write=False)
        object.__setattr__(self, 'P', P)

    @property
    def n_states(self) -> int:
        return self.N + 1

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.lattice_step

    def index_of(self, x: float) -> int:
        index = int(round(x / self.lattice_step))
        if not 0 <= index <= self.N:
            raise ModelError(f"State {x} outside the truncation 0..{self.N * self.lattice_step:g}")
        return index


@dataclass(frozen=True)
class SmallPair:
    """Small function s and small measure nu, as vectors on the truncation"""

    s: np.ndarray
    nu: np.ndarray

    @classmethod
    def default(cls, n_states: int) -> 'SmallPair':
        return cls.at(n_states, 0, 0)

    @classmethod
    def at(cls, n_states: int, s_state: int = 0, nu_state: int = 0) -> 'SmallPair':
        """Indicator of s_state and point mass at nu_state"""
        s = np.zeros(n_states)
        nu = np.zeros(n_states)
        s[s_state] = 1.0
        nu[nu_state] = 1.0
        return cls(s, nu)


def check_minorization(P: np.ndarray, small: SmallPair) -> float:
    """
    Largest delta with P(x, .) >= delta nu(.) for every x in the support of s

    Raises:
        ModelError: if no positive delta exists
    """
    rows = np.flatnonzero(small.s > 0)
    cols = np.flatnonzero(small.nu > 0)
    ratios = P[np.ix_(rows, cols)] / small.nu[cols]
    delta = float(ratios.min())
    if delta <= 0:
        raise ModelError("One-step minorization P >= delta s(x) nu fails for the small pair")
    return delta


@dataclass(frozen=True, eq=False)
class SpectralPoint:
    """
    Generalized principal eigenvalue of P_a with its eigenvectors

    f_check is normalized by nu(f_check) = 1 and mu_check by mu_check(1) = 1;
    f_pair is the rescaling with mu_check(f_pair) = 1, so that (f_pair,
    mu_check) satisfy the pair normalization used by the prefactor.
    """

    a: float
    lambda_a: float
    f_check: np.ndarray
    mu_check: np.ndarray
    f_pair: np.ndarray
    method: str = 'power'
    residual: float = 0.0

    @property
    def Lambda_a(self) -> float:
        return math.log(self.lambda_a)

    @property
    def twisted_stationary(self) -> np.ndarray:
        """mu_check * f_pair: invariant law of the f_check-twisted kernel"""
        return self.mu_check * self.f_pair

    @property
    def support(self) -> np.ndarray:
        """States where f_pair has not underflowed (above TWIST_FLOOR of its maximum)"""
        return self.f_pair > TWIST_FLOOR * self.f_pair.max()


class DualPoint(NamedTuple):
    I: float
    a_star: float
    sigma_a_star: float


def kernel_from_matrix(matrix, lattice_step: float = 1.0) -> TruncatedKernel:
    matrix = np.asarray(matrix, dtype=float)
    return TruncatedKernel(N=matrix.shape[0] - 1, lattice_step=lattice_step, P=matrix)


def truncate_kernel(model: Model, N: int) -> TruncatedKernel:
    """
    Restrict the model to lattice points 0..Nh, lumping overflow onto N

    Args:
        model: ChainSpec (reflected walk) or FiniteChain (returned as is)
        N: Truncation index

    Returns:
        TruncatedKernel with P[i, j] = P{reflect(i h + D) = j h}, j < N
    """
    if isinstance(model, FiniteChain):
        return kernel_from_matrix(model.matrix, model.lattice_step)

    law = model.law
    units = law.units
    if N * law.lattice_step <= law.max_value:
        raise TruncationTooSmall(
            f"N*h = {N * law.lattice_step:g} must exceed the largest increment {law.max_value:g}")

    rows = np.repeat(np.arange(N + 1), len(units))
    cols = np.clip(rows + np.tile(units, N + 1), 0, N)
    weights = np.tile(law.probs, N + 1)
    P = np.zeros((N + 1, N + 1))
    np.add.at(P, (rows, cols), weights)

    kernel = TruncatedKernel(N=N, lattice_step=law.lattice_step, P=P)
    if not is_primitive(kernel.P):
        logger.warning(f"Truncated kernel (N={N}) is not irreducible and aperiodic "
                       f"on the class reachable from 0")
    logger.debug(f"Built truncated kernel with {N + 1} states, h={law.lattice_step:g}")
    return kernel


def is_primitive(P: np.ndarray) -> bool:
    """Irreducible on the class reachable from state 0, with a self-loop in it"""
    reachable = breadth_first_order(P > 0, 0, directed=True, return_predecessors=False)
    sub = P[np.ix_(reachable, reachable)] > 0
    n_components, _ = connected_components(sub, directed=True, connection='strong')
    return n_components == 1 and bool(np.any(np.diag(sub)))


def _matrix_of(P) -> np.ndarray:
    return P.P if isinstance(P, TruncatedKernel) else np.asarray(P, dtype=float)


def stationary(kernel) -> np.ndarray:
    """
    Invariant distribution by Grassmann-Taksar-Heyman elimination

    The elimination is subtraction-free, so every entry (including the tiny
    tail probabilities) is computed to full relative precision.

    Args:
        kernel: TruncatedKernel or row-stochastic matrix

    Returns:
        pi_hat with pi_hat P = pi_hat, pi_hat >= 0, summing to 1
    """
    A = np.array(_matrix_of(kernel), dtype=float)
    n = A.shape[0]
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0:
            raise NonConvergence(f"Kernel is reducible: state {k} cannot reach lower states")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])

    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ A[:k, k]
    return pi / pi.sum()


def _values_on(kernel: TruncatedKernel, G) -> np.ndarray:
    if isinstance(G, Observable):
        return G.values(kernel.states)
    if callable(G):
        return np.asarray(G(kernel.states), dtype=float)
    values = np.asarray(G, dtype=float)
    if values.shape != (kernel.n_states,):
        raise ValueError(f"Expected {kernel.n_states} values, got shape {values.shape}")
    return values


def center_observable(F: Observable, model: Model,
                      kernel: Optional[TruncatedKernel] = None) -> Observable:
    """
    Center F by its steady-state mean

    The closed form is used for M/M/1 with identity or exponential F; otherwise
    the mean under the truncated stationary law.
    """
    if F.centered:
        return F
    if isinstance(model, ChainSpec) and model.kind == 'mm1' and F.kind != 'tabulated':
        phi = analytic_mean_mm1(model.alpha, F)
        logger.info(f"Centering with the closed-form M/M/1 mean {phi:.10g}")
        return F.center(phi)
    if kernel is None:
        raise ValueError("A truncated kernel is needed to center this observable")
    phi = float(stationary(kernel) @ F.raw(kernel.states))
    logger.info(f"Centering with the truncated stationary mean {phi:.10g}")
    return F.center(phi)


def scale_kernel(kernel: TruncatedKernel, F, a: float) -> np.ndarray:
    """P_a[i, j] = e^{a F(i h)} P[i, j]"""
    exponent = a * _values_on(kernel, F)
    if np.max(exponent) > LOG_FLOAT_MAX:
        raise TiltOverflow(f"e^(aF) overflows at a={a:g} (max exponent {np.max(exponent):.4g})")
    return np.exp(exponent)[:, None] * kernel.P


def _dense_perron(P_a: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    eigenvalues, left, right = scipy.linalg.eig(P_a, left=True, right=True)
    k = int(np.argmax(eigenvalues.real))
    lam = float(eigenvalues[k].real)
    f = np.abs(right[:, k].real)
    mu = np.abs(left[:, k].real)
    return lam, f / f.max(), mu / mu.max()


def _power_iteration(P_a: np.ndarray, tol: float, max_iter: int):
    """
    Perron vectors by repeated squaring followed by plain power steps

    Squaring replaces 2^k power steps by k matrix products; the plain steps
    that follow bring the residual below tol.
    """
    top = P_a.max()
    if not np.isfinite(top) or top <= 0:
        raise NonConvergence("Tilted kernel has no positive finite entries")
    M = P_a / top
    f_prev = None
    for _ in range(64):
        M = M @ M
        scale = M.max()
        if not np.isfinite(scale) or scale <= 0:
            raise NonConvergence("Matrix powers lost all mass")
        M /= scale
        f = M.sum(axis=1)
        f /= f.max()
        if f_prev is not None and np.max(np.abs(f - f_prev)) <= tol:
            break
        f_prev = f
    mu = M.sum(axis=0)
    mu /= mu.max()

    lam = float('nan')
    residual = float('inf')
    iterations = 0
    for iterations in range(1, max_iter + 1):
        g = P_a @ f
        k = int(np.argmax(f))
        lam = g[k] / f[k]
        right_residual = np.max(np.abs(g - lam * f)) / lam
        m = mu @ P_a
        left_residual = np.max(np.abs(m - lam * mu)) / lam
        residual = max(right_residual, left_residual)
        if residual <= tol:
            break
        f = g / g.max()
        mu = m / m.max()
    else:
        raise NonConvergence(f"Power iteration residual {residual:.3g} above {tol:g} "
                             f"after {max_iter} steps")
    return float(lam), f, mu, residual, iterations


def gpe(P_a: np.ndarray, small: Optional[SmallPair] = None, tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER, cross_check: bool = False, a: float = float('nan')) -> SpectralPoint:
    """
    Generalized principal eigenvalue of a nonnegative primitive matrix

    For a < 0 and unbounded F the eigenfunction decays faster than
    geometrically, so on long truncations f_check is exactly 0 on the high
    states. Twists of P_a are therefore built on SpectralPoint.support
    (see eigenfunction_twist).

    Args:
        P_a: Tilted kernel
        small: Small pair; nu fixes the normalization nu(f_check) = 1
        tol: Relative residual target for both eigenvectors
        max_iter: Power steps allowed after the squaring phase
        cross_check: Also run the dense eigensolver and require agreement
        a: Tilt, stored on the result

    Returns:
        SpectralPoint
    """
    P_a = np.asarray(P_a, dtype=float)
    small = small or SmallPair.default(P_a.shape[0])
    method = 'power'
    try:
        lam, f, mu, residual, iterations = _power_iteration(P_a, tol, max_iter)
        logger.debug(f"gpe at a={a:g}: lambda={lam:.15g} after {iterations} power steps")
    except NonConvergence as e:
        logger.warning(f"Power iteration failed at a={a:g} ({e}); using the dense eigensolver")
        lam, f, mu = _dense_perron(P_a)
        residual = max(np.max(np.abs(P_a @ f - lam * f)), np.max(np.abs(mu @ P_a - lam * mu))) / lam
        method = 'dense'

    if cross_check and method == 'power':
        dense_lam, _, _ = _dense_perron(P_a)
        if abs(dense_lam - lam) > DENSE_AGREEMENT * max(1.0, abs(lam)):
            raise NonConvergence(f"Power iteration lambda {lam!r} disagrees with dense {dense_lam!r}")

    if not lam > 0:
        raise NonConvergence(f"Non-positive Perron root {lam!r} at a={a:g}")

    nu_f = float(small.nu @ f)
    if nu_f > 0:
        f_check = f / nu_f
    else:
        logger.warning(f"nu(f) underflows at a={a:g}; f_check left sup-normalized")
        f_check = f
    mu_check = mu / mu.sum()
    f_pair = f / float(mu_check @ f)

    return SpectralPoint(a=a, lambda_a=lam, f_check=f_check, mu_check=mu_check,
                         f_pair=f_pair, method=method, residual=float(residual))


def twisted_kernel(P, h, lattice_step: float = 1.0) -> TruncatedKernel:
    """
    Twisted kernel P_h(x, y) = P(x, y) h(y) / sum_z P(x, z) h(z)

    Args:
        P: Nonnegative matrix or TruncatedKernel (P_a for the eigenfunction twist)
        h: Strictly positive function on the states
        lattice_step: Lattice step of the result when P is a bare matrix

    Returns:
        Row-stochastic TruncatedKernel
    """
    if isinstance(P, TruncatedKernel):
        lattice_step = P.lattice_step
    matrix = _matrix_of(P)
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ZeroDenominator("Twisting function must be strictly positive")
    weighted = matrix * h[None, :]
    denominator = weighted.sum(axis=1)
    if np.any(denominator <= 0):
        raise ZeroDenominator("Twisted kernel has a row with zero mass")
    return kernel_from_matrix(weighted / denominator[:, None], lattice_step)


def eigenfunction_twist(P_a: np.ndarray, point: SpectralPoint,
                        lattice_step: float = 1.0) -> Tuple[TruncatedKernel, np.ndarray]:
    """
    f_check-twist of P_a restricted to point.support

    Returns:
        Row-stochastic TruncatedKernel on the support, and the boolean support mask
    """
    keep = point.support
    matrix = np.asarray(P_a, dtype=float)[np.ix_(keep, keep)]
    return twisted_kernel(matrix, point.f_pair[keep], lattice_step), keep


def resolvent(P_a: np.ndarray, lambda_a: Optional[float] = None) -> np.ndarray:
    """
    R_a = sum_k 2^{-k-1} P_a^k = (2I - P_a)^{-1}

    Raises:
        ResolventDivergent: if lambda_a >= 2
    """
    P_a = np.asarray(P_a, dtype=float)
    if lambda_a is None:
        lambda_a = gpe(P_a).lambda_a
    if lambda_a >= 2.0:
        raise ResolventDivergent(f"lambda_a = {lambda_a:.6g} >= 2; the resolvent series diverges")
    n = P_a.shape[0]
    try:
        return scipy.linalg.solve(2.0 * np.eye(n) - P_a, np.eye(n))
    except scipy.linalg.LinAlgError as e:
        raise SingularSystem(f"2I - P_a is singular: {e}") from e


def resolvent_series(P_a: np.ndarray, K: int) -> np.ndarray:
    """Partial sum sum_{k<=K} 2^{-k-1} P_a^k"""
    P_a = np.asarray(P_a, dtype=float)
    term = 0.5 * np.eye(P_a.shape[0])
    total = term.copy()
    for _ in range(K):
        term = 0.5 * term @ P_a
        total += term
    return total


def potential_eigenfunction(P_a: np.ndarray, small: Optional[SmallPair] = None,
                            lambda_a: Optional[float] = None) -> np.ndarray:
    """
    Eigenfunction as G_a s with G_a = [gamma_a I - (R_a - s nu)]^{-1}

    gamma_a = (2 - lambda_a)^{-1} is the eigenvalue of R_a; the result is
    normalized by nu(G_a s) = 1.

    Args:
        P_a: Tilted kernel
        small: Small pair (s, nu)
        lambda_a: g.p.e. of P_a if already known

    Returns:
        nu-normalized eigenfunction
    """
    P_a = np.asarray(P_a, dtype=float)
    n = P_a.shape[0]
    small = small or SmallPair.default(n)
    if lambda_a is None:
        lambda_a = gpe(P_a, small).lambda_a
    R_a = resolvent(P_a, lambda_a)
    gamma = 1.0 / (2.0 - lambda_a)
    M = R_a - np.outer(small.s, small.nu)

    radius = float(np.max(np.abs(scipy.linalg.eigvals(M))))
    if radius >= gamma:
        logger.warning(f"Spectral radius {radius:.6g} of R_a - s(x)nu is not below "
                       f"gamma_a = {gamma:.6g}; the potential series does not converge")

    try:
        solution = scipy.linalg.solve(gamma * np.eye(n) - M, small.s)
    except scipy.linalg.LinAlgError as e:
        raise SingularSystem(f"Potential kernel system is singular: {e}") from e
    scale = float(small.nu @ solution)
    if scale == 0 or not np.isfinite(scale):
        raise SingularSystem("nu(G_a s) vanishes")
    return solution / scale


def poisson_solve(kernel: TruncatedKernel, F, pi: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Solution of (I - P) F_hat = F - phi with pi_hat(F_hat) = 0

    Uses the fundamental matrix (I - P + 1 pi_hat)^{-1}, whose solutions are
    automatically pi_hat-centered.

    Args:
        kernel: Truncated kernel
        F: Observable, callable or array of values on the states
        pi: Stationary law, computed if omitted

    Returns:
        F_hat on the states
    """
    pi = stationary(kernel) if pi is None else pi
    values = _values_on(kernel, F)
    centered = values - float(pi @ values)
    n = kernel.n_states
    A = np.eye(n) - kernel.P + np.outer(np.ones(n), pi)
    try:
        F_hat = scipy.linalg.solve(A, centered)
    except scipy.linalg.LinAlgError as e:
        raise SingularSystem(f"Poisson system is singular: {e}") from e

    residual = np.max(np.abs(F_hat - kernel.P @ F_hat - centered))
    scale = max(1.0, float(np.max(np.abs(F_hat))))
    if residual > 1e-10 * scale:
        raise SingularSystem(f"Poisson residual {residual:.3g} too large (scale {scale:.3g})")
    return F_hat


def poisson_series(kernel: TruncatedKernel, F, K: int, pi: Optional[np.ndarray] = None) -> np.ndarray:
    """Partial sum sum_{k<K} (P^k F - phi) of the fundamental kernel"""
    pi = stationary(kernel) if pi is None else pi
    values = _values_on(kernel, F)
    phi = float(pi @ values)
    term = values.copy()
    total = np.zeros_like(values)
    for _ in range(K):
        total += term - phi
        term = kernel.P @ term
    return total


def _covariance_form(kernel: TruncatedKernel, pi: np.ndarray, A: np.ndarray, B: np.ndarray) -> float:
    """pi(P(AB) - (PA)(PB)), computed as a conditional covariance"""
    P = kernel.P
    dA = A[None, :] - (P @ A)[:, None]
    dB = B[None, :] - (P @ B)[:, None]
    return float(pi @ (P * dA * dB).sum(axis=1))


def asymptotic_variance(kernel: TruncatedKernel, F, pi: Optional[np.ndarray] = None) -> float:
    """sigma^2(F) = pi(P(F_hat^2) - (P F_hat)^2)"""
    pi = stationary(kernel) if pi is None else pi
    F_hat = poisson_solve(kernel, F, pi)
    return _covariance_form(kernel, pi, F_hat, F_hat)


def variance_series(kernel: TruncatedKernel, F, K: int, pi: Optional[np.ndarray] = None) -> float:
    """
    Autocovariance sum gamma_0 + 2 sum_{1<=k<K} gamma_k

    Built from the partial Poisson series Z_K F = sum_{k<K} (P^k F - phi) as
    2 pi(F_c Z_K F) - pi(F_c^2), with F_c = F - phi. Independent of the
    fundamental-matrix solve behind asymptotic_variance.
    """
    pi = stationary(kernel) if pi is None else pi
    values = _values_on(kernel, F)
    centered = values - float(pi @ values)
    partial = poisson_series(kernel, values, K, pi)
    return float(2.0 * (pi @ (centered * partial)) - pi @ centered ** 2)


def optimal_theta(kernel: TruncatedKernel, F, H, pi: Optional[np.ndarray] = None) -> float:
    """
    Variance-minimizing control coefficient theta* = <<ZF, ZH>> / <<ZH, ZH>>

    Raises:
        DegenerateControl: if H has (numerically) zero asymptotic variance
    """
    pi = stationary(kernel) if pi is None else pi
    F_hat = poisson_solve(kernel, F, pi)
    H_hat = poisson_solve(kernel, H, pi)
    denominator = _covariance_form(kernel, pi, H_hat, H_hat)
    if denominator <= 1e-12:
        raise DegenerateControl(f"Control variate is degenerate (variance {denominator:.3g})")
    return _covariance_form(kernel, pi, F_hat, H_hat) / denominator


def controlled_variance(kernel: TruncatedKernel, F, H, theta: float,
                        pi: Optional[np.ndarray] = None) -> float:
    """sigma^2(F - theta H)"""
    values = _values_on(kernel, F) - theta * _values_on(kernel, H)
    return asymptotic_variance(kernel, values, pi)


@dataclass(frozen=True, eq=False)
class ErgodicReport:
    errors: np.ndarray
    ratios: np.ndarray
    fitted_ratio: float


def multiplicative_ergodic_check(P_a: np.ndarray, point: SpectralPoint, n_max: int) -> ErgodicReport:
    """
    Sup-norm errors e_n = |lambda^{-n} P_a^n 1 - f_check| for n = 1..n_max

    f_check is taken with the pair normalization, under which the limit holds.
    """
    P_a = np.asarray(P_a, dtype=float)
    v = np.ones(P_a.shape[0])
    errors = np.empty(n_max)
    for n in range(n_max):
        v = P_a @ v / point.lambda_a
        errors[n] = np.max(np.abs(v - point.f_pair))

    with np.errstate(divide='ignore', invalid='ignore'):
        ratios = np.where(errors[:-1] > 0, errors[1:] / errors[:-1], 0.0)

    tail = np.arange(n_max // 2, n_max)
    tail = tail[errors[tail] > 0]
    if tail.size >= 2:
        slope = np.polyfit(tail, np.log(errors[tail]), 1)[0]
        fitted = float(math.exp(slope))
    else:
        fitted = 0.0
    return ErgodicReport(errors=errors, ratios=ratios, fitted_ratio=fitted)


@dataclass(frozen=True, eq=False)
class TiltEvaluation:
    """Lambda and its first two derivatives at one tilt"""

    point: SpectralPoint
    Lambda: float
    dLambda: float
    d2Lambda: float


def _twisted_variance(P_a: np.ndarray, point: SpectralPoint, values: np.ndarray,
                      lattice_step: float) -> float:
    """Asymptotic variance of F under the eigenfunction twist, on the states it charges"""
    twisted, keep = eigenfunction_twist(P_a, point, lattice_step)
    return asymptotic_variance(twisted, values[keep])


def evaluate_tilt(kernel: TruncatedKernel, F, a: float, small: Optional[SmallPair] = None,
                  tol: float = DEFAULT_TOL, cross_check: bool = False,
                  pi: Optional[np.ndarray] = None) -> TiltEvaluation:
    """
    g.p.e. at tilt a, with Lambda'(a) as the twisted steady-state mean of F and
    Lambda''(a) as the twisted asymptotic variance

    Args:
        kernel: Truncated kernel
        F: Observable (or values on the states)
        a: Tilt
        small: Small pair
        tol: Eigen-residual target
        cross_check: Require agreement with the dense eigensolver
        pi: Stationary law, used at a = 0

    Returns:
        TiltEvaluation
    """
    values = _values_on(kernel, F)
    small = small or SmallPair.default(kernel.n_states)

    if a == 0:
        pi = stationary(kernel) if pi is None else pi
        ones = np.ones(kernel.n_states)
        point = SpectralPoint(a=0.0, lambda_a=1.0, f_check=ones, mu_check=pi,
                              f_pair=ones.copy(), method='exact', residual=0.0)
        return TiltEvaluation(point=point, Lambda=0.0, dLambda=float(pi @ values),
                              d2Lambda=asymptotic_variance(kernel, values, pi))

    P_a = scale_kernel(kernel, values, a)
    point = gpe(P_a, small, tol=tol, cross_check=cross_check, a=a)
    d_lambda = float(point.twisted_stationary @ values)
    d2_lambda = _twisted_variance(P_a, point, values, kernel.lattice_step)
    return TiltEvaluation(point=point, Lambda=point.Lambda_a, dLambda=d_lambda, d2Lambda=d2_lambda)


@dataclass(eq=False)
class RateProfile:
    """Tabulated Lambda, its derivatives and the dual rate function"""

    kernel: TruncatedKernel
    F: Observable
    small: SmallPair
    a_grid: np.ndarray
    Lambda: np.ndarray
    dLambda: np.ndarray
    dLambda_fd: np.ndarray
    d2Lambda: np.ndarray
    d2Lambda_fd: np.ndarray
    status: List[str]
    points: List[Optional[SpectralPoint]]
    tol: float = DEFAULT_TOL
    dual: List[Tuple[float, DualPoint]] = field(default_factory=list)

    @property
    def ok(self) -> np.ndarray:
        return np.array([status == 'ok' for status in self.status])

    @property
    def mean(self) -> float:
        """Lambda'(0): the steady-state mean of F"""
        zero = np.flatnonzero(self.a_grid == 0)
        if zero.size == 0:
            raise ValueError("Grid does not contain a = 0")
        return float(self.dLambda[zero[0]])

    @property
    def c_bar(self) -> float:
        """Lambda' at the left end of the available grid"""
        return float(self.dLambda[self.ok][0])

    def evaluate(self, a: float) -> TiltEvaluation:
        return evaluate_tilt(self.kernel, self.F, a, self.small, tol=self.tol)


def lambda_profile(kernel: TruncatedKernel, F: Observable, a_grid: Sequence[float],
                   small: Optional[SmallPair] = None, tol: float = DEFAULT_TOL,
                   threads: int = 1, cross_check: bool = False) -> RateProfile:
    """
    Lambda(a) = log lambda_a over a grid, with both derivative estimates

    Failed grid points are marked in status instead of aborting the sweep.

    Args:
        kernel: Truncated kernel
        F: Observable, normally centered
        a_grid: Increasing tilts containing 0
        small: Small pair
        tol: Eigen-residual target
        threads: Worker threads for the grid points
        cross_check: Require agreement with the dense eigensolver at each point

    Returns:
        RateProfile
    """
    grid = np.asarray(a_grid, dtype=float)
    if not np.any(grid == 0):
        raise ValueError("Tilt grid must contain a = 0")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("Tilt grid must be increasing")
    if not F.centered:
        logger.warning("Observable is not centered; Lambda'(0) will be its mean rather than 0")
    small = small or SmallPair.default(kernel.n_states)
    pi = stationary(kernel)

    def evaluate(index: int):
        a = float(grid[index])
        try:
            return evaluate_tilt(kernel, F, a, small, tol=tol, cross_check=cross_check, pi=pi), 'ok'
        except NumericalError as e:
            logger.warning(f"Tilt a={a:g} unavailable: {e}")
            return None, type(e).__name__

    results = map_replications(evaluate, len(grid), threads=threads)
    nan = float('nan')
    Lambda = np.array([r.Lambda if r else nan for r, _ in results])
    dLambda = np.array([r.dLambda if r else nan for r, _ in results])
    d2Lambda = np.array([r.d2Lambda if r else nan for r, _ in results])
    status = [s for _, s in results]
    points = [r.point if r else None for r, _ in results]

    dLambda_fd = np.gradient(Lambda, grid) if len(grid) > 1 else np.full(1, nan)
    d2Lambda_fd = np.gradient(dLambda, grid) if len(grid) > 1 else np.full(1, nan)

    failed = sum(1 for s in status if s != 'ok')
    logger.info(f"Lambda profile over {len(grid)} tilts done ({failed} unavailable)")

    return RateProfile(kernel=kernel, F=F, small=small, a_grid=grid, Lambda=Lambda,
                       dLambda=dLambda, dLambda_fd=dLambda_fd, d2Lambda=d2Lambda,
                       d2Lambda_fd=d2Lambda_fd, status=status, points=points, tol=tol)


def rate_function(profile: RateProfile, c: float, tol: float = DUAL_TOL,
                  max_steps: int = 200) -> DualPoint:
    """
    I(c) = sup_a [c a - Lambda(a)] via Lambda'(a*) = c

    The grid brackets a*; safeguarded Newton steps (with the twisted variance
    as Lambda'') refine it inside the bracket.

    Args:
        profile: Lambda profile
        c: Threshold in the range of Lambda' over the grid
        tol: Target for |Lambda'(a*) - c|
        max_steps: Refinement steps allowed

    Returns:
        DualPoint (I, a_star, sigma_a_star)
    """
    ok = profile.ok
    grid = profile.a_grid[ok]
    slopes = profile.dLambda[ok]
    if grid.size == 0:
        raise OutOfDualRange("No available grid points", c_bar=float('nan'))
    if not slopes[0] - tol <= c <= slopes[-1] + tol:
        raise OutOfDualRange(f"c={c:g} outside [{slopes[0]:.6g}, {slopes[-1]:.6g}] "
                             f"(c_bar_0 = {slopes[0]:.6g})", c_bar=float(slopes[0]))

    zero = np.flatnonzero(grid == 0)
    if zero.size and abs(c - slopes[zero[0]]) <= tol:
        sigma2 = profile.d2Lambda[ok][zero[0]]
        return DualPoint(I=0.0, a_star=0.0, sigma_a_star=math.sqrt(sigma2))

    j = int(np.searchsorted(slopes, c))
    if j < len(slopes) and slopes[j] == c:
        lo = hi = a = float(grid[j])
    else:
        j = min(max(j, 1), len(grid) - 1)
        lo, hi = float(grid[j - 1]), float(grid[j])
        weight = (c - slopes[j - 1]) / (slopes[j] - slopes[j - 1])
        a = lo + min(max(weight, 0.0), 1.0) * (hi - lo)

    evaluation = profile.evaluate(a)
    for _ in range(max_steps):
        gap = evaluation.dLambda - c
        if abs(gap) <= tol or hi - lo <= 1e-15:
            break
        if gap > 0:
            hi = a
        else:
            lo = a
        step = a - gap / evaluation.d2Lambda if evaluation.d2Lambda > 0 else float('nan')
        a = step if lo < step < hi else 0.5 * (lo + hi)
        evaluation = profile.evaluate(a)
    else:
        raise NonConvergence(f"Dual inversion at c={c:g} did not reach tolerance {tol:g}")

    if evaluation.d2Lambda <= 0:
        raise DegenerateControl(f"Lambda''({a:g}) = {evaluation.d2Lambda:.3g} is not positive")
    rate = max(0.0, c * a - evaluation.Lambda)
    return DualPoint(I=rate, a_star=a, sigma_a_star=math.sqrt(evaluation.d2Lambda))


@dataclass(frozen=True)
class BahadurRao:
    """Exact-asymptotic tail approximation and its ingredients"""

    value: float
    g_c: float
    rate: float
    a_star: float
    sigma_a_star: float
    form: str
    span: Optional[float]
    normalization: str = 'pair'


def bahadur_rao(profile: RateProfile, x0: float, c: float, n: int,
                lattice: bool = True) -> BahadurRao:
    """
    P_x{L_n(F) <= c} ~ g_c(x) / sqrt(2 pi n) e^{-n I(c)}

    g_c = f_check(a*) / (|a*| sigma_{a*}) with f_check under the pair
    normalization. The modulus |a*| keeps g_c positive for the lower tail,
    where a* < 0. When F is lattice-valued with span d, 1/|a*| is replaced by
    d e^{-|a*| eta} / (1 - e^{-|a*| d}), eta being the gap between n c and the
    largest attainable sum below it.

    Args:
        profile: Lambda profile of F
        x0: Initial lattice point
        c: Threshold below the mean
        n: Horizon
        lattice: Use the lattice form when F is lattice-valued

    Returns:
        BahadurRao
    """
    if not c < profile.mean:
        raise OutOfDualRange(f"c={c:g} is not below the mean {profile.mean:.6g}",
                             c_bar=profile.c_bar)
    dual = rate_function(profile, c)
    if not dual.a_star < 0:
        raise OutOfDualRange(f"a*={dual.a_star:g} is not negative", c_bar=profile.c_bar)

    kernel = profile.kernel
    point = profile.evaluate(dual.a_star).point
    f_x0 = float(point.f_pair[kernel.index_of(x0)])
    tilt = abs(dual.a_star)

    values = _values_on(kernel, profile.F)
    span = lattice_span(values - values[0]) if lattice else None
    if span is not None:
        base = float(values[0])
        steps_below = math.floor((n * c - n * base) / span + 1e-9)
        eta = min(max(n * c - (n * base + span * steps_below), 0.0), span)
        factor = span * math.exp(-tilt * eta) / (1.0 - math.exp(-tilt * span))
        form = 'lattice'
    else:
        factor = 1.0 / tilt
        form = 'nonlattice'

    g_c = f_x0 * factor / dual.sigma_a_star
    value = g_c / math.sqrt(2.0 * math.pi * n) * math.exp(-n * dual.I)
    return BahadurRao(value=value, g_c=g_c, rate=dual.I, a_star=dual.a_star,
                      sigma_a_star=dual.sigma_a_star, form=form, span=span)


class SweepPoint(NamedTuple):
    N: int
    lambda_a: float
    status: str
    relative_change: float


def one_sidedness_sweep(model: Model, F: Observable, a: float, N_list: Sequence[int],
                        small_state: int = 0) -> List[SweepPoint]:
    """
    g.p.e. at a fixed tilt across truncations

    For a < 0 the values settle as N grows; for a > 0 with F(x) = x they keep
    increasing, the finite shadow of lambda_a being infinite.

    Args:
        model: Chain model
        F: Observable (used uncentered unless already centered)
        a: Tilt
        N_list: Increasing truncation indices
        small_state: State carrying the default small pair

    Returns:
        One SweepPoint per N, with the relative change from the previous N
    """
    results = []
    previous = float('nan')
    for N in N_list:
        try:
            kernel = truncate_kernel(model, N)
            if a == 0:
                lam = 1.0
            else:
                P_a = scale_kernel(kernel, F, a)
                lam = gpe(P_a, SmallPair.at(kernel.n_states, small_state, small_state), a=a).lambda_a
            status = 'ok'
        except NumericalError as e:
            logger.warning(f"Truncation N={N} unavailable at a={a:g}: {e}")
            lam, status = float('nan'), type(e).__name__
        change = abs(lam - previous) / abs(previous) if np.isfinite(previous) and previous else float('nan')
        results.append(SweepPoint(N=N, lambda_a=lam, status=status, relative_change=change))
        previous = lam
    return results
