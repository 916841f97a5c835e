"""
LDP Toolkit Core Package
"""

from .chain import ChainSpec, FiniteChain, IncrementLaw, simulate_path
from .lyapunov import Observable, running_estimates
from .spectral import TruncatedKernel, gpe, lambda_profile, rate_function, truncate_kernel
from .ldp_lab import TailQuery, exact_tail_dp, mc_tail, reproduce_figure
from .output_generator import OutputGenerator

__all__ = [
    'ChainSpec',
    'FiniteChain',
    'IncrementLaw',
    'simulate_path',
    'Observable',
    'running_estimates',
    'TruncatedKernel',
    'gpe',
    'lambda_profile',
    'rate_function',
    'truncate_kernel',
    'TailQuery',
    'exact_tail_dp',
    'mc_tail',
    'reproduce_figure',
    'OutputGenerator'
]
