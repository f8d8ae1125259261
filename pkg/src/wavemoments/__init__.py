"""Moment formulas and Monte Carlo checks for the 1-D stochastic wave equation."""

from .kernels import WaveParams, calH, kernel_K, kernel_L_n, wave_kernel
from .closed_moments import (
    Constant,
    ConstantDensity,
    Dirac,
    ExpDecay,
    ExpDecayDensity,
    InitialData,
    Linear,
    LipschitzEnvelope,
    PowerSingular,
    QuasiLinear,
    Zero,
    second_moment,
    two_point,
)

__version__ = "0.1.0"
