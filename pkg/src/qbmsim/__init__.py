"""Non-Markovian quantum Brownian motion of two coupled oscillators.

Two oscillators ``a1, a2`` couple to a zero-temperature bath through
``L = a1 + a2``. The package computes the memory coefficient F(t), evolves
states with the time-local master equation, with linear and nonlinear
quantum state diffusion, and in the Gaussian covariance picture, and
evaluates entanglement, coherence and energy along the way.
"""

__version__ = "0.1.0"

from .bath import BathSpec, CorrelationKernel, KernelFamily, kernel_on_grid, sample_noise
from .coefficients import CoefficientSpec, CoefficientTrajectory, analytic_F, solve_F_general
from .config import ExperimentConfig, load_config
from .control import Constant, Piecewise, Sinusoid, evaluate, sweep_drive_frequency
from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    DegenerateRootsError,
    DomainError,
    InvertedPotentialError,
    KernelValidityError,
    NumericalError,
    PhysicalityError,
    QBMError,
    RunError,
    TruncationError,
    TruncationWarning,
)
from .gaussian import CovarianceMatrix, cm_two_mode_squeezed, log_negativity_cm, propagate_cm
from .grid import TimeGrid
from .hilbert import Cat, Coherent, Fock, TruncationSpec, TwoModeSqueezed, prepare_state
from .master import MasterRun, integrate_master, me_rhs
from .observables import l1_coherence, log_negativity_fock, mean_energy, purity, trace_distance
from .qsd import EnsembleResult, QSDProblem, run_ensemble, simulate_ensemble
