"""Lambda-type quantum emitter coupled to a mechanical mode.

Open-system simulation of a three-level emitter whose excited state is
displaced by a vibrating ribbon: EIT cooling, multiple-EIT absorption and
the phonon-sideband frequency comb in resonance fluorescence, plus the
near-field coupling estimate for an emitter above a dielectric substrate.
"""
__version__ = "0.1.0"

from .quantum_core import HilbertSpace, TruncationError, thermal_state, validate_density_matrix
from .model import SystemParams, hamiltonian, liouvillian, polaron_transform
from .solvers import (
    ConvergenceError,
    MultiplicityError,
    SolverError,
    StiffnessError,
    converge_cutoff,
    evolve,
    evolve_stages,
    expectation,
    spectral_gap,
    steady_state,
)
from .spectra import (
    cooling_map,
    eit_absorption_analytic,
    eit_absorption_numeric,
    rfs,
    two_time_correlation,
)
from .device import DeviceParams, coupling_rate

__all__ = [
    "HilbertSpace",
    "TruncationError",
    "thermal_state",
    "validate_density_matrix",
    "SystemParams",
    "hamiltonian",
    "liouvillian",
    "polaron_transform",
    "SolverError",
    "MultiplicityError",
    "StiffnessError",
    "ConvergenceError",
    "steady_state",
    "evolve",
    "evolve_stages",
    "expectation",
    "spectral_gap",
    "converge_cutoff",
    "eit_absorption_numeric",
    "eit_absorption_analytic",
    "two_time_correlation",
    "rfs",
    "cooling_map",
    "DeviceParams",
    "coupling_rate",
]
