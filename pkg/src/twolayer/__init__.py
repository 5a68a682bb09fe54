"""Steady periodic interfacial waves between two constant-vorticity layers."""
from .continuation import (Branch, ContinuationPolicy, TerminationReport, classify_termination,
                           continue_to_amplitude, extend_branch, load_branch, start_branch, sweep)
from .errors import (Inadmissible, InsufficientEvidence, NonConvergence, OnInterface, OutOfDomain,
                     PoleProximity, SingularJacobian, TwoLayerError)
from .fields import (FieldGrid, StagnationPoint, invariants, pde_residual, stagnation_points,
                     stream_function_grid, streamlines, velocity_at)
from .model import critical_speed, dispersion, linear_guess, shear_solution
from .params import PhysParams
from .residual import ClosureSpec, ResidualSystem, admissibility, assemble_residual
from .solver import NewtonOptions, NewtonResult, fd_jacobian, newton_solve
from .state import CollocationGrid, SolutionVector, amplitude, decay_metric, evaluate, resample

__version__ = "0.1.0"

__all__ = [
    "Branch", "ContinuationPolicy", "TerminationReport", "classify_termination",
    "continue_to_amplitude", "extend_branch", "load_branch", "start_branch", "sweep",
    "Inadmissible", "InsufficientEvidence", "NonConvergence", "OnInterface", "OutOfDomain",
    "PoleProximity", "SingularJacobian", "TwoLayerError",
    "FieldGrid", "StagnationPoint", "invariants", "pde_residual", "stagnation_points",
    "stream_function_grid", "streamlines", "velocity_at",
    "critical_speed", "dispersion", "linear_guess", "shear_solution",
    "PhysParams", "ClosureSpec", "ResidualSystem", "admissibility", "assemble_residual",
    "NewtonOptions", "NewtonResult", "fd_jacobian", "newton_solve",
    "CollocationGrid", "SolutionVector", "amplitude", "decay_metric", "evaluate", "resample",
]
