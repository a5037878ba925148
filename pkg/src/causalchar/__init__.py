"""Method-of-characteristics solvers for linear and causal quasi-linear
transport problems on 2D domains with an interior stop set."""
from .characteristics import IntegratorConfig
from .errors import SolverError
from .geometry import DomainSpec, ellipse, unit_disk
from .grid import ScalarGridField, make_grid
from .linear_solver import compute_self_map_bounds, solve_linear
from .problems import PRESETS, Problem, load_preset
from .quasilinear import StripePlan, global_picard_solve, solve_quasilinear

__version__ = "0.1.0"

__all__ = [
    "DomainSpec",
    "IntegratorConfig",
    "PRESETS",
    "Problem",
    "ScalarGridField",
    "SolverError",
    "StripePlan",
    "compute_self_map_bounds",
    "ellipse",
    "global_picard_solve",
    "load_preset",
    "make_grid",
    "solve_linear",
    "solve_quasilinear",
    "unit_disk",
]
