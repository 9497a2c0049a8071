"""Empirical-likelihood weighting of minimum-discrepancy SEM estimators."""
from . import asymptotics, constraints, el_core, mdf_fit, numkit, sem_model, simulation
from .constraints import SideInfoSpec, independence_constraints, median_constraints
from .el_core import ConstraintMatrix, ELSolution, SolverOptions, solve_dual
from .errors import (ConfigError, DegenerateConstraints, ElsemError, IllConditioned,
                     MaxIterations, NotInHull, NotLocallyIdentified, SingularA,
                     StudyDegenerate)
from .mdf_fit import DiscrepancyKind, FitResult, f_gls, f_ml, fit_el, fit_mdf, fit_plain
from .sem_model import (DataMatrix, SemParams, SemSpec, jacobian_delta, sem22_params,
                        sem22_spec, structured_sigma)
from .simulation import McConfig, McReport, run_study

__all__ = [
    "asymptotics", "constraints", "el_core", "mdf_fit", "numkit", "sem_model", "simulation",
    "SideInfoSpec", "independence_constraints", "median_constraints",
    "ConstraintMatrix", "ELSolution", "SolverOptions", "solve_dual",
    "ConfigError", "DegenerateConstraints", "ElsemError", "IllConditioned", "MaxIterations",
    "NotInHull", "NotLocallyIdentified", "SingularA", "StudyDegenerate",
    "DiscrepancyKind", "FitResult", "f_gls", "f_ml", "fit_el", "fit_mdf", "fit_plain",
    "DataMatrix", "SemParams", "SemSpec", "jacobian_delta", "sem22_params", "sem22_spec",
    "structured_sigma", "McConfig", "McReport", "run_study",
]

__version__ = "0.1.0"
