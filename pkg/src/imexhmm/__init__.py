"""FE-HMM spatial discretization with IMEX midpoint time stepping for
strongly damped semilinear wave equations, plus convergence-study tooling."""

from .fe import FEFunction, FESpace, SolverError
from .integrators import SCHEMES, State, SystemOperators, integrate
from .mesh import Mesh, build_uniform_quad_mesh
from .micro import CellConfig, TensorCache, homogenized_tensor_exact, homogenized_tensor_hmm
from .model import DEFAULT_PROBLEM, ProblemSpec
from .study import StudyConfig, StudyResult, run_study

__all__ = [
    "CellConfig", "DEFAULT_PROBLEM", "FEFunction", "FESpace", "Mesh", "ProblemSpec", "SCHEMES",
    "SolverError", "State", "StudyConfig", "StudyResult", "SystemOperators", "TensorCache",
    "build_uniform_quad_mesh", "homogenized_tensor_exact", "homogenized_tensor_hmm", "integrate", "run_study",
]
