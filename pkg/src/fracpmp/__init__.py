"""Fractional operators with general analytic kernels, their solvers and optimality checks."""

from .errors import (ConvergenceError, DomainFault, ExprSyntaxError, FracError, GammaOverflowError,
                     NumericalError, SingularSystemError, ValidationError)
from .grid import Grid, SampledFn, sample
from .kernel import AnalyticKernel, dual_kernel, exp_kernel, make_kernel, rl_kernel
from .fracops import (build_plan, caputo_derivative, direct_integral, duality_residual,
                      gronwall_bound, ibp_residual, rl_derivative, verify_gronwall)
from .fde import ControlSystem, control_system, solve_adjoint, solve_forward, solve_variational
from .pmp import Candidate, OCProblem, check_pmp, hamiltonian, objective, oc_problem, solve_ocp, weight_w
from .variational import (CoVProblem, IsoProblem, cov_problem, el_residual, pmp_reduction_residual,
                          solve_isoperimetric)

__version__ = "0.1.0"
