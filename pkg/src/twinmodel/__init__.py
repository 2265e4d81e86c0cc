"""Twin-model inference of unknown flux and state-equation closures with discrete adjoints.

Gray-box solver output is matched by an open-box twin model whose closure
(a sigmoid-basis flux or an RBF x sigmoid equation of state) is trained by
projected L-BFGS, and the twin's adjoint then supplies gradients the gray-box
solver cannot.
"""

from .adjoint import (GradientReport, ObjectiveSpec, adjoint_gradient_wrt_control,
                      adjoint_gradient_wrt_geometry, adjoint_gradient_wrt_params)
from .eos import ParamEos, ReferenceEos, StateHull, build_param_eos, eos_pressure
from .fields import Grid1D, SpaceTimeField, SteadyField, excited_range, mismatch_spacetime
from .flux import BuckleyLeverettFlux, SigmoidFluxBasis, TwinFlux
from .fv1d import ControlField, SolverConfig, run_forward, solve_spacetime
from .inference import InferenceProblem, WeightSet, calibrate_weights, recovery_report, train
from .nozzle import BsplineArea, FlowBc, NozzleConfig, mass_flux, solve_steady

__version__ = "0.1.0"

__all__ = [
    "BsplineArea", "BuckleyLeverettFlux", "ControlField", "FlowBc", "GradientReport", "Grid1D",
    "InferenceProblem", "NozzleConfig", "ObjectiveSpec", "ParamEos", "ReferenceEos",
    "SigmoidFluxBasis", "SolverConfig", "SpaceTimeField", "StateHull", "SteadyField", "TwinFlux",
    "WeightSet", "adjoint_gradient_wrt_control", "adjoint_gradient_wrt_geometry",
    "adjoint_gradient_wrt_params", "build_param_eos", "calibrate_weights", "eos_pressure",
    "excited_range", "mass_flux", "mismatch_spacetime", "recovery_report", "run_forward",
    "solve_spacetime", "solve_steady", "train",
]
