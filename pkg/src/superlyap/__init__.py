"""Global super-Lyapunov function for a planar SDE with quadratic drift.

The system is ``dX = (X^2 - Y^2) dt + sqrt(2 sx) dW1``,
``dY = 2XY dt + sqrt(2 sy) dW2``.  Its deterministic part blows up along the
positive x-axis, yet the noisy system is stable; the modules here build a
Lyapunov function ``V`` with ``L V <= -M V^gamma + b`` (``gamma > 1``), check
that inequality numerically and probe its consequences by simulation.
"""

from .bvp import BvpError, BvpSolution, solve_g_bvp
from .control import ControlSchedule, gram_matrix, integrate_controlled, synthesize
from .ergodics import OccupationHistogram, comparison_check, invariant_histogram, k_t, minorization_probe, moment_bound_check, tv_decay
from .estimators import OccupationDensity, SuperLyapunovFunction
from .generator import DIFFUSIVE_A, FULL_L, TRANSPORT_T, OperatorKind, apply, margin
from .geometry import BlowUp, Point, Region, ScalingMap, contains, det_flow, orbit_circle, return_time, scale, to_reference
from .jets import EvalJet
from .lyapunov import GlobalLyapunov, InfeasibleError, LyapunovSpec, choose_constants, global_V, mollifier, patch_weights, v1, v2, v3
from .sde import Ensemble, IntegratorConfig, ModelParams, exit_time_mc, run_ensemble, step_full, step_z_exact
from .verifier import VerificationReport, build_grid, certify, check_seams

__version__ = "0.1.0"

__all__ = [
    "BlowUp", "BvpError", "BvpSolution", "ControlSchedule", "DIFFUSIVE_A", "Ensemble", "EvalJet", "FULL_L",
    "GlobalLyapunov", "InfeasibleError", "IntegratorConfig", "LyapunovSpec", "ModelParams", "OccupationDensity",
    "OccupationHistogram", "OperatorKind", "Point", "Region", "ScalingMap", "SuperLyapunovFunction", "TRANSPORT_T",
    "VerificationReport", "apply", "build_grid", "certify", "check_seams", "choose_constants", "comparison_check",
    "contains", "det_flow", "exit_time_mc", "global_V", "gram_matrix", "integrate_controlled", "invariant_histogram",
    "k_t", "margin", "minorization_probe", "mollifier", "moment_bound_check", "orbit_circle", "patch_weights",
    "return_time", "run_ensemble", "scale", "solve_g_bvp", "step_full", "step_z_exact", "synthesize",
    "to_reference", "tv_decay", "v1", "v2", "v3",
]
