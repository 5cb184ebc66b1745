"""Adiabatic control through conical eigenvalue intersections of H(u) = H0 + u1 H1 + u2 H2."""

__version__ = "0.1.0"

from .model import (ModelError, OperatorTriple, ControlPoint, assemble, build_galerkin, builtin, load_model,
                    resolve, save_model)
from .spectral import Band, Disc, Rect, certify_band, eigensystem, projector, track_along
from .conical import (ConicityMatrix, Intersection, conicity_matrix, is_conical, locate_intersection,
                      stability_probe)
from .nonmixing import CurveSegment, NonMixingField, exit_curve, integral_curve, integrate_to_singularity, two_jet
from .planner import ControlPath, SpreadTarget, plan, splitting_angles, vertexless_variants
from .propagate import (QuantumState, SimulationResult, propagate_adiabatic, propagate_effective,
                        propagate_full)
from .experiment import AcceptanceConfig, ScalingReport, SweepSpec, acceptance_suite, fit_slope, sweep

__all__ = [
    "ModelError", "OperatorTriple", "ControlPoint", "assemble", "build_galerkin", "builtin", "load_model",
    "resolve", "save_model", "Band", "Disc", "Rect", "certify_band", "eigensystem", "projector", "track_along",
    "ConicityMatrix", "Intersection", "conicity_matrix", "is_conical", "locate_intersection", "stability_probe",
    "CurveSegment", "NonMixingField", "exit_curve", "integral_curve", "integrate_to_singularity", "two_jet",
    "ControlPath", "SpreadTarget", "plan", "splitting_angles", "vertexless_variants", "QuantumState",
    "SimulationResult", "propagate_adiabatic", "propagate_effective", "propagate_full", "AcceptanceConfig",
    "ScalingReport", "SweepSpec", "acceptance_suite", "fit_slope", "sweep",
]
