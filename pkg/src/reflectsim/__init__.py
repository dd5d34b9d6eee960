"""reflectsim: a numerical laboratory for particle dynamics confined to a
domain with elastic boundary collisions.

Core pieces: signed-distance geometry with self-validation, an event-driven
exact solver (reflection, sliding, grazing detection, Zeno guard), the
stiff-wall approximation with convergence sweeps, diagnostic tooling (energy
audit, boundary-measure extraction, weak-form residuals), and a closed-form
non-uniqueness construction with a machine-checked certificate.
"""
from .analysis import (BoundaryMeasure, EnergyReport, TestFunction,
                       compare_trajectories, default_test_functions,
                       energy_report, extract_measure,
                       extract_measure_penalty, first_grazing_time,
                       max_speed_jump, weak_form_residual)
from .counterexample import (CounterexampleParams, auxiliary_bounce,
                             choose_scaling, counterexample_force,
                             counterexample_solution, default_bump,
                             make_params, verify_counterexample)
from .exact import (DenseSegment, Event, SolverOptions, SystemState,
                    Trajectory, locate_crossing, reflect, simulate_exact,
                    sliding_density)
from .forces import (ConstantGravity, ForceField, PairwiseRepulsion,
                     PairwiseSpring, TimeScalar, Zero, estimate_lipschitz,
                     eval_force, force_from_config)
from .geometry import (Annulus, Ball, DomainGeometry, GeometryReport,
                       HalfSpaceTruncated, ImplicitSurface, Interval,
                       domain_from_config, implicit_ellipse, validate_geometry)
from .penalty import (PenaltyRun, SweepReport, convergence_sweep, k_min,
                      penalty_force, simulate_penalty)

__version__ = "0.1.0"

__all__ = [
    "Annulus", "Ball", "BoundaryMeasure", "ConstantGravity",
    "CounterexampleParams", "DenseSegment", "DomainGeometry", "EnergyReport",
    "Event", "ForceField", "GeometryReport", "HalfSpaceTruncated",
    "ImplicitSurface", "Interval", "PairwiseRepulsion", "PairwiseSpring",
    "PenaltyRun", "SolverOptions", "SweepReport", "SystemState",
    "TestFunction", "TimeScalar", "Trajectory", "Zero", "auxiliary_bounce",
    "choose_scaling", "compare_trajectories", "convergence_sweep",
    "counterexample_force", "counterexample_solution", "default_bump",
    "default_test_functions", "domain_from_config", "energy_report",
    "estimate_lipschitz", "eval_force", "extract_measure",
    "extract_measure_penalty", "first_grazing_time", "force_from_config",
    "implicit_ellipse", "k_min", "locate_crossing", "make_params", "max_speed_jump",
    "penalty_force", "reflect", "simulate_exact", "simulate_penalty",
    "sliding_density", "validate_geometry", "verify_counterexample",
    "weak_form_residual",
]
