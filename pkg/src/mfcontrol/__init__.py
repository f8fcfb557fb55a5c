"""Control hierarchy for mean field opinion dynamics.

A library and CLI providing three controllers for nonlocal kinetic agent
dynamics on [-L, L] (instantaneous binary feedback, finite-horizon binary
feedback from dynamic programming, and the full mean field optimal control
from a forward-backward sweep), plus the two engines they run on: a
binary-collision Monte Carlo solver and a finite-volume drift-diffusion
solver.
"""

from .model import (
    ConfigError,
    ControlField,
    ControlPenalty,
    CostBreakdown,
    DensityField,
    Grid1D,
    InitialDataSpec,
    InteractionKernel,
    MeshMismatchError,
    NumericalError,
    QUADRATIC_PENALTY,
    SimulationConfig,
    build_initial_density,
    cost_from_particles,
    cost_functional,
    kernel_eval,
    mean_field_drift,
)
from .binary_control import (
    ControlSet,
    FeedbackTable,
    Grid2D,
    ICMode,
    ValueFunction,
    binary_stage_cost,
    feedback_lookup,
    hjb_solve,
    instantaneous_control,
    load_feedback_table,
    save_feedback_table,
)
from .fokker_planck import cc_flux, cc_weights, fp_solve, fp_step
from .adjoint import AdjointField, adjoint_solve, adjoint_step, nonlocal_terms
from .kinetic_mc import (
    FeedbackController,
    InstantaneousController,
    NoControl,
    ParticleEnsemble,
    ScalingParams,
    binary_interact,
    boundary_handle,
    iround,
    mc_run,
    mc_step,
)
from .optimizer import SweepConfig, SweepReport, control_update, sweep
from .presets import EvaluationResult, Preset, evaluate_method, get_preset

__version__ = "0.1.0"
