"""Mean field optimal control by forward-backward sweeping.

Starting from an initial control guess, alternate a forward density solve,
a backward costate solve and the first-order update
gamma dPsi(f) = -d/dx psi until the control increment (discrete L2 norm
weighted by dx dt) drops below tolerance.  An under-relaxation factor
damps the update; the plain iteration can overshoot for small penalties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .adjoint import AdjointField, adjoint_solve, grid_gradient
from .fokker_planck import fp_solve
from .model import (
    ConfigError,
    ControlField,
    ControlPenalty,
    Grid1D,
    InteractionKernel,
    QUADRATIC_PENALTY,
    SimulationConfig,
    cost_functional,
)

__all__ = [
    "SweepConfig",
    "SweepReport",
    "weighted_norm",
    "control_update",
    "sweep",
]


@dataclass(frozen=True)
class SweepConfig:
    """Stopping tolerance, iteration cap and update damping."""

    tol: float = 1e-5
    max_iter: int = 500
    relaxation: float = 1.0

    def __post_init__(self) -> None:
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if not 0.0 < self.relaxation <= 1.0:
            raise ConfigError("relaxation must lie in (0, 1]")


@dataclass
class SweepReport:
    """Iteration count, cost history, final increment norm, convergence flag."""

    iterations: int
    costs: list
    increment_norms: list
    converged: bool

    @property
    def final_increment(self) -> float:
        return self.increment_norms[-1] if self.increment_norms else float("nan")


def weighted_norm(values: np.ndarray, dx: float, dt: float) -> float:
    """Discrete L2 norm over space-time with cell weights dx dt."""
    return float(np.sqrt(dx * dt * np.sum(np.asarray(values) ** 2)))


def control_update(psi: AdjointField, config: SimulationConfig,
                   penalty: ControlPenalty = QUADRATIC_PENALTY,
                   f_old: ControlField | None = None,
                   relaxation: float = 1.0) -> ControlField:
    """Control from the optimality condition dPsi(f) = -psi_x / gamma.

    psi is the nonnegative cost-to-go multiplier, so the optimal control
    descends its spatial gradient.  The gradient uses central differences
    (one-sided at the two boundary cells); a general penalty is inverted
    pointwise.  With ``f_old`` given, the result is blended:
    f_new = (1 - relaxation) f_old + relaxation * update.
    """
    M = psi.values.shape[0] - 1
    grad = np.empty((M, psi.grid.N))
    for m in range(M):
        grad[m] = grid_gradient(psi.values[m], psi.grid.dx)
    update = penalty.invert_dpsi(-grad / config.gamma)
    if f_old is not None:
        update = (1.0 - relaxation) * f_old.values + relaxation * update
    return ControlField(grid=psi.grid, dt=psi.dt, values=update)


def sweep(mu0: np.ndarray, f0: ControlField | None, config: SimulationConfig,
          kernel: InteractionKernel, sweep_cfg: SweepConfig = SweepConfig(),
          penalty: ControlPenalty = QUADRATIC_PENALTY,
          adjoint_mode: str = "quadrature", diagnostics=None):
    """Iterate forward / backward / update until the control settles.

    Returns (density, control, costate, report) with the three fields
    recomputed consistently for the final control.  Non-convergence within
    max_iter is reported through the flag, not raised.  ``diagnostics``
    may be a writable text stream receiving one JSON line per iteration.
    """
    grid = Grid1D.from_config(config)
    M = config.n_steps
    f = f0 if f0 is not None else ControlField.zeros(grid, M, config.dt)
    costs = []
    norms = []
    converged = False
    iterations = 0
    for it in range(1, sweep_cfg.max_iter + 1):
        mu = fp_solve(mu0, f, kernel, config)
        psi = adjoint_solve(mu, f, config, kernel, mode=adjoint_mode)
        f_new = control_update(psi, config, penalty, f_old=f,
                               relaxation=sweep_cfg.relaxation)
        cost = cost_functional(mu, f, config, penalty)
        increment = weighted_norm(f_new.values - f.values, grid.dx, config.dt)
        costs.append(cost)
        norms.append(increment)
        iterations = it
        if diagnostics is not None:
            diagnostics.write(json.dumps({
                "iter": it, "J": cost.J, "state_term": cost.state_term,
                "control_term": cost.control_term, "increment_norm": increment,
            }) + "\n")
        f = f_new
        if increment <= sweep_cfg.tol:
            converged = True
            break
    mu = fp_solve(mu0, f, kernel, config)
    psi = adjoint_solve(mu, f, config, kernel, mode=adjoint_mode)
    costs.append(cost_functional(mu, f, config, penalty))
    report = SweepReport(iterations=iterations, costs=costs,
                         increment_norms=norms, converged=converged)
    return mu, f, psi, report
