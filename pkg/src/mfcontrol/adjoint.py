"""Backward solver for the costate of the mean field control problem.

The costate psi solves, backward from psi(x, T) = 0,

    -d/dt psi = |x - x_d|^2 / 2 + gamma Psi(f) + (f + c[mu]) d/dx psi
                + sigma d2/dx2 psi + r[mu, psi]

where the nonlocal terms are the drift correction
c[mu](x) = int P(x, y)(y - x) mu(y) dy (the mean field force itself) and
the reaction r[mu, psi](x) = -int P(y, x) psi'(y) (y - x) mu(y) dy.  These
are the exact functional derivatives of the Lagrangian of the constrained
problem; with them psi is the nonnegative cost-to-go multiplier and the
optimal control satisfies gamma dPsi(f) = -d/dx psi.  Dropping the
interaction (P = 0) reduces the system to the classical tracking HJB
equation.

Time stepping is explicit first order with all data frozen at the upper
time level; advection is upwinded against the local velocity, diffusion is
the centered three-point Laplacian with a one-sided (zero-gradient)
closure at the walls, and psi'(y) inside the integral comes from central
differences.  The nonlocal integrals are midpoint sums by default, with a
Monte Carlo estimator (samples drawn from mu) kept as an option.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rng_streams
from .fokker_planck import cfl_max_dt
from .model import (
    ConfigError,
    ControlField,
    DensityField,
    Grid1D,
    InteractionKernel,
    NumericalError,
    QUADRATIC_PENALTY,
    SimulationConfig,
    kernel_eval,
)

__all__ = [
    "AdjointField",
    "NonlocalTerms",
    "grid_gradient",
    "nonlocal_terms",
    "adjoint_step",
    "adjoint_solve",
]


@dataclass
class AdjointField:
    """Costate slices psi(x_i, t_m) for m = 0..M; the last slice is zero."""

    grid: Grid1D
    dt: float
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))

    def validate(self) -> None:
        if np.any(self.values[-1] != 0.0):
            raise NumericalError("terminal costate slice must be identically zero")
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("costate contains non-finite values")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.dt


@dataclass
class NonlocalTerms:
    """Per-cell drift correction and reaction integrals."""

    drift_correction: np.ndarray
    reaction: np.ndarray


def grid_gradient(values: np.ndarray, dx: float) -> np.ndarray:
    """Central differences inside, one-sided at the two boundary cells."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * dx)
    out[0] = (v[1] - v[0]) / dx
    out[-1] = (v[-1] - v[-2]) / dx
    return out


def _quadrature_matrices(kernel: InteractionKernel, grid: Grid1D):
    x = grid.centers
    # A[i, j] = P(x_i, y_j)(y_j - x_i) dx ; C[i, j] = P(y_j, x_i)(y_j - x_i) dx
    diff = x[None, :] - x[:, None]
    A = kernel_eval(kernel, x[:, None], x[None, :]) * diff * grid.dx
    C = kernel_eval(kernel, x[None, :], x[:, None]) * diff * grid.dx
    return A, C


def nonlocal_terms(psi: np.ndarray, mu: np.ndarray, grid: Grid1D,
                   kernel: InteractionKernel, mode: str = "quadrature",
                   m_samples: int = 10_000,
                   gen: np.random.Generator | None = None,
                   _matrices=None) -> NonlocalTerms:
    """Evaluate both nonlocal integrals against the density mu.

    Returns c[mu] = int P(x, y)(y - x) mu(y) dy and
    r[mu, psi] = -int P(y, x) psi'(y)(y - x) mu(y) dy per cell.

    mode "quadrature": midpoint sums over cells (deterministic, second
    order).  mode "mc": m_samples draws from mu by inverse CDF; psi'(y) at
    the sample points is linear interpolation of the grid gradient.
    """
    psi = np.asarray(psi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    dpsi = grid_gradient(psi, grid.dx)
    if mode == "quadrature":
        if _matrices is None:
            _matrices = _quadrature_matrices(kernel, grid)
        A, C = _matrices
        drift = A @ mu
        reaction = -(C @ (dpsi * mu))
        return NonlocalTerms(drift_correction=drift, reaction=reaction)
    if mode != "mc":
        raise ConfigError(f"unknown nonlocal mode {mode!r}")
    if m_samples < 1:
        raise ConfigError("Monte Carlo nonlocal integrals need at least one sample")
    if gen is None:
        gen = np.random.default_rng(0)
    from .kinetic_mc import sample_from_density  # runtime import avoids a cycle

    y = sample_from_density(mu, grid, m_samples, gen)
    x = grid.centers
    diff = y[None, :] - x[:, None]
    p_xy = kernel_eval(kernel, x[:, None], y[None, :])
    drift = np.mean(p_xy * diff, axis=1)
    dpsi_y = np.interp(y, x, dpsi)
    p_yx = kernel_eval(kernel, y[None, :], x[:, None])
    reaction = -np.mean(p_yx * dpsi_y[None, :] * diff, axis=1)
    return NonlocalTerms(drift_correction=drift, reaction=reaction)


def _upwind_transport(psi: np.ndarray, velocity: np.ndarray, dx: float) -> np.ndarray:
    """velocity * d/dx psi, differenced against the velocity sign.

    The forward difference serves where v > 0, the backward one where
    v < 0; at a wall whose upwind neighbor is missing the available
    one-sided difference is used instead.
    """
    fwd = np.empty_like(psi)
    bwd = np.empty_like(psi)
    fwd[:-1] = (psi[1:] - psi[:-1]) / dx
    fwd[-1] = (psi[-1] - psi[-2]) / dx
    bwd[1:] = (psi[1:] - psi[:-1]) / dx
    bwd[0] = (psi[1] - psi[0]) / dx
    return np.maximum(velocity, 0.0) * fwd + np.minimum(velocity, 0.0) * bwd


def _laplacian(psi: np.ndarray, dx: float) -> np.ndarray:
    """Three-point Laplacian; zero-gradient one-sided closure at the walls."""
    out = np.empty_like(psi)
    out[1:-1] = (psi[2:] - 2.0 * psi[1:-1] + psi[:-2]) / (dx * dx)
    out[0] = (psi[1] - psi[0]) / (dx * dx)
    out[-1] = (psi[-2] - psi[-1]) / (dx * dx)
    return out


def adjoint_step(psi_next: np.ndarray, mu_next: np.ndarray, f_next: np.ndarray,
                 config: SimulationConfig, kernel: InteractionKernel,
                 mode: str = "quadrature", grid: Grid1D | None = None,
                 gen: np.random.Generator | None = None,
                 _matrices=None):
    """One backward step; returns (psi at the lower level, max |rhs|)."""
    if grid is None:
        grid = Grid1D.from_config(config)
    psi_next = np.asarray(psi_next, dtype=float)
    f_next = np.asarray(f_next, dtype=float)
    terms = nonlocal_terms(psi_next, mu_next, grid, kernel, mode,
                           config.m_samples, gen, _matrices)
    velocity = f_next + terms.drift_correction
    vmax = float(np.max(np.abs(velocity)))
    dt_max = cfl_max_dt(vmax, config.sigma, grid.dx)
    if config.dt > dt_max * (1.0 + 1e-12):
        raise NumericalError(
            f"CFL violation in the backward solve: dt = {config.dt:g} exceeds "
            f"{dt_max:g} for max velocity {vmax:g}"
        )
    x = grid.centers
    penalty = QUADRATIC_PENALTY
    source = 0.5 * (x - config.x_d) ** 2 + config.gamma * penalty.psi(f_next)
    rhs = (source + _upwind_transport(psi_next, velocity, grid.dx)
           + config.sigma * _laplacian(psi_next, grid.dx) + terms.reaction)
    return psi_next + config.dt * rhs, float(np.max(np.abs(rhs)))


def adjoint_solve(mu_traj: DensityField, f: ControlField, config: SimulationConfig,
                  kernel: InteractionKernel, mode: str = "quadrature") -> AdjointField:
    """Integrate the costate backward over the whole horizon.

    mu must carry all M+1 slices.  The control slice for the final interval
    reuses f at t_{M-1} (the control mesh stops there).  In Monte Carlo
    mode the slice-m draw comes from the stream (seed, ADJOINT_TAG + m).
    """
    M = config.n_steps
    grid = mu_traj.grid
    if mu_traj.values.shape[0] != M + 1:
        raise NumericalError(
            f"adjoint solve needs the full trajectory ({M + 1} slices), "
            f"got {mu_traj.values.shape[0]}"
        )
    if f.n_steps != M:
        raise NumericalError(f"control field has {f.n_steps} slices, expected {M}")
    matrices = _quadrature_matrices(kernel, grid) if mode == "quadrature" else None
    out = np.zeros((M + 1, grid.N))
    bound = 0.0
    for m in range(M - 1, -1, -1):
        f_next = f.values[min(m + 1, M - 1)]
        gen = (rng_streams.stream(config.seed, rng_streams.ADJOINT_TAG + m)
               if mode == "mc" else None)
        out[m], rhs_max = adjoint_step(out[m + 1], mu_traj.values[m + 1], f_next,
                                       config, kernel, mode, grid, gen, matrices)
        # triangle-inequality envelope: |psi^m| <= sum_k dt max|rhs^k|
        bound += config.dt * rhs_max
        if np.max(np.abs(out[m])) > bound * (1.0 + 1e-9) + 1e-12:
            raise NumericalError("costate escaped its accumulation bound")
    field = AdjointField(grid=grid, dt=config.dt, values=out)
    field.validate()
    return field
