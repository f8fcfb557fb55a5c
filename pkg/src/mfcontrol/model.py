"""Problem definitions shared by every solver.

Interaction kernels, the control penalty, the spatial grid, density /
control fields, initial data and the cost functional.  Everything here is
a pure function of immutable inputs, so all of it is safe to call
concurrently.

State space is the interval [-L, L].  Densities are represented by their
cell averages on a uniform cell-centered grid, so that the finite-volume
mass identity dx * sum(mu) = 1 is exact and testable.  All integrals in x
use the midpoint rule over cells (second order, consistent with the
finite-volume representation).  The cost integral in time uses the
left-endpoint rectangle rule with step dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ConfigError",
    "MeshMismatchError",
    "NumericalError",
    "SimulationConfig",
    "InteractionKernel",
    "ControlPenalty",
    "QUADRATIC_PENALTY",
    "Grid1D",
    "DensityField",
    "ControlField",
    "InitialDataSpec",
    "CostBreakdown",
    "kernel_eval",
    "mean_field_drift",
    "interaction_matrix",
    "build_initial_density",
    "cost_functional",
    "cost_from_particles",
]

MASS_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid configuration value or violated invariant."""


class MeshMismatchError(ValueError):
    """Fields defined on incompatible space-time meshes."""


class NumericalError(RuntimeError):
    """Numerical failure: CFL violation, Newton breakdown, non-convergence."""


def _check_integer_ratio(num: float, den: float, what: str) -> int:
    ratio = num / den
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise ConfigError(f"{what} must be an integer (got {ratio!r})")
    return n


@dataclass(frozen=True)
class SimulationConfig:
    """Scalar problem and discretization parameters.

    sigma     -- diffusion coefficient, >= 0
    gamma     -- control penalty weight, > 0
    x_d       -- desired state
    T         -- time horizon
    dt        -- time step; T/dt must be an integer
    L         -- domain half width, state space is [-L, L]
    dx        -- cell width; 2L/dx must be an integer
    seed      -- RNG seed for every stochastic component
    n_samples -- Monte Carlo particle count
    m_samples -- sample count for the Monte Carlo nonlocal integrals
    """

    sigma: float = 0.01
    gamma: float = 0.5
    x_d: float = -0.5
    T: float = 8.0
    dt: float = 2.5e-3
    L: float = 1.0
    dx: float = 2.5e-2
    seed: int = 0
    n_samples: int = 500_000
    m_samples: int = 10_000

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.dx <= 0:
            raise ConfigError("dx must be positive")
        if self.T <= 0:
            raise ConfigError("T must be positive")
        if self.L <= 0:
            raise ConfigError("L must be positive")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")
        _check_integer_ratio(self.T, self.dt, "T/dt")
        _check_integer_ratio(2 * self.L, self.dx, "2L/dx")

    @property
    def n_steps(self) -> int:
        return _check_integer_ratio(self.T, self.dt, "T/dt")

    @property
    def n_cells(self) -> int:
        return _check_integer_ratio(2 * self.L, self.dx, "2L/dx")

    def with_overrides(self, **kwargs) -> "SimulationConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class InteractionKernel:
    """Pairwise communication strength P(x, y).

    Variants:
      sznajd               P(x, y) = beta * (1 - x^2), independent of y
      bounded_confidence   P(x, y) = 1 if |x - y| <= kappa else 0
      constant             P(x, y) = c
      zero                 P(x, y) = 0

    Every variant is bounded on [-L, L]^2.
    """

    kind: str
    beta: float = 0.0
    kappa: float = 0.0
    c: float = 0.0

    _KINDS = ("sznajd", "bounded_confidence", "constant", "zero")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "bounded_confidence" and self.kappa <= 0:
            raise ConfigError("bounded_confidence requires kappa > 0")

    @classmethod
    def sznajd(cls, beta: float) -> "InteractionKernel":
        return cls(kind="sznajd", beta=beta)

    @classmethod
    def bounded_confidence(cls, kappa: float) -> "InteractionKernel":
        return cls(kind="bounded_confidence", kappa=kappa)

    @classmethod
    def constant(cls, c: float) -> "InteractionKernel":
        return cls(kind="constant", c=c)

    @classmethod
    def zero(cls) -> "InteractionKernel":
        return cls(kind="zero")

    def __call__(self, x, y):
        return kernel_eval(self, x, y)


def kernel_eval(kernel: InteractionKernel, x, y):
    """Evaluate P(x, y).  Broadcasts over array arguments."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if kernel.kind == "sznajd":
        out = np.broadcast_to(kernel.beta * (1.0 - x * x), np.broadcast(x, y).shape)
    elif kernel.kind == "bounded_confidence":
        out = np.where(np.abs(x - y) <= kernel.kappa, 1.0, 0.0)
    elif kernel.kind == "constant":
        out = np.full(np.broadcast(x, y).shape, kernel.c)
    else:
        out = np.zeros(np.broadcast(x, y).shape)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class ControlPenalty:
    """Convex control penalty Psi with Psi(0) = 0 and Psi >= 0.

    Only the quadratic variant Psi(c) = c^2 / 2 ships; the gradient and its
    inverse are the hooks a new variant has to provide.
    """

    kind: str = "quadratic"

    def psi(self, c):
        c = np.asarray(c, dtype=float)
        return 0.5 * c * c

    def dpsi(self, c):
        return np.asarray(c, dtype=float)

    def invert_dpsi(self, target):
        """Solve dpsi(c) = target for c (closed form for the quadratic)."""
        return np.asarray(target, dtype=float)


QUADRATIC_PENALTY = ControlPenalty()


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centered grid tiling [-L, L] with N cells."""

    L: float
    N: int

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ConfigError("grid needs at least one cell")
        if self.L <= 0:
            raise ConfigError("L must be positive")

    @classmethod
    def from_config(cls, config: SimulationConfig) -> "Grid1D":
        return cls(L=config.L, N=config.n_cells)

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def centers(self) -> np.ndarray:
        return -self.L + (np.arange(self.N) + 0.5) * self.dx

    @property
    def interfaces(self) -> np.ndarray:
        return -self.L + np.arange(self.N + 1) * self.dx

    def cell_index(self, x) -> np.ndarray:
        """Cell containing x, clipped into the grid."""
        i = np.floor((np.asarray(x) + self.L) / self.dx).astype(np.int64)
        return np.clip(i, 0, self.N - 1)


@dataclass
class DensityField:
    """Cell densities at a set of recorded instants.

    values[k, i] is the density in cell i at time times[k].  Every stored
    slice must be nonnegative with dx * sum = 1 up to MASS_TOL.
    """

    grid: Grid1D
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape != (self.times.size, self.grid.N):
            raise MeshMismatchError(
                f"density values {self.values.shape} do not match "
                f"{self.times.size} times x {self.grid.N} cells"
            )

    def mass(self, k: int = 0) -> float:
        return float(self.grid.dx * self.values[k].sum())

    def validate(self) -> None:
        if np.any(self.values < 0):
            raise NumericalError("negative density value")
        m0 = self.mass(0)
        masses = self.grid.dx * self.values.sum(axis=1)
        if np.max(np.abs(masses - m0)) > MASS_TOL:
            raise NumericalError("mass drift exceeds tolerance")

    def slice_at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.values[k]


@dataclass
class ControlField:
    """Grid control f(x_i, t_m) for m = 0..M-1, one slice per time step."""

    grid: Grid1D
    dt: float
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.grid.N:
            raise MeshMismatchError(
                f"control has {self.values.shape[1]} cells, grid has {self.grid.N}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("control field contains non-finite values")

    @classmethod
    def zeros(cls, grid: Grid1D, n_steps: int, dt: float) -> "ControlField":
        return cls(grid=grid, dt=dt, values=np.zeros((n_steps, grid.N)))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt


def _bump(x: np.ndarray, center: float, a: float, b: float, literal: bool) -> np.ndarray:
    z = ((x - center) / b) ** 2
    if literal:
        return np.maximum(z - a, 0.0)
    return np.maximum(a - z, 0.0)


@dataclass(frozen=True)
class InitialDataSpec:
    """Recipe for the initial density, normalized to unit mass on build.

    Variants:
      sznajd_bivariate     two compactly supported bumps; ``literal`` flips
                           the bump profile max(a - ((x-c)/b)^2, 0) to its
                           complement max(((x-c)/b)^2 - a, 0)
      hk_perturbed_uniform 0.5 + eps_pert * (1 - x^2), rescaled
      uniform              flat
      custom               a user-supplied table of cell values
    """

    kind: str
    center1: float = -0.75
    a1: float = 0.05
    b1: float = 0.5
    center2: float = 0.5
    a2: float = 0.15
    b2: float = 1.0
    eps_pert: float = 0.01
    literal: bool = False
    table: tuple = ()

    _KINDS = ("sznajd_bivariate", "hk_perturbed_uniform", "uniform", "custom")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ConfigError(f"unknown initial data kind {self.kind!r}")

    @classmethod
    def sznajd_bivariate(cls, literal: bool = False) -> "InitialDataSpec":
        return cls(kind="sznajd_bivariate", literal=literal)

    @classmethod
    def hk_perturbed_uniform(cls, eps_pert: float = 0.01) -> "InitialDataSpec":
        return cls(kind="hk_perturbed_uniform", eps_pert=eps_pert)

    @classmethod
    def uniform(cls) -> "InitialDataSpec":
        return cls(kind="uniform")

    @classmethod
    def custom(cls, values) -> "InitialDataSpec":
        return cls(kind="custom", table=tuple(float(v) for v in values))

    def raw_values(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "sznajd_bivariate":
            return _bump(x, self.center1, self.a1, self.b1, self.literal) + _bump(
                x, self.center2, self.a2, self.b2, self.literal
            )
        if self.kind == "hk_perturbed_uniform":
            return 0.5 + self.eps_pert * (1.0 - x * x)
        if self.kind == "uniform":
            return np.ones_like(x)
        vals = np.asarray(self.table, dtype=float)
        if vals.size != x.size:
            raise MeshMismatchError(
                f"custom table has {vals.size} entries for {x.size} cells"
            )
        return vals


def build_initial_density(spec: InitialDataSpec, grid: Grid1D) -> np.ndarray:
    """Evaluate the recipe at cell centers, clip negatives, rescale to unit mass."""
    mu = np.maximum(spec.raw_values(grid.centers), 0.0)
    total = mu.sum() * grid.dx
    if total <= 0.0:
        raise ConfigError("degenerate initial data: density vanishes everywhere")
    return mu / total


def interaction_matrix(kernel: InteractionKernel, x_eval: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Matrix B with B[k, j] = P(x_eval[k], y_j) * (y_j - x_eval[k]) * dx.

    The mean field drift at the evaluation points is then B @ mu.
    """
    x_eval = np.asarray(x_eval, dtype=float)
    y = grid.centers
    P = kernel_eval(kernel, x_eval[:, None], y[None, :])
    return P * (y[None, :] - x_eval[:, None]) * grid.dx


def mean_field_drift(mu: np.ndarray, grid: Grid1D, kernel: InteractionKernel, x):
    """Mean field force at x: the midpoint-rule sum of P(x, y)(y - x) mu(y) dy."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = interaction_matrix(kernel, x_arr, grid) @ np.asarray(mu, dtype=float)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out[0])
    return out


@dataclass(frozen=True)
class CostBreakdown:
    """Total cost J split into state-tracking and control-penalty parts."""

    J: float
    state_term: float
    control_term: float
    # standard error of J for Monte Carlo estimates, 0 for deterministic ones
    std_error: float = 0.0

    def __post_init__(self) -> None:
        if not math.isclose(self.J, self.state_term + self.control_term,
                            rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError("J must equal state_term + control_term")

    @classmethod
    def from_terms(cls, state_term: float, control_term: float,
                   std_error: float = 0.0) -> "CostBreakdown":
        return cls(J=state_term + control_term, state_term=state_term,
                   control_term=control_term, std_error=std_error)


def cost_functional(mu_traj: DensityField, f: ControlField, config: SimulationConfig,
                    penalty: ControlPenalty = QUADRATIC_PENALTY) -> CostBreakdown:
    """Discrete cost of a density trajectory under a grid control.

    J = sum_m dt sum_i dx [ |x_i - x_d|^2 / 2 + gamma Psi(f_im) ] mu_im with
    the left-endpoint rule in time, so mu and f enter at t_0 .. t_{M-1}.
    """
    M = f.n_steps
    if mu_traj.grid.N != f.grid.N or mu_traj.grid.L != f.grid.L:
        raise MeshMismatchError("density and control live on different grids")
    if mu_traj.values.shape[0] < M:
        raise MeshMismatchError(
            f"density trajectory has {mu_traj.values.shape[0]} slices, control needs {M}"
        )
    if abs(mu_traj.times[1] - mu_traj.times[0] - f.dt) > 1e-12 * max(1.0, f.dt):
        raise MeshMismatchError("density and control use different time steps")
    x = mu_traj.grid.centers
    dx = mu_traj.grid.dx
    mu = mu_traj.values[:M]
    state_density = 0.5 * (x - config.x_d) ** 2
    state = config.dt * dx * float(np.sum(mu * state_density[None, :]))
    control = config.dt * dx * config.gamma * float(np.sum(mu * penalty.psi(f.values)))
    return CostBreakdown.from_terms(state, control)


def cost_from_particles(positions: np.ndarray, controls: np.ndarray,
                        config: SimulationConfig,
                        penalty: ControlPenalty = QUADRATIC_PENALTY) -> CostBreakdown:
    """Empirical cost from per-step particle states and applied controls.

    positions[m, k] is particle k at time t_m (pre-step state), controls[m, k]
    the control it received on [t_m, t_{m+1}).  The standard error reported is
    std over particles of the per-particle path cost divided by sqrt(N_s).
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if positions.shape != controls.shape:
        raise MeshMismatchError(
            f"positions {positions.shape} and controls {controls.shape} differ"
        )
    n = positions.shape[1]
    state_per_particle = config.dt * np.sum(0.5 * (positions - config.x_d) ** 2, axis=0)
    control_per_particle = config.dt * config.gamma * np.sum(penalty.psi(controls), axis=0)
    per_particle = state_per_particle + control_per_particle
    se = float(per_particle.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return CostBreakdown.from_terms(
        float(state_per_particle.mean()), float(control_per_particle.mean()), se
    )
