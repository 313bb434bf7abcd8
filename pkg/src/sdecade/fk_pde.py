"""One-dimensional parabolic cross-check for the Monte Carlo realization.

For scalar weight dynamics the realized function solves the PDE
u_t = a~(w) u_w + c(w) u_ww + h(w, t) u with u(w, 0) = sigma(w x), and
the realized value is u(w0, 1). This module solves that PDE with
Crank-Nicolson time stepping, central spatial differences, and a
hand-rolled Thomas tridiagonal solve, on a truncated domain with
Dirichlet values frozen at the initial condition's boundary values.

Only the 1-D solve is provided: it exists to validate the sampling
engine on scalar benchmarks, while Monte Carlo remains the tool for
dimensions above one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .activations import get_activation


@dataclass(frozen=True)
class Grid1D:
    """Uniform space-time grid on [w_min, w_max] x [0, 1].

    `w_eval` is the evaluation point (the weight initial condition);
    it must lie strictly inside the spatial domain.
    """

    w_min: float
    w_max: float
    n_nodes: int = 201
    n_time_steps: int = 256
    w_eval: float = 0.0

    def __post_init__(self):
        if not self.w_max > self.w_min:
            raise ValueError(f"empty domain [{self.w_min}, {self.w_max}]")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 51:
            raise ValueError(f"need at least 51 spatial nodes, got {self.n_nodes}")
        if int(self.n_time_steps) != self.n_time_steps or self.n_time_steps < 1:
            raise ValueError(f"bad time step count {self.n_time_steps}")
        if not (self.w_min < self.w_eval < self.w_max):
            raise ValueError(
                f"evaluation point {self.w_eval} not strictly inside "
                f"[{self.w_min}, {self.w_max}]"
            )
        object.__setattr__(self, "n_nodes", int(self.n_nodes))
        object.__setattr__(self, "n_time_steps", int(self.n_time_steps))

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.w_min, self.w_max, self.n_nodes)

    @property
    def dw(self) -> float:
        return (self.w_max - self.w_min) / (self.n_nodes - 1)

    @property
    def dt(self) -> float:
        return 1.0 / self.n_time_steps

    def refined(self, factor: int = 2) -> "Grid1D":
        """Halve the spacing in both directions (keeps the domain/eval point)."""
        return Grid1D(
            self.w_min,
            self.w_max,
            (self.n_nodes - 1) * factor + 1,
            self.n_time_steps * factor,
            self.w_eval,
        )


@dataclass(frozen=True)
class Coefficients1D:
    """Corrected drift a~(w) and diffusion coefficient c(w) = b(w)^2 / 2."""

    drift: Callable
    diffusion: Callable

    @classmethod
    def from_scalar_linear(cls, theta1: float, theta2: float) -> "Coefficients1D":
        """Coefficients of the scalar model dw = theta1 w dt + theta2 w o dV.

        The Stratonovich-to-Ito correction shifts the drift rate by
        theta2^2 / 2; the diffusion coefficient is theta2^2 w^2 / 2.
        """
        rate = theta1 + 0.5 * theta2 ** 2
        return cls(
            drift=lambda w: rate * np.asarray(w, dtype=float),
            diffusion=lambda w: 0.5 * theta2 ** 2 * np.asarray(w, dtype=float) ** 2,
        )


def thomas_solve(lower, diag, upper, rhs) -> np.ndarray:
    """Solve a tridiagonal system by forward elimination / back substitution.

    `lower` and `upper` have length n-1 (sub/super diagonals). Raises on
    a vanishing pivot with the offending row, since Crank-Nicolson
    should never produce one for parabolic coefficients.
    """
    diag = np.asarray(diag, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = diag.size
    scale = max(np.abs(diag).max(), np.abs(rhs).max(), 1.0)
    cp = np.empty(n - 1)
    dp = np.empty(n)
    pivot = diag[0]
    if abs(pivot) <= 1e-300 * scale:
        raise ValueError("tridiagonal solve is singular at row 0")
    cp[0] = upper[0] / pivot
    dp[0] = rhs[0] / pivot
    for i in range(1, n):
        pivot = diag[i] - lower[i - 1] * cp[i - 1]
        if abs(pivot) <= 1e-300 * scale:
            raise ValueError(f"tridiagonal solve is singular at row {i}")
        if i < n - 1:
            cp[i] = upper[i] / pivot
        dp[i] = (rhs[i] - lower[i - 1] * dp[i - 1]) / pivot
    out = np.empty(n)
    out[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        out[i] = dp[i] - cp[i] * out[i + 1]
    return out


@dataclass(frozen=True)
class FkSolution:
    """Final time slice plus the running extrema over all time slices."""

    grid: Grid1D
    u_final: np.ndarray
    value: float
    running_max: float
    running_min: float


def solve_fk_slice(
    coeffs: Coefficients1D, h_fn, activation, x: float, grid: Grid1D
) -> FkSolution:
    """March u_t = a~ u_w + c u_ww + h u from u(w,0) = sigma(w x) to t = 1.

    Crank-Nicolson in time, central differences in space, Dirichlet
    boundary values frozen at the initial condition's boundary values
    (the domain is expected to be wide enough that the boundary is
    effectively unreachable). Returns the full final slice and the value
    interpolated at grid.w_eval.
    """
    act = get_activation(activation)
    w = grid.nodes
    dw = grid.dw
    dt = grid.dt

    drift = np.asarray(coeffs.drift(w), dtype=float)
    diff = np.asarray(coeffs.diffusion(w), dtype=float)
    if drift.shape != w.shape or diff.shape != w.shape:
        raise ValueError("coefficient callables must map nodes to node values")
    if not (np.isfinite(drift).all() and np.isfinite(diff).all()):
        raise ValueError("coefficients must be finite on the domain")
    if diff.min() < -1e-14:
        raise ValueError(f"negative diffusion coefficient {diff.min()} on the domain")

    u = act.value(w * float(x))
    left, right = u[0], u[-1]
    running_max = float(u.max())
    running_min = float(u.min())

    # Spatial operator on interior nodes: lo*u_{i-1} + di*u_i + up*u_{i+1}
    # (the h term joins the diagonal per time level below).
    a_i = drift[1:-1]
    c_i = diff[1:-1]
    lo = -a_i / (2.0 * dw) + c_i / dw ** 2
    up = a_i / (2.0 * dw) + c_i / dw ** 2
    di = -2.0 * c_i / dw ** 2

    w_int = w[1:-1]
    half = 0.5 * dt

    def h_values(t):
        if h_fn is None:
            return np.zeros_like(w_int)
        return np.broadcast_to(
            np.asarray(h_fn(w_int, t), dtype=float), w_int.shape
        )

    h_curr = h_values(0.0)
    for k in range(grid.n_time_steps):
        t_next = (k + 1) * dt
        h_next = h_values(t_next)
        u_int = u[1:-1]
        rhs = (
            (1.0 + half * (di + h_curr)) * u_int
            + half * up * u[2:]
            + half * lo * u[:-2]
        )
        # Frozen boundary values contribute on both time levels.
        rhs[0] += half * lo[0] * left
        rhs[-1] += half * up[-1] * right
        u_new = thomas_solve(
            -half * lo[1:], 1.0 - half * (di + h_next), -half * up[:-1], rhs
        )
        u = np.concatenate(([left], u_new, [right]))
        running_max = max(running_max, float(u.max()))
        running_min = min(running_min, float(u.min()))
        h_curr = h_next

    value = float(np.interp(grid.w_eval, w, u))
    return FkSolution(grid, u, value, running_max, running_min)


def solve_fk(
    coeffs: Coefficients1D, h_fn, activation, x: float, grid: Grid1D
) -> float:
    """Realized value u(w_eval, 1) of the 1-D benchmark PDE."""
    return solve_fk_slice(coeffs, h_fn, activation, x, grid).value


@dataclass(frozen=True)
class ConvergenceTable:
    """Per-grid values with errors against a Richardson reference."""

    rows: tuple  # of (n_nodes, n_time_steps, value, error)
    reference: float


def convergence_study(
    coeffs: Coefficients1D, h_fn, activation, x: float, grids
) -> ConvergenceTable:
    """Self-convergence of solve_fk over nested grid refinements.

    The reference value Richardson-extrapolates the two finest grids
    assuming second-order decay (the scheme is second order in both
    space and time); per-grid errors are reported against it.
    """
    grids = list(grids)
    if len(grids) < 3:
        raise ValueError(f"need at least 3 grids for a study, got {len(grids)}")
    for a, b in zip(grids, grids[1:]):
        if (a.w_min, a.w_max, a.w_eval) != (b.w_min, b.w_max, b.w_eval):
            raise ValueError("grids must share the domain and evaluation point")
        if b.n_nodes <= a.n_nodes:
            raise ValueError("grids must be ordered from coarse to fine")
    values = [solve_fk(coeffs, h_fn, activation, x, g) for g in grids]
    reference = values[-1] + (values[-1] - values[-2]) / 3.0
    rows = tuple(
        (g.n_nodes, g.n_time_steps, v, abs(v - reference))
        for g, v in zip(grids, values)
    )
    return ConvergenceTable(rows, reference)


def write_slice_csv(solution: FkSolution, path) -> None:
    """Write the final time slice as CSV columns `w, u`."""
    nodes = solution.grid.nodes
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("w,u\n")
        for i in range(nodes.size):
            handle.write(f"{nodes[i]:.17g},{solution.u_final[i]:.17g}\n")
