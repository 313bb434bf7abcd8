"""Conditionally deterministic activation dynamics driven by a weight path.

Given a sampled matrix weight trajectory W_t, the activation state
solves the ODE dZ/dt = sigma(W_t Z) with Z_0 = x. The solve is classical
RK4 on the weight grid, with W linearly interpolated inside each step;
conditional on the weight path the result is fully deterministic, so
identical inputs give bit-identical outputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import get_activation
from .rng import SeedRecord, as_seed
from .sde import (
    CHUNK,
    LinearSde,
    TimeGrid,
    WeightTrajectory,
    _check_increments,
    _ensemble_increments,
    linear_step_matrices,
)
from .realize import RealizationEstimate


@dataclass(frozen=True)
class ActivationPath:
    """Activation states at the weight grid nodes, with their driving path."""

    grid: TimeGrid
    states: np.ndarray  # (K+1, n), states[0] = x
    source: WeightTrajectory

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        if self.states.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"{self.states.shape[0]} states on a {self.grid.n_steps}-step grid"
            )

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


def _rk4_substeps(w_lo, w_hi, z, dt, act, substeps):
    """Advance z across one weight step, W interpolated linearly inside it.

    With substeps > 1 the interval is split so the solve grid refines
    while the weight data (and its kink locations) stay frozen -- the
    substep boundaries always include the weight nodes, so RK4 keeps its
    full order against the piecewise-linear W.
    """
    h = dt / substeps
    dw = w_hi - w_lo
    for j in range(substeps):
        f0 = j / substeps
        f1 = (j + 0.5) / substeps
        f2 = (j + 1) / substeps
        w0 = w_lo + f0 * dw
        w1 = w_lo + f1 * dw
        w2 = w_lo + f2 * dw
        k1 = act.value(w0 @ z)
        k2 = act.value(w1 @ (z + 0.5 * h * k1))
        k3 = act.value(w1 @ (z + 0.5 * h * k2))
        k4 = act.value(w2 @ (z + h * k3))
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return z


def solve_activation(
    traj: WeightTrajectory, x, activation, substeps: int = 1
) -> ActivationPath:
    """Solve dZ/dt = sigma(W_t Z), Z_0 = x along a matrix weight path.

    RK4 with W linearly interpolated at half-steps. `substeps` refines
    the solve grid below the weight grid (for convergence studies);
    states are recorded at the weight nodes regardless.
    """
    act = get_activation(activation)
    if traj.states.ndim != 3:
        raise ValueError("activation dynamics need a matrix-valued weight path")
    x = np.asarray(x, dtype=float)
    n = traj.states.shape[2]
    if x.shape != (n,):
        raise ValueError(f"initial state must have shape ({n},), got {x.shape}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")

    dt = traj.grid.dt
    states = np.empty((traj.grid.n_steps + 1, n))
    states[0] = x
    z = x
    for k in range(traj.grid.n_steps):
        z = _rk4_substeps(traj.states[k], traj.states[k + 1], z, dt, act, substeps)
        if not np.isfinite(z).all():
            raise FloatingPointError(f"non-finite activation state at step {k + 1}")
        states[k + 1] = z
    return ActivationPath(traj.grid, states, traj)


def realize_cascade_mc(
    model: LinearSde,
    v,
    x,
    n_paths: int,
    grid: TimeGrid,
    seed,
    activation="tanh",
    stream_offset: int = 0,
) -> RealizationEstimate:
    """Monte Carlo estimate of E[v . Z_1] for the cascade readout.

    Weight paths step with the structure-preserving exponential scheme;
    the activation ODE advances in lockstep (RK4 on the same grid), so
    no full weight path is ever stored. Per-path substreams make the
    estimate deterministic in (seed, n_paths, grid).
    """
    if n_paths < 2:
        raise ValueError(f"need at least 2 paths for a standard error, got {n_paths}")
    if not isinstance(model, LinearSde) or model.w0.ndim != 2:
        raise ValueError("cascade realization needs a matrix-valued linear model")
    act = get_activation(activation)
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    n = model.w0.shape[1]
    if x.shape != (n,):
        raise ValueError(f"input must have shape ({n},), got {x.shape}")
    if v.shape != (n,):
        raise ValueError(f"readout must have shape ({n},), got {v.shape}")

    record = as_seed(seed)
    dt = grid.dt
    values = np.empty(n_paths)
    for start in range(0, n_paths, CHUNK):
        stop = min(start + CHUNK, n_paths)
        incs = _ensemble_increments(
            record.master, stop - start, grid.n_steps, model.m, dt,
            stream_offset + start,
        )
        _check_increments(incs, SeedRecord(record.master, stream_offset + start))
        w = np.broadcast_to(model.w0, (stop - start,) + model.w0.shape).copy()
        z = np.broadcast_to(x, (stop - start, n)).copy()
        for k in range(grid.n_steps):
            steps = linear_step_matrices(model, dt, incs[:, k, :])
            w_next = steps @ w
            w_half = 0.5 * (w + w_next)
            k1 = act.value(np.einsum("Nij,Nj->Ni", w, z))
            k2 = act.value(np.einsum("Nij,Nj->Ni", w_half, z + 0.5 * dt * k1))
            k3 = act.value(np.einsum("Nij,Nj->Ni", w_half, z + 0.5 * dt * k2))
            k4 = act.value(np.einsum("Nij,Nj->Ni", w_next, z + dt * k3))
            z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            w = w_next
        values[start:stop] = z @ v
    if not np.isfinite(values).all():
        nu = int(np.argwhere(~np.isfinite(values))[0, 0])
        raise FloatingPointError(
            f"non-finite sample on path {nu} (seed master={record.master} "
            f"stream={stream_offset + nu})"
        )
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / np.sqrt(n_paths))
    return RealizationEstimate(mean, stderr, n_paths, record, grid)


def write_activation_csv(path_obj: ActivationPath, path) -> None:
    """Write an activation path as CSV (`t, z_0..`) with seed provenance."""
    states = path_obj.states
    nodes = path_obj.grid.nodes
    seed = path_obj.source.seed
    labels = [f"z_{i}" for i in range(states.shape[1])]
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"# seed={seed.master} stream={seed.stream}\n")
        handle.write("t," + ",".join(labels) + "\n")
        for k in range(nodes.size):
            row = [f"{nodes[k]:.17g}"] + [f"{v:.17g}" for v in states[k]]
            handle.write(",".join(row) + "\n")
