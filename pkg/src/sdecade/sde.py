"""Stratonovich sampling of the weight process.

Two integrators, split by model kind:

* linear-generator models step with the exponential of the sampled
  algebra element, W_{k+1} = exp(dt A + sum_i dV_i B_i) W_k, so skew
  models stay on the sphere / orthogonal group to roundoff by
  construction;
* general drift/diffusion callables step with the Stratonovich-Heun
  predictor-corrector (strong order 1/2, weak order 1).

Path weights exp(integral of h along the path) are accumulated with the
trapezoid rule on the simulation grid, in log space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .lie import GeneratorCoeffs, SkewBasis, assemble_generators
from .linalg import expm_stack
from .rng import SeedRecord, as_seed, brownian_increments, substream

# Paths are processed in fixed-size chunks; per-path substreams make the
# results independent of the chunking, this only caps memory.
CHUNK = 8192

DEFAULT_STEPS = 256


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t0, t1] with n_steps steps (n_steps + 1 nodes)."""

    n_steps: int = DEFAULT_STEPS
    t0: float = 0.0
    t1: float = 1.0

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not self.t1 > self.t0:
            raise ValueError(f"need t1 > t0, got [{self.t0}, {self.t1}]")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n_steps + 1)

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.n_steps * factor, self.t0, self.t1)


@dataclass(frozen=True)
class LinearSde:
    """dW = A W dt + sum_i B_i W o dV_i with constant square matrices.

    The state may be a vector (n,) or a matrix (n, q); generators act by
    left multiplication. `coeffs` optionally records the generator mixing
    table the matrices were assembled from.
    """

    drift_mat: np.ndarray
    diffusion_mats: np.ndarray
    w0: np.ndarray
    coeffs: GeneratorCoeffs | None = None

    def __post_init__(self):
        a = np.asarray(self.drift_mat, dtype=float)
        bs = np.asarray(self.diffusion_mats, dtype=float)
        w0 = np.asarray(self.w0, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"drift matrix must be square, got shape {a.shape}")
        n = a.shape[0]
        if bs.ndim == 2:
            bs = bs[None]
        if bs.ndim != 3 or bs.shape[1:] != (n, n):
            raise ValueError(
                f"diffusion matrices must be (m, {n}, {n}), got shape {bs.shape}"
            )
        if w0.ndim not in (1, 2) or w0.shape[0] != n:
            raise ValueError(
                f"initial state must be ({n},) or ({n}, q), got shape {w0.shape}"
            )
        object.__setattr__(self, "drift_mat", a)
        object.__setattr__(self, "diffusion_mats", bs)
        object.__setattr__(self, "w0", w0)
        skew = bool(
            not (a + a.T).any() and not (bs + bs.transpose(0, 2, 1)).any()
        )
        object.__setattr__(self, "_skew", skew)

    @classmethod
    def from_coeffs(
        cls, coeffs: GeneratorCoeffs, basis: SkewBasis, w0: np.ndarray
    ) -> "LinearSde":
        a, bs = assemble_generators(coeffs, basis)
        return cls(a, bs, w0, coeffs=coeffs)

    @property
    def n(self) -> int:
        return self.drift_mat.shape[0]

    @property
    def m(self) -> int:
        return self.diffusion_mats.shape[0]

    @property
    def is_skew(self) -> bool:
        return self._skew

    @property
    def manifold_preserving(self) -> bool:
        """True when skew generators start on the unit sphere / in O(n)."""
        if not self.is_skew:
            return False
        if self.w0.ndim == 1:
            return abs(np.linalg.norm(self.w0) - 1.0) <= 1e-12
        if self.w0.shape[0] != self.w0.shape[1]:
            return False
        gram = self.w0.T @ self.w0
        return np.abs(gram - np.eye(self.w0.shape[0])).max() <= 1e-12


@dataclass(frozen=True)
class GeneralSde:
    """dW = a(W) dt + sum_i b_i(W) o dV_i with user-supplied callables.

    Callables must be deterministic; analytic Jacobians of the diffusion
    fields are required only for the Ito-corrected drift. Regularity
    (e.g. Lipschitz-ness) is the caller's responsibility.
    """

    drift: Callable
    diffusions: tuple
    w0: np.ndarray
    diffusion_jacobians: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "diffusions", tuple(self.diffusions))
        if self.diffusion_jacobians is not None:
            jacs = tuple(self.diffusion_jacobians)
            if len(jacs) != len(self.diffusions):
                raise ValueError(
                    f"{len(jacs)} Jacobians supplied for {len(self.diffusions)} "
                    "diffusion fields"
                )
            object.__setattr__(self, "diffusion_jacobians", jacs)
        object.__setattr__(self, "w0", np.asarray(self.w0, dtype=float))

    @property
    def m(self) -> int:
        return len(self.diffusions)


SdeModel = Union[LinearSde, GeneralSde]


@dataclass(frozen=True)
class WeightTrajectory:
    """A sampled path: grid nodes, states, driving increments, provenance."""

    grid: TimeGrid
    states: np.ndarray  # (K+1, ...) node states, states[0] = w0
    increments: np.ndarray  # (K, m)
    seed: SeedRecord

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "increments", np.asarray(self.increments, dtype=float))
        if self.states.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"{self.states.shape[0]} states on a {self.grid.n_steps}-step grid"
            )

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


def ito_drift_matrix(model: LinearSde) -> np.ndarray:
    """A + (1/2) sum_i B_i^2 — the Ito-corrected drift matrix."""
    bs = model.diffusion_mats
    return model.drift_mat + 0.5 * np.einsum("mij,mjk->ik", bs, bs)


def ito_correction(model: SdeModel, w: np.ndarray) -> np.ndarray:
    """Ito-corrected drift a~(w) = a(w) + (1/2) sum_i (Db_i)(w) b_i(w).

    Converts the Stratonovich drift to the drift of the equivalent Ito
    SDE. Linear models reduce to (A + (1/2) sum B_i^2) w; general models
    need analytic diffusion Jacobians.
    """
    w = np.asarray(w, dtype=float)
    if isinstance(model, LinearSde):
        return ito_drift_matrix(model) @ w
    if model.diffusion_jacobians is None:
        raise ValueError(
            "Ito correction for a general model needs diffusion_jacobians"
        )
    out = np.asarray(model.drift(w), dtype=float)
    for field, jac in zip(model.diffusions, model.diffusion_jacobians):
        out = out + 0.5 * (np.asarray(jac(w)) @ np.asarray(field(w)))
    return out


def linear_step_matrices(model: LinearSde, dt: float, dv: np.ndarray) -> np.ndarray:
    """Per-step transition matrices exp(dt A + sum_i dv_i B_i).

    dv has shape (..., m); the result has shape (..., n, n).
    """
    dv = np.asarray(dv, dtype=float)
    exponents = dt * model.drift_mat + np.einsum(
        "...m,mij->...ij", dv, model.diffusion_mats
    )
    return expm_stack(exponents, skew=model.is_skew)


def _apply(mats: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Left-multiply stacked matrices onto stacked vector or matrix states."""
    if states.ndim == mats.ndim - 1:
        return np.einsum("...ij,...j->...i", mats, states)
    return mats @ states


def _check_increments(incs: np.ndarray, seed: SeedRecord) -> None:
    if not np.isfinite(incs).all():
        raise FloatingPointError(
            f"non-finite Brownian increment under seed master={seed.master} "
            f"stream={seed.stream}"
        )


def sample_path_linear(model: LinearSde, grid: TimeGrid, seed) -> WeightTrajectory:
    """Sample one path of a linear model with exponential steps."""
    if not isinstance(model, LinearSde):
        raise TypeError("sample_path_linear requires a linear-generator model")
    record = as_seed(seed)
    rng = substream(record)
    incs = brownian_increments(rng, grid.n_steps, model.m, grid.dt)
    _check_increments(incs, record)

    steps = linear_step_matrices(model, grid.dt, incs)
    states = np.empty((grid.n_steps + 1,) + model.w0.shape)
    states[0] = model.w0
    for k in range(grid.n_steps):
        states[k + 1] = _apply(steps[k], states[k])
    return WeightTrajectory(grid, states, incs, record)


def _model_fields(model: SdeModel) -> tuple[Callable, tuple]:
    if isinstance(model, LinearSde):
        a_mat = model.drift_mat
        fields = tuple(
            (lambda w, b=b: b @ w) for b in model.diffusion_mats
        )
        return (lambda w: a_mat @ w), fields
    return model.drift, model.diffusions


def sample_path_heun(model: SdeModel, grid: TimeGrid, seed) -> WeightTrajectory:
    """Sample one path with the Stratonovich-Heun predictor-corrector.

    Predictor: wbar = w + a(w) dt + sum_i b_i(w) dV_i.
    Corrector: averages drift and diffusion at w and wbar.
    Exact for additive noise; weak order 1 in the Stratonovich sense.
    """
    record = as_seed(seed)
    rng = substream(record)
    drift, fields = _model_fields(model)
    m = len(fields)
    incs = brownian_increments(rng, grid.n_steps, m, grid.dt)
    _check_increments(incs, record)

    dt = grid.dt
    states = np.empty((grid.n_steps + 1,) + model.w0.shape)
    states[0] = model.w0
    w = model.w0
    for k in range(grid.n_steps):
        dv = incs[k]
        a0 = np.asarray(drift(w), dtype=float)
        b0 = [np.asarray(field(w), dtype=float) for field in fields]
        pred = w + a0 * dt + sum(b * dv[i] for i, b in enumerate(b0))
        a1 = np.asarray(drift(pred), dtype=float)
        b1 = [np.asarray(field(pred), dtype=float) for field in fields]
        w = (
            w
            + 0.5 * dt * (a0 + a1)
            + sum(0.5 * (b0[i] + b1[i]) * dv[i] for i in range(m))
        )
        states[k + 1] = w
    return WeightTrajectory(grid, states, incs, record)


def _trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    w = np.full(grid.n_steps + 1, grid.dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def log_fk_weight(traj: WeightTrajectory, h_fn) -> float:
    """Trapezoidal approximation of the integral of h along the path."""
    nodes = traj.grid.nodes
    values = np.array(
        [h_fn(traj.states[k], nodes[k]) for k in range(nodes.size)], dtype=float
    )
    if not np.isfinite(values).all():
        raise ValueError("h must be finite along the path")
    return float(_trapezoid_weights(traj.grid) @ values)


def fk_weight(traj: WeightTrajectory, h_fn) -> float:
    """Path weight exp(trapezoid of h along the trajectory).

    The integral is accumulated in log space so intermediate products
    cannot overflow; only the final exponential can saturate.
    """
    return float(np.exp(log_fk_weight(traj, h_fn)))


def _ensemble_increments(
    master: int, n_paths: int, n_steps: int, m: int, dt: float, stream_offset: int
) -> np.ndarray:
    """Increments for paths [offset, offset + n_paths), one substream each."""
    out = np.empty((n_paths, n_steps, m))
    scale = np.sqrt(dt)
    for nu in range(n_paths):
        rng = substream(master, stream_offset + nu)
        out[nu] = rng.normal(0.0, scale, size=(n_steps, m))
    return out


def linear_terminal_ensemble(
    model: LinearSde,
    grid: TimeGrid,
    n_paths: int,
    seed,
    h_fn=None,
    scheme: str = "exponential",
    stream_offset: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Terminal states and log path weights for n_paths substream paths.

    Paths are processed in fixed chunks purely to cap memory; each path's
    values depend only on (master seed, stream index), never on n_paths
    or the chunking. Returns (terminals, log_weights).
    """
    if scheme not in ("exponential", "heun"):
        raise ValueError(f"unknown scheme {scheme!r}")
    master = as_seed(seed).master
    dt = grid.dt
    n_steps = grid.n_steps
    nodes = grid.nodes
    trap = _trapezoid_weights(grid)

    terminals = np.empty((n_paths,) + model.w0.shape)
    log_weights = np.zeros(n_paths)

    for start in range(0, n_paths, CHUNK):
        stop = min(start + CHUNK, n_paths)
        incs = _ensemble_increments(
            master, stop - start, n_steps, model.m, dt, stream_offset + start
        )
        _check_increments(incs, SeedRecord(master, stream_offset + start))
        states = np.broadcast_to(
            model.w0, (stop - start,) + model.w0.shape
        ).copy()
        logw = np.zeros(stop - start)
        if h_fn is not None:
            logw += trap[0] * np.asarray(h_fn(states, nodes[0]), dtype=float)
        for k in range(n_steps):
            if scheme == "exponential":
                steps = linear_step_matrices(model, dt, incs[:, k, :])
                states = _apply(steps, states)
            else:
                states = _heun_step_linear(model, states, dt, incs[:, k, :])
            if h_fn is not None:
                logw += trap[k + 1] * np.asarray(
                    h_fn(states, nodes[k + 1]), dtype=float
                )
        terminals[start:stop] = states
        log_weights[start:stop] = logw
    return terminals, log_weights


def _heun_step_linear(
    model: LinearSde, states: np.ndarray, dt: float, dv: np.ndarray
) -> np.ndarray:
    """One vectorized Stratonovich-Heun step for stacked linear-model states."""
    a_mat = model.drift_mat
    b_mats = model.diffusion_mats
    if states.ndim == 2:  # (N, n) vectors
        drift0 = states @ a_mat.T
        diff0 = np.einsum("Nm,mij,Nj->Ni", dv, b_mats, states)
        pred = states + dt * drift0 + diff0
        drift1 = pred @ a_mat.T
        diff1 = np.einsum("Nm,mij,Nj->Ni", dv, b_mats, pred)
    else:  # (N, n, q) matrices
        drift0 = np.einsum("ij,Njq->Niq", a_mat, states)
        diff0 = np.einsum("Nm,mij,Njq->Niq", dv, b_mats, states)
        pred = states + dt * drift0 + diff0
        drift1 = np.einsum("ij,Njq->Niq", a_mat, pred)
        diff1 = np.einsum("Nm,mij,Njq->Niq", dv, b_mats, pred)
    return states + 0.5 * dt * (drift0 + drift1) + 0.5 * (diff0 + diff1)


def read_trajectory_csv(path) -> WeightTrajectory:
    """Rebuild a trajectory from the CSV written by write_trajectory_csv.

    The driving increments are not stored in the file, so the returned
    trajectory carries an empty increment block; it is suitable as a
    reference path (e.g. for penalty potentials), not for re-stepping.
    """
    seed = SeedRecord(0, 0)
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                fields = dict(
                    part.split("=", 1) for part in line[1:].split() if "=" in part
                )
                if "seed" in fields and "stream" in fields:
                    seed = SeedRecord(int(fields["seed"]), int(fields["stream"]))
                continue
            if header is None:
                header = [cell.strip() for cell in line.split(",")]
                continue
            rows.append([float(cell) for cell in line.split(",")])
    if header is None or not rows:
        raise ValueError(f"no trajectory data in {path}")
    data = np.array(rows, dtype=float)
    grid = TimeGrid(data.shape[0] - 1, data[0, 0], data[-1, 0])
    flat = data[:, 1:]
    labels = header[1:]
    if labels and labels[0].startswith("w_"):
        n = max(int(lab[2:-1]) for lab in labels) + 1
        q = max(int(lab[-1]) for lab in labels) + 1
        if n * q != flat.shape[1]:
            raise ValueError(
                f"matrix labels decode to {n}x{q} but the file has "
                f"{flat.shape[1]} state columns"
            )
        states = flat.reshape(data.shape[0], n, q)
    else:
        states = flat
    return WeightTrajectory(
        grid, states, np.zeros((grid.n_steps, 0)), seed
    )


def write_trajectory_csv(traj: WeightTrajectory, path) -> None:
    """Write a trajectory as CSV with a seed-provenance comment line.

    Vector states use columns `t, state_0..`; matrix states flatten
    row-major into `t, w_00, w_01, ..`. Floats carry 17 significant
    digits so reruns are byte-comparable.
    """
    states = traj.states
    if states.ndim == 2:
        labels = [f"state_{i}" for i in range(states.shape[1])]
        flat = states
    else:
        n, q = states.shape[1], states.shape[2]
        labels = [f"w_{i}{j}" for i in range(n) for j in range(q)]
        flat = states.reshape(states.shape[0], n * q)
    nodes = traj.grid.nodes
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"# seed={traj.seed.master} stream={traj.seed.stream}\n")
        handle.write("t," + ",".join(labels) + "\n")
        for k in range(nodes.size):
            row = [f"{nodes[k]:.17g}"] + [f"{v:.17g}" for v in flat[k]]
            handle.write(",".join(row) + "\n")
