"""Monte Carlo realization of readout functionals over weight trajectories.

A readout maps the terminal weight state to a number (or vector); the
realized function is the expectation of that readout times an optional
Feynman-Kac path weight exp(integral of h). Estimates are computed over
per-path Philox substreams, so the result for a given (master seed,
path index) never depends on how many paths were requested or how they
were chunked -- the same master seed gives common random numbers across
parameter perturbations, which the fitting harness relies on.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .activations import Activation, get_activation
from .rng import SeedRecord, as_seed
from .sde import (
    CHUNK,
    GeneralSde,
    LinearSde,
    TimeGrid,
    WeightTrajectory,
    _check_increments,
    _ensemble_increments,
    _trapezoid_weights,
    linear_step_matrices,
    linear_terminal_ensemble,
    log_fk_weight,
    sample_path_heun,
)


@dataclass(frozen=True)
class ScalarNeuron:
    """Readout sigma(w . x) of a vector terminal state."""

    activation: Union[Activation, str] = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "activation", get_activation(self.activation))


@dataclass(frozen=True)
class VectorNeuron:
    """Readout v . sigma(W x) of a matrix terminal state, v in R^p."""

    v: np.ndarray
    activation: Union[Activation, str] = "tanh"

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.ndim != 1 or not np.isfinite(v).all():
            raise ValueError("readout vector must be 1-D and finite")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "activation", get_activation(self.activation))


@dataclass(frozen=True)
class TwoBlockReadout:
    """Readout u . sigma(W x) consuming both blocks of a two-block state."""

    activation: Union[Activation, str] = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "activation", get_activation(self.activation))


@dataclass(frozen=True)
class LinearReadout:
    """Readout v . w of a vector state, or v^T W (a vector) of a matrix state."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.ndim != 1 or not np.isfinite(v).all():
            raise ValueError("readout vector must be 1-D and finite")
        object.__setattr__(self, "v", v)


ReadoutSpec = Union[ScalarNeuron, VectorNeuron, TwoBlockReadout, LinearReadout]


@dataclass(frozen=True)
class TwoBlockModel:
    """Two independent linear blocks sharing one driving substream per path.

    `head` evolves a vector (typically on the unit sphere), `body` a
    matrix (typically in the orthogonal group). Each path draws a single
    (n_steps, head.m + body.m) increment block; the head consumes the
    first head.m channels and the body the rest, so the pair is sampled
    jointly and reproducibly from one stream index.
    """

    head: LinearSde
    body: LinearSde

    def __post_init__(self):
        if self.head.w0.ndim != 1:
            raise ValueError("head block must carry a vector state")
        if self.body.w0.ndim != 2:
            raise ValueError("body block must carry a matrix state")
        if self.body.w0.shape[0] != self.head.w0.shape[0]:
            raise ValueError(
                f"head dimension {self.head.w0.shape[0]} does not match body "
                f"rows {self.body.w0.shape[0]}"
            )

    @property
    def m(self) -> int:
        return self.head.m + self.body.m


AnyModel = Union[LinearSde, GeneralSde, TwoBlockModel]


@dataclass(frozen=True)
class RealizationEstimate:
    """Monte Carlo mean with its standard error and full provenance."""

    mean: Union[float, np.ndarray]
    stderr: Union[float, np.ndarray]
    n_paths: int
    seed: SeedRecord
    grid: TimeGrid


def _terminal_shape(model: AnyModel):
    if isinstance(model, TwoBlockModel):
        return (model.head.w0.shape, model.body.w0.shape)
    return model.w0.shape


def check_compatible(readout: ReadoutSpec, model: AnyModel, x) -> None:
    """Raise ValueError unless readout, model state, and x fit together."""
    shape = _terminal_shape(model)
    if isinstance(readout, ScalarNeuron):
        if isinstance(model, TwoBlockModel) or len(shape) != 1:
            raise ValueError("scalar-neuron readout needs a vector-state model")
        if x is None or np.shape(x) != shape:
            raise ValueError(
                f"input shape {np.shape(x)} does not match state shape {shape}"
            )
    elif isinstance(readout, VectorNeuron):
        if isinstance(model, TwoBlockModel) or len(shape) != 2:
            raise ValueError("vector-neuron readout needs a matrix-state model")
        if x is None or np.shape(x) != (shape[1],):
            raise ValueError(
                f"input shape {np.shape(x)} does not match state columns {shape[1]}"
            )
        if readout.v.shape != (shape[0],):
            raise ValueError(
                f"readout vector has {readout.v.size} entries for a "
                f"{shape[0]}-row state"
            )
    elif isinstance(readout, TwoBlockReadout):
        if not isinstance(model, TwoBlockModel):
            raise ValueError("two-block readout needs a TwoBlockModel")
        head_shape, body_shape = shape
        if x is None or np.shape(x) != (body_shape[1],):
            raise ValueError(
                f"input shape {np.shape(x)} does not match body columns "
                f"{body_shape[1]}"
            )
    elif isinstance(readout, LinearReadout):
        if isinstance(model, TwoBlockModel):
            raise ValueError("linear readout needs a single-block model")
        if readout.v.shape != (shape[0],):
            raise ValueError(
                f"readout vector has {readout.v.size} entries for state shape "
                f"{shape}"
            )
    else:
        raise TypeError(f"unknown readout {readout!r}")


def readout_values(readout: ReadoutSpec, terminals, x) -> np.ndarray:
    """Apply the readout to stacked terminal states; returns (N,) or (N, q)."""
    if isinstance(readout, ScalarNeuron):
        return readout.activation.value(terminals @ np.asarray(x, dtype=float))
    if isinstance(readout, VectorNeuron):
        pre = terminals @ np.asarray(x, dtype=float)
        return readout.activation.value(pre) @ readout.v
    if isinstance(readout, TwoBlockReadout):
        u_term, w_term = terminals
        pre = w_term @ np.asarray(x, dtype=float)
        return np.einsum("Np,Np->N", u_term, readout.activation.value(pre))
    if isinstance(readout, LinearReadout):
        if terminals.ndim == 2:  # (N, n) vectors
            return terminals @ readout.v
        return np.einsum("i,Niq->Nq", readout.v, terminals)
    raise TypeError(f"unknown readout {readout!r}")


def _two_block_ensemble(
    model: TwoBlockModel,
    grid: TimeGrid,
    n_paths: int,
    master: int,
    h_fn,
    stream_offset: int,
):
    head, body = model.head, model.body
    m_head = head.m
    dt = grid.dt
    nodes = grid.nodes
    trap = _trapezoid_weights(grid)

    u_term = np.empty((n_paths,) + head.w0.shape)
    w_term = np.empty((n_paths,) + body.w0.shape)
    log_weights = np.zeros(n_paths)

    for start in range(0, n_paths, CHUNK):
        stop = min(start + CHUNK, n_paths)
        incs = _ensemble_increments(
            master, stop - start, grid.n_steps, model.m, dt, stream_offset + start
        )
        _check_increments(incs, SeedRecord(master, stream_offset + start))
        u = np.broadcast_to(head.w0, (stop - start,) + head.w0.shape).copy()
        w = np.broadcast_to(body.w0, (stop - start,) + body.w0.shape).copy()
        logw = np.zeros(stop - start)
        if h_fn is not None:
            logw += trap[0] * np.asarray(h_fn((u, w), nodes[0]), dtype=float)
        for k in range(grid.n_steps):
            steps_u = linear_step_matrices(head, dt, incs[:, k, :m_head])
            steps_w = linear_step_matrices(body, dt, incs[:, k, m_head:])
            u = np.einsum("Nij,Nj->Ni", steps_u, u)
            w = steps_w @ w
            if h_fn is not None:
                logw += trap[k + 1] * np.asarray(
                    h_fn((u, w), nodes[k + 1]), dtype=float
                )
        u_term[start:stop] = u
        w_term[start:stop] = w
        log_weights[start:stop] = logw
    return (u_term, w_term), log_weights


def terminal_ensemble(
    model: AnyModel,
    grid: TimeGrid,
    n_paths: int,
    seed,
    h_fn=None,
    scheme: str = "exponential",
    stream_offset: int = 0,
):
    """Terminal states and log path weights over per-path substreams.

    For TwoBlockModel the terminals come back as a (head, body) pair of
    stacked arrays. General models fall back to a per-path Heun loop.
    """
    master = as_seed(seed).master
    if isinstance(model, TwoBlockModel):
        return _two_block_ensemble(model, grid, n_paths, master, h_fn, stream_offset)
    if isinstance(model, LinearSde):
        return linear_terminal_ensemble(
            model, grid, n_paths, seed, h_fn=h_fn, scheme=scheme,
            stream_offset=stream_offset,
        )
    terminals = np.empty((n_paths,) + model.w0.shape)
    log_weights = np.zeros(n_paths)
    for nu in range(n_paths):
        traj = sample_path_heun(model, grid, (master, stream_offset + nu))
        terminals[nu] = traj.terminal
        if h_fn is not None:
            log_weights[nu] = log_fk_weight(traj, h_fn)
    return terminals, log_weights


def estimate_from_terminals(
    readout: ReadoutSpec,
    terminals,
    log_weights: np.ndarray,
    x,
    record: SeedRecord,
    grid: TimeGrid,
    weighted: bool = True,
    stream_offset: int = 0,
) -> RealizationEstimate:
    """Turn a terminal ensemble into a weighted-readout estimate.

    Shared by realize_mc and the batched CLI path (one ensemble reused
    across many inputs x), so cached and uncached evaluation are the
    same arithmetic, bit for bit.
    """
    n_paths = log_weights.shape[0]
    values = np.asarray(readout_values(readout, terminals, x), dtype=float)
    if weighted:
        weights = np.exp(log_weights)
        values = values * (weights if values.ndim == 1 else weights[:, None])
    finite = np.isfinite(values)
    if not finite.all():
        nu = int(np.argwhere(~finite.reshape(n_paths, -1).all(axis=1))[0, 0])
        raise FloatingPointError(
            f"non-finite sample on path {nu} (seed master={record.master} "
            f"stream={stream_offset + nu})"
        )
    mean = np.mean(values, axis=0)
    stderr = np.std(values, axis=0, ddof=1) / np.sqrt(n_paths)
    if values.ndim == 1:
        mean = float(mean)
        stderr = float(stderr)
    return RealizationEstimate(mean, stderr, n_paths, record, grid)


def realize_mc(
    model: AnyModel,
    readout: ReadoutSpec,
    h_fn,
    x,
    n_paths: int,
    grid: TimeGrid,
    seed,
    scheme: str = "exponential",
    stream_offset: int = 0,
) -> RealizationEstimate:
    """Estimate E[exp(integral of h) * readout(terminal state)] at input x.

    Draws n_paths trajectories on per-path substreams of the master
    seed, weights each readout value by its Feynman-Kac factor, and
    returns the sample mean with stderr = sample std / sqrt(n_paths)
    (per coordinate for vector-valued readouts). Deterministic given
    (seed, n_paths, grid).
    """
    if n_paths < 2:
        raise ValueError(f"need at least 2 paths for a standard error, got {n_paths}")
    check_compatible(readout, model, x)
    record = as_seed(seed)
    terminals, log_weights = terminal_ensemble(
        model, grid, n_paths, record, h_fn=h_fn, scheme=scheme,
        stream_offset=stream_offset,
    )
    return estimate_from_terminals(
        readout, terminals, log_weights, x, record, grid,
        weighted=h_fn is not None, stream_offset=stream_offset,
    )


def constant_potential(c: float):
    """Potential h identically equal to c (a scalar broadcasts everywhere)."""
    c = float(c)

    def h_fn(w, t):
        return c

    return h_fn


def network_estimate(terminal_samples, x, activation) -> float:
    """Finite-sample network average (1/N) sum_nu u_nu . sigma(W_nu x).

    `terminal_samples` is a sequence of (u, W) pairs -- e.g. the zipped
    output of terminal_ensemble on a TwoBlockModel. No path weighting is
    applied; this is the plain empirical mean of the random-feature sum.
    """
    act = get_activation(activation)
    samples = list(terminal_samples)
    if not samples:
        raise ValueError("terminal_samples is empty")
    x = np.asarray(x, dtype=float)
    values = np.array(
        [np.asarray(u) @ act.value(np.asarray(w) @ x) for u, w in samples]
    )
    return float(np.mean(values))


def reference_penalty(xi: WeightTrajectory):
    """Potential h(w, t) = -|w - xi_t|^2 penalizing distance to a reference.

    xi is interpolated linearly between its grid nodes; the squared
    norm sums over all state axes and broadcasts over leading path
    axes, so the callable works in both per-path and ensemble modes.
    """
    nodes = xi.grid.nodes
    states = xi.states
    state_ndim = states.ndim - 1
    axes = tuple(range(-state_ndim, 0))

    def h_fn(w, t):
        t = float(np.clip(t, nodes[0], nodes[-1]))
        k = int(np.searchsorted(nodes, t, side="right") - 1)
        k = min(max(k, 0), nodes.size - 2)
        frac = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
        ref = (1.0 - frac) * states[k] + frac * states[k + 1]
        diff = np.asarray(w, dtype=float) - ref
        return -np.sum(diff * diff, axis=axes)

    return h_fn


def write_estimates_csv(rows, path) -> None:
    """Write (x, estimate) rows as `x_0..x_{q-1}, mean, stderr, N, seed`.

    Scalar estimates only; floats carry 17 significant digits.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no estimates to write")
    q = np.asarray(rows[0][0], dtype=float).size
    with open(path, "w", encoding="utf-8") as handle:
        labels = [f"x_{j}" for j in range(q)]
        handle.write(",".join(labels + ["mean", "stderr", "N", "seed"]) + "\n")
        for x, est in rows:
            x = np.asarray(x, dtype=float).ravel()
            if x.size != q:
                raise ValueError("inconsistent input dimensions across rows")
            if not np.isscalar(est.mean) and np.ndim(est.mean) > 0:
                raise ValueError("CSV export covers scalar estimates only")
            cells = [f"{v:.17g}" for v in x]
            cells += [
                f"{est.mean:.17g}",
                f"{est.stderr:.17g}",
                str(est.n_paths),
                str(est.seed.master),
            ]
            handle.write(",".join(cells) + "\n")
