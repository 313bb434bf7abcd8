"""Fitting harness: match the realized function to target data.

The loss is the mean squared error of the Monte Carlo realization over
a dataset of (x, y) pairs. Every loss evaluation reuses one fixed
master seed, so the objective is a deterministic function of the
parameter table (common random numbers); that makes finite-difference
gradients meaningful at far smaller path counts than independent
sampling would allow.

Two optimizers: central-difference gradient descent with step halving
(deterministic), and simultaneous-perturbation (SPSA) with the standard
decaying gain schedules (two evaluations per iteration regardless of
parameter count).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .activations import get_activation
from .lie import GeneratorCoeffs, SkewBasis
from .rng import DATASET_STREAM, PERTURB_STREAM, substream
from .sde import LinearSde, TimeGrid, linear_terminal_ensemble


@dataclass(frozen=True)
class Dataset:
    """Training pairs (inputs x_i, targets y_i)."""

    inputs: np.ndarray  # (P, q)
    targets: np.ndarray  # (P,)
    sphere: bool = False

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        targets = np.asarray(self.targets, dtype=float).ravel()
        if inputs.shape[0] != targets.shape[0]:
            raise ValueError(
                f"{inputs.shape[0]} inputs vs {targets.shape[0]} targets"
            )
        if not np.isfinite(targets).all():
            raise ValueError("targets must be finite")
        if self.sphere:
            norms = np.linalg.norm(inputs, axis=1)
            worst = np.abs(norms - 1.0).max()
            if worst > 1e-12:
                raise ValueError(
                    f"sphere-flagged inputs deviate from unit norm by {worst:.3e}"
                )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return self.targets.size


def uniform_sphere_inputs(n_points: int, dim: int, seed: int) -> np.ndarray:
    """Uniform points on S^{dim-1} from the dedicated dataset stream."""
    rng = substream(seed, DATASET_STREAM)
    raw = rng.normal(size=(n_points, dim))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def neuron_dataset(w_target, n_points: int, seed: int, activation="tanh") -> Dataset:
    """Pairs (x, sigma(w_target . x)) with x uniform on the sphere."""
    w_target = np.asarray(w_target, dtype=float)
    act = get_activation(activation)
    inputs = uniform_sphere_inputs(n_points, w_target.size, seed)
    return Dataset(inputs, act.value(inputs @ w_target), sphere=True)


def load_dataset_csv(path) -> Dataset:
    """Read `x_0..x_{q-1}, y` rows (header optional, # comments skipped)."""
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split(",")
            try:
                rows.append([float(cell) for cell in cells])
            except ValueError:
                continue  # header line
    if not rows:
        raise ValueError(f"no data rows in {path}")
    data = np.array(rows, dtype=float)
    if data.shape[1] < 2:
        raise ValueError("dataset rows need at least one input column and a target")
    return Dataset(data[:, :-1], data[:, -1])


def write_dataset_csv(dataset: Dataset, path) -> None:
    q = dataset.inputs.shape[1]
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(",".join([f"x_{j}" for j in range(q)] + ["y"]) + "\n")
        for x, y in zip(dataset.inputs, dataset.targets):
            handle.write(",".join(f"{v:.17g}" for v in x) + f",{y:.17g}\n")


@dataclass(frozen=True)
class FitProblem:
    """Everything a loss evaluation needs besides the parameter table."""

    basis: SkewBasis
    w0: np.ndarray
    grid: TimeGrid
    n_paths: int
    eval_seed: int
    dataset: Dataset
    activation: object = "tanh"

    def predictions(self, table: np.ndarray) -> np.ndarray:
        """Realized values at every dataset input under one shared ensemble.

        Trajectories do not depend on x, so one terminal ensemble serves
        the whole dataset; the readout is a single matrix product.
        """
        model = LinearSde.from_coeffs(
            GeneratorCoeffs(table), self.basis, self.w0
        )
        terminals, _ = linear_terminal_ensemble(
            model, self.grid, self.n_paths, self.eval_seed
        )
        act = get_activation(self.activation)
        values = act.value(terminals @ self.dataset.inputs.T)  # (N, P)
        return values.mean(axis=0)

    def loss(self, table: np.ndarray) -> float:
        residual = self.predictions(table) - self.dataset.targets
        return float(np.mean(residual * residual))


@dataclass(frozen=True)
class FitResult:
    table: np.ndarray
    losses: np.ndarray  # loss per accepted iterate, losses[0] = initial
    n_evaluations: int
    converged: bool


class FitDiverged(RuntimeError):
    """Loss became non-finite; carries the trace accumulated so far."""

    def __init__(self, message: str, losses):
        super().__init__(message)
        self.losses = np.asarray(losses, dtype=float)


def _check_finite(value: float, losses) -> float:
    if not np.isfinite(value):
        raise FitDiverged(
            f"loss diverged to {value} after {len(losses)} iterations", losses
        )
    return value


def fit_cdgd(
    loss_fn: Callable,
    table0: np.ndarray,
    iterations: int,
    step_size: float = 0.5,
    fd_step: float = 1e-3,
    stop_loss: Optional[float] = None,
    callback: Optional[Callable] = None,
) -> FitResult:
    """Central-difference gradient descent with step halving.

    The loss must be deterministic (common random numbers), so a plain
    descent test is reliable: a step that does not reduce the loss is
    retried at half the size, and the step grows 20% after each accepted
    iterate. Stops early when loss <= stop_loss.
    """
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    table = np.array(table0, dtype=float)
    shape = table.shape
    flat = table.ravel()
    losses = [np.inf]
    losses[0] = _check_finite(float(loss_fn(table)), [])
    n_evals = 1
    lr = float(step_size)
    converged = stop_loss is not None and losses[0] <= stop_loss

    for it in range(iterations):
        if converged:
            break
        grad = np.empty_like(flat)
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] += fd_step
            up = float(loss_fn(bumped.reshape(shape)))
            bumped[i] -= 2.0 * fd_step
            down = float(loss_fn(bumped.reshape(shape)))
            n_evals += 2
            grad[i] = (up - down) / (2.0 * fd_step)
        if not np.isfinite(grad).all():
            raise FitDiverged(
                f"non-finite gradient at iteration {it}", losses
            )
        accepted = False
        for _ in range(30):
            trial = flat - lr * grad
            trial_loss = _check_finite(
                float(loss_fn(trial.reshape(shape))), losses
            )
            n_evals += 1
            if trial_loss < losses[-1]:
                flat = trial
                losses.append(trial_loss)
                lr *= 1.2
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            converged = True  # no descent direction at this resolution
            break
        if callback is not None:
            callback(it, flat.reshape(shape), losses[-1])
        if stop_loss is not None and losses[-1] <= stop_loss:
            converged = True
    return FitResult(flat.reshape(shape), np.array(losses), n_evals, converged)


def fit_spsa(
    loss_fn: Callable,
    table0: np.ndarray,
    iterations: int,
    seed: int,
    step_size: float = 0.2,
    perturb_size: float = 0.05,
    callback: Optional[Callable] = None,
) -> FitResult:
    """Simultaneous-perturbation descent: two evaluations per iteration.

    Gains follow the standard schedules a_k = a/(k+1+A)^0.602 with
    A = 0.1 * iterations and c_k = c/(k+1)^0.101; perturbation signs come
    from the dedicated perturbation substream of `seed`.
    """
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    table = np.array(table0, dtype=float)
    shape = table.shape
    flat = table.ravel()
    rng = substream(seed, PERTURB_STREAM)
    big_a = 0.1 * max(iterations, 1)
    losses = [_check_finite(float(loss_fn(table)), [])]
    n_evals = 1

    for k in range(iterations):
        a_k = step_size / (k + 1 + big_a) ** 0.602
        c_k = perturb_size / (k + 1) ** 0.101
        delta = rng.integers(0, 2, size=flat.size) * 2.0 - 1.0
        up = float(loss_fn((flat + c_k * delta).reshape(shape)))
        down = float(loss_fn((flat - c_k * delta).reshape(shape)))
        n_evals += 2
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FitDiverged(f"non-finite loss at iteration {k}", losses)
        grad_est = (up - down) / (2.0 * c_k) / delta
        flat = flat - a_k * grad_est
        current = _check_finite(float(loss_fn(flat.reshape(shape))), losses)
        n_evals += 1
        losses.append(current)
        if callback is not None:
            callback(k, flat.reshape(shape), current)
    return FitResult(flat.reshape(shape), np.array(losses), n_evals, False)
