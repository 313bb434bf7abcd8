"""Command-line harness.

    sdecade <command> --config <file> [--seed <u64>] [--out <dir>]

Commands: sample (write weight trajectories), realize (batch Monte
Carlo estimates over inputs), fit (match the realized function to a
target), fk-check (Monte Carlo vs 1-D PDE cross-validation),
cascade-check (paired-path simulation equivalence), brackets (iterated
vector-field bracket tables).

Exit codes: 0 success / validation passed, 1 a validation check failed
or the run diverged, 2 configuration error. Every command is a pure
function of (config file, seed): rerunning reproduces its output files
byte for byte. --seed overrides the command's master seed key; --out
overrides output.dir.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .cascade_sim import PRESETS, verify_simulation, write_report_csv
from .config import ConfigError, ExperimentConfig
from .fitting import (
    FitDiverged,
    FitProblem,
    fit_cdgd,
    fit_spsa,
    load_dataset_csv,
    neuron_dataset,
)
from .fk_pde import Coefficients1D, Grid1D, solve_fk
from .lie import GeneratorCoeffs, NeuralField, skew_basis, iterated_ad
from .realize import (
    LinearReadout,
    ScalarNeuron,
    TwoBlockReadout,
    VectorNeuron,
    check_compatible,
    constant_potential,
    estimate_from_terminals,
    realize_mc,
    reference_penalty,
    terminal_ensemble,
    write_estimates_csv,
)
from .rng import as_seed
from .sde import (
    LinearSde,
    TimeGrid,
    read_trajectory_csv,
    sample_path_heun,
    sample_path_linear,
    write_trajectory_csv,
)

_MODEL_KEYS = {
    "model.kind", "model.n", "model.m", "model.basis", "model.theta", "model.w0",
}
_READOUT_KEYS = {"readout.kind", "readout.activation", "readout.v"}
_H_KEYS = {"h.kind", "h.constant", "h.reference_file"}
_OUTPUT_KEYS = {"output.dir"}

_SCHEMAS = {
    "sample": (
        _MODEL_KEYS | _OUTPUT_KEYS
        | {"grid.steps", "sampling.paths", "sampling.seed", "sample.scheme"},
        _MODEL_KEYS - {"model.basis"} | {"sampling.paths", "sampling.seed"},
    ),
    "realize": (
        _MODEL_KEYS | _READOUT_KEYS | _H_KEYS | _OUTPUT_KEYS
        | {"grid.steps", "sampling.paths", "sampling.seed",
           "realize.inputs", "realize.inputs_file"},
        _MODEL_KEYS - {"model.basis"}
        | {"sampling.paths", "sampling.seed", "readout.kind"},
    ),
    "fit": (
        _MODEL_KEYS | _OUTPUT_KEYS
        | {"readout.activation", "fit.target.kind", "fit.target.w",
           "fit.target.activation", "fit.dataset.size", "fit.dataset.seed",
           "fit.dataset.file", "fit.paths", "fit.seed", "fit.grid_steps",
           "fit.optimizer", "fit.iterations", "fit.step_size", "fit.fd_step",
           "fit.perturb_size", "fit.stop_loss"},
        _MODEL_KEYS - {"model.basis"}
        | {"fit.target.kind", "fit.paths", "fit.seed", "fit.iterations"},
    ),
    "fk-check": (
        _OUTPUT_KEYS
        | {"fk.theta1", "fk.theta2", "fk.w0", "fk.x", "fk.activation",
           "fk.h_constant", "fk.paths", "fk.seed", "fk.steps", "fk.nodes",
           "fk.time_steps", "fk.w_min", "fk.w_max", "fk.tolerance"},
        {"fk.theta1", "fk.theta2", "fk.w0", "fk.x", "fk.paths", "fk.seed",
         "fk.w_min", "fk.w_max"},
    ),
    "cascade-check": (
        _OUTPUT_KEYS
        | {"cascade.preset", "cascade.steps", "cascade.paths", "cascade.seed",
           "cascade.mode", "cascade.horizon", "cascade.tolerance"},
        {"cascade.preset", "cascade.paths", "cascade.seed", "cascade.tolerance"},
    ),
    "brackets": (
        _OUTPUT_KEYS
        | {"brackets.activation", "brackets.weight", "brackets.weight2",
           "brackets.kmax", "brackets.points"},
        {"brackets.weight", "brackets.weight2"},
    ),
}

_SEED_OVERRIDES = {
    "sample": "sampling.seed",
    "realize": "sampling.seed",
    "fit": "fit.seed",
    "fk-check": "fk.seed",
    "cascade-check": "cascade.seed",
    "brackets": None,
}


def _build_model(cfg: ExperimentConfig) -> LinearSde:
    kind = cfg.get_choice("model.kind", {"linear-vector", "linear-matrix"})
    n = cfg.get_int("model.n")
    m = cfg.get_int("model.m")
    cfg.get_choice("model.basis", {"skew"}, default="skew")
    basis = skew_basis(n)
    theta = cfg.get_matrix("model.theta")
    if theta.shape != (m + 1, len(basis)):
        raise ConfigError(
            f"model.theta must be {(m + 1, len(basis))} for n={n}, m={m}; "
            f"got {theta.shape}"
        )
    if kind == "linear-vector":
        w0 = cfg.get_vector("model.w0")
        if w0.shape != (n,):
            raise ConfigError(f"model.w0 must have {n} entries, got {w0.size}")
    else:
        raw = cfg.get_str("model.w0")
        w0 = np.eye(n) if raw.strip() == "identity" else cfg.get_matrix("model.w0")
        if w0.shape[0] != n:
            raise ConfigError(f"model.w0 must have {n} rows, got {w0.shape}")
    return LinearSde.from_coeffs(GeneratorCoeffs(theta), basis, w0)


def _build_grid(cfg: ExperimentConfig) -> TimeGrid:
    return TimeGrid(cfg.get_int("grid.steps", 256))


def _build_readout(cfg: ExperimentConfig):
    kind = cfg.get_choice(
        "readout.kind", {"scalar-neuron", "vector-neuron", "two-block", "linear"}
    )
    activation = cfg.get_str("readout.activation", "tanh")
    if kind == "scalar-neuron":
        return ScalarNeuron(activation)
    if kind == "vector-neuron":
        return VectorNeuron(cfg.get_vector("readout.v"), activation)
    if kind == "two-block":
        return TwoBlockReadout(activation)
    return LinearReadout(cfg.get_vector("readout.v"))


def _build_potential(cfg: ExperimentConfig):
    kind = cfg.get_choice("h.kind", {"none", "constant", "reference"}, default="none")
    if kind == "none":
        return None
    if kind == "constant":
        return constant_potential(cfg.get_float("h.constant"))
    xi = read_trajectory_csv(cfg.resolve_path("h.reference_file"))
    return reference_penalty(xi)


def _realize_inputs(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.has("realize.inputs") == cfg.has("realize.inputs_file"):
        raise ConfigError(
            "provide exactly one of realize.inputs / realize.inputs_file"
        )
    if cfg.has("realize.inputs"):
        return np.atleast_2d(cfg.get_matrix("realize.inputs"))
    rows = []
    with open(cfg.resolve_path("realize.inputs_file"), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(cell) for cell in line.split(",")])
            except ValueError:
                continue  # header
    if not rows:
        raise ConfigError("realize.inputs_file contains no input rows")
    return np.array(rows, dtype=float)


def cmd_sample(cfg: ExperimentConfig, out_dir: str) -> int:
    """Write sampled weight trajectories, one CSV per path."""
    model = _build_model(cfg)
    grid = _build_grid(cfg)
    n_paths = cfg.get_int("sampling.paths")
    master = cfg.get_seed("sampling.seed")
    scheme = cfg.get_choice(
        "sample.scheme", {"exponential", "heun"}, default="exponential"
    )
    sampler = sample_path_linear if scheme == "exponential" else sample_path_heun
    width = max(4, len(str(n_paths - 1)))
    for nu in range(n_paths):
        traj = sampler(model, grid, (master, nu))
        write_trajectory_csv(traj, os.path.join(out_dir, f"traj_{nu:0{width}d}.csv"))
    print(f"wrote {n_paths} trajectories to {out_dir} (scheme={scheme})")
    return 0


def cmd_realize(cfg: ExperimentConfig, out_dir: str) -> int:
    """Batch-estimate the realized function over the configured inputs.

    The trajectory ensemble is sampled once and reused for every input
    row (the trajectories do not depend on x; only the readout does).
    """
    model = _build_model(cfg)
    grid = _build_grid(cfg)
    readout = _build_readout(cfg)
    h_fn = _build_potential(cfg)
    inputs = _realize_inputs(cfg)
    n_paths = cfg.get_int("sampling.paths")
    record = as_seed(cfg.get_seed("sampling.seed"))
    for x in inputs:
        check_compatible(readout, model, x)
    terminals, log_weights = terminal_ensemble(
        model, grid, n_paths, record, h_fn=h_fn
    )
    rows = []
    for x in inputs:
        est = estimate_from_terminals(
            readout, terminals, log_weights, x, record, grid,
            weighted=h_fn is not None,
        )
        rows.append((x, est))
        print(
            f"x={np.array2string(x, precision=6)} mean={est.mean:.10g} "
            f"stderr={est.stderr:.4g}"
        )
    out_path = os.path.join(out_dir, "estimates.csv")
    write_estimates_csv(rows, out_path)
    print(f"wrote {len(rows)} estimates to {out_path}")
    return 0


def cmd_fit(cfg: ExperimentConfig, out_dir: str) -> int:
    """Fit the generator table so the realized function matches a target."""
    if cfg.get_choice("model.kind", {"linear-vector", "linear-matrix"}) != \
            "linear-vector":
        raise ConfigError("fitting drives the vector-state scalar readout only")
    n = cfg.get_int("model.n")
    m = cfg.get_int("model.m")
    cfg.get_choice("model.basis", {"skew"}, default="skew")
    basis = skew_basis(n)
    theta0 = cfg.get_matrix("model.theta")
    if theta0.shape != (m + 1, len(basis)):
        raise ConfigError(
            f"model.theta must be {(m + 1, len(basis))}, got {theta0.shape}"
        )
    w0 = cfg.get_vector("model.w0")
    activation = cfg.get_str("readout.activation", "tanh")

    target_kind = cfg.get_choice("fit.target.kind", {"neuron", "dataset"})
    if target_kind == "neuron":
        dataset = neuron_dataset(
            cfg.get_vector("fit.target.w"),
            cfg.get_int("fit.dataset.size", 500),
            cfg.get_seed("fit.dataset.seed"),
            cfg.get_str("fit.target.activation", "tanh"),
        )
    else:
        dataset = load_dataset_csv(cfg.resolve_path("fit.dataset.file"))
    if dataset.inputs.shape[1] != n:
        raise ConfigError(
            f"dataset inputs have dimension {dataset.inputs.shape[1]}, model has {n}"
        )

    problem = FitProblem(
        basis=basis,
        w0=w0,
        grid=TimeGrid(cfg.get_int("fit.grid_steps", 64)),
        n_paths=cfg.get_int("fit.paths"),
        eval_seed=cfg.get_seed("fit.seed"),
        dataset=dataset,
        activation=activation,
    )
    optimizer = cfg.get_choice("fit.optimizer", {"cdgd", "spsa"}, default="cdgd")
    iterations = cfg.get_int("fit.iterations")
    stop_loss = cfg.get_float("fit.stop_loss") if cfg.has("fit.stop_loss") else None
    try:
        if optimizer == "cdgd":
            result = fit_cdgd(
                problem.loss,
                theta0,
                iterations,
                step_size=cfg.get_float("fit.step_size", 0.5),
                fd_step=cfg.get_float("fit.fd_step", 1e-3),
                stop_loss=stop_loss,
            )
        else:
            result = fit_spsa(
                problem.loss,
                theta0,
                iterations,
                seed=cfg.get_seed("fit.seed"),
                step_size=cfg.get_float("fit.step_size", 0.2),
                perturb_size=cfg.get_float("fit.perturb_size", 0.05),
            )
    except FitDiverged as exc:
        trace_path = os.path.join(out_dir, "loss_trace.csv")
        _write_loss_trace(exc.losses, trace_path)
        print(f"fit diverged: {exc} (trace in {trace_path})", file=sys.stderr)
        return 1

    trace_path = os.path.join(out_dir, "loss_trace.csv")
    _write_loss_trace(result.losses, trace_path)
    theta_path = os.path.join(out_dir, "theta_fit.csv")
    with open(theta_path, "w", encoding="utf-8") as handle:
        for row in result.table:
            handle.write(",".join(f"{v:.17g}" for v in row) + "\n")
    initial, final = result.losses[0], result.losses[-1]
    print(
        f"loss {initial:.6g} -> {final:.6g} "
        f"({initial / max(final, 1e-300):.2f}x reduction, "
        f"{result.n_evaluations} evaluations)"
    )
    print(f"wrote {trace_path} and {theta_path}")
    return 0


def _write_loss_trace(losses, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("iteration,loss\n")
        for i, value in enumerate(np.asarray(losses, dtype=float)):
            handle.write(f"{i},{value:.17g}\n")


def cmd_fk_check(cfg: ExperimentConfig, out_dir: str) -> int:
    """Cross-validate Monte Carlo realization against the 1-D PDE solve."""
    theta1 = cfg.get_float("fk.theta1")
    theta2 = cfg.get_float("fk.theta2")
    w0 = cfg.get_float("fk.w0")
    x = cfg.get_float("fk.x")
    activation = cfg.get_str("fk.activation", "tanh")
    h_fn = (
        constant_potential(cfg.get_float("fk.h_constant"))
        if cfg.has("fk.h_constant")
        else None
    )

    model = LinearSde(
        np.array([[theta1]]), np.array([[[theta2]]]), np.array([w0])
    )
    est = realize_mc(
        model,
        ScalarNeuron(activation),
        h_fn,
        np.array([x]),
        cfg.get_int("fk.paths"),
        TimeGrid(cfg.get_int("fk.steps", 256)),
        cfg.get_seed("fk.seed"),
    )
    grid1d = Grid1D(
        cfg.get_float("fk.w_min"),
        cfg.get_float("fk.w_max"),
        cfg.get_int("fk.nodes", 801),
        cfg.get_int("fk.time_steps", 512),
        w_eval=w0,
    )
    pde_value = solve_fk(
        Coefficients1D.from_scalar_linear(theta1, theta2), h_fn, activation, x,
        grid1d,
    )
    gap = abs(est.mean - pde_value)
    tolerance = 3.0 * est.stderr + cfg.get_float("fk.tolerance", 1e-3)
    verdict = "pass" if gap <= tolerance else "FAIL"
    report_path = os.path.join(out_dir, "fk_report.txt")
    with open(report_path, "w", encoding="utf-8") as handle:
        handle.write(f"mc_mean = {est.mean:.17g}\n")
        handle.write(f"mc_stderr = {est.stderr:.17g}\n")
        handle.write(f"pde_value = {pde_value:.17g}\n")
        handle.write(f"gap = {gap:.17g}\n")
        handle.write(f"tolerance = {tolerance:.17g}\n")
        handle.write(f"verdict = {verdict}\n")
    print(
        f"mc={est.mean:.8g} (stderr {est.stderr:.3g})  pde={pde_value:.8g}  "
        f"gap={gap:.3g} tol={tolerance:.3g}  {verdict}"
    )
    return 0 if gap <= tolerance else 1


def cmd_cascade_check(cfg: ExperimentConfig, out_dir: str) -> int:
    """Run the paired-path simulation equivalence check on a preset."""
    preset = cfg.get_choice("cascade.preset", set(PRESETS))
    tolerance = cfg.get_float("cascade.tolerance")
    if tolerance <= 0:
        raise ConfigError("cascade.tolerance must be positive")
    horizon = cfg.get_float("cascade.horizon", 1.0)
    setup, x = PRESETS[preset]()
    report = verify_simulation(
        setup,
        x,
        horizon,
        TimeGrid(cfg.get_int("cascade.steps", 512), 0.0, horizon),
        cfg.get_seed("cascade.seed"),
        cfg.get_int("cascade.paths"),
        mode=cfg.get_choice(
            "cascade.mode", {"auto", "abelian", "empirical"}, default="auto"
        ),
    )
    q95 = report.gap_quantile(0.95)
    report_path = os.path.join(out_dir, "cascade_report.csv")
    write_report_csv(report, report_path)
    verdict = "pass" if q95 <= tolerance else "FAIL"
    print(
        f"preset={preset} mode={report.mode} paths={report.n_paths} "
        f"q95_gap={q95:.3g} max_gap={report.sup_gaps.max():.3g} "
        f"exited={report.exited_fraction:.2f} tol={tolerance:.3g}  {verdict}"
    )
    print(f"wrote {report_path}")
    return 0 if q95 <= tolerance else 1


def _polynomial_degree(zs: np.ndarray, values: np.ndarray) -> int:
    """Smallest fitting polynomial degree, or -1 if nothing fits cleanly."""
    scale = max(float(np.abs(values).max()), 1e-30)
    for degree in range(zs.size - 1):
        coeffs = np.polynomial.polynomial.polyfit(zs, values, degree)
        recon = np.polynomial.polynomial.polyval(zs, coeffs)
        if np.abs(recon - values).max() <= 1e-7 * scale:
            return degree
    return -1


def cmd_brackets(cfg: ExperimentConfig, out_dir: str) -> int:
    """Tabulate iterated brackets of two neural fields at sample points."""
    activation = cfg.get_str("brackets.activation", "tanh")
    k_max = cfg.get_int("brackets.kmax", 3)
    if not 0 <= k_max <= 4:
        raise ConfigError(f"brackets.kmax must be in [0, 4], got {k_max}")
    weight_f = np.atleast_2d(cfg.get_matrix("brackets.weight"))
    weight_g = np.atleast_2d(cfg.get_matrix("brackets.weight2"))
    field_f = NeuralField(weight_f, activation)
    field_g = NeuralField(weight_g, activation)
    n = weight_f.shape[1]
    if cfg.has("brackets.points"):
        points = np.atleast_2d(cfg.get_matrix("brackets.points"))
        if points.shape[1] != n:
            raise ConfigError(
                f"brackets.points rows must have {n} columns, got {points.shape[1]}"
            )
    elif n == 1:
        points = np.linspace(-1.0, 1.0, 13)[:, None]
    else:
        raise ConfigError("brackets.points is required for multi-dimensional fields")

    table = np.empty((points.shape[0], k_max + 1, n))
    for p, z in enumerate(points):
        for k in range(k_max + 1):
            table[p, k] = iterated_ad(field_f, field_g, k, z)

    out_path = os.path.join(out_dir, "brackets.csv")
    with open(out_path, "w", encoding="utf-8") as handle:
        labels = [f"z_{i}" for i in range(n)]
        for k in range(k_max + 1):
            labels += [f"ad{k}_{i}" for i in range(n)]
        handle.write(",".join(labels) + "\n")
        for p in range(points.shape[0]):
            cells = [f"{v:.17g}" for v in points[p]]
            for k in range(k_max + 1):
                cells += [f"{v:.17g}" for v in table[p, k]]
            handle.write(",".join(cells) + "\n")
        if n == 1:
            degrees = [
                _polynomial_degree(points[:, 0], table[:, k, 0])
                for k in range(k_max + 1)
            ]
            handle.write(
                "# " + " ".join(f"degree_k{k}={d}" for k, d in enumerate(degrees))
                + "\n"
            )
            print(
                "fitted degrees: "
                + ", ".join(f"k={k}: {d}" for k, d in enumerate(degrees))
            )
    print(f"wrote {out_path}")
    return 0


_COMMANDS = {
    "sample": cmd_sample,
    "realize": cmd_realize,
    "fit": cmd_fit,
    "fk-check": cmd_fk_check,
    "cascade-check": cmd_cascade_check,
    "brackets": cmd_brackets,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdecade",
        description="Stratonovich weight-diffusion sampling and validation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        cmd = sub.add_parser(name, help=fn.__doc__.splitlines()[0].lower())
        cmd.add_argument("--config", required=True, help="config file path")
        cmd.add_argument(
            "--seed", type=int, default=None,
            help="override the command's master seed key",
        )
        cmd.add_argument(
            "--out", default=None, help="override the output directory"
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_file(args.config)
        allowed, required = _SCHEMAS[args.command]
        cfg.validate_keys(allowed, required)
        if args.seed is not None:
            key = _SEED_OVERRIDES[args.command]
            if key is not None:
                entries = dict(cfg.entries)
                entries[key] = str(args.seed)
                cfg = ExperimentConfig(entries, cfg.base_dir)
        if args.out is not None:
            out_dir = args.out
        else:
            raw = cfg.get_str("output.dir", ".")
            out_dir = raw if os.path.isabs(raw) else os.path.join(cfg.base_dir, raw)
        os.makedirs(out_dir, exist_ok=True)
        return _COMMANDS[args.command](cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
