"""Go/no-go acceptance suite.

Ten checks, each printing one `ACCEPTANCE <n>: PASS/FAIL` line (visible
with `pytest -s` or in the captured output of a failing run). Tolerances
and runtime budgets are asserted, not just reported.
"""
import os
import time

import numpy as np
import pytest

import sdecade.realize as realize_mod
from sdecade.cascade_ode import solve_activation
from sdecade.cascade_sim import (
    abelian_rotation_setup,
    coordinate_fields,
    heisenberg_setup,
    scalar_decay_setup,
    verify_simulation,
)
from sdecade.cli import main
from sdecade.fitting import (
    Dataset,
    FitProblem,
    fit_cdgd,
    neuron_dataset,
    uniform_sphere_inputs,
)
from sdecade.fk_pde import Coefficients1D, Grid1D, solve_fk
from sdecade.lie import (
    GeneratorCoeffs,
    NeuralField,
    iterated_ad,
    skew_basis,
    vf_bracket,
)
from sdecade.linalg import expm
from sdecade.realize import ScalarNeuron, realize_mc, constant_potential
from sdecade.rng import SeedRecord
from sdecade.sde import (
    GeneralSde,
    LinearSde,
    TimeGrid,
    WeightTrajectory,
    ito_correction,
    sample_path_linear,
)


def report(num, ok, detail):
    print(f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num} failed: {detail}"


def brockett_model(w0, m=2, seed=12, scale=0.8):
    rng = np.random.default_rng(seed)
    table = scale * rng.normal(size=(m + 1, 3))
    return LinearSde.from_coeffs(GeneratorCoeffs(table), skew_basis(3), w0)


def test_criterion_01_manifold_preservation():
    t0 = time.perf_counter()
    grid = TimeGrid(1000)
    sphere = brockett_model(np.array([1.0, 0.0, 0.0]))
    traj = sample_path_linear(sphere, grid, seed=101)
    norm_defect = np.abs(np.linalg.norm(traj.states, axis=1) - 1.0).max()

    ortho = brockett_model(np.eye(3))
    mtraj = sample_path_linear(ortho, grid, seed=102)
    grams = mtraj.states.transpose(0, 2, 1) @ mtraj.states - np.eye(3)
    ortho_defect = np.abs(grams).max()
    elapsed = time.perf_counter() - t0

    ok = norm_defect <= 1e-12 and ortho_defect <= 1e-11 and elapsed < 1.0
    report(
        1, ok,
        f"sphere norm defect {norm_defect:.2e} (<=1e-12), orthogonality "
        f"defect {ortho_defect:.2e} (<=1e-11), {elapsed:.2f}s",
    )


def test_criterion_02_ito_correction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    a_mat = rng.normal(size=(3, 3))
    b_mats = rng.normal(size=(2, 3, 3))
    model = LinearSde(a_mat, b_mats, np.array([1.0, 0.0, 0.0]))
    w = rng.normal(size=3)
    corrected = ito_correction(model, w)
    formula = (a_mat + 0.5 * sum(b @ b for b in b_mats)) @ w
    linear_err = np.abs(corrected - formula).max()

    def b0(state):
        return np.array([np.sin(state[0]), state[0] * state[1]])

    def b0_jac(state):
        return np.array(
            [[np.cos(state[0]), 0.0], [state[1], state[0]]]
        )

    general = GeneralSde(
        drift=lambda s: -s,
        diffusions=(b0,),
        w0=np.array([0.4, -0.7]),
        diffusion_jacobians=(b0_jac,),
    )
    point = np.array([0.3, 0.8])
    got = ito_correction(general, point) - general.drift(point)
    eps = 1e-6
    fd = (b0(point + eps * b0(point)) - b0(point - eps * b0(point))) / (2 * eps)
    general_err = np.abs(got - 0.5 * fd).max()
    elapsed = time.perf_counter() - t0

    ok = linear_err <= 1e-13 and general_err <= 1e-6 and elapsed < 1.0
    report(
        2, ok,
        f"linear formula gap {linear_err:.2e} (<=1e-13), finite-difference "
        f"gap {general_err:.2e} (<=1e-6), {elapsed:.2f}s",
    )


def test_criterion_03_mc_vs_pde_cross_validation():
    t0 = time.perf_counter()
    model = LinearSde(np.array([[0.05]]), np.array([[[0.2]]]), np.array([1.0]))
    est = realize_mc(
        model, ScalarNeuron(), None, np.array([0.8]),
        100_000, TimeGrid(256), seed=424242,
    )
    pde = solve_fk(
        Coefficients1D.from_scalar_linear(0.05, 0.2), None, "tanh", 0.8,
        Grid1D(0.125, 8.0, 801, 512, 1.0),
    )
    gap = abs(est.mean - pde)
    tol = 3.0 * est.stderr + 1e-3
    elapsed = time.perf_counter() - t0
    ok = gap <= tol and elapsed < 60.0
    report(
        3, ok,
        f"|mc - pde| = {gap:.3e} <= {tol:.3e} at N=1e5, M=801, {elapsed:.1f}s",
    )


def test_criterion_04_closed_form_moment():
    t0 = time.perf_counter()
    theta1, theta2, w0, x = 0.3, 0.6, 1.0, 2.0
    model = LinearSde(
        np.array([[theta1]]), np.array([[[theta2]]]), np.array([w0])
    )
    est = realize_mc(
        model, ScalarNeuron("identity"), None, np.array([x]),
        100_000, TimeGrid(256), seed=515151,
    )
    exact = x * w0 * np.exp(theta1 + 0.5 * theta2**2)
    z_score = abs(est.mean - exact) / est.stderr
    elapsed = time.perf_counter() - t0
    ok = z_score <= 3.0 and elapsed < 30.0
    report(
        4, ok,
        f"moment z-score {z_score:.2f} (<=3) against x*w0*exp(t1+t2^2/2), "
        f"{elapsed:.1f}s",
    )


def test_criterion_05_constant_potential_factorization():
    model = brockett_model(np.array([1.0, 0.0, 0.0]), seed=3)
    grid = TimeGrid(64)
    x = np.array([0.3, -0.5, 0.8])
    c = 0.37
    base = realize_mc(model, ScalarNeuron(), None, x, 500, grid, 44)
    shifted = realize_mc(
        model, ScalarNeuron(), constant_potential(c), x, 500, grid, 44
    )
    rel = abs(shifted.mean - np.exp(c) * base.mean) / abs(shifted.mean)
    ok = rel <= 1e-12
    report(5, ok, f"exp(c) factorization relative error {rel:.2e} (<=1e-12)")


def test_criterion_06_cascade_ode_oracle():
    rng = np.random.default_rng(5)
    w = 0.7 * rng.normal(size=(3, 3))
    n_steps = 256
    grid = TimeGrid(n_steps)
    const = WeightTrajectory(
        grid,
        np.broadcast_to(w, (n_steps + 1, 3, 3)).copy(),
        np.zeros((n_steps, 1)),
        SeedRecord(0),
    )
    x = np.array([0.4, -0.2, 0.7])
    z1 = solve_activation(const, x, "identity").terminal
    exact = expm(w) @ x
    rel = np.linalg.norm(z1 - exact) / np.linalg.norm(exact)

    model = brockett_model(np.eye(3), seed=3)
    traj = sample_path_linear(model, TimeGrid(64), seed=17)
    ref = solve_activation(traj, x, "tanh", substeps=64).terminal
    errs = [
        np.linalg.norm(solve_activation(traj, x, "tanh", substeps=s).terminal - ref)
        for s in (1, 2, 4)
    ]
    factors = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = rel <= 1e-8 and all(8.0 <= f <= 32.0 for f in factors)
    report(
        6, ok,
        f"exp oracle rel {rel:.2e} (<=1e-8), RK4 refinement factors "
        f"{factors[0]:.1f}, {factors[1]:.1f} (in [8,32])",
    )


def test_criterion_07_cascade_simulation_theorem():
    t0 = time.perf_counter()
    ab_setup, ab_x = abelian_rotation_setup()
    sc_setup, sc_x = scalar_decay_setup()

    ab_max = verify_simulation(ab_setup, ab_x, 1.0, 512, 7001, 100).sup_gaps.max()
    sc_max = verify_simulation(sc_setup, sc_x, 1.0, 512, 7001, 100).sup_gaps.max()

    ratios = []
    for setup, x, base in ((ab_setup, ab_x, 7100), (sc_setup, sc_x, 7300)):
        coarse = verify_simulation(setup, x, 1.0, 256, base, 100).sup_gaps.mean()
        fine = verify_simulation(setup, x, 1.0, 512, base + 1, 100).sup_gaps.mean()
        ratios.append(coarse / fine)

    heis_setup, heis_x = heisenberg_setup()
    rng = np.random.default_rng(31)
    w_probe = np.array([0.5, -0.3, 0.2])
    fields_ref = coordinate_fields(heis_setup, w_probe, rng.normal(size=6))
    z_dev = max(
        np.abs(
            coordinate_fields(heis_setup, w_probe, rng.normal(size=6)) - fields_ref
        ).max()
        for _ in range(10)
    )
    heis_max = verify_simulation(
        heis_setup, heis_x, 1.0, 1024, 888, 20
    ).sup_gaps.max()
    elapsed = time.perf_counter() - t0

    ok = (
        ab_max <= 2e-3
        and sc_max <= 2e-3
        and all(1.2 <= r <= 2.8 for r in ratios)
        and z_dev <= 1e-8
        and heis_max <= 5e-3
        and elapsed < 120.0
    )
    report(
        7, ok,
        f"sup gaps abelian {ab_max:.2e} / scalar {sc_max:.2e} (<=2e-3), "
        f"halving ratios {ratios[0]:.2f}, {ratios[1]:.2f} (2 +/- 40%), "
        f"nilpotent z-dev {z_dev:.2e} (<=1e-8) gap {heis_max:.2e} (<=5e-3), "
        f"{elapsed:.0f}s",
    )


def _fitted_degree(zs, values):
    scale = max(float(np.abs(values).max()), 1e-30)
    for degree in range(zs.size - 1):
        coeffs = np.polynomial.polynomial.polyfit(zs, values, degree)
        recon = np.polynomial.polynomial.polyval(zs, coeffs)
        if np.abs(recon - values).max() <= 1e-7 * scale:
            return degree
    return -1


def test_criterion_08_bracket_suite():
    rng = np.random.default_rng(21)
    f = NeuralField(rng.normal(size=(3, 3)), "tanh")
    g = NeuralField(rng.normal(size=(3, 3)), "tanh")
    points = rng.normal(size=(5, 3))

    antisym = max(
        np.abs(vf_bracket(f, g, z) + vf_bracket(g, f, z)).max() for z in points
    )

    w1 = rng.normal(size=(3, 3))
    w2 = rng.normal(size=(3, 3))
    lin_f = NeuralField(w1, "identity")
    lin_g = NeuralField(w2, "identity")
    commutator_err = max(
        np.abs(vf_bracket(lin_f, lin_g, z) - (w2 @ w1 - w1 @ w2) @ z).max()
        for z in points
    )

    z = points[0]
    eps = 1e-5
    jac_f = np.column_stack(
        [
            (f.value(z + eps * e) - f.value(z - eps * e)) / (2 * eps)
            for e in np.eye(3)
        ]
    )
    jac_g = np.column_stack(
        [
            (g.value(z + eps * e) - g.value(z - eps * e)) / (2 * eps)
            for e in np.eye(3)
        ]
    )
    fd_bracket = jac_g @ f.value(z) - jac_f @ g.value(z)
    fd_err = np.abs(vf_bracket(f, g, z) - fd_bracket).max()

    cubic_f = NeuralField(np.array([[1.0]]), "cubic-plus-one")
    cubic_g = NeuralField(np.array([[2.0]]), "cubic-plus-one")
    zs = np.linspace(-1.0, 1.0, 13)
    degrees = [
        _fitted_degree(
            zs,
            np.array([iterated_ad(cubic_f, cubic_g, k, np.array([t]))[0] for t in zs]),
        )
        for k in (1, 2, 3)
    ]

    ok = (
        antisym <= 1e-12
        and commutator_err <= 1e-12
        and fd_err <= 1e-6
        and degrees[0] < degrees[1] < degrees[2]
    )
    report(
        8, ok,
        f"antisymmetry {antisym:.2e} (<=1e-12), identity commutator "
        f"{commutator_err:.2e} (<=1e-12), FD gap {fd_err:.2e} (<=1e-6), "
        f"cubic bracket degrees {degrees} strictly increasing",
    )


def test_criterion_09_figure_style_fit():
    t0 = time.perf_counter()
    basis = skew_basis(3)
    w0 = np.array([1.0, 0.0, 0.0])
    theta_star = np.array(
        [[0.2, -0.1, 0.3], [0.8, 0.1, -0.3], [-0.2, 0.7, 0.4]]
    )

    dataset = neuron_dataset(np.array([1.0, -0.5, 0.8]), 500, seed=314159)
    constant_mse = float(np.mean((dataset.targets - dataset.targets.mean()) ** 2))
    problem = FitProblem(basis, w0, TimeGrid(64), 2000, 271828, dataset)
    res = fit_cdgd(
        problem.loss, theta_star, iterations=60, stop_loss=constant_mse / 25.0
    )
    fit_ratio = constant_mse / res.losses[-1]

    inputs = uniform_sphere_inputs(40, 3, seed=112233)
    oracle = FitProblem(
        basis, w0, TimeGrid(64), 20_000, 555666,
        Dataset(inputs, np.zeros(40), sphere=True),
    )
    targets = oracle.predictions(theta_star)
    recovery = FitProblem(
        basis, w0, TimeGrid(64), 2000, 555666,
        Dataset(inputs, targets, sphere=True),
    )
    start = theta_star + 0.4 * np.random.default_rng(9).normal(
        size=theta_star.shape
    )
    init_loss = recovery.loss(start)
    res2 = fit_cdgd(
        recovery.loss, start, iterations=60, stop_loss=init_loss / 20.0
    )
    recovery_ratio = res2.losses[0] / res2.losses[-1]
    elapsed = time.perf_counter() - t0

    ok = fit_ratio >= 5.0 and recovery_ratio >= 10.0 and elapsed < 600.0
    report(
        9, ok,
        f"neuron-target fit beats constant predictor {fit_ratio:.1f}x (>=5x), "
        f"recovery reduces loss {recovery_ratio:.1f}x (>=10x), {elapsed:.0f}s",
    )


THETA = "0.2,-0.4,0.3; 0.5,0.1,-0.2; -0.3,0.6,0.1"

CONFIGS = {
    "sample": (
        "model.kind = linear-vector\nmodel.n = 3\nmodel.m = 2\n"
        f"model.theta = {THETA}\nmodel.w0 = 1,0,0\n"
        "grid.steps = 64\nsampling.paths = 2\nsampling.seed = 11\n"
    ),
    "realize": (
        "model.kind = linear-vector\nmodel.n = 3\nmodel.m = 2\n"
        f"model.theta = {THETA}\nmodel.w0 = 1,0,0\n"
        "grid.steps = 64\nsampling.paths = 300\nsampling.seed = 21\n"
        "readout.kind = scalar-neuron\nrealize.inputs = 0.3,-0.5,0.8; 1,0,0\n"
    ),
    "fit": (
        "model.kind = linear-vector\nmodel.n = 3\nmodel.m = 2\n"
        "model.theta = 0.2,-0.1,0.3; 0.8,0.1,-0.3; -0.2,0.7,0.4\n"
        "model.w0 = 1,0,0\n"
        "fit.target.kind = neuron\nfit.target.w = 1,-0.5,0.8\n"
        "fit.dataset.size = 20\nfit.dataset.seed = 314159\n"
        "fit.paths = 100\nfit.seed = 271828\nfit.grid_steps = 16\n"
        "fit.iterations = 1\n"
    ),
    "fk-check": (
        "fk.theta1 = 0.05\nfk.theta2 = 0.2\nfk.w0 = 1.0\nfk.x = 0.8\n"
        "fk.w_min = 0.125\nfk.w_max = 8.0\nfk.paths = 4000\nfk.seed = 99\n"
        "fk.steps = 128\nfk.nodes = 201\nfk.time_steps = 128\n"
    ),
    "cascade-check": (
        "cascade.preset = abelian\ncascade.steps = 512\ncascade.paths = 10\n"
        "cascade.seed = 20250816\ncascade.tolerance = 2e-3\n"
    ),
    "brackets": (
        "brackets.activation = cubic-plus-one\nbrackets.weight = 1\n"
        "brackets.weight2 = 2\nbrackets.kmax = 3\n"
    ),
}


def _dir_bytes(directory):
    out = {}
    for fname in sorted(os.listdir(directory)):
        with open(os.path.join(directory, fname), "rb") as handle:
            out[fname] = handle.read()
    return out


def test_criterion_10_byte_identical_reruns(tmp_path, monkeypatch):
    details = []
    ok = True
    for command, text in CONFIGS.items():
        cfg = tmp_path / f"{command}.cfg"
        cfg.write_text(text)
        out_a = tmp_path / f"{command}_a"
        out_b = tmp_path / f"{command}_b"
        code_a = main([command, "--config", str(cfg), "--out", str(out_a)])
        code_b = main([command, "--config", str(cfg), "--out", str(out_b)])
        same = code_a == code_b == 0 and _dir_bytes(out_a) == _dir_bytes(out_b)
        ok = ok and same
        details.append(f"{command}:{'ok' if same else 'DIFF'}")

    # batching (the parallelism knob) must not leak into results
    cfg = tmp_path / "realize.cfg"
    out_c = tmp_path / "realize_c"
    monkeypatch.setattr(realize_mod, "CHUNK", 7)
    code_c = main(["realize", "--config", str(cfg), "--out", str(out_c)])
    chunked_same = code_c == 0 and _dir_bytes(out_c) == _dir_bytes(
        tmp_path / "realize_a"
    )
    ok = ok and chunked_same
    details.append(f"rechunked-realize:{'ok' if chunked_same else 'DIFF'}")

    report(10, ok, "rerun bytes " + ", ".join(details))
