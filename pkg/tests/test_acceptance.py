"""Acceptance criteria, one test per criterion.

Each test records a verdict line (printed in the terminal summary) and then
asserts it, so a failing criterion shows up both as FAIL in the summary and
as a failed test.
"""
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import central_cg, spd_case
from dcgsim import linalg
from dcgsim.applications import (
    NoiseModel,
    assemble_normal_rows,
    barycentric_rows,
    build_localization_rows,
    central_localization_system,
    dcg_loc,
    generate_scene,
    inject_noise,
    random_sparse_rows,
)
from dcgsim.errors import DivergenceDetected
from dcgsim.experiment import ExperimentConfig, run_experiment
from dcgsim.network import Network, from_edges
from dcgsim.solvers import (
    SolverConfig,
    dcg_round_bound,
    default_epsilon,
    rows_from_dense,
    rows_to_dense,
    run_baseline,
    run_dcg,
)

SCENE_2D = dict(n=30, dim=2, anchors=3, reception_range=0.44, seed=7)
SCENE_3D = dict(n=40, dim=3, anchors=4, reception_range=0.59, seed=7)
SUITE = range(100)


def tight(b):
    # well below the default threshold, so the final estimate is accurate to ~1e-12
    return SolverConfig(epsilon=1e-24 * (1.0 + float(np.sum(np.asarray(b) ** 2))))


def rel_err(x, y):
    return float(np.linalg.norm(x - y) / max(np.linalg.norm(y), 1e-300))


@pytest.fixture(scope="module")
def oracle_suite():
    """Criteria 1 and 2 share a runtime budget, so time them together."""
    start = time.perf_counter()
    errors, excess = [], []
    for seed in SUITE:
        net, rows, a, b = spd_case(seed)
        trace, _, _ = run_dcg(rows, net, tight(b))
        errors.append(rel_err(trace.final_estimates[:, 0], linalg.direct_solve(a, b)))
        trace, _, _ = run_dcg(rows, net, SolverConfig(epsilon=1e-10 * (1.0 + float(b @ b))))
        excess.append(trace.outer_iterations - len(b) if trace.converged else None)
    return errors, excess, time.perf_counter() - start


def test_criterion_01_oracle_equivalence(oracle_suite, verdict):
    errors, _, elapsed = oracle_suite
    ok = max(errors) <= 1e-6 and elapsed < 10.0
    assert verdict(1, ok, f"max relative error {max(errors):.2e} (<= 1e-6), "
                          f"criteria 1+2 runtime {elapsed:.1f} s (< 10 s)")


def test_criterion_02_finite_termination(oracle_suite, verdict):
    _, excess, elapsed = oracle_suite
    converged = [e for e in excess if e is not None]
    ok = len(converged) == len(excess) and max(converged) <= 2 and elapsed < 10.0
    worst = max(converged) if converged else None
    assert verdict(2, ok, f"{len(converged)}/{len(excess)} converged, max(k - n) = {worst} (<= 2)")


def test_criterion_03_strict_round_bound(verdict):
    over = []
    for seed in SUITE:
        net, rows, _, b = spd_case(seed)
        trace, _, horizon = run_dcg(rows, net, SolverConfig(fidelity="strict"))
        assert trace.converged, seed
        bound = dcg_round_bound(horizon, len(b))
        if trace.n_rounds > bound:
            over.append((seed, trace.n_rounds, bound))
    detail = f"{len(over)}/{len(SUITE)} strict runs exceed 4Hn"
    if over:
        seed, rounds, bound = over[0]
        detail += f" (e.g. seed {seed}: {rounds} > {bound})"
    assert verdict(3, not over, detail)


def test_criterion_04_speedup(verdict):
    start = time.perf_counter()
    config = ExperimentConfig(n=50, dim=2, anchors=3, reception_range=0.35, seed=2, epsilon=1e-14)
    report = run_experiment(config, write=False)
    elapsed = time.perf_counter() - start
    dcg, rich = report.results["dcg"], report.results["richardson"]
    ratio = rich.outer_iterations / dcg.engine_rounds
    ok = (dcg.converged and rich.converged and dcg.final_mse < 1e-6 and rich.final_mse < 1e-6
          and ratio >= 100 and elapsed < 60.0)
    assert verdict(4, ok, f"DCG {dcg.engine_rounds} rounds vs Richardson {rich.outer_iterations} "
                          f"iterations = {ratio:.0f}x (>= 100x), MSE {dcg.final_mse:.1e} / "
                          f"{rich.final_mse:.1e}, {elapsed:.1f} s")


def test_criterion_05_localization_exactness(verdict):
    start = time.perf_counter()
    worst = 0.0
    converged = True
    for params in (SCENE_2D, SCENE_3D):
        scene = generate_scene(**params)
        bary = barycentric_rows(scene)
        central = central_localization_system(scene, bary)
        result = dcg_loc(scene, tight(central["beta"]), bary=bary)
        converged &= result.trace.converged
        pos = scene.positions
        worst = max(worst, max(np.abs(result.estimates[i] - pos[i]).max() for i in scene.free))
    elapsed = time.perf_counter() - start
    ok = converged and worst < 1e-6 and elapsed < 30.0
    assert verdict(5, ok, f"max position error {worst:.1e} (< 1e-6) on 2-D and 3-D scenes, {elapsed:.1f} s")


def test_criterion_06_stationary_iff(verdict):
    start = time.perf_counter()
    net = from_edges(2, [(0, 1)])
    outcomes = {}

    def outcome(method, a, omega=None):
        a = np.asarray(a)
        if method == "jacobi":
            split = linalg.matrix_split(a, "jacobi")
        else:
            # Richardson is the splitting M = I / omega
            m = np.eye(2) / omega
            split = linalg.SplitPair(m=m, n_mat=m - a)
        rho = linalg.spectral_radius(linalg.iteration_matrix(split))
        try:
            trace, _ = run_baseline(method, rows_from_dense(a, [1.0, 1.0]), net,
                                    SolverConfig(epsilon=1e-20, omega=omega))
            return rho, "converged" if trace.converged else trace.status
        except DivergenceDetected:
            return rho, "diverged"

    for a in (0.5, 1.2):
        outcomes[("jacobi", a)] = outcome("jacobi", [[1.0, a], [a, 1.0]])
    for w in (0.5, 1.1):
        outcomes[("richardson", w)] = outcome("richardson", [[1.0, 0.0], [0.0, 2.0]], omega=w)
    elapsed = time.perf_counter() - start
    rhos = sorted({round(r, 9) for r, _ in outcomes.values()})
    ok = (rhos == [0.5, 1.2]
          and all(status == ("converged" if rho < 1 else "diverged") for rho, status in outcomes.values())
          and elapsed < 1.0)
    summary = ", ".join(f"{m} rho={r:.1f}: {s}" for (m, _), (r, s) in outcomes.items())
    assert verdict(6, ok, f"{summary}, {elapsed:.2f} s")


def test_criterion_07_perturbed_systems(verdict):
    start = time.perf_counter()
    worst, margin = 0.0, np.inf
    converged = True
    for seed in range(20):
        net, rows, a, _ = spd_case(1000 + seed)
        lam_min = float(np.linalg.eigvalsh(a)[0])
        noisy, lemma_margin = inject_noise(rows, NoiseModel(0.1, 0.1, seed=seed), target_norm=0.9 * lam_min)
        na, nb = rows_to_dense(noisy)
        trace, _, _ = run_dcg(noisy, net, tight(nb))
        converged &= trace.converged
        worst = max(worst, rel_err(trace.final_estimates, linalg.direct_solve(na, nb)))
        margin = min(margin, lemma_margin)
    elapsed = time.perf_counter() - start
    ok = converged and worst <= 1e-6 and margin > 0 and elapsed < 10.0
    assert verdict(7, ok, f"max relative error {worst:.1e} (<= 1e-6), min margin {margin:.2e}, {elapsed:.1f} s")


def test_criterion_08_central_cg_trace(verdict):
    start = time.perf_counter()
    worst = 0.0
    same_length = True
    for seed in range(20):
        net, rows, a, b = spd_case(seed)
        eps = default_epsilon(rows)
        _, agents, _ = run_dcg(rows, net, SolverConfig(epsilon=eps))
        _, reference = central_cg(a, b, eps, 10 * len(b))
        ours = np.array([(rr[0], alpha[0]) for _, rr, alpha in agents[0].history])
        reference = np.array(reference)
        if ours.shape != reference.shape:
            same_length = False
            continue
        worst = max(worst, float((np.abs(ours - reference) / np.abs(reference)).max()))
    elapsed = time.perf_counter() - start
    ok = same_length and worst <= 1e-9 and elapsed < 5.0
    assert verdict(8, ok, f"max relative diff in (alpha, r^T r) {worst:.1e} (<= 1e-9), "
                          f"equal lengths {same_length}, {elapsed:.1f} s")


def test_criterion_09_assembly(fixtures_dir, verdict):
    start = time.perf_counter()
    worst = 0.0
    fixture_net = Network.from_json((fixtures_dir / "network_30_2_035_7.json").read_text())
    scenes = [generate_scene(**SCENE_2D), generate_scene(**SCENE_3D)]
    for net in [fixture_net] + [s.net for s in scenes]:
        rows, _ = random_sparse_rows(net, 7, noise=0.1)
        a, b = rows_to_dense(rows)
        omega, beta = rows_to_dense(assemble_normal_rows(rows, net)[0])
        worst = max(worst, np.abs(omega - a.T @ a).max(), np.abs(beta - a.T @ b).max())
    for scene in scenes:
        bary = barycentric_rows(scene)
        omega, beta = rows_to_dense(build_localization_rows(scene, bary)[0])
        central = central_localization_system(scene, bary)
        worst = max(worst, np.abs(omega - central["Omega"]).max(), np.abs(beta - central["beta"]).max())
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 5.0
    assert verdict(9, ok, f"max abs assembly difference {worst:.1e} (<= 1e-12), {elapsed:.1f} s")


def test_criterion_10_cli_determinism(tmp_path, verdict):
    start = time.perf_counter()
    cfg = tmp_path / "experiment.cfg"
    cfg.write_text("scenario = localization\nn = 30\nseed = 7\n")
    for name in ("a", "b"):
        subprocess.run([sys.executable, "-m", "dcgsim", "run", "--config", str(cfg),
                        "--out", str(tmp_path / name)], check=True, capture_output=True)
    elapsed = time.perf_counter() - start
    names = ["trace_dcg.csv", "trace_richardson.csv", "report.json"]
    identical = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    ok = identical and elapsed < 60.0
    assert verdict(10, ok, f"CSV and report byte-identical across two CLI runs: {identical}, {elapsed:.1f} s")

