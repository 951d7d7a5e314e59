import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcgsim import linalg
from dcgsim.applications import (
    BarycentricRow,
    LocalizationScene,
    NoiseModel,
    assemble_normal_rows,
    barycentric_rows,
    build_localization_rows,
    central_localization_system,
    classical_mds,
    compute_barycentric_row,
    dcg_loc,
    generate_scene,
    inject_noise,
    random_sparse_rows,
    random_spd_rows,
)
from dcgsim.errors import DegenerateGeometry, InsufficientNeighbors, SparsityViolation
from dcgsim.network import (
    from_edges,
    from_positions,
    generate_geometric_network,
    is_connected,
    random_connected_network,
)
from dcgsim.solvers import SolverConfig, relay_depth, rows_from_dense, rows_to_dense, run_dcg

SCENE_2D = dict(n=30, dim=2, anchors=3, reception_range=0.44, seed=7)
SCENE_3D = dict(n=40, dim=3, anchors=4, reception_range=0.59, seed=7)


def path(n):
    return from_edges(n, [(i, i + 1) for i in range(n - 1)])


def pairwise(points):
    points = np.asarray(points, dtype=float)
    return {
        (a, b): float(np.linalg.norm(points[a] - points[b]))
        for a, b in itertools.combinations(range(len(points)), 2)
    }


def tight(b):
    return SolverConfig(epsilon=1e-24 * (1.0 + float(np.sum(np.asarray(b) ** 2))))


class TestNormalRows:
    def test_two_by_two(self):
        rows = rows_from_dense([[2.0, 1.0], [1.0, 2.0]], [3.0, 3.0])
        out, trace = assemble_normal_rows(rows, path(2))
        assert trace.n_rounds == 1
        assert out[0].coefficients == {0: 5.0, 1: 4.0}
        assert out[0].rhs.tolist() == [9.0]
        omega, beta = rows_to_dense(out)
        np.testing.assert_array_equal(omega, [[5.0, 4.0], [4.0, 5.0]])
        np.testing.assert_array_equal(beta[:, 0], [9.0, 9.0])

    def test_identity(self):
        rows = rows_from_dense(np.eye(3), [1.0, 2.0, 3.0])
        omega, beta = rows_to_dense(assemble_normal_rows(rows, path(3))[0])
        np.testing.assert_array_equal(omega, np.eye(3))
        np.testing.assert_array_equal(beta[:, 0], [1.0, 2.0, 3.0])

    def test_diagonal(self):
        rows = rows_from_dense(np.diag([2.0, -3.0, 0.5]), [1.0, 1.0, 4.0])
        omega, beta = rows_to_dense(assemble_normal_rows(rows, path(3))[0])
        np.testing.assert_array_equal(omega, np.diag([4.0, 9.0, 0.25]))
        np.testing.assert_array_equal(beta[:, 0], [2.0, -3.0, 2.0])

    def test_sparsity_violation(self):
        rows = rows_from_dense([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [1.0, 1.0, 1.0])
        with pytest.raises(SparsityViolation):
            assemble_normal_rows(rows, path(3))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 20), st.integers(0, 10_000))
    def test_matches_dense_product(self, n, seed):
        net = random_connected_network(n, seed)
        rows, _ = random_sparse_rows(net, seed, noise=0.1)
        a, b = rows_to_dense(rows)
        omega, beta = rows_to_dense(assemble_normal_rows(rows, net)[0])
        assert np.abs(omega - a.T @ a).max() <= 1e-12 * max(1.0, np.abs(a.T @ a).max())
        assert np.abs(beta - a.T @ b).max() <= 1e-12 * max(1.0, np.abs(a.T @ b).max())


class TestLeastSquares:
    @pytest.mark.parametrize("seed", range(5))
    def test_dcg_solution_is_optimal(self, seed):
        net = generate_geometric_network(25, 2, 0.4, seed + 100)
        assert is_connected(net)
        rows, _ = random_sparse_rows(net, seed, noise=0.05)
        a, b = rows_to_dense(rows)
        normal, _ = assemble_normal_rows(rows, net)
        _, beta = rows_to_dense(normal)
        trace, _, _ = run_dcg(normal, net, tight(beta))
        x = trace.final_estimates
        assert np.abs(a.T @ (a @ x - b)).max() <= 1e-6
        best = np.linalg.norm(a @ x - b)
        rng = np.random.default_rng(seed)
        for _ in range(100):
            y = x + 1e-3 * rng.standard_normal(x.shape)
            assert best <= np.linalg.norm(a @ y - b) + 1e-8

    def test_jacobi_needs_two_hop_relay(self):
        # A^T A couples agents two hops apart; the baseline must relay
        net = path(4)
        rows, _ = random_sparse_rows(net, 1)
        normal, _ = assemble_normal_rows(rows, net)
        assert relay_depth(normal, net) == 2


def equilateral():
    return np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])


class TestBarycentric:
    def test_centroid_of_equilateral_triangle(self):
        tri = equilateral()
        pts = np.vstack([tri.mean(axis=0), tri])
        row = compute_barycentric_row(0, pairwise(pts), 2)
        for j in (1, 2, 3):
            assert row.weights[j] == pytest.approx(1 / 3, abs=1e-12)

    def test_coincident_with_neighbor(self):
        tri = equilateral()
        pts = np.vstack([tri[1], tri])
        row = compute_barycentric_row(0, pairwise(pts), 2)
        assert row.weights.get(2, 0.0) == pytest.approx(1.0, abs=1e-9)
        assert abs(row.weights.get(1, 0.0)) < 1e-9 and abs(row.weights.get(3, 0.0)) < 1e-9

    def test_collinear_neighbors(self):
        pts = np.array([[0.5, 0.3], [0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(DegenerateGeometry):
            compute_barycentric_row(0, pairwise(pts), 2)

    def test_too_few_neighbors(self):
        pts = np.array([[0.5, 0.3], [0.0, 0.0], [1.0, 0.0]])
        with pytest.raises(InsufficientNeighbors):
            compute_barycentric_row(0, pairwise(pts), 2)

    def test_no_mutually_in_range_simplex(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.1], [0.0, 1.0]])
        dists = {k: v for k, v in pairwise(pts).items() if 0 in k}
        with pytest.raises(InsufficientNeighbors):
            compute_barycentric_row(0, dists, 2)

    def test_tetrahedron_3d(self):
        tet = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        target = np.array([0.1, 0.2, 0.3])
        row = compute_barycentric_row(0, pairwise(np.vstack([target, tet])), 3)
        np.testing.assert_allclose([row.weights[j] for j in (1, 2, 3, 4)], [0.4, 0.1, 0.2, 0.3], atol=1e-12)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            BarycentricRow(owner=0, weights={1: 0.5, 2: 0.4})

    def test_mds_reproduces_distances(self):
        pts = np.random.default_rng(3).uniform(size=(6, 2))
        dist = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        q = classical_mds(dist, 2)
        np.testing.assert_allclose(np.linalg.norm(q[:, None] - q[None], axis=-1), dist, atol=1e-12)

    @pytest.mark.parametrize("params", [SCENE_2D, SCENE_3D], ids=["2d", "3d"])
    def test_reconstruction_on_scene(self, params):
        scene = generate_scene(**params)
        pos = scene.positions
        for i, row in barycentric_rows(scene).items():
            assert set(row.weights) <= set(scene.net.neighbors(i))
            recon = sum(w * pos[j] for j, w in row.weights.items())
            assert np.abs(recon - pos[i]).max() <= 1e-8

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_reconstruction_property(self, seed):
        scene = generate_scene(25, 2, 3, 0.45, seed)
        pos = scene.positions
        for i in scene.free:
            try:
                row = compute_barycentric_row(i, scene.local_distances(i), 2)
            except (InsufficientNeighbors, DegenerateGeometry):
                continue
            assert sum(row.weights.values()) == pytest.approx(1.0, abs=1e-9)
            recon = sum(w * pos[j] for j, w in row.weights.items())
            assert np.abs(recon - pos[i]).max() <= 1e-8


def single_free_scene():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.25, 0.25]])
    net = from_positions(pts, 2.0)
    return LocalizationScene(net=net, anchors=(0, 1, 2), measured_distances=pairwise(pts))


class TestLocalizationRows:
    def test_single_free_node(self):
        scene = single_free_scene()
        bary = barycentric_rows(scene)
        rows, trace = build_localization_rows(scene, bary)
        assert trace.n_rounds == 2
        assert rows[0].coefficients == {0: 1.0}
        np.testing.assert_allclose(rows[0].rhs, [0.25, 0.25], atol=1e-12)
        result = dcg_loc(scene)
        np.testing.assert_allclose(result.estimates[3], [0.25, 0.25], atol=1e-12)

    def test_mu_zero_without_anchor_neighbors(self):
        scene = generate_scene(**SCENE_2D)
        bary = barycentric_rows(scene)
        central = central_localization_system(scene, bary)
        mu = central["B"] @ central["P_A"]
        free_far = [i for i in scene.free if not set(scene.net.neighbors(i)) & set(scene.anchors)]
        assert free_far
        for i in free_far:
            assert not mu[i - scene.m].any()

    @pytest.mark.parametrize("params", [SCENE_2D, SCENE_3D], ids=["2d", "3d"])
    def test_distributed_equals_central(self, params):
        scene = generate_scene(**params)
        bary = barycentric_rows(scene)
        rows, _ = build_localization_rows(scene, bary)
        omega, beta = rows_to_dense(rows)
        central = central_localization_system(scene, bary)
        assert np.abs(omega - central["Omega"]).max() <= 1e-12
        assert np.abs(beta - central["beta"]).max() <= 1e-12

    def test_weights_off_graph_rejected(self):
        scene = single_free_scene()
        bad = {3: BarycentricRow(owner=3, weights={7: 1.0})}
        with pytest.raises(SparsityViolation):
            build_localization_rows(scene, bad)

    def test_scene_json_roundtrip(self):
        scene = generate_scene(**SCENE_2D)
        back = LocalizationScene.from_json(scene.to_json())
        assert back.net == scene.net and back.anchors == scene.anchors
        assert back.measured_distances == scene.measured_distances
        json.loads(scene.to_json())

    def test_scene_needs_enough_anchors(self):
        net = from_positions(np.random.default_rng(0).uniform(size=(6, 2)), 1.0)
        with pytest.raises(ValueError):
            LocalizationScene(net=net, anchors=(0, 1))


class TestDcgLoc:
    @pytest.mark.parametrize("params", [SCENE_2D, SCENE_3D], ids=["2d", "3d"])
    def test_recovers_ground_truth(self, params):
        scene = generate_scene(**params)
        bary = barycentric_rows(scene)
        central = central_localization_system(scene, bary)
        result = dcg_loc(scene, tight(central["beta"]), bary=bary)
        assert result.trace.converged
        pos = scene.positions
        err = max(np.abs(result.estimates[i] - pos[i]).max() for i in scene.free)
        assert err < 1e-6

    def test_matches_direct_solve(self):
        scene = generate_scene(**SCENE_2D)
        bary = barycentric_rows(scene)
        central = central_localization_system(scene, bary)
        expected = linalg.direct_solve(central["Omega"], central["beta"])
        result = dcg_loc(scene, tight(central["beta"]), bary=bary)
        got = np.array([result.estimates[i] for i in scene.free])
        np.testing.assert_allclose(got, expected, atol=1e-9)

    def test_anchors_only(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        net = from_positions(pts, 2.0)
        scene = LocalizationScene(net=net, anchors=(0, 1, 2, 3), measured_distances=pairwise(pts))
        assert dcg_loc(scene).estimates == {}


class TestNoise:
    def test_zero_scales(self):
        net = random_connected_network(6, 1)
        rows, a, _ = random_spd_rows(net, 1)
        noisy, margin = inject_noise(rows, NoiseModel(0.0, 0.0, seed=3))
        a2, b2 = rows_to_dense(noisy)
        np.testing.assert_array_equal(a2, a)
        np.testing.assert_array_equal(b2, rows_to_dense(rows)[1])
        assert margin == pytest.approx(np.linalg.eigvalsh(a)[0], rel=1e-6)

    def test_margin_on_scaled_identity(self):
        net = path(4)
        rows = rows_from_dense(2.0 * np.eye(4), [1.0, 2.0, 3.0, 4.0])
        noisy, margin = inject_noise(rows, NoiseModel(0.3, 0.1, seed=5), target_norm=0.5)
        assert margin == pytest.approx(1.5, rel=1e-9)
        a2, b2 = rows_to_dense(noisy)
        trace, _, _ = run_dcg(noisy, net, tight(b2))
        assert trace.converged
        np.testing.assert_allclose(trace.final_estimates, linalg.direct_solve(a2, b2), atol=1e-10)

    def test_negative_margin(self):
        net = random_connected_network(8, 2)
        rows, a, _ = random_spd_rows(net, 2)
        lam_min = np.linalg.eigvalsh(a)[0]
        _, margin = inject_noise(rows, NoiseModel(0.5, 0.0, seed=1), target_norm=1.1 * lam_min)
        assert margin < 0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 15), st.integers(0, 10_000), st.sampled_from(["uniform", "gaussian"]))
    def test_pattern_and_symmetry_preserved(self, n, seed, dist):
        net = random_connected_network(n, seed)
        rows, a, _ = random_spd_rows(net, seed)
        noisy, _ = inject_noise(rows, NoiseModel(0.2, 0.2, seed=seed, distribution=dist))
        a2, _ = rows_to_dense(noisy)
        assert not (a2[a == 0.0]).any()
        np.testing.assert_array_equal(a2, a2.T)

    def test_seeded(self):
        net = random_connected_network(8, 4)
        rows, _, _ = random_spd_rows(net, 4)
        one, _ = inject_noise(rows, NoiseModel(0.1, 0.1, seed=9))
        two, _ = inject_noise(rows, NoiseModel(0.1, 0.1, seed=9))
        assert [r.coefficients for r in one] == [r.coefficients for r in two]

    def test_rejects_negative_scale(self):
        with pytest.raises(ValueError):
            NoiseModel(-0.1, 0.0)

    def test_rejects_unknown_distribution(self):
        with pytest.raises(ValueError):
            NoiseModel(0.1, 0.0, distribution="cauchy")
