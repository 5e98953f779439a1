import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handcloud.geometry import (
    CameraModel,
    HandPose,
    PointCloud,
    RigidTransform,
    axis_angle_rotation,
    transform,
)
from handcloud.metrics import (
    LossBreakdown,
    PckCurve,
    auc,
    chamfer_distance,
    combined_loss,
    earth_movers_distance,
    mpjpe,
    pck_curve,
    solve_assignment,
    solve_assignment_auction,
    surface_project,
)
from oracles import (
    assignment_exhaustive,
    chamfer_quadratic,
    emd_exhaustive,
    trapezoid_by_hand,
)

TWO_POINT_GT = PointCloud([[0, 0, 0], [1, 0, 0]])
TWO_POINT_PRED = PointCloud([[0, 0, 0], [0, 1, 0]])


class TestChamfer:
    def test_identical_clouds_zero(self):
        cloud = PointCloud(np.random.default_rng(0).normal(size=(20, 3)))
        assert chamfer_distance(cloud, cloud) == 0.0

    def test_two_point_fixture(self):
        # Each direction contributes (0 + 1) / 2.
        assert chamfer_distance(TWO_POINT_GT, TWO_POINT_PRED) == pytest.approx(1.0, abs=1e-15)

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError, match="empty point cloud"):
            chamfer_distance(PointCloud(np.empty((0, 3))), TWO_POINT_GT)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_quadratic_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a = PointCloud(rng.uniform(-1, 1, (rng.integers(1, 65), 3)))
        b = PointCloud(rng.uniform(-1, 1, (rng.integers(1, 65), 3)))
        expected = chamfer_quadratic(a.points, b.points)
        assert abs(chamfer_distance(a, b, accelerated=False) - expected) <= 1e-12
        assert abs(chamfer_distance(a, b, accelerated=True) - expected) <= 1e-12

    def test_accelerated_equals_brute(self):
        rng = np.random.default_rng(9)
        a = PointCloud(rng.uniform(-1, 1, (64, 3)))
        b = PointCloud(rng.uniform(-1, 1, (48, 3)))
        assert abs(
            chamfer_distance(a, b, accelerated=True)
            - chamfer_distance(a, b, accelerated=False)
        ) <= 1e-12

    def test_symmetry_exact(self):
        rng = np.random.default_rng(11)
        a = PointCloud(rng.uniform(-1, 1, (33, 3)))
        b = PointCloud(rng.uniform(-1, 1, (17, 3)))
        assert chamfer_distance(a, b) == chamfer_distance(b, a)

    def test_translation_invariance(self):
        rng = np.random.default_rng(13)
        a = PointCloud(rng.uniform(-1, 1, (30, 3)))
        b = PointCloud(rng.uniform(-1, 1, (30, 3)))
        t = RigidTransform(axis_angle_rotation([1, 2, 3], 0.9), [4.0, -1.0, 2.0])
        before = chamfer_distance(a, b)
        after = chamfer_distance(transform(a, t), transform(b, t))
        assert abs(before - after) <= 1e-9


class TestAssignment:
    def test_zero_diagonal(self):
        result = solve_assignment([[0, 1], [1, 0]])
        assert result.mapping.tolist() == [0, 1]
        assert result.total_cost == 0.0

    def test_two_by_two(self):
        # Diagonal costs 2; the swap costs 5.
        result = solve_assignment([[1, 2], [3, 1]])
        assert result.total_cost == 2.0

    def test_rejects_non_square(self):
        with pytest.raises(ValueError, match="square"):
            solve_assignment(np.zeros((2, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="NaN or Inf"):
            solve_assignment([[np.inf, 1], [1, 0]])

    @pytest.mark.parametrize("seed", range(8))
    def test_random_7x7_vs_enumeration(self, seed):
        cost = np.random.default_rng(seed).uniform(0, 10, (7, 7))
        result = solve_assignment(cost)
        _, expected = assignment_exhaustive(cost)
        assert abs(result.total_cost - expected) <= 1e-9
        assert abs(cost[np.arange(7), result.mapping].sum() - result.total_cost) <= 1e-9

    @pytest.mark.parametrize("n", [60, 150])
    def test_auction_within_gap(self, n):
        rng = np.random.default_rng(n)
        cost = np.linalg.norm(
            rng.uniform(0, 1, (n, 1, 3)) - rng.uniform(0, 1, (1, n, 3)), axis=-1
        )
        exact = solve_assignment(cost).total_cost
        approx = solve_assignment_auction(cost, rel_gap=1e-3).total_cost
        assert approx >= exact - 1e-9
        assert approx <= exact / (1 - 1e-3) + 1e-9

    def test_auction_identity_zero_cost(self):
        cost = 1.0 - np.eye(5)
        result = solve_assignment_auction(cost)
        assert result.total_cost == 0.0
        assert result.mapping.tolist() == list(range(5))


class TestEmd:
    def test_identical_clouds(self):
        cloud = PointCloud(np.random.default_rng(0).normal(size=(10, 3)))
        total, assignment = earth_movers_distance(cloud, cloud)
        assert total == 0.0
        matched = cloud.points[assignment.mapping]
        np.testing.assert_array_equal(matched, cloud.points)

    def test_two_point_fixture(self):
        # Identity matching costs sqrt(2); the swap costs 2.
        total, _ = earth_movers_distance(TWO_POINT_GT, TWO_POINT_PRED)
        assert total == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_unequal_cardinality(self):
        with pytest.raises(ValueError, match="equal cardinality"):
            earth_movers_distance(TWO_POINT_GT, PointCloud([[0, 0, 0]]))

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        gt = PointCloud(rng.uniform(-1, 1, (8, 3)))
        pred = PointCloud(rng.uniform(-1, 1, (8, 3)))
        total, _ = earth_movers_distance(gt, pred)
        assert abs(total - emd_exhaustive(gt.points, pred.points)) <= 1e-9

    def test_translation_invariance(self):
        rng = np.random.default_rng(21)
        a = PointCloud(rng.uniform(-1, 1, (16, 3)))
        b = PointCloud(rng.uniform(-1, 1, (16, 3)))
        t = RigidTransform(axis_angle_rotation([0, 0, 1], 1.3), [7.0, 8.0, -9.0])
        before, _ = earth_movers_distance(a, b)
        after, _ = earth_movers_distance(transform(a, t), transform(b, t))
        assert abs(before - after) <= 1e-9

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 1000), equal=st.booleans())
    def test_zero_iff_equal_multisets(self, seed, equal):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-1, 1, (6, 3))
        if equal:
            b = a[rng.permutation(6)]
        else:
            b = a.copy()
            b[0] += 0.5
        total, _ = earth_movers_distance(PointCloud(a), PointCloud(b))
        if equal:
            assert total <= 1e-12
        else:
            assert total > 1e-12


def labeled_pair(rng, counts):
    """Random gt/pred clouds with identical per-component counts."""
    labels = np.concatenate([np.full(c, cid) for cid, c in counts.items()])
    gt = PointCloud(rng.uniform(-1, 1, (len(labels), 3)), labels)
    pred = PointCloud(rng.uniform(-1, 1, (len(labels), 3)), labels)
    return gt, pred


class TestCombinedLoss:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(0)
        gt, _ = labeled_pair(rng, {0: 5, 1: 4, 2: 3, 3: 3, 4: 3, 5: 2})
        breakdown = combined_loss(gt, gt)
        assert breakdown.total == 0.0
        assert breakdown.cd_global == 0.0 and breakdown.emd_global == 0.0

    def test_single_component_counts_twice(self):
        rng = np.random.default_rng(1)
        gt, pred = labeled_pair(rng, {0: 8})
        breakdown = combined_loss(gt, pred)
        cd = chamfer_distance(gt, pred)
        emd, _ = earth_movers_distance(gt, pred)
        assert breakdown.total == pytest.approx(2 * (cd + emd), abs=1e-9)

    def test_two_component_term_by_term(self):
        rng = np.random.default_rng(2)
        gt, pred = labeled_pair(rng, {1: 6, 4: 5})
        breakdown = combined_loss(gt, pred)
        expected = 0.0
        for cid in (1, 4):
            g = gt.subset(gt.labels == cid)
            p = pred.subset(pred.labels == cid)
            expected += chamfer_quadratic(g.points, p.points)
            expected += emd_exhaustive(g.points, p.points)
        expected += chamfer_quadratic(gt.points, pred.points)
        total, _ = earth_movers_distance(gt, pred)
        expected += total
        assert breakdown.total == pytest.approx(expected, abs=1e-9)

    def test_breakdown_sums_to_total(self):
        rng = np.random.default_rng(3)
        gt, pred = labeled_pair(rng, {0: 7, 2: 5, 5: 4})
        b = combined_loss(gt, pred)
        recomputed = b.cd_local.sum() + b.emd_local.sum() + b.cd_global + b.emd_global
        assert abs(b.total - recomputed) <= 1e-9

    def test_requires_labels(self):
        cloud = PointCloud([[0, 0, 0], [1, 1, 1]])
        with pytest.raises(ValueError, match="labeled"):
            combined_loss(cloud, cloud)

    def test_cardinality_mismatch(self):
        gt = PointCloud([[0, 0, 0], [1, 1, 1]], labels=[0, 0])
        pred = PointCloud([[0, 0, 0], [1, 1, 1]], labels=[0, 1])
        with pytest.raises(ValueError, match="cardinality mismatch"):
            combined_loss(gt, pred)


class TestPoseMetrics:
    def test_mpjpe_zero(self):
        pose = HandPose(np.random.default_rng(0).normal(size=(21, 3)))
        assert mpjpe(pose, pose) == 0.0

    def test_mpjpe_three_four_five(self):
        gt = HandPose(np.zeros((21, 3)))
        pred = HandPose(np.tile([3.0, 0.0, 4.0], (21, 1)))
        assert mpjpe(pred, gt) == 5.0

    def test_mpjpe_matches_direct_sum(self):
        rng = np.random.default_rng(5)
        a = HandPose(rng.normal(size=(21, 3)) * 10)
        b = HandPose(rng.normal(size=(21, 3)) * 10)
        expected = sum(
            math.dist(a.joints[j], b.joints[j]) for j in range(21)
        ) / 21
        assert mpjpe(a, b) == pytest.approx(expected, abs=1e-12)

    def test_pck_all_correct(self):
        curve = pck_curve(np.zeros(50), [10.0, 20.0, 30.0])
        assert curve.values.tolist() == [1.0, 1.0, 1.0]

    def test_pck_counting_fixture(self):
        curve = pck_curve([5.0, 15.0, 25.0], [10.0, 20.0])
        assert curve.values.tolist() == [1 / 3, 2 / 3]

    def test_pck_requires_errors(self):
        with pytest.raises(ValueError, match="no errors"):
            pck_curve([], [10.0, 20.0])

    def test_pck_requires_ascending(self):
        with pytest.raises(ValueError, match="ascending"):
            pck_curve([1.0], [20.0, 10.0])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_pck_monotone(self, seed):
        rng = np.random.default_rng(seed)
        errors = rng.uniform(0, 50, rng.integers(1, 200))
        curve = pck_curve(errors, np.linspace(0.0, 50.0, 11))
        assert np.all(np.diff(curve.values) >= 0)

    def test_auc_constant_one(self):
        curve = PckCurve(np.array([0.0, 13.0, 29.0, 50.0]), np.ones(4))
        assert auc(curve) == 1.0

    def test_auc_linear_half(self):
        curve = PckCurve(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        assert auc(curve) == 0.5

    def test_auc_piecewise_fixture(self):
        thresholds = [0.0, 10.0, 20.0, 40.0]
        values = [0.2, 0.5, 0.8, 1.0]
        curve = PckCurve(np.array(thresholds), np.array(values))
        # Hand trapezoid: (3.5 + 6.5 + 18) / 40.
        assert auc(curve) == pytest.approx(0.7, abs=1e-12)
        assert auc(curve) == pytest.approx(trapezoid_by_hand(thresholds, values), abs=1e-12)

    def test_auc_needs_two_thresholds(self):
        with pytest.raises(ValueError, match="length >= 2"):
            PckCurve(np.array([1.0]), np.array([1.0]))


def front_camera():
    return CameraModel(fx=600, fy=600, cx=320, cy=240, width=640, height=480)


class TestSurfaceProject:
    def test_occluded_point_dropped(self):
        cam = front_camera()
        cloud = PointCloud([[0.0, 0.0, 400.0], [0.0, 0.0, 500.0]])
        out = surface_project(cloud, cam, depth_tol=10.0)
        assert out.points.tolist() == [[0.0, 0.0, 400.0]]

    def test_single_point_retained(self):
        cam = front_camera()
        out = surface_project(PointCloud([[10.0, -20.0, 300.0]]), cam)
        assert len(out) == 1

    def test_points_within_tolerance_survive(self):
        cam = front_camera()
        cloud = PointCloud([[0.0, 0.0, 400.0], [0.0, 0.0, 405.0]])
        out = surface_project(cloud, cam, depth_tol=10.0)
        assert len(out) == 2

    def test_outside_frustum(self):
        cam = front_camera()
        with pytest.raises(ValueError, match="outside frustum"):
            surface_project(PointCloud([[0.0, 0.0, -400.0]]), cam)

    def test_labels_preserved(self):
        cam = front_camera()
        cloud = PointCloud([[0.0, 0.0, 400.0], [50.0, 0.0, 400.0]], labels=[1, 4])
        out = surface_project(cloud, cam)
        assert out.labels.tolist() == [1, 4]

    def test_sphere_keeps_camera_facing_hemisphere(self):
        rng = np.random.default_rng(17)
        center = np.array([0.0, 0.0, 500.0])
        radius = 80.0
        directions = rng.normal(size=(100_000, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        cloud = PointCloud(center + radius * directions)
        out = surface_project(cloud, front_camera(), raster=(160, 120), depth_tol=2.0)
        normals = (out.points - center) / radius
        view = out.points / np.linalg.norm(out.points, axis=1, keepdims=True)
        facing = np.einsum("ij,ij->i", normals, view) < 0
        assert facing.mean() >= 0.95
        # Survivors are a depth-minimal subsample of the visible side only.
        assert 0.05 <= len(out) / len(cloud) <= 0.6
