import numpy as np
import pytest
from scipy.stats import chisquare

from handcloud.geometry import ComponentId, PointCloud
from handcloud.metrics import chamfer_distance
from handcloud.templates import (
    SyntheticHandSpec,
    Template,
    TemplateKind,
    TriangleMesh,
    default_budget,
    default_hand_mesh,
    grid_template,
    hand_skeleton,
    hand_template,
    local_hand_template,
    sample_mesh_by_component,
    sample_mesh_surface,
    synthetic_hand_mesh,
)


class TestSpec:
    def test_default_is_valid(self):
        spec = SyntheticHandSpec.default()
        assert spec.bone_lengths.shape == (5, 3)
        assert np.all(spec.flexion == 0)

    def test_rejects_nonpositive_lengths(self):
        spec = SyntheticHandSpec.default()
        bones = spec.bone_lengths.copy()
        bones[2, 1] = 0.0
        with pytest.raises(ValueError, match="positive"):
            SyntheticHandSpec(bones, spec.palm_radii, spec.digit_radii, spec.flexion)

    def test_rejects_out_of_range_flexion(self):
        spec = SyntheticHandSpec.default()
        with pytest.raises(ValueError, match="flexion"):
            spec.with_flexion(np.full((5, 3), 3.5))

    def test_dict_round_trip(self):
        spec = SyntheticHandSpec.default().with_flexion(np.full((5, 3), 0.3))
        back = SyntheticHandSpec.from_dict(spec.to_dict())
        np.testing.assert_array_equal(back.flexion, spec.flexion)
        np.testing.assert_array_equal(back.bone_lengths, spec.bone_lengths)


class TestTriangleMesh:
    def test_rejects_out_of_range_faces(self):
        with pytest.raises(ValueError, match="out of range"):
            TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])

    def test_rejects_degenerate_faces(self):
        with pytest.raises(ValueError, match="degenerate"):
            TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])

    def test_face_label_majority_and_tie(self):
        verts = np.zeros((3, 3))
        verts[1, 0] = 1.0
        verts[2, 1] = 1.0
        mesh = TriangleMesh(verts, [[0, 1, 2]], vertex_labels=[4, 1, 1])
        assert mesh.face_labels().tolist() == [1]
        mesh = TriangleMesh(verts, [[0, 1, 2]], vertex_labels=[4, 1, 2])
        # All distinct: lowest ComponentId wins.
        assert mesh.face_labels().tolist() == [1]


class TestSyntheticHand:
    def test_six_components_present(self):
        mesh = default_hand_mesh()
        assert sorted(set(mesh.vertex_labels.tolist())) == [0, 1, 2, 3, 4, 5]

    def test_watertight(self):
        assert default_hand_mesh().is_watertight()

    def test_flat_hand_tips_beyond_palm(self):
        spec = SyntheticHandSpec.default()
        mesh = synthetic_hand_mesh(spec)
        for cid in list(ComponentId)[1:]:
            digit = mesh.vertices[mesh.vertex_labels == int(cid)]
            assert digit[:, 0].max() > spec.palm_radii[0]

    def test_flexed_fingers_curl_down(self):
        spec = SyntheticHandSpec.default().with_flexion(np.full((5, 3), 0.9))
        tips = hand_skeleton(spec).joints[4::4]
        assert np.all(tips[:, 2] < -10.0)

    def test_skeleton_matches_joint_count(self):
        assert hand_skeleton(SyntheticHandSpec.default()).joints.shape == (21, 3)

    def test_deterministic_for_fixed_spec(self):
        a = synthetic_hand_mesh(SyntheticHandSpec.default())
        b = synthetic_hand_mesh(SyntheticHandSpec.default())
        np.testing.assert_array_equal(a.vertices, b.vertices)
        np.testing.assert_array_equal(a.faces, b.faces)


class TestSurfaceSampling:
    def test_single_triangle_planarity(self):
        mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        cloud = sample_mesh_surface(mesh, 1000, seed=0)
        assert np.abs(cloud.points[:, 2]).max() < 1e-12
        # Barycentric samples stay inside the triangle.
        assert np.all(cloud.points[:, 0] + cloud.points[:, 1] <= 1.0 + 1e-12)
        assert cloud.points.min() >= -1e-12

    def test_area_ratio_nine_to_one(self):
        verts = [[0, 0, 0], [9, 0, 0], [0, 2, 0],    # area 9
                 [20, 0, 0], [21, 0, 0], [20, 2, 0]]  # area 1
        mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
        n = 10_000
        cloud = sample_mesh_surface(mesh, n, seed=1)
        big = (cloud.points[:, 0] < 15).sum()
        p = 0.9
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(big - n * p) <= 3 * sigma

    def test_same_seed_identical(self):
        mesh = default_hand_mesh()
        a = sample_mesh_surface(mesh, 313, seed=77)
        b = sample_mesh_surface(mesh, 313, seed=77)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_different_seed_differs(self):
        mesh = default_hand_mesh()
        a = sample_mesh_surface(mesh, 100, seed=1)
        b = sample_mesh_surface(mesh, 100, seed=2)
        assert not np.array_equal(a.points, b.points)

    def test_empty_mesh_rejected(self):
        mesh = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        with pytest.raises(ValueError, match="empty mesh"):
            sample_mesh_surface(mesh, 10, seed=0)

    def test_samples_lie_on_source_triangles(self):
        mesh = default_hand_mesh()
        rng = np.random.default_rng(5)
        face_idx = np.arange(len(mesh.faces))
        from handcloud.templates import _sample_faces
        pts, faces = _sample_faces(mesh, face_idx, 400, rng)
        tri = mesh.vertices[mesh.faces[faces]]
        normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        normal /= np.linalg.norm(normal, axis=1, keepdims=True)
        offset = np.einsum("ij,ij->i", pts - tri[:, 0], normal)
        assert np.abs(offset).max() < 1e-12

    def test_area_uniformity_chi_square(self):
        # Occupancy counts across faces should match the area distribution.
        mesh = default_hand_mesh()
        n = 10_000
        rng = np.random.default_rng(9)
        from handcloud.templates import _sample_faces
        _, faces = _sample_faces(mesh, np.arange(len(mesh.faces)), n, rng)
        areas = mesh.face_areas()
        # Bin faces into 40 groups to keep expected counts comfortably high.
        order = np.argsort(areas)
        groups = np.array_split(order, 40)
        observed = [np.isin(faces, g).sum() for g in groups]
        expected = [areas[g].sum() / areas.sum() * n for g in groups]
        _, p_value = chisquare(observed, expected)
        assert p_value >= 0.01


class TestGridTemplate:
    def test_four_point_corners(self):
        tpl = grid_template(4)
        assert tpl.cloud.points.tolist() == [
            [-1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0]
        ]
        assert tpl.kind is TemplateKind.GRID2D

    def test_nine_point_center(self):
        tpl = grid_template(9)
        assert any(np.array_equal(p, [0.0, 0.0, 0.0]) for p in tpl.cloud.points)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError, match="perfect square"):
            grid_template(10)
        with pytest.raises(ValueError, match="perfect square"):
            grid_template(1)

    @pytest.mark.parametrize("n", [4, 9, 25, 64])
    def test_min_axis_spacing(self, n):
        m = int(np.sqrt(n))
        pts = grid_template(n).cloud.points
        xs = np.unique(pts[:, 0])
        assert np.allclose(np.diff(xs), 2.0 / (m - 1))

    def test_all_labels_palm(self):
        assert set(grid_template(16).cloud.labels.tolist()) == {0}


class TestHandTemplate:
    def test_normalization(self):
        tpl = hand_template(700, seed=0)
        assert np.abs(tpl.cloud.points.mean(axis=0)).max() <= 1e-9
        assert abs(np.linalg.norm(tpl.cloud.points, axis=1).max() - 1.0) <= 1e-9

    def test_all_components_at_600(self):
        tpl = hand_template(600, seed=0)
        assert sorted(set(tpl.cloud.labels.tolist())) == [0, 1, 2, 3, 4, 5]

    def test_minimum_count(self):
        with pytest.raises(ValueError, match="at least 6"):
            hand_template(5, seed=0)


class TestLocalHandTemplate:
    def test_exact_budgets(self):
        budget = {ComponentId.PALM: 100, ComponentId.THUMB: 50,
                  ComponentId.INDEX: 50, ComponentId.MIDDLE: 50,
                  ComponentId.RING: 50, ComponentId.PINKY: 50}
        tpl = local_hand_template(budget, seed=0)
        assert len(tpl) == 350
        for cid, want in budget.items():
            assert (tpl.cloud.labels == int(cid)).sum() == want
        assert tpl.kind is TemplateKind.LOCAL_HAND3D

    def test_rejects_zero_budget(self):
        with pytest.raises(ValueError, match=">= 1"):
            local_hand_template({ComponentId.PALM: 0}, seed=0)

    def test_close_to_global_hand_sampling(self):
        n = 600
        tpl_local = local_hand_template(default_budget(n), seed=0)
        tpl_hand = hand_template(n, seed=0)
        assert chamfer_distance(tpl_local.cloud, tpl_hand.cloud) < 0.05

    def test_component_absent_raises(self):
        mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]],
                            vertex_labels=[0, 0, 0])
        with pytest.raises(ValueError, match="absent"):
            sample_mesh_by_component(mesh, {ComponentId.THUMB: 5}, seed=0)


class TestDefaultBudget:
    def test_sums_and_positive(self):
        for n in (6, 60, 600, 1038):
            budget = default_budget(n)
            assert sum(budget.values()) == n
            assert min(budget.values()) >= 1

    def test_template_invariant_checked(self):
        cloud = PointCloud(np.random.default_rng(0).normal(size=(4, 3)),
                           labels=[0, 0, 1, 1])
        with pytest.raises(ValueError, match="sum"):
            Template(cloud, TemplateKind.LOCAL_HAND3D,
                     budget={ComponentId.PALM: 2, ComponentId.THUMB: 1})
