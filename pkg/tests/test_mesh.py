"""Mesh pipeline tests: marching cubes against analytic surfaces, quadric
simplification with a brute-force Hausdorff oracle, atlas disjointness,
and OBJ/PLY round trips."""

import numpy as np
import pytest

from scanmesh.cli.metrics import hausdorff_distance, nearest_surface_distance
from scanmesh.errors import AtlasOverflow, EmptySurface
from scanmesh.mesh import (
    SimplifyConfig, TriangleMesh, box_mesh, build_uv_atlas, icosphere,
    load_obj, load_ply, marching_cubes, quad_grid_mesh, quadric_simplify,
    save_obj, save_ply,
)

LO = [-1.0, -1.0, -1.0]
HI = [1.0, 1.0, 1.0]


def sphere_fn(pts):
    return np.linalg.norm(pts, axis=1) - 0.5


class TestMarchingCubes:
    def test_sphere_radial_error(self):
        m = marching_cubes(sphere_fn, 64, lo=LO, hi=HI)
        cell = 2.0 / 64
        r = np.linalg.norm(m.vertices, axis=1)
        assert np.abs(r - 0.5).max() < 1.5 * cell

    def test_no_surface_raises(self):
        with pytest.raises(EmptySurface):
            marching_cubes(lambda p: np.ones(len(p)), 16, lo=LO, hi=HI)

    def test_sphere_euler_characteristic(self):
        m = marching_cubes(sphere_fn, 32, lo=LO, hi=HI)
        assert m.euler_characteristic() == 2

    def test_outward_orientation(self):
        m = marching_cubes(sphere_fn, 24, lo=LO, hi=HI)
        n = m.face_normals()
        c = m.face_centroids()
        c = c / np.linalg.norm(c, axis=1, keepdims=True)
        assert (np.einsum("ij,ij->i", n, c) > 0).all()

    def test_vertices_near_zero_set(self):
        m = marching_cubes(sphere_fn, 20, lo=LO, hi=HI)
        cell_diag = np.sqrt(3) * 2.0 / 20
        assert np.abs(sphere_fn(m.vertices)).max() < cell_diag

    def test_no_degenerate_faces(self):
        m = marching_cubes(sphere_fn, 24, lo=LO, hi=HI)
        assert m.face_areas().min() > 0

    def test_accepts_field_object(self):
        from scanmesh.neuralgeom.fields import GridField
        g = GridField.sphere_init(32, LO, HI, radius=0.5)
        m = marching_cubes(g, 32)
        r = np.linalg.norm(m.vertices, axis=1)
        assert np.abs(r - 0.5).max() < 0.08


class TestQuadricSimplify:
    def test_fraction_one_identity(self):
        m = icosphere(0.5, subdivisions=2)
        r = quadric_simplify(m, SimplifyConfig(target_face_fraction=1.0))
        np.testing.assert_array_equal(r.mesh.faces, m.faces)
        np.testing.assert_array_equal(r.mesh.vertices, m.vertices)

    def test_dense_sphere_hausdorff(self):
        m = marching_cubes(sphere_fn, 44, lo=LO, hi=HI)  # ~10K faces
        assert m.n_faces > 4000
        r = quadric_simplify(m, SimplifyConfig(target_face_fraction=0.02))
        assert r.reached_target
        assert r.mesh.n_faces <= int(np.ceil(0.02 * m.n_faces))
        h = hausdorff_distance(r.mesh, m, samples=2000, seed=0)
        assert h < 0.02 * m.bbox_diagonal()

    def test_flat_plane_zero_error(self):
        p = quad_grid_mesh(cells=(8, 8))
        r = quadric_simplify(p, SimplifyConfig(target_face_fraction=0.3))
        assert r.mesh.n_faces < p.n_faces
        assert np.abs(r.mesh.vertices[:, 2]).max() < 1e-9
        h = hausdorff_distance(r.mesh, p, samples=2000, seed=1)
        assert h < 1e-9

    def test_monotone_face_count(self):
        m = icosphere(0.5, subdivisions=2)
        r = quadric_simplify(m, SimplifyConfig(target_face_fraction=0.5))
        assert r.mesh.n_faces <= int(np.ceil(0.5 * m.n_faces))
        assert r.mesh.n_faces < m.n_faces

    def test_manifold_preserved(self):
        m = icosphere(0.5, subdivisions=3)
        r = quadric_simplify(m, SimplifyConfig(target_face_fraction=0.1))
        # Closed manifold: every edge borders exactly 2 faces.
        f = r.mesh.faces
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]],
                                    f[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        assert (counts == 2).all()
        assert r.mesh.euler_characteristic() == 2


class TestAtlas:
    def test_single_triangle_chart(self):
        m = TriangleMesh(np.eye(3), np.array([[0, 1, 2]]))
        out, layout = build_uv_atlas(m, texel_budget=64)
        assert out.corner_uvs.shape == (1, 3, 2)
        assert (layout.owner >= 0).sum() > 0
        assert out.face_chart[0] == 0

    def test_charts_disjoint(self):
        m = icosphere(0.5, subdivisions=1)  # 80 faces
        out, layout = build_uv_atlas(m, texel_budget=256)
        # Each owned texel belongs to exactly one face by construction of
        # the owner map; verify the padded fills stay disjoint too.
        claimed = np.full((layout.size, layout.size), -1, dtype=np.int64)
        for f in range(m.n_faces):
            texels, _ = layout.face_texels_padded(f)
            assert (claimed[texels[:, 1], texels[:, 0]] == -1).all()
            claimed[texels[:, 1], texels[:, 0]] = f

    def test_min_texels_per_face(self):
        m = icosphere(0.5, subdivisions=3)  # 5120 faces > 5K budget case
        out, layout = build_uv_atlas(m, texel_budget=1024)
        counts = np.bincount(layout.owner[layout.owner >= 0],
                             minlength=m.n_faces)
        assert counts.min() >= 16

    def test_overflow_reports_required(self):
        m = icosphere(0.5, subdivisions=2)
        with pytest.raises(AtlasOverflow) as ei:
            build_uv_atlas(m, texel_budget=32)
        assert ei.value.required > 32

    def test_uv_round_trip_inside_face(self):
        m = icosphere(0.5, subdivisions=1)
        out, layout = build_uv_atlas(m, texel_budget=256)
        # A point strictly inside a chart maps back to its own face.
        for f in (0, 7, 33):
            A, B, C = layout.corners[f].astype(float)
            p = (A + B + C) / 3.0
            bary = layout.barycentric(f, p[None])
            assert (bary > 0).all()
            assert layout.owner[int(round(p[1])), int(round(p[0]))] == f


class TestMeshIO:
    def test_obj_round_trip_with_uvs(self, tmp_path):
        m = icosphere(0.4, subdivisions=1)
        m, _ = build_uv_atlas(m, texel_budget=128)
        path = str(tmp_path / "m.obj")
        save_obj(m, path, texture_png="tex.png")
        back = load_obj(path)
        np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-6)
        np.testing.assert_array_equal(back.faces, m.faces)
        np.testing.assert_allclose(back.corner_uvs, m.corner_uvs, atol=1e-6)

    def test_ply_round_trip(self, tmp_path):
        m = box_mesh()
        path = str(tmp_path / "m.ply")
        save_ply(m, path)
        back = load_ply(path)
        np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-6)
        np.testing.assert_array_equal(back.faces, m.faces)


class TestNearestSurface:
    def test_brute_force_vs_tree_identical(self):
        m = icosphere(0.5, subdivisions=3)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, size=(200, 3))
        brute = nearest_surface_distance(pts, m, force_brute=True)
        tree = nearest_surface_distance(pts, m)
        assert m.n_faces > 512  # tree path actually taken
        np.testing.assert_allclose(tree, brute, atol=1e-9)
