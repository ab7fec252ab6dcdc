import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from graspsynth import shapes
from graspsynth.errors import EmptyGeometryError, MalformedMeshError
from graspsynth.mesh import (TriangleMesh, bounding_ball, bounding_ball_points, closest_points, load_mesh,
                             ray_intersect, ray_intersect_many, sample_surface, save_obj, save_off)
from oracles import box_surface_distance, brute_ray, meb_radius

CUBE_OBJ = """# unit cube
v -0.5 -0.5 -0.5
v 0.5 -0.5 -0.5
v 0.5 0.5 -0.5
v -0.5 0.5 -0.5
v -0.5 -0.5 0.5
v 0.5 -0.5 0.5
v 0.5 0.5 0.5
v -0.5 0.5 0.5
f 1 4 3
f 1 3 2
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 4 8 7
f 4 7 3
f 1 5 8
f 1 8 4
f 2 3 7
f 2 7 6
"""


def _side(normals):
    # index of the cube side (+-x, +-y, +-z) each normal belongs to
    ax = np.argmax(np.abs(normals), axis=1)
    return ax * 2 + (normals[np.arange(len(normals)), ax] > 0)


def test_load_unit_cube_obj(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(CUBE_OBJ)
    m = load_mesh(p)
    assert m.n_faces == 12
    n = m.face_normals
    assert np.allclose(np.sort(np.abs(n), axis=1), [0, 0, 1])
    # outward: normal points away from the centroid
    centers = m.triangles.mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", n, centers) > 0)


def test_obj_index_out_of_range_reports_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(MalformedMeshError) as exc:
        load_mesh(p)
    assert "bad.obj" in str(exc.value)


def test_obj_parse_error_has_line_number(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 x 0\n")
    with pytest.raises(MalformedMeshError) as exc:
        load_mesh(p)
    assert exc.value.line == 2


def test_obj_negative_indices_and_quads(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n")
    m = load_mesh(p)
    assert m.n_faces == 2
    assert np.allclose(m.face_normals, [0, 0, 1])


def test_empty_mesh_raises(tmp_path):
    p = tmp_path / "empty.obj"
    p.write_text("# nothing\n")
    with pytest.raises(EmptyGeometryError):
        load_mesh(p)


def test_degenerate_face_dropped_with_warning(caplog):
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]]
    m = TriangleMesh.from_arrays(v, [[0, 1, 2], [0, 1, 3]])
    assert m.n_faces == 1
    assert "degenerate" in caplog.text


def test_bundled_mug_counts_match_header(bundled):
    # independent scan of the OFF text
    lines = [ln for ln in (bundled / "mug.off").read_text().splitlines() if ln.strip()]
    assert lines[0].strip() == "OFF"
    nv, nf, _ = map(int, lines[1].split())
    face_lines = [ln for ln in lines[2 + nv:] if ln.split()[0] == "3"]
    m = load_mesh(bundled / "mug.off")
    assert len(m.vertices) == nv
    assert m.n_faces == nf == len(face_lines)


@pytest.mark.parametrize("name", ["mug.off", "box.obj", "bottle.obj"])
def test_bundled_meshes_are_closed(bundled, name):
    m = load_mesh(bundled / name)
    e = np.sort(m.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert np.all(counts == 2)
    vol = np.einsum("ij,ij->i", m.triangles[:, 0], np.cross(m.triangles[:, 1], m.triangles[:, 2])).sum() / 6
    assert vol > 0


def test_save_load_roundtrip(tmp_path, cube):
    for suffix, fn in ((".obj", save_obj), (".off", save_off)):
        p = tmp_path / f"c{suffix}"
        fn(cube, p)
        m = load_mesh(p)
        assert np.allclose(m.vertices, cube.vertices)
        assert np.array_equal(m.faces, cube.faces)


def test_load_scale(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(CUBE_OBJ)
    assert np.allclose(np.abs(load_mesh(p, scale=0.001).vertices), 0.0005)


# bounding ball


def test_bounding_ball_unit_sphere():
    m = shapes.icosphere(1.0, 3)
    b = bounding_ball(m)
    assert np.linalg.norm(b.center) < 1e-3
    assert 1.0 <= b.radius <= 1.05


def test_bounding_ball_single_triangle():
    m = TriangleMesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 2, 0]], [[0, 1, 2]])
    assert bounding_ball(m).contains(m.vertices)


def test_bounding_ball_cube(cube):
    r = bounding_ball(cube).radius
    assert math.sqrt(3) / 2 - 1e-12 <= r <= 1.05 * math.sqrt(3) / 2


@pytest.mark.parametrize("name", ["mug.off", "box.obj", "bottle.obj"])
def test_bounding_ball_near_exact_meb(bundled, name):
    m = load_mesh(bundled / name)
    b = bounding_ball(m)
    assert b.contains(m.vertices)
    assert b.radius <= 1.05 * meb_radius(m.vertices)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 60))
def test_bounding_ball_contains_random_points(seed, n):
    p = np.random.default_rng(seed).normal(size=(n, 3)) * [1, 3, 0.2]
    assert bounding_ball_points(p).contains(p, tol=1e-9)


def test_bounding_ball_empty():
    with pytest.raises(EmptyGeometryError):
        bounding_ball_points(np.zeros((0, 3)))


# sampling


def test_sample_surface_area_weighting_cube(cube):
    s = sample_surface(cube, 60_000, np.random.default_rng(0))
    frac = np.bincount(_side(cube.face_normals[s.face_ids]), minlength=6) / 60_000
    assert np.all(np.abs(frac - 1 / 6) <= 0.01)


def test_sample_surface_chi_square(cube):
    s = sample_surface(cube, 20_000, np.random.default_rng(1))
    obs = np.bincount(s.face_ids, minlength=12)
    exp = 20_000 * cube.face_areas / cube.face_areas.sum()
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_sample_points_on_their_faces(cube):
    s = sample_surface(cube, 500, np.random.default_rng(2))
    tri = cube.triangles[s.face_ids]
    # barycentric solve; residual of the reconstruction
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    M = np.stack([b - a, c - a], axis=2)
    uv, *_ = zip(*[np.linalg.lstsq(M[i], s.points[i] - a[i], rcond=None) for i in range(len(a))])
    uv = np.array(uv)
    rec = a + np.einsum("ijk,ik->ij", M, uv)
    assert np.max(np.linalg.norm(rec - s.points, axis=1)) <= 1e-9
    assert np.all(uv >= -1e-12) and np.all(uv.sum(axis=1) <= 1 + 1e-12)
    assert np.array_equal(s.normals, cube.face_normals[s.face_ids])


def test_sample_surface_single_and_deterministic(cube):
    one = sample_surface(cube, 1, np.random.default_rng(5))
    assert len(one) == 1
    a = sample_surface(cube, 100, np.random.default_rng(7))
    b = sample_surface(cube, 100, np.random.default_rng(7))
    assert np.array_equal(a.points, b.points) and np.array_equal(a.face_ids, b.face_ids)


# rays


def test_ray_hits_cube_face(cube):
    hit = ray_intersect(cube, [0, 0, -2], [0, 0, 1])
    assert hit is not None
    assert hit.point[2] == pytest.approx(-0.5, abs=1e-12)
    assert hit.distance == pytest.approx(1.5, abs=1e-12)


def test_ray_miss(cube):
    assert ray_intersect(cube, [2, 2, -2], [0, 0, 1]) is None
    assert ray_intersect(cube, [0, 0, -2], [0, 0, -1]) is None


def test_ray_intersect_matches_brute_force(cube):
    rng = np.random.default_rng(3)
    n = 2000
    o = rng.uniform(-2, 2, (n, 3))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t, f = ray_intersect_many(cube, o, d)
    tris = cube.triangles
    for i in range(n):
        tb, fb = brute_ray(tris, o[i], d[i])
        if fb < 0:
            assert f[i] < 0
        else:
            assert abs(t[i] - tb) <= 1e-9
            # edge hits may resolve to either adjacent face
            assert f[i] == fb or abs(t[i] - tb) <= 1e-12


def test_closest_points_on_cube(cube):
    rng = np.random.default_rng(4)
    p = rng.uniform(-1, 1, (300, 3))
    cp, fid, dist = closest_points(cube, p)
    assert np.allclose(dist, box_surface_distance(p, [0.5] * 3), atol=1e-12)
    assert np.allclose(np.linalg.norm(cp - p, axis=1), dist)
