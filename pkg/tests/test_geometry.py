import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_small_mesh, write_text
from ncycle.geometry import (
    MeshError,
    ObjParseError,
    Polyline,
    TriangleMesh,
    boundary_vertices,
    build_edge_table,
    check_orientation,
    euler_characteristic,
    load_obj,
    load_polyline,
    load_shape,
    make_shape,
    save_obj,
    save_polyline,
)

TRI = "v 0 0 0\nv 1 0 0\nv 0 1 0\n"


def two_triangles(flip=False):
    v = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
    t = [[0, 1, 2], [0, 2, 3] if not flip else [0, 3, 2]]
    return TriangleMesh(v, t)


class TestLoadObj:
    def test_single_triangle(self, tmp_path):
        m = load_obj(write_text(tmp_path / "a.obj", TRI + "f 1 2 3\n"))
        assert m.n_vertices == 3
        np.testing.assert_array_equal(m.triangles, [[0, 1, 2]])

    def test_slash_suffixes_dropped(self, tmp_path):
        m = load_obj(write_text(tmp_path / "a.obj", TRI + "vt 0 0\nvn 0 0 1\nf 1/1/1 2/2/2 3/3/3\n"))
        np.testing.assert_array_equal(m.triangles, [[0, 1, 2]])

    def test_quad_is_fanned(self, tmp_path):
        m = load_obj(write_text(tmp_path / "a.obj", TRI + "v 1 1 0\nf 1 2 4 3\n"))
        np.testing.assert_array_equal(m.triangles, [[0, 1, 3], [0, 3, 2]])

    def test_other_records_ignored(self, tmp_path):
        text = "# comment\no thing\ng grp\n" + TRI + "usemtl x\ns off\nf 1 2 3\n"
        assert load_obj(write_text(tmp_path / "a.obj", text)).n_triangles == 1

    @pytest.mark.parametrize(
        "body,line",
        [
            (TRI + "f 1 2 x\n", 4),
            ("v 0 0 0\nv 1 zero 0\nv 0 1 0\nf 1 2 3\n", 2),
            (TRI + "f 1 2\n", 4),
            (TRI + "f 1 2 9\n", 4),
            (TRI + "f 1 2 0\n", 4),
        ],
    )
    def test_errors_cite_line(self, tmp_path, body, line):
        with pytest.raises(ObjParseError) as exc:
            load_obj(write_text(tmp_path / "bad.obj", body))
        assert exc.value.line == line
        assert f"line {line}" in str(exc.value)

    def test_degenerate_triangle_rejected(self, tmp_path):
        with pytest.raises(MeshError):
            load_obj(write_text(tmp_path / "a.obj", "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n"))

    def test_round_trip(self, tmp_path, rng):
        m = make_shape("torus", n_major=6, n_minor=4, jitter=0.1, seed=3)
        m = TriangleMesh(m.vertices * np.pi, m.triangles)
        save_obj(m, tmp_path / "t.obj")
        back = load_obj(tmp_path / "t.obj")
        np.testing.assert_array_equal(back.vertices, m.vertices)
        np.testing.assert_array_equal(back.triangles, m.triangles)


class TestPolylineIO:
    def test_round_trip_and_detection(self, tmp_path):
        c = make_shape("l_polyline", n_per_leg=3, jitter=0.01, seed=2)
        save_polyline(c, tmp_path / "c.obj")
        back = load_polyline(tmp_path / "c.obj")
        np.testing.assert_array_equal(back.vertices, c.vertices)
        np.testing.assert_array_equal(back.segments, c.segments)
        assert isinstance(load_shape(tmp_path / "c.obj"), Polyline)

    def test_zero_length_segment(self):
        with pytest.raises(MeshError):
            Polyline([[0, 0, 0], [0, 0, 0]], [[0, 1]])

    def test_incident_lists(self):
        c = make_shape("line_polyline", n_vertices=4)
        assert [len(x) for x in c.incident] == [1, 2, 2, 1]
        for v, segs in enumerate(c.incident):
            assert all(v in c.segments[s] for s in segs)


class TestEdgeTable:
    def test_single_triangle(self):
        et = build_edge_table(TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]]))
        assert len(et.edges) == 3
        assert all(len(a) == 1 for a in et.adjacency)

    def test_cube(self):
        et = build_edge_table(make_shape("cube"))
        assert len(et.edges) == 18
        assert all(len(a) == 2 for a in et.adjacency)

    def test_shared_edge(self):
        et = build_edge_table(two_triangles())
        assert len(et.edges) == 5
        shared = [i for i, e in enumerate(et.edges) if tuple(e) == (0, 2)]
        assert len(et.adjacency[shared[0]]) == 2

    def test_canonical_sorted_and_midpoints(self):
        m = make_shape("sphere", subdivisions=1, jitter=0.05)
        et = build_edge_table(m)
        assert np.all(et.edges[:, 0] < et.edges[:, 1])
        keys = [tuple(e) for e in et.edges]
        assert keys == sorted(keys) and len(set(keys)) == len(keys)
        np.testing.assert_array_equal(et.midpoints, 0.5 * (m.vertices[et.edges[:, 0]] + m.vertices[et.edges[:, 1]]))

    def test_non_manifold(self, caplog):
        v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
        m = TriangleMesh(v, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])
        with pytest.raises(MeshError):
            build_edge_table(m)
        et = build_edge_table(m, strict=False)
        assert max(len(a) for a in et.adjacency) == 3
        assert "non-manifold" in caplog.text

    def test_permutation_invariant(self, rng):
        m = make_shape("torus", n_major=5, n_minor=4)
        perm = rng.permutation(m.n_triangles)
        a = build_edge_table(m)
        b = build_edge_table(TriangleMesh(m.vertices, m.triangles[perm]))
        np.testing.assert_array_equal(a.edges, b.edges)
        for adj_a, adj_b in zip(a.adjacency, b.adjacency):
            assert sorted(adj_a) == sorted(int(perm[t]) for t in adj_b)


class TestBoundary:
    def test_closed_is_empty(self):
        m = make_shape("cube")
        assert boundary_vertices(m, build_edge_table(m)).vertices == ()

    def test_single_triangle(self):
        m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        assert boundary_vertices(m, build_edge_table(m)).vertices == (0, 1, 2)

    def test_split_square(self):
        m = two_triangles()
        et = build_edge_table(m)
        b = boundary_vertices(m, et)
        assert b.vertices == (0, 1, 2, 3)
        diag = [i for i, e in enumerate(et.edges) if tuple(e) == (0, 2)][0]
        assert len(et.adjacency[diag]) == 2
        # every incident edge counts, interior diagonal included
        assert diag in b.incident_edges[0] and diag in b.incident_edges[2]
        assert len(b.incident_edges[1]) == 2


class TestOrientation:
    def test_generated_sphere(self):
        assert check_orientation(make_shape("sphere", subdivisions=2)).consistent

    def test_flipped_pair(self):
        rep = check_orientation(two_triangles(flip=True))
        assert not rep.consistent
        assert [tuple(e) for e in rep.offending_edges] == [(0, 2)]

    def test_single_triangle(self):
        assert check_orientation(TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])).consistent


class TestMakeShape:
    def test_sphere_closed(self):
        m = make_shape("sphere", subdivisions=2)
        assert boundary_vertices(m, build_edge_table(m)).vertices == ()

    def test_flat_disc(self):
        m = make_shape("flat_disc")
        assert np.all(m.vertices[:, 2] == 0)
        assert len(boundary_vertices(m, build_edge_table(m)).vertices) > 0

    def test_line(self):
        c = make_shape("line_polyline", n_vertices=5)
        assert len(c.segments) == 4

    @pytest.mark.parametrize(
        "kind,params,chi",
        [
            ("sphere", {"subdivisions": 2}, 2),
            ("sphere", {"frequency": 7}, 2),
            ("sphere", {"rings": 9, "segments": 14, "concentrate": 2.0}, 2),
            ("ellipsoid", {"subdivisions": 2, "axes": (1.5, 1, 0.5)}, 2),
            ("torus", {}, 0),
            ("cube", {"resolution": 3}, 2),
            ("flat_disc", {"rings": 3, "segments": 7}, 1),
        ],
    )
    def test_euler_and_orientation(self, kind, params, chi):
        m = make_shape(kind, **params)
        assert euler_characteristic(m) == chi
        assert check_orientation(m).consistent

    def test_outward_normals(self):
        for kind in ("sphere", "ellipsoid", "cube", "torus"):
            m = make_shape(kind)
            v, t = m.vertices, m.triangles
            vol = np.einsum("ij,ij->i", v[t[:, 0]], np.cross(v[t[:, 1]], v[t[:, 2]])).sum() / 6
            assert vol > 0, kind

    def test_geodesic_frequency_counts(self):
        m = make_shape("sphere", frequency=10)
        assert (m.n_vertices, m.n_triangles, len(build_edge_table(m).edges)) == (1002, 2000, 3000)

    def test_concentrate_clusters_vertices(self):
        a = make_shape("sphere", frequency=6)
        b = make_shape("sphere", frequency=6, concentrate=3.0)
        assert np.mean(b.vertices[:, 2] > 0.5) > 2 * np.mean(a.vertices[:, 2] > 0.5)
        np.testing.assert_allclose(np.linalg.norm(b.vertices, axis=1), 1.0)

    def test_deterministic_jitter(self):
        a = make_shape("cube", resolution=2, jitter=0.01, seed=4)
        b = make_shape("cube", resolution=2, jitter=0.01, seed=4)
        c = make_shape("cube", resolution=2, jitter=0.01, seed=5)
        np.testing.assert_array_equal(a.vertices, b.vertices)
        assert not np.array_equal(a.vertices, c.vertices)

    @pytest.mark.parametrize("kind,params", [("blob", {}), ("sphere", {"subdivison": 1}), ("torus", {"n_minor": 2}),
                                             ("cube", {"resolution": 0}), ("line_polyline", {"n_vertices": 1})])
    def test_invalid(self, kind, params):
        with pytest.raises(MeshError):
            make_shape(kind, **params)


class TestValidation:
    def test_index_out_of_range(self):
        with pytest.raises(MeshError):
            TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])

    def test_non_finite(self):
        with pytest.raises(MeshError):
            TriangleMesh([[0, 0, np.nan], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])

    def test_immutable(self):
        m = make_shape("cube")
        with pytest.raises(ValueError):
            m.vertices[0, 0] = 5.0


@given(st.integers(0, 10_000))
def test_random_meshes_are_valid_manifolds(seed):
    m = random_small_mesh(np.random.default_rng(seed))
    assert 3 <= m.n_triangles <= 40
    et = build_edge_table(m)
    assert set(et.adjacency_counts()) <= {1, 2}
    assert check_orientation(m, et).consistent
