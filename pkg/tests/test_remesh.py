import math

import numpy as np
import pytest

from dpghp.mesh import (
    MeshFormatError,
    MetricTensor,
    Triangulation,
    element_metric,
    lshape_mesh,
    metric_decompose,
    metric_log_mean,
    unit_square_mesh,
)
from dpghp.remesh import (
    interchange_read,
    interchange_write,
    read_metric_file,
    remesh_internal,
    transfer_orders,
)


def two_triangle_square():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    tags = {(0, 1): 1, (1, 2): 2, (2, 3): 3, (0, 3): 4}
    return Triangulation(verts, tris, boundary_tags=tags)


def identity_metrics(tri):
    return [MetricTensor(1.0, 0.0, 1.0) for _ in range(tri.n_vertices)]


def current_density_metrics(tri):
    """Unit-edge metric matching the mesh: per-element metric with C = 1,
    log-averaged to vertices."""
    elem = [element_metric(tri.tri_coords(k), C=1.0) for k in range(tri.n_triangles)]
    return [metric_log_mean([elem[t] for t in tri.vertex_tris[v]])
            for v in range(tri.n_vertices)]


class TestInterchange:
    def test_roundtrip(self, tmp_path):
        tri = unit_square_mesh(3)
        vm = identity_metrics(tri)
        prefix = str(tmp_path / "mesh_out")
        interchange_write(tri, vm, prefix)
        back, metrics = interchange_read(prefix)
        assert np.array_equal(back.triangles, tri.triangles)
        assert np.array_equal(back.vertices, tri.vertices)
        bids = tri.boundary_edge_ids()
        assert sorted(map(tuple, back.edges[back.boundary_edge_ids()])) == \
            sorted(map(tuple, tri.edges[bids]))
        assert len(metrics) == tri.n_vertices
        assert all(np.allclose(m.as_matrix(), np.eye(2)) for m in metrics)

    def test_identity_rows(self, tmp_path):
        tri = two_triangle_square()
        prefix = str(tmp_path / "m")
        _, mtr = interchange_write(tri, identity_metrics(tri), prefix)
        lines = open(mtr).read().splitlines()
        assert lines[0] == "4 3"
        assert all(ln == "1 0 1" for ln in lines[1:])

    def test_two_triangle_fixture_counts(self, tmp_path):
        tri = two_triangle_square()
        prefix = str(tmp_path / "sq")
        mesh_path, _ = interchange_write(tri, identity_metrics(tri), prefix)
        text = open(mesh_path).read().split()
        iv = text.index("Vertices")
        assert text[iv + 1] == "4"
        ie = text.index("Edges")
        assert text[ie + 1] == "4"
        it = text.index("Triangles")
        assert text[it + 1] == "2"

    def test_byte_stable(self, tmp_path):
        tri = unit_square_mesh(2)
        vm = current_density_metrics(tri)
        p1, p2 = str(tmp_path / "a"), str(tmp_path / "b")
        interchange_write(tri, vm, p1)
        interchange_write(tri, vm, p2)
        assert open(p1 + ".mesh", "rb").read() == open(p2 + ".mesh", "rb").read()
        assert open(p1 + ".mtr", "rb").read() == open(p2 + ".mtr", "rb").read()

    def test_malformed_reports_line(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("Vertices\n2\n0.0 0.0 1\n1.0 oops 1\n")
        with pytest.raises(MeshFormatError, match=":4:"):
            interchange_read(str(tmp_path / "bad"))

    def test_non_spd_metric_row(self, tmp_path):
        path = tmp_path / "bad.mtr"
        path.write_text("2 3\n1 0 1\n1 5 1\n")
        with pytest.raises(MeshFormatError, match=":3:"):
            read_metric_file(str(path))

    def test_metric_count_mismatch(self, tmp_path):
        path = tmp_path / "bad.mtr"
        path.write_text("3 3\n1 0 1\n1 0 1\n")
        with pytest.raises(MeshFormatError):
            read_metric_file(str(path))


class TestRemeshInternal:
    def test_matching_metric_keeps_element_count(self):
        tri = unit_square_mesh(4)
        out, rep = remesh_internal(tri, current_density_metrics(tri))
        assert abs(out.n_triangles - tri.n_triangles) <= 0.2 * tri.n_triangles

    def test_four_times_density_grows_count(self):
        tri = unit_square_mesh(4)
        vm = [m.scaled(4.0) for m in current_density_metrics(tri)]
        out, _ = remesh_internal(tri, vm)
        assert abs(out.n_triangles - 4 * tri.n_triangles) <= 0.3 * 4 * tri.n_triangles

    def test_anisotropic_metric_stretches_elements(self):
        tri = unit_square_mesh(4)
        # unit-edge targets 0.5 along x, 0.05 along y: aspect 10
        M = MetricTensor(1.0 / 0.5**2, 0.0, 1.0 / 0.05**2)
        out, _ = remesh_internal(tri, [M] * tri.n_vertices)
        aspects = sorted(
            metric_decompose(element_metric(out.tri_coords(k), C=3.0)).beta
            for k in range(out.n_triangles))
        assert aspects[len(aspects) // 2] >= 3.0

    def test_output_passes_invariants_and_band(self):
        tri = unit_square_mesh(3)
        vm = [m.scaled(2.0) for m in current_density_metrics(tri)]
        out, rep = remesh_internal(tri, vm)
        assert np.all(out.areas() > 0)
        assert rep.in_band >= 0.9
        assert rep.converged

    def test_boundary_tags_preserved(self):
        tri = two_triangle_square()
        vm = [MetricTensor(16.0, 0.0, 16.0)] * 4  # quarter edge lengths
        out, _ = remesh_internal(tri, vm)
        tags = set(out.edge_tags[out.boundary_edge_ids()])
        assert tags == {1, 2, 3, 4}
        # side coverage: every boundary edge lies on the unit square
        for e in out.boundary_edge_ids():
            a, b = out.edges[e]
            for v in (a, b):
                x, y = out.vertices[v]
                assert (np.isclose(x, 0) or np.isclose(x, 1)
                        or np.isclose(y, 0) or np.isclose(y, 1))

    def test_lshape_corners_survive_strong_grading(self):
        tri = lshape_mesh(2)

        def h(p):
            return min(0.4, max(0.02, 0.3 * math.hypot(p[0], p[1])))

        vm = [MetricTensor(1 / h(v)**2, 0.0, 1 / h(v)**2) for v in tri.vertices]
        out, rep = remesh_internal(tri, vm)
        assert np.all(out.areas() > 0)
        for corner in [(-1, -1), (0, -1), (0, 0), (1, 0), (1, 1), (-1, 1)]:
            d = np.abs(out.vertices - np.array(corner)).sum(axis=1)
            assert d.min() < 1e-12

    def test_deterministic(self):
        tri = unit_square_mesh(3)
        vm = [m.scaled(3.0) for m in current_density_metrics(tri)]
        out1, _ = remesh_internal(tri, vm)
        out2, _ = remesh_internal(tri, vm)
        assert np.array_equal(out1.triangles, out2.triangles)
        assert np.array_equal(out1.vertices, out2.vertices)


class TestTransferOrders:
    def test_identical_meshes(self):
        tri = unit_square_mesh(3)
        rng = np.random.default_rng(0)
        p = rng.integers(1, 5, tri.n_triangles)
        assert np.array_equal(transfer_orders(tri, p, tri), p)

    def test_uniform_orders(self):
        tri = unit_square_mesh(3)
        out, _ = remesh_internal(tri, [m.scaled(2.0) for m in current_density_metrics(tri)])
        p = np.full(tri.n_triangles, 4)
        assert np.all(transfer_orders(tri, p, out) == 4)

    def test_split_fixture_keeps_local_orders(self):
        # 2-element square split into 8: each new element inherits the order
        # of the containing coarse element
        coarse = two_triangle_square()
        fine = unit_square_mesh(2)
        p = np.array([2, 5])
        out = transfer_orders(coarse, p, fine)
        for k, b in enumerate(fine.barycenters()):
            expected = 2 if b[1] < b[0] else 5  # lower-right vs upper-left
            assert out[k] == expected
