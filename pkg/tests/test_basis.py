import math

import numpy as np
import pytest

from dpghp.basis import (
    ApproximationError,
    ReferenceBasis,
    build_layout,
    eval_basis,
    flux_values,
    gauss_1d,
    quadrature_rule,
    trace_values,
    tri_tables,
)
from dpghp.mesh import HpMesh, Triangulation, unit_square_mesh


def ref_triangle_monomial(a, b):
    # exact integral of x^a y^b over the reference triangle
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


class TestQuadrature:
    def test_degree_one_constant(self):
        rule = quadrature_rule(1)
        assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)

    def test_linear(self):
        rule = quadrature_rule(1)
        x, _ = rule.xy()
        assert np.sum(rule.weights * x) == pytest.approx(1.0 / 6.0, rel=1e-13)

    def test_x2y2(self):
        rule = quadrature_rule(4)
        x, y = rule.xy()
        assert np.sum(rule.weights * x**2 * y**2) == pytest.approx(1.0 / 180.0, rel=1e-13)

    @pytest.mark.parametrize("degree", [1, 2, 3, 5, 8, 13, 21, 34, 40])
    def test_monomial_exactness(self, degree):
        rule = quadrature_rule(degree)
        x, y = rule.xy()
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                val = np.sum(rule.weights * x**a * y**b)
                assert val == pytest.approx(ref_triangle_monomial(a, b), rel=1e-13)

    def test_positive_weights(self):
        for degree in (1, 7, 19, 40):
            assert np.all(quadrature_rule(degree).weights > 0)

    def test_unsupported_degree(self):
        with pytest.raises(ApproximationError):
            quadrature_rule(0)
        with pytest.raises(ApproximationError):
            quadrature_rule(41)

    def test_barycentric_points(self):
        rule = quadrature_rule(9)
        assert np.allclose(rule.points.sum(axis=1), 1.0)
        assert rule.points.min() >= 0.0


class TestReferenceBasis:
    def test_p0_constant_one(self):
        vals, _ = eval_basis(ReferenceBasis(0), (1 / 3, 1 / 3, 1 / 3))
        assert vals == pytest.approx([1.0])

    def test_dimension(self):
        for p in range(8):
            assert ReferenceBasis(p).n_modes == (p + 1) * (p + 2) // 2

    def test_gradient_finite_difference(self):
        # oracle: central differences with step 1e-6 at 20 random points
        basis = ReferenceBasis(6)
        rng = np.random.default_rng(19)
        pts = rng.dirichlet((1.5, 1.5, 1.5), size=20)
        h = 1e-6
        for lam in pts:
            x, y = lam[1], lam[2]
            _, grad = eval_basis(basis, lam)
            vxp, _, _ = basis.eval(x + h, y)
            vxm, _, _ = basis.eval(x - h, y)
            vyp, _, _ = basis.eval(x, y + h)
            vym, _, _ = basis.eval(x, y - h)
            fd = np.column_stack([(vxp[0] - vxm[0]) / (2 * h), (vyp[0] - vym[0]) / (2 * h)])
            assert np.abs(fd - grad).max() < 1e-6 * max(1.0, np.abs(grad).max())

    def test_point_outside_rejected(self):
        with pytest.raises(ApproximationError):
            eval_basis(ReferenceBasis(2), (-0.1, 0.6, 0.5))

    def test_closed_triangle_vertices_ok(self):
        basis = ReferenceBasis(5)
        for lam in [(1, 0, 0), (0, 1, 0), (0, 0, 1)]:
            vals, grads = eval_basis(basis, lam)
            assert np.all(np.isfinite(vals)) and np.all(np.isfinite(grads))

    @pytest.mark.parametrize("order", range(1, 13))
    def test_mass_matrix_spd(self, order):
        rule, V, _, _ = tri_tables(order, 2 * order + 2)
        M = V.T @ (rule.weights[:, None] * V)
        eig = np.linalg.eigvalsh(M)
        assert eig[0] > 0
        assert np.allclose(M, M.T)

    def test_mode_degrees_filterable(self):
        basis = ReferenceBasis(4)
        # exactly (p+1)(p+2)/2 modes of degree <= p for every sub-order
        for p in range(5):
            assert np.sum(basis.mode_degrees <= p) == (p + 1) * (p + 2) // 2


class TestEdgeBases:
    def test_trace_endpoint_values(self):
        V = trace_values(4, np.array([0.0, 1.0]))
        assert V[0] == pytest.approx([1, 0] + [0] * 3)
        assert V[1] == pytest.approx([0, 1] + [0] * 3)

    def test_trace_spans_polynomials(self):
        # project t^3 onto the degree-3 trace space and check exact reproduction
        t, w = gauss_1d(6)
        V = trace_values(3, t)
        G = V.T @ (w[:, None] * V)
        rhs = V.T @ (w * t**3)
        coef = np.linalg.solve(G, rhs)
        tt = np.linspace(0, 1, 17)
        assert trace_values(3, tt) @ coef == pytest.approx(tt**3, abs=1e-12)

    def test_flux_orthogonality(self):
        t, w = gauss_1d(8)
        V = flux_values(5, t)
        G = V.T @ (w[:, None] * V)
        assert np.abs(G - np.diag(np.diag(G))).max() < 1e-14


def single_triangle_hp(p=1):
    tri = Triangulation(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    return HpMesh(tri, [p])


class TestLayout:
    def test_single_element_dimensions(self):
        layout = build_layout(single_triangle_hp(1), delta_p=1)
        # u: 3, sigma: 6, trace: 3 vertices + 3 bubbles (degree 2),
        # flux: 3 edges x 2 modes
        assert layout.n_scalar == 3
        assert layout.n_total == 3 + 6 + 3 + 3 + 6
        assert layout.test_dim(0) == 3 * 6
        assert len(layout.element_dofs(0)) == 21

    def test_trace_count_two_element_mesh(self):
        # oracle: continuous skeleton trace dofs = sum_edges (p+2) minus
        # duplicate vertex counts = nv + p*ne
        p = 3
        tri = unit_square_mesh(1)
        hp = HpMesh(tri, np.full(2, p))
        layout = build_layout(hp, delta_p=1)
        n_trace = tri.n_vertices + p * tri.n_edges
        expected = sum((p + 2) for _ in range(tri.n_edges)) - (2 * tri.n_edges - tri.n_vertices)
        assert n_trace == expected
        n_bubbles = sum(int(layout.edge_q[e]) - 1 for e in range(tri.n_edges))
        assert tri.n_vertices + n_bubbles == n_trace

    def test_field_test_dimension_guard(self):
        with pytest.raises(ApproximationError):
            build_layout(single_triangle_hp(1), delta_p=0)

    def test_min_rule_on_shared_edge(self):
        tri = unit_square_mesh(1)
        hp = HpMesh(tri, np.array([2, 4]))
        layout = build_layout(hp, delta_p=1)
        shared = [e for e in range(tri.n_edges) if not tri.edge_is_boundary[e]][0]
        assert layout.edge_q[shared] == 3
        assert layout.edge_m[shared] == 2

    def test_dirichlet_marks(self):
        tri = unit_square_mesh(2)
        hp = HpMesh(tri, np.full(tri.n_triangles, 2))
        layout = build_layout(hp, delta_p=1)
        assert np.array_equal(layout.dirichlet_edges, tri.edge_is_boundary)
        boundary_vertices = set()
        for e in tri.boundary_edge_ids():
            boundary_vertices.update(tri.edges[e])
        for v in range(tri.n_vertices):
            assert layout.dirichlet_dofs[layout.vertex_dof[v]] == (v in boundary_vertices)

    def test_offsets_partition(self):
        tri = unit_square_mesh(2)
        rng = np.random.default_rng(1)
        hp = HpMesh(tri, rng.integers(1, 4, tri.n_triangles))
        layout = build_layout(hp, delta_p=2)
        seen = np.zeros(layout.n_total, dtype=int)
        for k in range(tri.n_triangles):
            base = layout.field_offset[k]
            seen[base: base + 3 * layout.n_field(k)] += 1
        seen[layout.vertex_dof] += 1
        for e in range(tri.n_edges):
            off = layout.edge_bubble_offset[e]
            seen[off: off + layout.edge_q[e] - 1] += 1
            off = layout.edge_flux_offset[e]
            seen[off: off + layout.edge_m[e] + 1] += 1
        assert np.all(seen == 1)
