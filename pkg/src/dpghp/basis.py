"""Polynomial bases on the reference triangle, quadrature, and dof layout.

Field variables use a hierarchic modal (Dubiner/Koornwinder) basis on the
reference triangle {(x, y): x >= 0, y >= 0, x + y <= 1}, scaled so the
first mode is identically 1.  Skeleton traces use vertex hats plus
integrated-Legendre bubbles on each edge (continuous across vertices);
skeleton fluxes use per-edge Legendre modes.

The trial pattern for the ultra-weak formulation on an element of order p:
field u and both components of sigma at order p, trace at order p + 1,
normal flux at order p.  On an edge shared by elements of different order
the skeleton spaces use the minimum adjacent order.  The broken test space
pairs (v, tau) with all components of order p + delta_p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .mesh import HpMesh, MAX_ORDER, scalar_dofs

MAX_QUAD_DEGREE = 40
MAX_TEST_ORDER = MAX_ORDER + 2


class ApproximationError(ValueError):
    """Invalid basis, quadrature, or layout request."""


# ---------------------------------------------------------------------------
# Jacobi polynomials (orthonormal on [-1, 1] w.r.t. (1-x)^a (1+x)^b)
# ---------------------------------------------------------------------------

def _jacobi_p(x, alpha, beta, n):
    x = np.asarray(x, dtype=float)
    gamma0 = (2.0 ** (alpha + beta + 1) / (alpha + beta + 1.0)
              * math.gamma(alpha + 1) * math.gamma(beta + 1) / math.gamma(alpha + beta + 1))
    pl = [np.full_like(x, 1.0 / math.sqrt(gamma0))]
    if n == 0:
        return pl[0]
    gamma1 = (alpha + 1.0) * (beta + 1.0) / (alpha + beta + 3.0) * gamma0
    pl.append(((alpha + beta + 2.0) * x / 2.0 + (alpha - beta) / 2.0) / math.sqrt(gamma1))
    if n == 1:
        return pl[1]
    aold = (2.0 / (2.0 + alpha + beta)
            * math.sqrt((alpha + 1.0) * (beta + 1.0) / (alpha + beta + 3.0)))
    for i in range(1, n):
        h1 = 2.0 * i + alpha + beta
        anew = (2.0 / (h1 + 2.0)
                * math.sqrt((i + 1.0) * (i + 1.0 + alpha + beta) * (i + 1.0 + alpha)
                            * (i + 1.0 + beta) / (h1 + 1.0) / (h1 + 3.0)))
        bnew = -(alpha * alpha - beta * beta) / h1 / (h1 + 2.0)
        pl.append(((x - bnew) * pl[i] - aold * pl[i - 1]) / anew)
        aold = anew
    return pl[n]


def _grad_jacobi_p(x, alpha, beta, n):
    if n == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    return math.sqrt(n * (n + alpha + beta + 1.0)) * _jacobi_p(x, alpha + 1.0, beta + 1.0, n - 1)


# ---------------------------------------------------------------------------
# Modal basis on the reference triangle
# ---------------------------------------------------------------------------

def _collapse(x, y):
    """Map reference coordinates to the collapsed (a, b) square."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    b = 2.0 * y - 1.0
    denom = 1.0 - b
    a = np.where(np.abs(denom) > 1e-13, 2.0 * (2.0 * x) / np.where(denom == 0.0, 1.0, denom) - 1.0, -1.0)
    return a, b


def _mode_index(order):
    """(i, j) pairs with i + j <= order, sorted by total degree then i."""
    return [(i, d - i) for d in range(order + 1) for i in range(d, -1, -1)]


_SQRT2 = math.sqrt(2.0)


class ReferenceBasis:
    """Hierarchic scalar modal basis of total order p on the reference triangle.

    kind tags the role the basis plays (field/trace/test); the evaluation
    machinery is shared.  mode_degrees[i] is the total polynomial degree of
    mode i; the first mode is the constant 1.
    """

    def __init__(self, order, kind="field scalar"):
        if not 0 <= order <= MAX_TEST_ORDER:
            raise ApproximationError(f"unsupported basis order {order}")
        self.order = order
        self.kind = kind
        self.modes = _mode_index(order)
        self.n_modes = len(self.modes)
        self.mode_degrees = np.array([i + j for i, j in self.modes])

    def eval(self, x, y):
        """Values and x/y-derivatives at reference points.

        Returns (V, Gx, Gy), each (npts, n_modes).
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        a, b = _collapse(x, y)
        V = np.empty((x.size, self.n_modes))
        Gx = np.empty_like(V)
        Gy = np.empty_like(V)
        half1mb = 0.5 * (1.0 - b)
        # Scaled so the constant mode is 1 and the Gram on the reference
        # triangle is I/2; derivative chain rule absorbs the map to the
        # unit reference triangle.
        for m, (i, j) in enumerate(self.modes):
            fa = _jacobi_p(a, 0.0, 0.0, i)
            gb = _jacobi_p(b, 2.0 * i + 1.0, 0.0, j)
            dfa = _grad_jacobi_p(a, 0.0, 0.0, i)
            dgb = _grad_jacobi_p(b, 2.0 * i + 1.0, 0.0, j)
            V[:, m] = 2.0 * fa * gb * (1.0 - b) ** i
            dmodedr = dfa * gb
            if i > 0:
                dmodedr = dmodedr * half1mb ** (i - 1)
            dmodeds = dfa * (gb * 0.5 * (1.0 + a))
            if i > 0:
                dmodeds = dmodeds * half1mb ** (i - 1)
            tmp = dgb * half1mb ** i
            if i > 0:
                tmp = tmp - 0.5 * i * gb * half1mb ** (i - 1)
            dmodeds = dmodeds + fa * tmp
            scale = 2.0 ** (i + 2)
            Gx[:, m] = scale * dmodedr
            Gy[:, m] = scale * dmodeds
        return V, Gx, Gy


def eval_basis(basis: ReferenceBasis, point):
    """Evaluate a basis at one barycentric point of the closed reference
    triangle.  Returns (values, gradients) with gradients shaped (n, 2).

    Raises ApproximationError for points outside the closed triangle.
    """
    lam = np.asarray(point, dtype=float)
    if lam.shape != (3,):
        raise ApproximationError("point must be a barycentric triple")
    if np.any(lam < -1e-12) or abs(lam.sum() - 1.0) > 1e-12:
        raise ApproximationError(f"point {point} lies outside the reference triangle")
    V, Gx, Gy = basis.eval(lam[1], lam[2])
    return V[0], np.column_stack([Gx[0], Gy[0]])


@lru_cache(maxsize=None)
def _basis_cache(order):
    return ReferenceBasis(order)


@lru_cache(maxsize=None)
def tri_tables(order, degree):
    """Basis tables (V, Gx, Gy) at the volume quadrature rule of the given
    degree, plus the rule itself."""
    rule = quadrature_rule(degree)
    x, y = rule.xy()
    V, Gx, Gy = _basis_cache(order).eval(x, y)
    return rule, V, Gx, Gy


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference triangle, exact to the declared degree.

    points are barycentric rows (l0, l1, l2); weights sum to the reference
    area 1/2.  Built from a collapsed Gauss-Legendre x Gauss-Jacobi tensor
    rule, so all weights are positive.
    """

    degree: int
    points: np.ndarray
    weights: np.ndarray

    def xy(self):
        return self.points[:, 1].copy(), self.points[:, 2].copy()


@lru_cache(maxsize=None)
def quadrature_rule(degree: int) -> QuadratureRule:
    if not 1 <= degree <= MAX_QUAD_DEGREE:
        raise ApproximationError(f"unsupported quadrature degree {degree}")
    n = (degree + 2) // 2  # ceil((degree+1)/2)
    xs, ws = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (xs + 1.0)
    ws = 0.5 * ws
    xj, wj = roots_jacobi(n, 0.0, 1.0)     # weight (1+x) on [-1, 1]
    t = 0.5 * (1.0 - xj)
    wt = 0.25 * wj
    # x = s(1-t), y = t; dx dy = (1-t) ds dt
    S, T = np.meshgrid(s, t, indexing="ij")
    X = S * (1.0 - T)
    Y = T
    W = np.outer(ws, wt)
    pts = np.column_stack([1.0 - X.ravel() - Y.ravel(), X.ravel(), Y.ravel()])
    return QuadratureRule(degree=degree, points=pts, weights=W.ravel())


@lru_cache(maxsize=None)
def gauss_1d(n):
    """n-point Gauss-Legendre rule on [0, 1]."""
    xs, ws = np.polynomial.legendre.leggauss(n)
    return 0.5 * (xs + 1.0), 0.5 * ws


# ---------------------------------------------------------------------------
# Edge bases
# ---------------------------------------------------------------------------

def trace_values(q, t):
    """Continuous trace basis of degree q at edge parameters t in [0, 1]:
    columns [1-t, t, bubble_2, ..., bubble_q].  Bubbles are integrated
    Legendre polynomials, zero at both endpoints."""
    t = np.asarray(t, dtype=float)
    xi = 2.0 * t - 1.0
    cols = [1.0 - t, t]
    if q >= 2:
        P = [np.ones_like(xi), xi]
        for j in range(1, q):
            P.append(((2 * j + 1) * xi * P[j] - j * P[j - 1]) / (j + 1))
        for j in range(2, q + 1):
            cols.append((P[j] - P[j - 2]) / math.sqrt(2.0 * (2.0 * j - 1.0)))
    return np.column_stack(cols)


def flux_values(m, t):
    """Discontinuous flux basis of degree m at edge parameters t: Legendre
    modes P_0..P_m(2t - 1)."""
    t = np.asarray(t, dtype=float)
    xi = 2.0 * t - 1.0
    P = [np.ones_like(xi)]
    if m >= 1:
        P.append(xi)
    for j in range(1, m):
        P.append(((2 * j + 1) * xi * P[j] - j * P[j - 1]) / (j + 1))
    return np.column_stack(P[: m + 1])


# Reference-triangle endpoints of local edge i (opposite local vertex i).
_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_LOCAL_EDGE = [(1, 2), (2, 0), (0, 1)]


@lru_cache(maxsize=None)
def edge_test_tables(order, local_edge, flipped, n_q):
    """Test basis values at edge quadrature points, seen from one element.

    The edge parameter runs from the globally lower-indexed endpoint; flipped
    says whether that endpoint is the second local endpoint.
    """
    t, _ = gauss_1d(n_q)
    a, b = _LOCAL_EDGE[local_edge]
    if flipped:
        a, b = b, a
    pts = np.outer(1.0 - t, _REF_VERTS[a]) + np.outer(t, _REF_VERTS[b])
    V, _, _ = _basis_cache(order).eval(pts[:, 0], pts[:, 1])
    return V


@lru_cache(maxsize=None)
def edge_trial_tables(q, m, n_q):
    t, w = gauss_1d(n_q)
    return t, w, trace_values(q, t), flux_values(m, t)


# ---------------------------------------------------------------------------
# Space layout
# ---------------------------------------------------------------------------

@dataclass
class SpaceLayout:
    """Global dof layout of the ultra-weak trial space on an hp-mesh.

    Per element: contiguous [u | sigma_x | sigma_y] blocks of order p.
    Per vertex: one shared trace dof.  Per edge: trace bubbles of degree
    q_e = min adjacent order + 1 and flux modes of degree m_e = min adjacent
    order.  The flux sign convention is owned by the lower-indexed adjacent
    element.
    """

    hp: HpMesh
    delta_p: int
    field_offset: np.ndarray     # (nt,) start of the element's field block
    vertex_dof: np.ndarray       # (nv,)
    edge_q: np.ndarray           # (ne,) trace degree on the edge
    edge_m: np.ndarray           # (ne,) flux degree on the edge
    edge_bubble_offset: np.ndarray
    edge_flux_offset: np.ndarray
    edge_owner: np.ndarray       # (ne,) element owning the flux orientation
    n_total: int
    n_scalar: int                # total u dofs (= mesh complexity)
    dirichlet_edges: np.ndarray  # (ne,) bool
    dirichlet_dofs: np.ndarray   # (n_total,) bool
    test_order: np.ndarray       # (nt,)

    def n_field(self, k):
        return int(scalar_dofs(self.hp.p[k]))

    def test_dim(self, k):
        return 3 * len(_mode_index(int(self.test_order[k])))

    def element_dofs(self, k):
        """Global dof ids coupling to element k, in local column order:
        [u, sigma_x, sigma_y, vertex traces (3), per-edge bubbles,
        per-edge fluxes]."""
        npk = self.n_field(k)
        base = self.field_offset[k]
        ids = list(range(base, base + 3 * npk))
        tri = self.hp.mesh
        for v in tri.triangles[k]:
            ids.append(int(self.vertex_dof[v]))
        for e in tri.tri_edges[k]:
            off = int(self.edge_bubble_offset[e])
            ids.extend(range(off, off + int(self.edge_q[e]) - 1))
        for e in tri.tri_edges[k]:
            off = int(self.edge_flux_offset[e])
            ids.extend(range(off, off + int(self.edge_m[e]) + 1))
        return np.array(ids, dtype=np.int64)


def build_layout(hp: HpMesh, delta_p: int, dirichlet_tags="all") -> SpaceLayout:
    """Construct the trial-space layout and enriched test dimensions.

    dirichlet_tags: 'all' marks every boundary edge as Dirichlet, otherwise
    an iterable of boundary tags.  Raises ApproximationError when an
    element's enriched test dimension cannot control its interior fields.
    """
    if delta_p < 1:
        raise ApproximationError("test enrichment delta_p must be >= 1")
    tri = hp.mesh
    p = hp.p
    test_order = p + delta_p
    if test_order.max() > MAX_TEST_ORDER:
        raise ApproximationError(
            f"test order {test_order.max()} exceeds supported maximum {MAX_TEST_ORDER}")

    for k in range(tri.n_triangles):
        m_dim = 3 * len(_mode_index(int(test_order[k])))
        n_dim = 3 * int(scalar_dofs(p[k]))
        if m_dim < n_dim:
            raise ApproximationError(
                f"element {k}: test dimension {m_dim} < field trial dimension {n_dim}")

    # skeleton orders: minimum adjacent element order
    edge_p = np.empty(tri.n_edges, dtype=np.int64)
    for e in range(tri.n_edges):
        t0, t1 = tri.edge_tris[e]
        edge_p[e] = p[t0] if t1 == -1 else min(p[t0], p[t1])
    edge_q = edge_p + 1
    edge_m = edge_p.copy()
    edge_owner = tri.edge_tris[:, 0].copy()

    field_offset = np.empty(tri.n_triangles, dtype=np.int64)
    pos = 0
    for k in range(tri.n_triangles):
        field_offset[k] = pos
        pos += 3 * int(scalar_dofs(p[k]))
    n_scalar = int(np.sum(scalar_dofs(p)))

    vertex_dof = np.arange(tri.n_vertices, dtype=np.int64) + pos
    pos += tri.n_vertices
    edge_bubble_offset = np.empty(tri.n_edges, dtype=np.int64)
    for e in range(tri.n_edges):
        edge_bubble_offset[e] = pos
        pos += int(edge_q[e]) - 1
    edge_flux_offset = np.empty(tri.n_edges, dtype=np.int64)
    for e in range(tri.n_edges):
        edge_flux_offset[e] = pos
        pos += int(edge_m[e]) + 1
    n_total = pos

    if dirichlet_tags == "all":
        dirichlet_edges = tri.edge_is_boundary.copy()
    else:
        tags = set(dirichlet_tags)
        dirichlet_edges = tri.edge_is_boundary & np.isin(tri.edge_tags, list(tags))
    dirichlet_dofs = np.zeros(n_total, dtype=bool)
    for e in np.nonzero(dirichlet_edges)[0]:
        a, b = tri.edges[e]
        dirichlet_dofs[vertex_dof[a]] = True
        dirichlet_dofs[vertex_dof[b]] = True
        off = int(edge_bubble_offset[e])
        dirichlet_dofs[off: off + int(edge_q[e]) - 1] = True

    return SpaceLayout(
        hp=hp, delta_p=delta_p, field_offset=field_offset, vertex_dof=vertex_dof,
        edge_q=edge_q, edge_m=edge_m, edge_bubble_offset=edge_bubble_offset,
        edge_flux_offset=edge_flux_offset, edge_owner=edge_owner, n_total=n_total,
        n_scalar=n_scalar, dirichlet_edges=dirichlet_edges,
        dirichlet_dofs=dirichlet_dofs, test_order=test_order)
