"""Triangular meshes, element metric tensors, and hp-mesh bookkeeping.

A triangle is identified with the symmetric positive definite matrix M
under which its three edges have equal length: e_i^T M e_i = C for all
edges.  With C = 3 the level set x^T M x = 1 is the ellipse circumscribing
the triangle, and the spectral data of M gives the element's size, aspect
ratio and orientation.  Density is d = 1/(h1*h2) so that the area of an
ideal element is |k| = (3*sqrt(3)/4) * h1 * h2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GEOM_ALPHA = 3.0 * math.sqrt(3.0) / 4.0  # area of ideal element times density


class MeshError(ValueError):
    """Invalid mesh geometry or connectivity."""


class MeshFormatError(MeshError):
    """Malformed mesh file."""


def order_weight(p):
    """Cost weight w(p) = 2(p+1)(p+2)/(3*sqrt(3)); alpha*w(p) is the scalar
    dof count (p+1)(p+2)/2 of one element."""
    p = np.asarray(p)
    return 2.0 * (p + 1) * (p + 2) / (3.0 * math.sqrt(3.0))


def scalar_dofs(p):
    """Number of scalar field dofs of a degree-p triangle."""
    p = np.asarray(p)
    return (p + 1) * (p + 2) // 2


# ---------------------------------------------------------------------------
# Triangulation
# ---------------------------------------------------------------------------

class Triangulation:
    """Conforming triangular mesh with derived edge connectivity.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise vertex indices
    boundary_tags : dict mapping a boundary edge (vmin, vmax) to an int tag.
        Boundary edges not listed get tag 1.
    tri_tags : optional (nt,) int array of region tags (default 1).

    Raises MeshError on non-positive triangle areas, out-of-range indices,
    or edges shared by more than two triangles.
    """

    def __init__(self, vertices, triangles, boundary_tags=None, tri_tags=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (nt, 3) array")
        nv = len(self.vertices)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= nv):
            raise MeshError("triangle vertex index out of range")
        if tri_tags is None:
            tri_tags = np.ones(len(self.triangles), dtype=np.int64)
        self.tri_tags = np.asarray(tri_tags, dtype=np.int64)

        self._areas = _signed_areas(self.vertices, self.triangles)
        bad = np.nonzero(self._areas <= 0.0)[0]
        if bad.size:
            raise MeshError(f"triangle {bad[0]} has non-positive area {self._areas[bad[0]]:g}")

        self._build_edges(boundary_tags or {})

    def _build_edges(self, boundary_tags):
        edge_ids = {}
        edges = []
        edge_tris = []
        tri_edges = np.empty((len(self.triangles), 3), dtype=np.int64)
        for t, (a, b, c) in enumerate(self.triangles):
            for i, (u, v) in enumerate(((b, c), (c, a), (a, b))):
                key = (min(u, v), max(u, v))
                e = edge_ids.get(key)
                if e is None:
                    e = len(edges)
                    edge_ids[key] = e
                    edges.append(key)
                    edge_tris.append([t, -1])
                else:
                    if edge_tris[e][1] != -1:
                        raise MeshError(f"edge {key} shared by more than two triangles")
                    edge_tris[e][1] = t
                tri_edges[t, i] = e
        self.edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        self.edge_tris = np.array(edge_tris, dtype=np.int64).reshape(-1, 2)
        self.tri_edges = tri_edges
        self._edge_ids = edge_ids

        self.edge_is_boundary = self.edge_tris[:, 1] == -1
        self.edge_tags = np.zeros(len(self.edges), dtype=np.int64)
        for key, tag in boundary_tags.items():
            key = (min(key), max(key))
            e = edge_ids.get(key)
            if e is None:
                raise MeshError(f"boundary edge {key} not present in mesh")
            if not self.edge_is_boundary[e]:
                raise MeshError(f"edge {key} tagged as boundary but is interior")
            self.edge_tags[e] = tag
        untagged = self.edge_is_boundary & (self.edge_tags == 0)
        self.edge_tags[untagged] = 1

        # vertex -> incident triangles
        v2t = [[] for _ in range(len(self.vertices))]
        for t, tri in enumerate(self.triangles):
            for v in tri:
                v2t[v].append(t)
        self.vertex_tris = [np.array(ts, dtype=np.int64) for ts in v2t]

    # -- basic queries ------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def areas(self):
        return self._areas.copy()

    def area(self, k):
        return float(self._areas[k])

    def tri_coords(self, k):
        """(3, 2) vertex coordinates of triangle k."""
        return self.vertices[self.triangles[k]]

    def barycenters(self):
        return self.vertices[self.triangles].mean(axis=1)

    def edge_lengths(self):
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def edge_length(self, e):
        a, b = self.edges[e]
        return float(np.hypot(*(self.vertices[b] - self.vertices[a])))

    def boundary_edge_ids(self):
        return np.nonzero(self.edge_is_boundary)[0]

    def neighbors(self, k):
        """Edge-adjacent neighbor triangles of k (sorted)."""
        out = []
        for e in self.tri_edges[k]:
            t0, t1 = self.edge_tris[e]
            other = t1 if t0 == k else t0
            if other != -1:
                out.append(int(other))
        return sorted(out)

    def edge_normal(self, e, k):
        """Unit outward normal of edge e with respect to triangle k."""
        a, b = self.edges[e]
        pa, pb = self.vertices[a], self.vertices[b]
        t = pb - pa
        n = np.array([t[1], -t[0]]) / np.hypot(*t)
        # orient outward: away from the opposite vertex of k
        tri = self.triangles[k]
        opp = [v for v in tri if v != a and v != b][0]
        if np.dot(n, self.vertices[opp] - pa) > 0.0:
            n = -n
        return n


def cross2(u, v):
    """z-component of the cross product of 2D vectors."""
    u = np.asarray(u)
    v = np.asarray(v)
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * cross2(p1 - p0, p2 - p0)


# ---------------------------------------------------------------------------
# hp-mesh
# ---------------------------------------------------------------------------

MAX_ORDER = 12


@dataclass
class HpMesh:
    """Triangulation plus a per-element polynomial order vector."""

    mesh: Triangulation
    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.int64)
        if len(self.p) != self.mesh.n_triangles:
            raise MeshError("order vector length must match triangle count")
        if self.p.size and (self.p.min() < 1 or self.p.max() > MAX_ORDER):
            raise MeshError(f"element orders must lie in [1, {MAX_ORDER}]")

    def with_orders(self, p):
        return HpMesh(self.mesh, p)

    @property
    def p_avg(self):
        return float(self.p.mean())


def mesh_complexity(hp: HpMesh) -> float:
    """Cost of an hp-mesh: sum over elements of alpha*w(p) = (p+1)(p+2)/2,
    i.e. the number of scalar field dofs."""
    return float(np.sum((hp.p + 1) * (hp.p + 2) / 2.0))


# ---------------------------------------------------------------------------
# Metric tensors
# ---------------------------------------------------------------------------

@dataclass
class MetricTensor:
    """Symmetric positive definite 2x2 matrix, units 1/length^2."""

    m11: float
    m12: float
    m22: float

    def __post_init__(self):
        if not (self.m11 > 0.0 and self.m11 * self.m22 - self.m12 ** 2 > 0.0):
            raise MeshError(f"metric ({self.m11:g}, {self.m12:g}, {self.m22:g}) is not SPD")

    def as_matrix(self):
        return np.array([[self.m11, self.m12], [self.m12, self.m22]])

    @staticmethod
    def from_matrix(m):
        m = np.asarray(m, dtype=float)
        return MetricTensor(float(m[0, 0]), float(0.5 * (m[0, 1] + m[1, 0])), float(m[1, 1]))

    def det(self):
        return self.m11 * self.m22 - self.m12 ** 2

    def scaled(self, c):
        return MetricTensor(c * self.m11, c * self.m12, c * self.m22)


@dataclass
class AnisotropyParams:
    """Spectral description of a metric: orientation, aspect ratio, density."""

    theta: float  # in [0, pi)
    beta: float   # h1/h2 >= 1
    d: float      # 1/(h1*h2) > 0

    def __post_init__(self):
        if not self.beta >= 1.0:
            raise MeshError(f"aspect ratio must be >= 1, got {self.beta:g}")
        if not self.d > 0.0:
            raise MeshError(f"density must be positive, got {self.d:g}")
        self.theta = self.theta % math.pi

    @property
    def h1(self):
        return math.sqrt(self.beta / self.d)

    @property
    def h2(self):
        return math.sqrt(1.0 / (self.beta * self.d))


def element_metric(coords, C=3.0) -> MetricTensor:
    """Metric under which all three edges of the triangle have e^T M e = C.

    coords is the (3, 2) vertex array.  With C = 3 the unit level set of M
    is the ellipse through the three vertices.
    """
    if C <= 0.0:
        raise MeshError("C must be positive")
    coords = np.asarray(coords, dtype=float)
    p0, p1, p2 = coords
    area = 0.5 * float(cross2(p1 - p0, p2 - p0))
    if abs(area) < 1e-14 * max(1.0, np.abs(coords).max() ** 2):
        raise MeshError("degenerate (zero-area) triangle")
    e = np.array([p2 - p1, p0 - p2, p1 - p0])
    A = np.column_stack([e[:, 0] ** 2, 2.0 * e[:, 0] * e[:, 1], e[:, 1] ** 2])
    m11, m12, m22 = np.linalg.solve(A, np.full(3, float(C)))
    return MetricTensor(m11, m12, m22)


def metric_decompose(metric: MetricTensor) -> AnisotropyParams:
    """Extract (theta, beta, d) from the eigen-structure of the metric.

    Eigenvalues are 1/h1^2 <= 1/h2^2 with h1 >= h2; theta is the angle of
    the eigenvector of the smaller eigenvalue (the long axis).  Isotropic
    metrics return theta = 0.
    """
    m = metric.as_matrix()
    lam, vec = np.linalg.eigh(m)
    if lam[0] <= 0.0:
        raise MeshError("metric is not positive definite")
    h1 = 1.0 / math.sqrt(lam[0])
    h2 = 1.0 / math.sqrt(lam[1])
    beta = h1 / h2
    d = 1.0 / (h1 * h2)
    if beta <= 1.0 + 1e-14:
        theta = 0.0
        beta = max(beta, 1.0)
    else:
        v = vec[:, 0]
        theta = math.atan2(v[1], v[0]) % math.pi
    return AnisotropyParams(theta=theta, beta=beta, d=d)


def metric_compose(params: AnisotropyParams) -> MetricTensor:
    """Inverse of metric_decompose: M = R diag(1/h1^2, 1/h2^2) R^T."""
    c, s = math.cos(params.theta), math.sin(params.theta)
    a1 = 1.0 / params.h1 ** 2
    a2 = 1.0 / params.h2 ** 2
    m11 = a1 * c * c + a2 * s * s
    m22 = a1 * s * s + a2 * c * c
    m12 = (a1 - a2) * c * s
    return MetricTensor(m11, m12, m22)


def metric_log(metric: MetricTensor):
    """Matrix logarithm of an SPD metric (symmetric 2x2)."""
    lam, vec = np.linalg.eigh(metric.as_matrix())
    return (vec * np.log(lam)) @ vec.T


def metric_exp(sym):
    """Matrix exponential of a symmetric 2x2 matrix, returned as a metric."""
    lam, vec = np.linalg.eigh(np.asarray(sym, dtype=float))
    return MetricTensor.from_matrix((vec * np.exp(lam)) @ vec.T)


def metric_log_mean(metrics):
    """Log-Euclidean mean of a sequence of metrics."""
    acc = np.zeros((2, 2))
    n = 0
    for m in metrics:
        acc += metric_log(m)
        n += 1
    if n == 0:
        raise MeshError("cannot average an empty metric set")
    return metric_exp(acc / n)


# ---------------------------------------------------------------------------
# Patches
# ---------------------------------------------------------------------------

# provenance of a patch boundary edge's Dirichlet data
TRACE_DATA = "trace"      # take data from the global skeleton trace
PHYSICAL_DATA = "bc"      # take data from the physical boundary condition


@dataclass(frozen=True)
class Patch:
    """An element plus its edge-adjacent neighbors.

    boundary_edges are the patch-exterior edges; sources records where the
    Dirichlet data for each of them comes from.
    """

    center: int
    members: tuple
    boundary_edges: tuple
    sources: tuple

    def __post_init__(self):
        if self.center not in self.members:
            raise MeshError("patch center must be a member")


def build_patch(mesh, k, include_vertex_neighbors=False) -> Patch:
    """Patch around element k: k plus its edge-adjacent neighbors.

    With include_vertex_neighbors=True all elements sharing a vertex with k
    are included instead.
    """
    tri = mesh.mesh if isinstance(mesh, HpMesh) else mesh
    if not 0 <= k < tri.n_triangles:
        raise MeshError(f"element id {k} out of range")
    if include_vertex_neighbors:
        members = set()
        for v in tri.triangles[k]:
            members.update(int(t) for t in tri.vertex_tris[v])
    else:
        members = set(tri.neighbors(k))
    members.add(int(k))
    members = tuple(sorted(members))
    inside = set(members)

    boundary = []
    sources = []
    seen = set()
    for t in members:
        for e in tri.tri_edges[t]:
            e = int(e)
            if e in seen:
                continue
            seen.add(e)
            t0, t1 = tri.edge_tris[e]
            if tri.edge_is_boundary[e]:
                boundary.append(e)
                sources.append(PHYSICAL_DATA)
            elif (int(t0) in inside) != (int(t1) in inside):
                boundary.append(e)
                sources.append(TRACE_DATA)
    order = np.argsort(boundary)
    return Patch(center=int(k), members=members,
                 boundary_edges=tuple(int(boundary[i]) for i in order),
                 sources=tuple(sources[i] for i in order))


# ---------------------------------------------------------------------------
# Built-in meshes
# ---------------------------------------------------------------------------

def unit_square_mesh(nx, ny=None):
    """Structured unit-square mesh with 2*nx*ny triangles.

    Boundary tags: 1 bottom, 2 right, 3 top, 4 left.
    """
    if ny is None:
        ny = nx
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([xg.ravel(), yg.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    tags = {}
    for i in range(nx):
        tags[(vid(i, 0), vid(i + 1, 0))] = 1
        tags[(vid(i, ny), vid(i + 1, ny))] = 3
    for j in range(ny):
        tags[(vid(nx, j), vid(nx, j + 1))] = 2
        tags[(vid(0, j), vid(0, j + 1))] = 4
    return Triangulation(vertices, np.array(tris), boundary_tags=_norm_tags(tags))


def lshape_mesh(n):
    """Structured mesh of (-1,1)^2 minus the closed quadrant [0,1]x[-1,0],
    with 6*n*n triangles and boundary tag 1 everywhere."""
    vid = {}
    vertices = []

    def get(i, j):
        # lattice spacing 1/n over [-n, n] index range
        key = (i, j)
        if key not in vid:
            vid[key] = len(vertices)
            vertices.append((i / n, j / n))
        return vid[key]

    tris = []
    for i in range(-n, n):
        for j in range(-n, n):
            if i >= 0 and j < 0:
                continue  # removed quadrant
            v00, v10 = get(i, j), get(i + 1, j)
            v01, v11 = get(i, j + 1), get(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return Triangulation(np.array(vertices, dtype=float), np.array(tris))


def _norm_tags(tags):
    return {(min(a, b), max(a, b)): t for (a, b), t in tags.items()}


# ---------------------------------------------------------------------------
# Native text format
# ---------------------------------------------------------------------------

def write_native(tri: Triangulation, path):
    """Write the native text format: header `nv nt nbe`, vertex lines `x y`,
    triangle lines `v1 v2 v3 tag`, boundary edge lines `v1 v2 tag`
    (1-based indices)."""
    bids = tri.boundary_edge_ids()
    lines = [f"{tri.n_vertices} {tri.n_triangles} {len(bids)}"]
    for x, y in tri.vertices:
        lines.append(f"{x:.17g} {y:.17g}")
    for t, (a, b, c) in enumerate(tri.triangles):
        lines.append(f"{a + 1} {b + 1} {c + 1} {tri.tri_tags[t]}")
    for e in bids:
        a, b = tri.edges[e]
        lines.append(f"{a + 1} {b + 1} {tri.edge_tags[e]}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_native(path) -> Triangulation:
    """Read the native text format written by write_native."""
    with open(path) as f:
        raw = f.read().splitlines()
    rows = [(i + 1, ln.split()) for i, ln in enumerate(raw) if ln.strip()]
    if not rows:
        raise MeshFormatError(f"{path}: empty mesh file")

    def parse(lineno, parts, types, what):
        if len(parts) != len(types):
            raise MeshFormatError(f"{path}:{lineno}: expected {what}")
        try:
            return [t(v) for t, v in zip(types, parts)]
        except ValueError:
            raise MeshFormatError(f"{path}:{lineno}: expected {what}") from None

    nv, nt, nbe = parse(rows[0][0], rows[0][1], [int, int, int], "header 'nv nt nbe'")
    if len(rows) != 1 + nv + nt + nbe:
        raise MeshFormatError(f"{path}: expected {1 + nv + nt + nbe} lines, found {len(rows)}")
    idx = 1
    vertices = np.empty((nv, 2))
    for i in range(nv):
        lineno, parts = rows[idx + i]
        vertices[i] = parse(lineno, parts, [float, float], "vertex 'x y'")
    idx += nv
    triangles = np.empty((nt, 3), dtype=np.int64)
    tri_tags = np.empty(nt, dtype=np.int64)
    for i in range(nt):
        lineno, parts = rows[idx + i]
        a, b, c, tag = parse(lineno, parts, [int, int, int, int], "triangle 'v1 v2 v3 tag'")
        triangles[i] = (a - 1, b - 1, c - 1)
        tri_tags[i] = tag
    idx += nt
    btags = {}
    for i in range(nbe):
        lineno, parts = rows[idx + i]
        a, b, tag = parse(lineno, parts, [int, int, int], "boundary edge 'v1 v2 tag'")
        btags[(min(a, b) - 1, max(a, b) - 1)] = tag
    return Triangulation(vertices, triangles, boundary_tags=btags, tri_tags=tri_tags)
