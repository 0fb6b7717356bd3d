"""Ultra-weak DPG assembly and solve with optimal test functions.

The convection-diffusion problem beta.grad(u) - eps*div(grad u) = s is
written as the first-order system sigma = grad(u), div(beta*u - eps*sigma)
= s and tested element-wise against broken pairs (v, tau):

    (sigma, tau)_k + (u, div tau)_k - <u_hat, tau.n>_bk = 0
    -(beta*u - eps*sigma, grad v)_k + <sigma_hat_n, v>_bk = (s, v)_k

sigma_hat_n approximates the total normal flux (beta*u - eps*sigma).n and
is stored once per edge with the orientation of the lower-indexed adjacent
element.  The test inner product is the scaled V-norm: L2 terms plus
sqrt(|k|)-weighted gradient/divergence terms.  Solving the per-element
Gram systems G c = r yields the error-representation function whose test
norm is the energy error estimate.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_factor, cho_solve

from .basis import (
    _LOCAL_EDGE,
    _mode_index,
    SpaceLayout,
    build_layout,
    edge_test_tables,
    edge_trial_tables,
    gauss_1d,
    tri_tables,
)
from .mesh import HpMesh, scalar_dofs


class SolveError(RuntimeError):
    """Global or local linear solve failed."""


@dataclass
class UltraWeakProblem:
    """Problem data for beta.grad(u) - eps*lap(u) = s with u = g on the
    tagged Dirichlet boundary.

    source and dirichlet are vectorized callables of (x, y); dirichlet may
    instead take (x, y, n) to see the outward edge normal (needed for
    normal-dependent data).  edge_dirichlet optionally overrides the data
    on selected edges with functions of the canonical edge parameter.
    """

    beta: tuple = (0.0, 0.0)
    epsilon: float = 1.0
    source: callable = None
    dirichlet: callable = None
    dirichlet_tags: object = "all"
    exact: callable = None
    exact_grad: callable = None
    edge_dirichlet: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError("diffusion epsilon must be positive")
        self.beta = (float(self.beta[0]), float(self.beta[1]))
        self._g_takes_normal = False
        if self.dirichlet is not None:
            params = inspect.signature(self.dirichlet).parameters.values()
            required = [p for p in params
                        if p.default is inspect.Parameter.empty
                        and p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
            self._g_takes_normal = len(required) >= 3

    def eval_source(self, x, y):
        if self.source is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return np.asarray(self.source(x, y), dtype=float)

    def eval_dirichlet(self, x, y, normal):
        if self.dirichlet is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        if self._g_takes_normal:
            return np.asarray(self.dirichlet(x, y, normal), dtype=float)
        return np.asarray(self.dirichlet(x, y), dtype=float)


@dataclass
class LocalSystem:
    """Per-element G (test Gram), B (trial-to-test), l (load), and the
    global dof ids of the local trial columns."""

    element: int
    G: np.ndarray
    B: np.ndarray
    l: np.ndarray
    dofs: np.ndarray
    n_field: int
    _cho: tuple = field(default=None, repr=False, compare=False)

    def gram_cho(self):
        if self._cho is None:
            try:
                self._cho = cho_factor(self.G, lower=True)
            except np.linalg.LinAlgError as err:  # pragma: no cover
                raise SolveError(
                    f"singular Gram matrix on element {self.element}") from err
        return self._cho


@dataclass
class ErrorRepresentation:
    """Coefficients of the local error-representation function phi_h."""

    element: int
    c: np.ndarray
    n_scalar_modes: int
    eta_sq_gram: float
    eta_sq_residual: float

    @property
    def c_v(self):
        return self.c[: self.n_scalar_modes]

    @property
    def c_tau(self):
        n = self.n_scalar_modes
        return self.c[n: 2 * n], self.c[2 * n: 3 * n]


class GlobalSolution:
    """Composite ultra-weak solution plus per-element error representation."""

    def __init__(self, hp, layout, problem, x, reps=None):
        self.hp = hp
        self.layout = layout
        self.problem = problem
        self.x = x
        self.reps = reps
        if reps is None:
            self.eta_sq_gram = np.zeros(hp.mesh.n_triangles)
            self.eta_sq_residual = np.zeros(hp.mesh.n_triangles)
        else:
            self.eta_sq_gram = np.array([r.eta_sq_gram for r in reps])
            self.eta_sq_residual = np.array([r.eta_sq_residual for r in reps])
        self.eta_k = np.sqrt(np.maximum(self.eta_sq_gram, 0.0))

    @property
    def eta(self):
        return float(np.sqrt(np.maximum(self.eta_sq_gram, 0.0).sum()))

    def element_coeffs(self, k):
        """(u, sigma_x, sigma_y) modal coefficient arrays of element k."""
        npk = self.layout.n_field(k)
        base = self.layout.field_offset[k]
        blk = self.x[base: base + 3 * npk]
        return blk[:npk], blk[npk: 2 * npk], blk[2 * npk: 3 * npk]

    def eval_fields(self, k, xref, yref):
        """u_h and sigma_h of element k at reference coordinates."""
        cu, cs1, cs2 = self.element_coeffs(k)
        from .basis import _basis_cache
        V = _basis_cache(int(self.hp.p[k])).eval(xref, yref)[0]
        return V @ cu, V @ cs1, V @ cs2

    def trace_on_edge(self, e, t):
        """u_hat on edge e at canonical parameters t."""
        from .basis import trace_values
        lay = self.layout
        a, b = lay.hp.mesh.edges[e]
        q = int(lay.edge_q[e])
        off = int(lay.edge_bubble_offset[e])
        coef = np.concatenate([
            [self.x[lay.vertex_dof[a]], self.x[lay.vertex_dof[b]]],
            self.x[off: off + q - 1]])
        return trace_values(q, t) @ coef

    def flux_on_edge(self, e, t, k=None):
        """sigma_hat_n on edge e at canonical parameters t, oriented outward
        for element k when given (owner orientation otherwise)."""
        from .basis import flux_values
        lay = self.layout
        m = int(lay.edge_m[e])
        off = int(lay.edge_flux_offset[e])
        vals = flux_values(m, t) @ self.x[off: off + m + 1]
        if k is not None and lay.edge_owner[e] != k:
            vals = -vals
        return vals


# ---------------------------------------------------------------------------
# Element geometry helpers
# ---------------------------------------------------------------------------

def _element_geometry(tri, k):
    coords = tri.tri_coords(k)
    J = np.column_stack([coords[1] - coords[0], coords[2] - coords[0]])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    Jinv = np.array([[J[1, 1], -J[0, 1]], [-J[1, 0], J[0, 0]]]) / det
    return coords, J, Jinv, det


def _physical_gradients(Gx_ref, Gy_ref, Jinv):
    # grad_phys = Jinv^T grad_ref
    gx = Jinv[0, 0] * Gx_ref + Jinv[1, 0] * Gy_ref
    gy = Jinv[0, 1] * Gx_ref + Jinv[1, 1] * Gy_ref
    return gx, gy


def gram_scaled_vnorm(coords, test_order, quad_degree=None):
    """Scaled V-norm Gram of the broken test pair space on one triangle.

    Rows/columns are ordered [v modes | tau_x modes | tau_y modes]; the
    gradient and divergence terms carry the sqrt(area) weight.
    """
    coords = np.asarray(coords, dtype=float)
    J = np.column_stack([coords[1] - coords[0], coords[2] - coords[0]])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if det <= 0.0:
        raise ValueError("triangle must be counterclockwise and non-degenerate")
    Jinv = np.array([[J[1, 1], -J[0, 1]], [-J[1, 0], J[0, 0]]]) / det
    if quad_degree is None:
        quad_degree = 2 * test_order + 2
    rule, V, Gxr, Gyr = tri_tables(test_order, quad_degree)
    gx, gy = _physical_gradients(Gxr, Gyr, Jinv)
    area = 0.5 * det
    w = rule.weights * det
    sq = math.sqrt(area)
    M = V.T @ (w[:, None] * V)
    Kxx = gx.T @ (w[:, None] * gx)
    Kyy = gy.T @ (w[:, None] * gy)
    Kxy = gx.T @ (w[:, None] * gy)
    nq = V.shape[1]
    G = np.zeros((3 * nq, 3 * nq))
    G[:nq, :nq] = M + sq * (Kxx + Kyy)
    G[nq:2 * nq, nq:2 * nq] = M + sq * Kxx
    G[2 * nq:, 2 * nq:] = M + sq * Kyy
    G[nq:2 * nq, 2 * nq:] = sq * Kxy
    G[2 * nq:, nq:2 * nq] = sq * Kxy.T
    return 0.5 * (G + G.T)


# ---------------------------------------------------------------------------
# Local assembly
# ---------------------------------------------------------------------------

def assemble_local(hp: HpMesh, layout: SpaceLayout, problem: UltraWeakProblem, k: int) -> LocalSystem:
    """Assemble the local Gram, trial-to-test matrix, and load of element k.

    B columns follow layout.element_dofs(k); Dirichlet data is applied by
    the global solve through constrained dofs.
    """
    tri = hp.mesh
    p = int(hp.p[k])
    t_ord = int(layout.test_order[k])
    npk = int(scalar_dofs(p))
    coords, J, Jinv, det = _element_geometry(tri, k)
    area = 0.5 * det
    sq = math.sqrt(area)

    rule, V, Gxr, Gyr = tri_tables(t_ord, 2 * t_ord + 2)
    gx, gy = _physical_gradients(Gxr, Gyr, Jinv)
    w = rule.weights * det
    nq = V.shape[1]
    U = V[:, :npk]  # trial field values: prefix of the test basis

    bx, by = problem.beta
    eps = problem.epsilon

    # Gram (same tables as the full helper, assembled inline)
    M = V.T @ (w[:, None] * V)
    Kxx = gx.T @ (w[:, None] * gx)
    Kyy = gy.T @ (w[:, None] * gy)
    Kxy = gx.T @ (w[:, None] * gy)
    G = np.zeros((3 * nq, 3 * nq))
    G[:nq, :nq] = M + sq * (Kxx + Kyy)
    G[nq:2 * nq, nq:2 * nq] = M + sq * Kxx
    G[2 * nq:, 2 * nq:] = M + sq * Kyy
    G[nq:2 * nq, 2 * nq:] = sq * Kxy
    G[2 * nq:, nq:2 * nq] = sq * Kxy.T
    G = 0.5 * (G + G.T)

    dofs = layout.element_dofs(k)
    n_loc = len(dofs)
    B = np.zeros((3 * nq, n_loc))
    l = np.zeros(3 * nq)

    # volume terms
    wU = w[:, None] * U
    gbeta = bx * gx + by * gy
    B[:nq, :npk] = -(gbeta.T @ wU)                      # -(beta u, grad v)
    B[:nq, npk:2 * npk] = eps * (gx.T @ wU)             # +eps (sigma, grad v)
    B[:nq, 2 * npk:3 * npk] = eps * (gy.T @ wU)
    B[nq:2 * nq, npk:2 * npk] = V.T @ wU                # (sigma, tau)
    B[2 * nq:, 2 * npk:3 * npk] = V.T @ wU
    B[nq:2 * nq, :npk] = gx.T @ wU                      # (u, div tau)
    B[2 * nq:, :npk] = gy.T @ wU

    xq = coords[0, 0] + J[0, 0] * rule.points[:, 1] + J[0, 1] * rule.points[:, 2]
    yq = coords[0, 1] + J[1, 0] * rule.points[:, 1] + J[1, 1] * rule.points[:, 2]
    l[:nq] = V.T @ (w * problem.eval_source(xq, yq))

    # skeleton terms
    n_q = t_ord + 2
    tq, w1 = gauss_1d(n_q)
    tri_vs = tri.triangles[k]
    bub_base = 3 * npk + 3
    n_bub = sum(int(layout.edge_q[e]) - 1 for e in tri.tri_edges[k])
    flux_base = bub_base + n_bub
    bub_off = bub_base
    flux_off = flux_base
    for le in range(3):
        e = int(tri.tri_edges[k][le])
        la, lb = _LOCAL_EDGE[le]
        ga, gb = int(tri_vs[la]), int(tri_vs[lb])
        flipped = ga > gb
        q_e, m_e = int(layout.edge_q[e]), int(layout.edge_m[e])
        _, _, Tr, Fl = edge_trial_tables(q_e, m_e, n_q)
        TVe = edge_test_tables(t_ord, le, flipped, n_q)
        length = tri.edge_length(e)
        nrm = tri.edge_normal(e, k)
        wl = w1 * length

        start_local = lb if flipped else la
        end_local = la if flipped else lb
        hat_cols = [3 * npk + start_local, 3 * npk + end_local]

        # -<u_hat, tau.n>
        TW = TVe.T * wl
        tau_n_rows = -np.vstack([nrm[0] * TW, nrm[1] * TW]) @ Tr
        cols = hat_cols + list(range(bub_off, bub_off + q_e - 1))
        B[nq:, cols] += tau_n_rows

        # +sign <sigma_hat, v>
        sign = 1.0 if layout.edge_owner[e] == k else -1.0
        B[:nq, flux_off: flux_off + m_e + 1] += sign * (TW @ Fl)

        bub_off += q_e - 1
        flux_off += m_e + 1

    return LocalSystem(element=k, G=G, B=B, l=l, dofs=dofs, n_field=npk)


# ---------------------------------------------------------------------------
# Dirichlet data projection
# ---------------------------------------------------------------------------

def dirichlet_values(layout: SpaceLayout, problem: UltraWeakProblem):
    """Coefficients of the boundary data on constrained trace dofs.

    Vertex dofs take the (corner-averaged) data value; bubble dofs are the
    edge-wise L2 projection of the remainder.
    """
    tri = layout.hp.mesh
    values = np.zeros(layout.n_total)
    d_edges = np.nonzero(layout.dirichlet_edges)[0]
    if len(d_edges) == 0:
        return values

    def edge_data(e, t):
        fn = problem.edge_dirichlet.get(int(e))
        if fn is not None:
            return np.asarray(fn(t), dtype=float)
        if problem.dirichlet is None:
            raise SolveError(f"missing Dirichlet data on boundary edge {int(e)}")
        a, b = tri.edges[e]
        pa, pb = tri.vertices[a], tri.vertices[b]
        x = (1 - t) * pa[0] + t * pb[0]
        y = (1 - t) * pa[1] + t * pb[1]
        nrm = tri.edge_normal(e, int(tri.edge_tris[e][0]))
        return problem.eval_dirichlet(x, y, nrm)

    # vertex values, averaged over adjacent Dirichlet edges
    vert_sum = {}
    vert_cnt = {}
    ends = np.array([0.0, 1.0])
    for e in d_edges:
        a, b = tri.edges[e]
        va, vb = edge_data(e, ends)
        for v, val in ((int(a), va), (int(b), vb)):
            vert_sum[v] = vert_sum.get(v, 0.0) + val
            vert_cnt[v] = vert_cnt.get(v, 0) + 1
    for v, s in vert_sum.items():
        values[layout.vertex_dof[v]] = s / vert_cnt[v]

    from .basis import trace_values
    for e in d_edges:
        q = int(layout.edge_q[e])
        if q < 2:
            continue
        a, b = tri.edges[e]
        t, w = gauss_1d(q + 6)
        g = edge_data(e, t)
        lin = ((1 - t) * values[layout.vertex_dof[a]]
               + t * values[layout.vertex_dof[b]])
        Bub = trace_values(q, t)[:, 2:]
        Gb = Bub.T @ (w[:, None] * Bub)
        rhs = Bub.T @ (w * (g - lin))
        off = int(layout.edge_bubble_offset[e])
        values[off: off + q - 1] = np.linalg.solve(Gb, rhs)
    return values


# ---------------------------------------------------------------------------
# Global solve
# ---------------------------------------------------------------------------

def solve_global(hp: HpMesh, problem: UltraWeakProblem, layout: SpaceLayout = None,
                 delta_p: int = 1, condense: bool = False, solver: str = "direct",
                 cg_rtol: float = 1e-12) -> GlobalSolution:
    """Solve the practical DPG normal equations sum_k B^T G^{-1} B x = rhs.

    condense statically eliminates the element-interior field dofs before
    the sparse solve (identical solution up to roundoff).  solver is
    'direct' (sparse LU) or 'cg'.
    """
    if layout is None:
        layout = build_layout(hp, delta_p, problem.dirichlet_tags)
    nt = hp.mesh.n_triangles
    n = layout.n_total

    x = dirichlet_values(layout, problem)
    free = ~layout.dirichlet_dofs

    # keep the local systems around on small meshes (patch solves) so the
    # error-representation pass does not assemble twice
    cache = [None] * nt if nt <= 64 else None

    def local(k):
        if cache is not None:
            if cache[k] is None:
                cache[k] = assemble_local(hp, layout, problem, k)
            return cache[k]
        return assemble_local(hp, layout, problem, k)

    if condense:
        x = _solve_condensed(hp, layout, problem, x, free, solver, cg_rtol, local)
    else:
        rows, cols, vals = [], [], []
        b = np.zeros(n)
        for k in range(nt):
            loc = local(k)
            cf = loc.gram_cho()
            W = cho_solve(cf, loc.B)
            Ak = loc.B.T @ W
            Ak = 0.5 * (Ak + Ak.T)
            bk = W.T @ loc.l
            d = loc.dofs
            rows.append(np.repeat(d, len(d)))
            cols.append(np.tile(d, len(d)))
            vals.append(Ak.ravel())
            np.add.at(b, d, bk)
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()
        rhs = b[free] - A[free][:, ~free] @ x[~free]
        x[free] = _sparse_solve(A[free][:, free], rhs, solver, cg_rtol)

    reps = [error_representation_from_locals(local(k), x) for k in range(nt)]
    return GlobalSolution(hp, layout, problem, x, reps)


def _sparse_solve(A, rhs, solver, cg_rtol):
    if rhs.size == 0:
        return rhs
    # symmetric Jacobi equilibration: unit diagonal makes the pivot-based
    # singularity check scale-independent
    d = A.diagonal()
    if np.any(d <= 0.0):
        raise SolveError(
            "global system is singular (check boundary conditions and test enrichment)")
    s = 1.0 / np.sqrt(d)
    S = sp.diags(s)
    As = (S @ A @ S).tocsc()
    rs = s * rhs
    if solver == "cg":
        out, info = spla.cg(As.tocsr(), rs, rtol=cg_rtol, maxiter=20 * A.shape[0])
        if info != 0:
            raise SolveError(f"conjugate gradients did not converge (info={info})")
        return s * out
    try:
        lu = spla.splu(As)
    except RuntimeError as err:
        raise SolveError(f"global system is singular: {err}") from err
    piv = np.abs(lu.U.diagonal())
    if piv.min() <= 1e-13 * piv.max():
        raise SolveError(
            "global system is singular (check boundary conditions and test enrichment)")
    out = lu.solve(rs)
    if not np.all(np.isfinite(out)):
        raise SolveError("global solve produced non-finite values")
    return s * out


def _solve_condensed(hp, layout, problem, x, free, solver, cg_rtol, local=None):
    """Schur-eliminate per-element interior field dofs, solve the skeleton."""
    nt = hp.mesh.n_triangles
    n = layout.n_total
    rows, cols, vals = [], [], []
    b = np.zeros(n)
    saved = []
    if local is None:
        local = lambda k: assemble_local(hp, layout, problem, k)
    for k in range(nt):
        loc = local(k)
        cf = loc.gram_cho()
        W = cho_solve(cf, loc.B)
        Ak = loc.B.T @ W
        Ak = 0.5 * (Ak + Ak.T)
        bk = W.T @ loc.l
        ni = 3 * loc.n_field
        Aii = Ak[:ni, :ni]
        Ais = Ak[:ni, ni:]
        Ass = Ak[ni:, ni:]
        try:
            cii = cho_factor(Aii, lower=True)
        except np.linalg.LinAlgError as err:
            raise SolveError(f"interior block singular on element {k}") from err
        Y = cho_solve(cii, Ais)
        S = Ass - Ais.T @ Y
        bs = bk[ni:] - Y.T @ bk[:ni]
        d = loc.dofs[ni:]
        rows.append(np.repeat(d, len(d)))
        cols.append(np.tile(d, len(d)))
        vals.append((0.5 * (S + S.T)).ravel())
        np.add.at(b, d, bs)
        saved.append((cii, Ais, bk[:ni], loc.dofs))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    # skeleton dofs: everything that is not an interior field dof
    interior = np.zeros(n, dtype=bool)
    for k in range(nt):
        base = layout.field_offset[k]
        interior[base: base + 3 * layout.n_field(k)] = True
    sfree = free & ~interior
    rhs = b[sfree] - A[sfree][:, ~free] @ x[~free]
    x[sfree] = _sparse_solve(A[sfree][:, sfree], rhs, solver, cg_rtol)
    for k, (cii, Ais, bi, dofs) in enumerate(saved):
        ni = 3 * layout.n_field(k)
        xs = x[dofs[ni:]]
        x[dofs[:ni]] = cho_solve(cii, bi - Ais @ xs)
    return x


# ---------------------------------------------------------------------------
# Error representation and energy error
# ---------------------------------------------------------------------------

def error_representation_from_locals(loc: LocalSystem, x) -> ErrorRepresentation:
    r = loc.B @ x[loc.dofs] - loc.l
    c = cho_solve(loc.gram_cho(), r)
    return ErrorRepresentation(
        element=loc.element, c=c, n_scalar_modes=loc.G.shape[0] // 3,
        eta_sq_gram=float(c @ (loc.G @ c)), eta_sq_residual=float(r @ c))


def error_representation(solution: GlobalSolution, k: int) -> ErrorRepresentation:
    """Recompute the error representation of element k (with residual)."""
    loc = assemble_local(solution.hp, solution.layout, solution.problem, k)
    return error_representation_from_locals(loc, solution.x)


def energy_error(solution: GlobalSolution):
    """Per-element energy error estimates and the global estimate."""
    return solution.eta_k.copy(), solution.eta


# ---------------------------------------------------------------------------
# Error norms against an exact solution
# ---------------------------------------------------------------------------

def error_norms(solution: GlobalSolution, quad_extra: int = 4):
    """Broken L2/Linf/H1 errors of u_h against problem.exact (when given),
    plus the energy estimate."""
    out = {"energy": solution.eta}
    prob = solution.problem
    if prob.exact is None:
        return out
    hp, layout = solution.hp, solution.layout
    tri = hp.mesh
    l2 = 0.0
    linf = 0.0
    h1s = 0.0
    for k in range(tri.n_triangles):
        p = int(hp.p[k])
        t_ord = int(layout.test_order[k])
        rule, V, Gxr, Gyr = tri_tables(t_ord, min(2 * t_ord + quad_extra, 40))
        coords, J, Jinv, det = _element_geometry(tri, k)
        w = rule.weights * det
        xq = coords[0, 0] + J[0, 0] * rule.points[:, 1] + J[0, 1] * rule.points[:, 2]
        yq = coords[0, 1] + J[1, 0] * rule.points[:, 1] + J[1, 1] * rule.points[:, 2]
        npk = layout.n_field(k)
        cu, _, _ = solution.element_coeffs(k)
        uh = V[:, :npk] @ cu
        ue = np.asarray(prob.exact(xq, yq), dtype=float)
        diff = uh - ue
        l2 += float(w @ diff**2)
        linf = max(linf, float(np.abs(diff).max()))
        if prob.exact_grad is not None:
            gx, gy = _physical_gradients(Gxr, Gyr, Jinv)
            gxe, gye = prob.exact_grad(xq, yq)
            dgx = gx[:, :npk] @ cu - np.asarray(gxe, dtype=float)
            dgy = gy[:, :npk] @ cu - np.asarray(gye, dtype=float)
            h1s += float(w @ (dgx**2 + dgy**2))
    out["l2"] = math.sqrt(l2)
    out["linf"] = linf
    if prob.exact_grad is not None:
        out["h1_semi"] = math.sqrt(h1s)
        out["h1"] = math.sqrt(l2 + h1s)
    return out


# ---------------------------------------------------------------------------
# Dumps
# ---------------------------------------------------------------------------

def write_element_csv(solution: GlobalSolution, path):
    """Per-element CSV: element id, order, area, energy error estimate."""
    tri = solution.hp.mesh
    areas = tri.areas()
    with open(path, "w") as f:
        f.write("element,p,area,eta\n")
        for k in range(tri.n_triangles):
            f.write(f"{k},{solution.hp.p[k]},{areas[k]:.17g},{solution.eta_k[k]:.17g}\n")


def sample_raster(solution: GlobalSolution, nx: int = 64, ny: int = None):
    """Sample u_h on a uniform raster over the mesh bounding box.

    Returns (X, Y, U) with U = nan outside the mesh.
    """
    if ny is None:
        ny = nx
    tri = solution.hp.mesh
    lo = tri.vertices.min(axis=0)
    hi = tri.vertices.max(axis=0)
    xs = np.linspace(lo[0], hi[0], nx)
    ys = np.linspace(lo[1], hi[1], ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    U = np.full(X.shape, np.nan)
    from .locate import PointLocator
    locator = PointLocator(tri)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    ks, lams = locator.locate_many(pts)
    from .basis import _basis_cache
    for idx in range(len(pts)):
        k = ks[idx]
        if k < 0:
            continue
        lam = lams[idx]
        cu, _, _ = solution.element_coeffs(int(k))
        V = _basis_cache(int(solution.hp.p[k])).eval(lam[1], lam[2])[0]
        U.ravel()[idx] = V[0] @ cu
    return X, Y, U
