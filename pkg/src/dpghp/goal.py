"""Dual (adjoint) solve and the DPG-star element indicator.

The dual of beta.grad(u) - eps*lap(u) with a target J(u) = (j_vol, u) +
<j_bnd, C u> is -beta.grad(z) - eps*lap(z) = j_vol with z = j_bnd on the
boundary; it is solved with the same ultra-weak machinery after flipping
the convection sign.  The element indicator combines the strong first-order
dual residual with scaled jumps of the adjoint fields across edges:

    eta*_k^2 = |tau_z - grad v_z|^2 + |-beta.grad v_z - eps div tau_z - j|^2
               + sum_{interior e} h_e ||[tau_z.n]||^2
               + sum_{all e} h_e^{-1} ||[v_z]||^2

with the boundary jump of v_z taken against the dual boundary data.  The
product eta*_k times the primal energy error drives goal-oriented
adaptation; their sum is the reported dual-weighted residual estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import _LOCAL_EDGE, edge_test_tables, gauss_1d, tri_tables
from .mesh import HpMesh
from .solver import GlobalSolution, UltraWeakProblem, _element_geometry, \
    _physical_gradients, solve_global


class TargetError(ValueError):
    """Unsupported or inconsistent target functional."""


@dataclass
class TargetFunctional:
    """Target J(u): volume weight j_volume(x, y) and/or boundary weight
    j_boundary(x, y, n) entering a boundary flux integral."""

    j_volume: callable = None
    j_boundary: callable = None
    kind: str = "volume"

    def __post_init__(self):
        if self.kind not in ("volume", "boundary-flux"):
            raise TargetError(f"unsupported target kind '{self.kind}'")
        if self.j_volume is None and self.j_boundary is None:
            raise TargetError("target must carry a volume or boundary weight")

    def eval_volume(self, x, y):
        if self.j_volume is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return np.asarray(self.j_volume(x, y), dtype=float)

    def eval_boundary(self, x, y, normal):
        if self.j_boundary is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return np.asarray(self.j_boundary(x, y, normal), dtype=float)


@dataclass
class DualSolution:
    """Ultra-weak adjoint solve plus per-element star indicators."""

    solution: GlobalSolution
    target: TargetFunctional
    eta_star: np.ndarray

    @property
    def hp(self):
        return self.solution.hp


def dual_problem(problem: UltraWeakProblem, target: TargetFunctional) -> UltraWeakProblem:
    """Adjoint problem: convection reversed, source j_volume, Dirichlet data
    j_boundary."""
    bx, by = problem.beta

    def g_dual(x, y, n):
        return target.eval_boundary(x, y, n)

    source = None
    if target.j_volume is not None:
        source = lambda x, y: target.eval_volume(x, y)
    return UltraWeakProblem(
        beta=(-bx, -by), epsilon=problem.epsilon, source=source,
        dirichlet=g_dual, dirichlet_tags=problem.dirichlet_tags)


def solve_dual(hp: HpMesh, problem: UltraWeakProblem, target: TargetFunctional,
               delta_p: int = 2, **kw) -> DualSolution:
    """Solve the adjoint problem and evaluate the star indicator."""
    dual = solve_global(hp, dual_problem(problem, target), delta_p=delta_p, **kw)
    eta_star = star_indicator(dual, target)
    return DualSolution(solution=dual, target=target, eta_star=eta_star)


def star_indicator(dual: GlobalSolution, target: TargetFunctional) -> np.ndarray:
    """Per-element DPG-star indicator from the adjoint fields (v_z, tau_z)."""
    hp, layout = dual.hp, dual.layout
    tri = hp.mesh
    prob = dual.problem
    bx, by = prob.beta  # already the reversed convection
    eps = prob.epsilon
    eta_sq = np.zeros(tri.n_triangles)

    # strong first-order residual over elements
    for k in range(tri.n_triangles):
        t_ord = int(layout.test_order[k])
        npk = layout.n_field(k)
        rule, V, Gxr, Gyr = tri_tables(t_ord, min(2 * t_ord + 6, 40))
        coords, J, Jinv, det = _element_geometry(tri, k)
        gx, gy = _physical_gradients(Gxr, Gyr, Jinv)
        w = rule.weights * det
        cu, cs1, cs2 = dual.element_coeffs(k)
        Vp, gxp, gyp = V[:, :npk], gx[:, :npk], gy[:, :npk]
        vz_x = gxp @ cu
        vz_y = gyp @ cu
        r1x = Vp @ cs1 - vz_x
        r1y = Vp @ cs2 - vz_y
        xq = coords[0, 0] + J[0, 0] * rule.points[:, 1] + J[0, 1] * rule.points[:, 2]
        yq = coords[0, 1] + J[1, 0] * rule.points[:, 1] + J[1, 1] * rule.points[:, 2]
        r2 = (bx * vz_x + by * vz_y
              - eps * (gxp @ cs1 + gyp @ cs2)
              - target.eval_volume(xq, yq))
        eta_sq[k] += float(w @ (r1x**2 + r1y**2 + r2**2))

    # edge jumps
    for e in range(tri.n_edges):
        h_e = tri.edge_length(e)
        t0, t1 = (int(t) for t in tri.edge_tris[e])
        n_q = int(max(hp.p[t0], hp.p[t1] if t1 >= 0 else 0)) + 3
        tq, wq = gauss_1d(n_q)
        wl = wq * h_e
        a, b = tri.edges[e]
        pa, pb = tri.vertices[a], tri.vertices[b]
        xq = (1 - tq) * pa[0] + tq * pb[0]
        yq = (1 - tq) * pa[1] + tq * pb[1]
        nrm = tri.edge_normal(e, t0)

        def side_values(k):
            le = list(tri.tri_edges[k]).index(e)
            la, lb = _LOCAL_EDGE[le]
            flipped = int(tri.triangles[k][la]) > int(tri.triangles[k][lb])
            Ve = edge_test_tables(int(layout.test_order[k]), le, flipped, n_q)
            npk = layout.n_field(k)
            cu, cs1, cs2 = dual.element_coeffs(k)
            Vp = Ve[:, :npk]
            return Vp @ cu, Vp @ cs1, Vp @ cs2

        v0, s10, s20 = side_values(t0)
        if t1 >= 0:
            v1, s11, s21 = side_values(t1)
            jump_v = v0 - v1
            jump_tn = (s10 - s11) * nrm[0] + (s20 - s21) * nrm[1]
            tau_term = h_e * float(wl @ jump_tn**2)
            v_term = float(wl @ jump_v**2) / h_e
            eta_sq[t0] += tau_term + v_term
            eta_sq[t1] += tau_term + v_term
        else:
            jump_v = v0 - target.eval_boundary(xq, yq, nrm)
            eta_sq[t0] += float(wl @ jump_v**2) / h_e

    return np.sqrt(eta_sq)


def goal_indicator(primal: GlobalSolution, dual: DualSolution) -> np.ndarray:
    """Goal indicator eta*_k times the primal element energy error."""
    return dual.eta_star * primal.eta_k


def dwr_estimate(primal: GlobalSolution, dual: DualSolution) -> float:
    """Dual-weighted-residual bound on the target error: sum of goal
    indicators."""
    return float(np.sum(goal_indicator(primal, dual)))


# ---------------------------------------------------------------------------
# Target evaluation
# ---------------------------------------------------------------------------

def evaluate_target(solution: GlobalSolution, target: TargetFunctional) -> float:
    """J(u_h) for a volume target, or the weighted boundary flux integral
    evaluated from the discrete trace and flux unknowns."""
    hp, layout = solution.hp, solution.layout
    tri = hp.mesh
    if target.kind == "volume":
        total = 0.0
        for k in range(tri.n_triangles):
            t_ord = int(layout.test_order[k])
            rule, V, _, _ = tri_tables(t_ord, min(2 * t_ord + 8, 40))
            coords, J, _, det = _element_geometry(tri, k)
            w = rule.weights * det
            xq = coords[0, 0] + J[0, 0] * rule.points[:, 1] + J[0, 1] * rule.points[:, 2]
            yq = coords[0, 1] + J[1, 0] * rule.points[:, 1] + J[1, 1] * rule.points[:, 2]
            npk = layout.n_field(k)
            uh = V[:, :npk] @ solution.element_coeffs(k)[0]
            total += float(w @ (target.eval_volume(xq, yq) * uh))
        return total

    # boundary flux: grad(u).n = (beta.n * u_hat - sigma_hat) / eps on the edge
    bx, by = solution.problem.beta
    eps = solution.problem.epsilon
    total = 0.0
    for e in tri.boundary_edge_ids():
        k = int(tri.edge_tris[e][0])
        nrm = tri.edge_normal(e, k)
        m_e = int(layout.edge_m[e])
        n_q = m_e + 4
        tq, wq = gauss_1d(n_q)
        h_e = tri.edge_length(e)
        a, b = tri.edges[e]
        pa, pb = tri.vertices[a], tri.vertices[b]
        xq = (1 - tq) * pa[0] + tq * pb[0]
        yq = (1 - tq) * pa[1] + tq * pb[1]
        j = target.eval_boundary(xq, yq, nrm)
        if not np.any(j):
            continue
        uhat = solution.trace_on_edge(e, tq)
        shat = solution.flux_on_edge(e, tq, k)
        bn = bx * nrm[0] + by * nrm[1]
        total += h_e * float((wq * j) @ ((bn * uhat - shat) / eps))
    return total


def write_indicator_csv(primal: GlobalSolution, dual: DualSolution, path):
    """Per-element CSV: element id, eta, eta*, goal indicator."""
    goal = goal_indicator(primal, dual)
    with open(path, "w") as f:
        f.write("element,eta,eta_star,eta_goal\n")
        for k in range(primal.hp.mesh.n_triangles):
            f.write(f"{k},{primal.eta_k[k]:.17g},{dual.eta_star[k]:.17g},{goal[k]:.17g}\n")
