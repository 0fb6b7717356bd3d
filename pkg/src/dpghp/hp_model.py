"""Continuous hp-mesh model: patch-based order selection, error-density
extraction, and the constrained optimal mesh density.

Order selection solves the PDE on the patch around each element at the
current order and its neighbors, with Dirichlet data taken from the global
skeleton trace (or the physical boundary condition), and ranks the orders
by the amount of refinement needed to match the current error.  The error
density of the chosen order feeds a constrained variational problem whose
solution is the closed-form density up to a scalar Lagrange constant fixed
by bisection on the mesh-complexity constraint.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .anisotropy import AnisotropyResult
from .basis import build_layout
from .mesh import (
    GEOM_ALPHA,
    AnisotropyParams,
    HpMesh,
    Patch,
    Triangulation,
    build_patch,
    metric_compose,
    metric_log_mean,
    order_weight,
    scalar_dofs,
)
from .solver import GlobalSolution, UltraWeakProblem, solve_global


class ModelError(RuntimeError):
    """Continuous-model computation cannot proceed."""


@dataclass
class OrderSelection:
    """Candidate energies/costs and the chosen order for one element."""

    element: int
    candidates: tuple                 # orders actually evaluated
    energies: dict                    # q -> center-element energy
    costs: dict                       # q -> (q+1)(q+2)/2
    m_values: dict                    # q -> refinement parameter
    p_opt: int
    energy_opt: float


# ---------------------------------------------------------------------------
# Patch solves
# ---------------------------------------------------------------------------

def _patch_mesh(tri: Triangulation, patch: Patch):
    """Sub-triangulation of the patch with an order-preserving vertex map."""
    old_vs = sorted({int(v) for m in patch.members for v in tri.triangles[m]})
    vmap = {v: i for i, v in enumerate(old_vs)}
    verts = tri.vertices[old_vs]
    tris = np.array([[vmap[int(v)] for v in tri.triangles[m]] for m in patch.members])
    sub = Triangulation(verts, tris)
    # map local boundary edges back to global edges
    edge_map = {}
    for le in sub.boundary_edge_ids():
        a, b = sub.edges[le]
        key = (min(old_vs[a], old_vs[b]), max(old_vs[a], old_vs[b]))
        edge_map[int(le)] = int(tri._edge_ids[key])
    return sub, edge_map


def solve_patch_at_order(solution: GlobalSolution, patch: Patch, q: int,
                         delta_p: int = None):
    """Local DPG solve on the patch at uniform order q.

    Dirichlet data on patch-boundary edges comes from the global trace
    u_hat (interior edges) or the physical boundary condition.  Returns
    (energy error on the center element, scalar dof count of order q).
    """
    hp = solution.hp
    tri = hp.mesh
    problem = solution.problem
    if delta_p is None:
        delta_p = solution.layout.delta_p
    sub, edge_map = _patch_mesh(tri, patch)
    bc_sources = dict(zip(patch.boundary_edges, patch.sources))

    edge_dirichlet = {}
    for le, ge in edge_map.items():
        if bc_sources.get(ge) == "trace":
            edge_dirichlet[le] = (lambda t, e=ge: solution.trace_on_edge(e, t))
        else:
            a, b = tri.edges[ge]
            pa, pb = tri.vertices[a], tri.vertices[b]
            nrm = tri.edge_normal(ge, int(tri.edge_tris[ge][0]))

            def data(t, pa=pa, pb=pb, nrm=nrm):
                x = (1 - t) * pa[0] + t * pb[0]
                y = (1 - t) * pa[1] + t * pb[1]
                return problem.eval_dirichlet(x, y, nrm)

            edge_dirichlet[le] = data

    local_prob = UltraWeakProblem(
        beta=problem.beta, epsilon=problem.epsilon, source=problem.source,
        dirichlet=None, dirichlet_tags="all", edge_dirichlet=edge_dirichlet)
    sub_hp = HpMesh(sub, np.full(sub.n_triangles, q))
    local = solve_global(sub_hp, local_prob, delta_p=delta_p, condense=True)
    center_local = patch.members.index(patch.center)
    return float(local.eta_k[center_local]), int(scalar_dofs(q))


def select_order(p: int, energies: dict, p_min: int = 1, p_max: int = 10) -> OrderSelection:
    """Pick the order minimizing the refinement parameter
    m_q = (E_q / E_p)^(2/(q+2)) * N_q; ties go to the lower order."""
    costs = {q: int(scalar_dofs(q)) for q in energies}
    E_p = energies[p]
    m = {}
    if E_p <= 0.0:
        m = {q: float(costs[q]) if q == p else math.inf for q in energies}
        best = p
    else:
        for q in sorted(energies):
            s_i = q + 1
            m[q] = (energies[q] / E_p) ** (2.0 / (s_i + 1.0)) * costs[q]
        best = min(sorted(m), key=lambda q: (m[q], q))
    best = min(max(best, p_min), p_max)
    return OrderSelection(element=-1, candidates=tuple(sorted(energies)),
                          energies=dict(energies), costs=costs, m_values=m,
                          p_opt=int(best), energy_opt=float(energies[best]))


def order_selection_pass(solution: GlobalSolution, p_min: int = 1, p_max: int = 10,
                         threads: int = 1, delta_p: int = None):
    """OrderSelection for every element via patch solves at p and p +- 1."""
    hp = solution.hp
    nt = hp.mesh.n_triangles

    def one(k):
        p = int(hp.p[k])
        patch = build_patch(hp.mesh, k)
        energies = {}
        for q in (p - 1, p, p + 1):
            if q < p_min or q > p_max:
                continue
            energies[q], _ = solve_patch_at_order(solution, patch, q, delta_p)
        sel = select_order(p, energies, p_min, p_max)
        sel.element = k
        return sel

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(nt)))
    return [one(k) for k in range(nt)]


# ---------------------------------------------------------------------------
# Error density and optimal mesh density
# ---------------------------------------------------------------------------

@dataclass
class ContinuousModel:
    """Per-element inputs of the constrained density optimization."""

    abar: np.ndarray          # error-density coefficients
    p_opt: np.ndarray         # chosen orders
    areas: np.ndarray
    n_target: float
    mode: str = "energy"

    def __post_init__(self):
        if np.any(self.abar < 0.0):
            raise ModelError("error-density coefficients must be nonnegative")
        if not self.n_target > 0.0:
            raise ModelError("target complexity must be positive")


@dataclass
class DensityField:
    d_star: np.ndarray
    const: float
    achieved: float           # sum w(p) d |k|


def compute_abar(area: float, p_opt: int, energy_opt: float, mode: str = "energy",
                 eta_star: float = None) -> float:
    """Error-density coefficient of one element.

    Energy mode divides the squared chosen-order energy by |k|^(p_opt + 2);
    goal mode replaces the squared energy with eta* times the energy.
    """
    if mode == "energy":
        num = energy_opt**2
    elif mode == "goal":
        if eta_star is None:
            raise ModelError("goal mode needs the dual indicator")
        num = eta_star * energy_opt
    else:
        raise ModelError(f"unknown adaptation mode '{mode}'")
    return float(num / area ** (p_opt + 2))


def _density_prefactor(model: ContinuousModel):
    """D_k = ((p+1) Abar alpha^(p+1) / w(p))^(1/(p+2)); d* = D_k const^(-1/(p+2))."""
    p = model.p_opt
    w = order_weight(p)
    base = (p + 1) * model.abar * GEOM_ALPHA ** (p + 1.0) / w
    return base ** (1.0 / (p + 2.0))


def _complexity_at(model: ContinuousModel, const: float):
    D = _density_prefactor(model)
    w = order_weight(model.p_opt)
    return float(np.sum(model.areas * w * D * const ** (-1.0 / (model.p_opt + 2.0))))


def bisect_const(model: ContinuousModel, tol: float = 1e-3, max_iter: int = 200) -> float:
    """Lagrange constant solving the complexity constraint by bisection in
    log space after geometric bracketing."""
    if not np.any(model.abar > 0.0):
        raise ModelError("all error-density coefficients vanish; density undefined")
    N = model.n_target
    lo = hi = 1.0
    for _ in range(600):
        if _complexity_at(model, lo) >= N:
            break
        lo *= 1e-2
        if lo < 1e-300:
            raise ModelError("bisection bracket underflow")
    for _ in range(600):
        if _complexity_at(model, hi) <= N:
            break
        hi *= 1e2
        if hi > 1e300:
            raise ModelError("bisection bracket overflow")
    const = math.sqrt(lo * hi)
    for _ in range(max_iter):
        const = math.sqrt(lo * hi)
        val = _complexity_at(model, const)
        if val > N:
            lo = const
        else:
            hi = const
        if hi <= lo * (1.0 + 1e-14):
            break
    if abs(_complexity_at(model, const) - N) > tol * N:
        raise ModelError("bisection failed to meet the complexity constraint")
    return const


def optimal_density(model: ContinuousModel, const: float,
                    d_floor: np.ndarray = None) -> DensityField:
    """Optimal density distribution for the given Lagrange constant.

    Elements with a vanishing coefficient keep their current density (the
    floor), so no information means no size change.
    """
    D = _density_prefactor(model)
    d = D * const ** (-1.0 / (model.p_opt + 2.0))
    if d_floor is None:
        d_floor = GEOM_ALPHA / model.areas.sum() * np.ones_like(d)
    cur = GEOM_ALPHA / model.areas
    d = np.where(model.abar > 0.0, np.maximum(d, d_floor), cur)
    achieved = float(np.sum(order_weight(model.p_opt) * d * model.areas))
    return DensityField(d_star=d, const=const, achieved=achieved)


def uniform_closed_form_const(model: ContinuousModel) -> float:
    """Closed-form Lagrange constant for uniform order and coefficient."""
    p = int(model.p_opt[0])
    abar = float(model.abar[0])
    w = float(order_weight(p))
    omega = float(model.areas.sum())
    base = ((p + 1) * abar * GEOM_ALPHA ** (p + 1.0) / w) ** (1.0 / (p + 2.0))
    return (omega * w * base / model.n_target) ** (p + 2.0)


# ---------------------------------------------------------------------------
# Metric field assembly
# ---------------------------------------------------------------------------

def build_metric_field(mesh: Triangulation, density: np.ndarray, aniso,
                       h_max: float = None):
    """Element metrics from (theta*, beta*, d*) and their log-Euclidean
    vertex averages.

    The long semi-axis is capped at h_max (default: domain diameter) by
    reducing the aspect ratio, keeping the density.
    """
    if h_max is None:
        span = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
        h_max = float(np.hypot(*span))
    elem_metrics = []
    for k in range(mesh.n_triangles):
        r = aniso[k] if aniso is not None else AnisotropyResult(1.0, 0.0, 0.0)
        d = float(density[k])
        beta = min(r.beta_star, max(1.0, h_max**2 * d))
        elem_metrics.append(metric_compose(
            AnisotropyParams(theta=r.theta_star, beta=beta, d=d)))
    vertex_metrics = [metric_log_mean([elem_metrics[t] for t in mesh.vertex_tris[v]])
                      for v in range(mesh.n_vertices)]
    return elem_metrics, vertex_metrics


def write_hp_diagnostics_csv(selections, abar, density: DensityField, path):
    """Per-element CSV of the order selection and density computation."""
    with open(path, "w") as f:
        f.write("element,p_old,p_opt,E_lo,E_mid,E_hi,m_lo,m_mid,m_hi,abar,d_star\n")
        for k, sel in enumerate(selections):
            qs = sorted(sel.energies)
            Es = [f"{sel.energies[q]:.17g}" for q in qs]
            ms = [f"{sel.m_values[q]:.17g}" for q in qs]
            while len(Es) < 3:
                Es.insert(0, "")
                ms.insert(0, "")
            p_old = sel.candidates[1] if len(sel.candidates) == 3 else sel.candidates[0]
            f.write(f"{k},{p_old},{sel.p_opt},{','.join(Es)},{','.join(ms)},"
                    f"{abar[k]:.17g},{density.d_star[k]:.17g}\n")
