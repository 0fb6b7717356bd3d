"""Built-in invariant battery behind `dpghp verify`.

Each check prints one PASS/FAIL line; the battery returns True when all
checks pass.  These are quick smoke-level versions of the full test suite.
"""

from __future__ import annotations

import math

import numpy as np


def _check(name, fn):
    try:
        fn()
        print(f"PASS {name}")
        return True
    except Exception as err:  # noqa: BLE001 - report any failure uniformly
        print(f"FAIL {name}: {err}")
        return False


def run_battery(fast=False):
    checks = [
        ("quadrature exactness", check_quadrature),
        ("basis gradients vs finite differences", check_basis_gradients),
        ("metric compose/decompose roundtrip", check_metric_roundtrip),
        ("element metric edge condition", check_element_metric),
        ("gram scaled-norm analytic entry", check_gram_entry),
        ("polynomial exactness of the global solve", check_exactness),
        ("estimator algebra identity", check_estimator_identity),
        ("density constraint on a random field", check_density_constraint),
        ("anisotropy against a brute-force grid", check_anisotropy),
    ]
    if not fast:
        checks.append(("interchange roundtrip", check_interchange))
        checks.append(("internal remesher band target", check_remesher))
    ok = True
    for name, fn in checks:
        ok = _check(name, fn) and ok
    return ok


def check_quadrature():
    from .basis import quadrature_rule
    for degree in (1, 4, 11, 24, 40):
        rule = quadrature_rule(degree)
        x, y = rule.xy()
        for a in range(0, degree + 1, max(1, degree // 3)):
            for b in range(0, degree + 1 - a, max(1, degree // 3)):
                val = float(np.sum(rule.weights * x**a * y**b))
                exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                assert abs(val - exact) <= 1e-13 * exact, (degree, a, b)


def check_basis_gradients():
    from .basis import ReferenceBasis
    basis = ReferenceBasis(6)
    rng = np.random.default_rng(0)
    lam = rng.dirichlet((2.0, 2.0, 2.0), size=10)
    x, y = lam[:, 1], lam[:, 2]
    V, Gx, Gy = basis.eval(x, y)
    h = 1e-6
    fdx = (basis.eval(x + h, y)[0] - basis.eval(x - h, y)[0]) / (2 * h)
    fdy = (basis.eval(x, y + h)[0] - basis.eval(x, y - h)[0]) / (2 * h)
    assert np.abs(fdx - Gx).max() < 1e-5
    assert np.abs(fdy - Gy).max() < 1e-5


def check_metric_roundtrip():
    from .mesh import AnisotropyParams, metric_compose, metric_decompose
    rng = np.random.default_rng(1)
    for _ in range(200):
        par = AnisotropyParams(theta=rng.uniform(0, math.pi),
                               beta=1.0 + rng.uniform(0, 10),
                               d=10.0 ** rng.uniform(-2, 2))
        back = metric_decompose(metric_compose(par))
        assert abs(back.beta - par.beta) < 1e-8 * par.beta
        assert abs(back.d - par.d) < 1e-8 * par.d


def check_element_metric():
    from .mesh import element_metric
    rng = np.random.default_rng(2)
    for _ in range(100):
        coords = rng.uniform(-1, 1, (3, 2))
        area = 0.5 * ((coords[1] - coords[0])[0] * (coords[2] - coords[0])[1]
                      - (coords[1] - coords[0])[1] * (coords[2] - coords[0])[0])
        if abs(area) < 0.05:
            continue
        if area < 0:
            coords = coords[::-1]
        M = element_metric(coords, C=3.0).as_matrix()
        for i in range(3):
            e = coords[(i + 2) % 3] - coords[(i + 1) % 3]
            assert abs(e @ M @ e - 3.0) < 1e-10


def check_gram_entry():
    from .solver import gram_scaled_vnorm
    from .basis import _basis_cache
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    G = gram_scaled_vnorm(coords, test_order=1)
    pts = np.array([[0.2, 0.3], [0.5, 0.1], [0.1, 0.6]])
    V, _, _ = _basis_cache(1).eval(pts[:, 0], pts[:, 1])
    coef = np.linalg.solve(V, pts[:, 0])
    val = coef @ G[:3, :3] @ coef
    assert abs(val - (1.0 / 12.0 + math.sqrt(0.5) * 0.5)) < 1e-12


def check_exactness():
    from .mesh import HpMesh, unit_square_mesh
    from .solver import UltraWeakProblem, error_norms, solve_global
    p = 3

    def exact(x, y):
        return x**3 + y**3 + x * y

    def source(x, y):
        gx = 3 * x**2 + y
        gy = 3 * y**2 + x
        return gx + gy - 0.5 * (6 * x + 6 * y)

    tri = unit_square_mesh(2)
    hp = HpMesh(tri, np.full(tri.n_triangles, p))
    prob = UltraWeakProblem(beta=(1, 1), epsilon=0.5, source=source,
                            dirichlet=exact, exact=exact)
    sol = solve_global(hp, prob, delta_p=2)
    assert error_norms(sol)["l2"] < 1e-10
    assert sol.eta < 1e-9


def check_estimator_identity():
    from .mesh import HpMesh, unit_square_mesh
    from .solver import UltraWeakProblem, error_representation, solve_global
    tri = unit_square_mesh(4)
    hp = HpMesh(tri, np.full(tri.n_triangles, 2))
    prob = UltraWeakProblem(beta=(1, 1), epsilon=0.05,
                            source=lambda x, y: np.ones_like(x),
                            dirichlet=lambda x, y: np.zeros_like(x))
    sol = solve_global(hp, prob, delta_p=2)
    for k in range(tri.n_triangles):
        rep = error_representation(sol, k)
        assert abs(rep.eta_sq_gram - rep.eta_sq_residual) <= 1e-12 * abs(rep.eta_sq_gram)


def check_density_constraint():
    from .hp_model import ContinuousModel, bisect_const, optimal_density
    rng = np.random.default_rng(3)
    model = ContinuousModel(abar=rng.uniform(0.1, 10, 64),
                            p_opt=rng.integers(1, 7, 64),
                            areas=rng.uniform(0.005, 0.03, 64), n_target=2000.0)
    dens = optimal_density(model, bisect_const(model))
    assert abs(dens.achieved - 2000.0) <= 10.0


def check_anisotropy():
    from .anisotropy import LocalErrorModel, bound_many, optimize_anisotropy
    model = LocalErrorModel.from_components((0, 0), 1.0, 2,
                                            [{(2, 0): 1.0}], d=1.0)
    res = optimize_anisotropy(model)
    betas = np.linspace(1, 100, 50)
    thetas = np.linspace(0, math.pi, 180, endpoint=False)
    B, T = np.meshgrid(betas, thetas, indexing="ij")
    vals = bound_many(model, B.ravel(), T.ravel())
    assert res.bound <= vals.min() * 1.01
    d = abs(res.theta_star - math.pi / 2) % math.pi
    assert min(d, math.pi - d) < math.radians(2)


def check_interchange():
    import tempfile
    from .mesh import MetricTensor, unit_square_mesh
    from .remesh import interchange_read, interchange_write
    tri = unit_square_mesh(3)
    with tempfile.TemporaryDirectory() as tmp:
        prefix = f"{tmp}/m"
        interchange_write(tri, [MetricTensor(1, 0, 1)] * tri.n_vertices, prefix)
        back, metrics = interchange_read(prefix)
        assert np.array_equal(back.triangles, tri.triangles)
        assert len(metrics) == tri.n_vertices


def check_remesher():
    from .mesh import element_metric, metric_log_mean, unit_square_mesh
    from .remesh import remesh_internal
    tri = unit_square_mesh(4)
    elem = [element_metric(tri.tri_coords(k), C=1.0) for k in range(tri.n_triangles)]
    vm = [metric_log_mean([elem[t] for t in tri.vertex_tris[v]])
          for v in range(tri.n_vertices)]
    out, rep = remesh_internal(tri, [m.scaled(2.0) for m in vm])
    assert rep.in_band >= 0.9
    assert np.all(out.areas() > 0)
