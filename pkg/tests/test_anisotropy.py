import math

import numpy as np
import pytest

from dpghp.anisotropy import (
    AnisotropyResult,
    LocalErrorModel,
    anisotropy_bound,
    bound_many,
    build_error_model,
    disc_rule,
    optimize_anisotropy,
    optimize_all,
)
from dpghp.mesh import HpMesh, unit_square_mesh
from dpghp.solver import UltraWeakProblem, solve_global


def directional_model(phi, power=2, d=1.0):
    """q = ((x cos phi + y sin phi))^(2m) via component (x c + y s)^m ...
    for m = power/2 when power is even; here q is built from a single
    component of degree power so q has degree 2*power."""
    c, s = math.cos(phi), math.sin(phi)
    # component = (c x + s y)^power: binomial expansion
    dct = {}
    for i in range(power + 1):
        dct[(power - i, i)] = math.comb(power, i) * c ** (power - i) * s**i
    return LocalErrorModel.from_components((0.0, 0.0), 1.0, power, [dct], d)


class TestDiscRule:
    def test_area(self):
        pts, w = disc_rule(4)
        assert w.sum() == pytest.approx(math.pi, rel=1e-13)

    def test_moments(self):
        pts, w = disc_rule(6)
        assert np.sum(w * pts[:, 0] ** 2) == pytest.approx(math.pi / 4, rel=1e-13)
        assert np.sum(w * pts[:, 0] ** 2 * pts[:, 1] ** 2) == pytest.approx(
            math.pi / 24, rel=1e-12)
        assert abs(np.sum(w * pts[:, 0])) < 1e-14


class TestBound:
    def test_constant_q_independent_of_shape(self):
        model = LocalErrorModel.from_components((0, 0), 1.0, 0, [{(0, 0): 1.0}], d=2.0)
        vals = [anisotropy_bound(model, b, t)
                for b in (1.0, 3.0, 10.0) for t in (0.0, 1.0, 2.5)]
        assert np.allclose(vals, math.pi / 2.0, rtol=1e-12)

    def test_x_squared_analytic(self):
        # q = x^2, h1 h2 = 1 (d = 1): B(beta, 0) = pi/4 * beta
        model = LocalErrorModel.from_components((0, 0), 1.0, 1, [{(1, 0): 1.0}], d=1.0)
        for beta in (1.0, 2.0, 5.0):
            assert anisotropy_bound(model, beta, 0.0) == pytest.approx(
                math.pi / 4 * beta, rel=1e-12)
        # long axis perpendicular to the error direction shrinks the bound
        assert anisotropy_bound(model, 4.0, math.pi / 2) == pytest.approx(
            math.pi / 4 / 4.0, rel=1e-12)

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            phi = rng.uniform(0, math.pi)
            beta = rng.uniform(1.0, 20.0)
            theta = rng.uniform(0, math.pi)
            m0 = directional_model(0.0)
            mphi = directional_model(phi)
            assert anisotropy_bound(mphi, beta, theta + phi) == pytest.approx(
                anisotropy_bound(m0, beta, theta), rel=1e-10)

    def test_center_offset(self):
        # q = ((x - cx)/s)^2 integrated over the ellipse at the center:
        # (1/s^2) (pi/4) h1^3 h2 with h1^3 h2 = beta/d for h1 h2 = 1/d
        model = LocalErrorModel.from_components((3.0, -1.0), 2.0, 1, [{(1, 0): 1.0}], d=1.0)
        assert anisotropy_bound(model, 2.0, 0.0) == pytest.approx(
            (1.0 / 4.0) * math.pi / 4 * 2.0, rel=1e-12)


class TestBuildModel:
    def setup_method(self):
        tri = unit_square_mesh(2)
        self.hp = HpMesh(tri, np.full(tri.n_triangles, 2))

    def test_zero_residual_gives_zero_model(self):
        def exact(x, y):
            return x**2 + y**2

        prob = UltraWeakProblem(
            beta=(0, 0), epsilon=1.0, source=lambda x, y: -4.0 * np.ones_like(x),
            dirichlet=exact, exact=exact)
        sol = solve_global(self.hp, prob, delta_p=2)
        for k in range(self.hp.mesh.n_triangles):
            model = build_error_model(sol, k)
            assert np.abs(model.comps).max() < 1e-9

    def test_only_low_order_components_gives_zero(self):
        prob = UltraWeakProblem(beta=(1, 1), epsilon=0.1,
                                source=lambda x, y: np.ones_like(x),
                                dirichlet=lambda x, y: np.zeros_like(x))
        sol = solve_global(self.hp, prob, delta_p=2)
        rep = sol.reps[0]
        from dpghp.basis import _basis_cache
        degrees = _basis_cache(int(sol.layout.test_order[0])).mode_degrees
        rep.c[np.tile(degrees, 3) > 2] = 0.0  # strip enriched content
        model = build_error_model(sol, 0)
        assert model.is_zero() or np.abs(model.comps).max() < 1e-12

    def test_surrogate_matches_enriched_field(self):
        prob = UltraWeakProblem(beta=(1, 1), epsilon=0.05,
                                source=lambda x, y: np.ones_like(x),
                                dirichlet=lambda x, y: np.zeros_like(x))
        sol = solve_global(self.hp, prob, delta_p=2)
        k = 3
        model = build_error_model(sol, k)
        from dpghp.basis import _basis_cache
        basis = _basis_cache(int(sol.layout.test_order[k]))
        hi = basis.mode_degrees > 2
        rep = sol.reps[k]
        # q at the element barycenter neighborhood equals the squared
        # enriched components
        tri = self.hp.mesh
        coords = tri.tri_coords(k)
        pts = coords.mean(axis=0) + 0.05 * (coords[:2] - coords.mean(axis=0))
        J = np.column_stack([coords[1] - coords[0], coords[2] - coords[0]])
        ref = np.linalg.solve(J, (pts - coords[0]).T).T
        V = basis.eval(ref[:, 0], ref[:, 1])[0]
        expected = ((V[:, hi] @ rep.c_v[hi]) ** 2
                    + (V[:, hi] @ rep.c_tau[0][hi]) ** 2
                    + (V[:, hi] @ rep.c_tau[1][hi]) ** 2)
        assert np.allclose(model.eval_q(pts), expected, rtol=1e-6, atol=1e-14)


class TestOptimize:
    def test_zero_model_isotropic(self):
        model = LocalErrorModel.from_components((0, 0), 1.0, 2, [{}], d=1.0)
        res = optimize_anisotropy(model)
        assert (res.beta_star, res.theta_star, res.bound) == (1.0, 0.0, 0.0)

    def test_radially_symmetric_prefers_isotropic(self):
        # q = x^2 + y^2 from two components x and y
        model = LocalErrorModel.from_components(
            (0, 0), 1.0, 1, [{(1, 0): 1.0}, {(0, 1): 1.0}], d=1.0)
        res = optimize_anisotropy(model)
        assert res.beta_star == pytest.approx(1.0, abs=1e-3)

    def test_x_squared_alignment_and_brute_force(self):
        model = LocalErrorModel.from_components((0, 0), 1.0, 1, [{(1, 0): 1.0}], d=1.0)
        res = optimize_anisotropy(model)
        # long axis along y, cap binds
        assert abs(res.theta_star - math.pi / 2) < math.radians(2.0)
        assert res.capped
        betas = np.linspace(1, 100, 50)
        thetas = np.linspace(0, math.pi, 180, endpoint=False)
        Bg, Tg = np.meshgrid(betas, thetas, indexing="ij")
        vals = bound_many(model, Bg.ravel(), Tg.ravel())
        assert res.bound <= vals.min() * 1.01

    def test_random_directional_surrogates(self):
        rng = np.random.default_rng(17)
        betas = np.linspace(1, 100, 50)
        thetas = np.linspace(0, math.pi, 180, endpoint=False)
        Bg, Tg = np.meshgrid(betas, thetas, indexing="ij")
        for _ in range(10):
            phi = rng.uniform(0, math.pi)
            p = int(rng.integers(1, 4))
            model = directional_model(phi, power=p + 1)
            res = optimize_anisotropy(model)
            target = (phi + math.pi / 2) % math.pi
            dth = abs(res.theta_star - target) % math.pi
            assert min(dth, math.pi - dth) < math.radians(2.0)
            vals = bound_many(model, Bg.ravel(), Tg.ravel())
            assert res.bound <= vals.min() * 1.01

    def test_never_worse_than_isotropic(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            deg = int(rng.integers(1, 4))
            dct = {(i, j): rng.standard_normal()
                   for i in range(deg + 1) for j in range(deg + 1 - i)}
            model = LocalErrorModel.from_components((0, 0), 1.0, deg, [dct],
                                                    d=rng.uniform(0.5, 5.0))
            res = optimize_anisotropy(model)
            iso = anisotropy_bound(model, 1.0, 0.0)
            assert res.bound <= iso + 1e-12

    def test_beta_cap_flag(self):
        model = directional_model(0.3, power=2)
        res = optimize_anisotropy(model, beta_max=10.0)
        assert res.capped
        assert res.beta_star <= 10.0


class TestOptimizeAll:
    def test_skips_negligible_elements(self):
        tri = unit_square_mesh(2)
        hp = HpMesh(tri, np.full(tri.n_triangles, 2))
        prob = UltraWeakProblem(beta=(1, 1), epsilon=0.05,
                                source=lambda x, y: np.ones_like(x),
                                dirichlet=lambda x, y: np.zeros_like(x))
        sol = solve_global(hp, prob, delta_p=2)
        sol.eta_k[0] = 0.0  # force one negligible element
        results = optimize_all(sol)
        assert results[0].beta_star == 1.0
        assert len(results) == tri.n_triangles
