"""Benchmark problems: boundary layer, Gaussian-peak target, inverse-tangent
flux target, and the L-shaped domain.

All cases carry analytic exact solutions, manufactured sources, and (where
applicable) target functionals with quadrature-derived reference values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .goal import TargetFunctional
from .mesh import Triangulation, lshape_mesh, unit_square_mesh
from .solver import UltraWeakProblem


class ProblemError(ValueError):
    """Unknown case or invalid parameters."""


@dataclass
class ProblemSpec:
    """A benchmark case: PDE data, domain, exact solution, optional target."""

    name: str
    domain: str                      # 'unit_square' or 'lshape'
    problem: UltraWeakProblem
    params: dict
    target: TargetFunctional = None
    _reference_target: callable = None

    def initial_mesh(self, n) -> Triangulation:
        if self.domain == "unit_square":
            return unit_square_mesh(n)
        return lshape_mesh(n)

    def mesh_for_complexity(self, complexity: float, p: int) -> Triangulation:
        """Structured mesh whose scalar dof count at uniform order p is as
        close as possible to the requested complexity."""
        per_el = (p + 1) * (p + 2) / 2.0
        if self.domain == "unit_square":
            n = max(1, round(math.sqrt(complexity / (2.0 * per_el))))
        else:
            n = max(1, round(math.sqrt(complexity / (6.0 * per_el))))
        return self.initial_mesh(n)

    def reference_target(self) -> float:
        """J(u) for the exact solution, by high-order quadrature."""
        if self._reference_target is None:
            raise ProblemError(f"case '{self.name}' has no target functional")
        return self._reference_target()


def _bl_phi_factory(eps):
    E = math.exp(-1.0 / eps)
    D = 1.0 - E

    def g(t):
        return np.exp((t - 1.0) / eps)

    def phi(t):
        return t + (E - g(t)) / D

    def dphi(t):
        return 1.0 - g(t) / (eps * D)

    def d2phi(t):
        return -g(t) / (eps * eps * D)

    return phi, dphi, d2phi


def _convection_diffusion_product(eps, f, df, d2f):
    """Problem data for u = f(x) f(y) with beta = (1, 1)."""

    def exact(x, y):
        return f(x) * f(y)

    def exact_grad(x, y):
        return df(x) * f(y), f(x) * df(y)

    def source(x, y):
        return (df(x) * f(y) + f(x) * df(y)
                - eps * (d2f(x) * f(y) + f(x) * d2f(y)))

    return exact, exact_grad, source


@lru_cache(maxsize=None)
def _gauss_grid(n):
    xs, ws = np.polynomial.legendre.leggauss(n)
    return 0.5 * (xs + 1.0), 0.5 * ws


def _square_integral(fn, n=200):
    t, w = _gauss_grid(n)
    X, Y = np.meshgrid(t, t, indexing="ij")
    return float(np.einsum("i,j,ij->", w, w, fn(X, Y)))


def make_problem(case: str, **params) -> ProblemSpec:
    """Build a benchmark case.

    boundary_layer(epsilon): convection-diffusion with exact tensor-product
        boundary layers, homogeneous Dirichlet data.
    gaussian_peak(epsilon, alpha, xc, yc): same PDE plus a volume target
        weighted by a Gaussian peak.
    atan_flux(epsilon, alpha): inverse-tangent interior layers with a flux
        target on the outflow boundary x = 1.
    lshape: Poisson on the L-shaped domain with the singular corner
        solution r^(2/3) sin(2 theta / 3).
    """
    if case == "boundary_layer":
        eps = float(params.pop("epsilon", 0.1))
        _check_empty(case, params)
        phi, dphi, d2phi = _bl_phi_factory(eps)
        exact, egrad, source = _convection_diffusion_product(eps, phi, dphi, d2phi)
        prob = UltraWeakProblem(beta=(1.0, 1.0), epsilon=eps, source=source,
                                dirichlet=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
                                exact=exact, exact_grad=egrad)
        return ProblemSpec(name=case, domain="unit_square", problem=prob,
                           params={"epsilon": eps})

    if case == "gaussian_peak":
        eps = float(params.pop("epsilon", 0.1))
        alpha = float(params.pop("alpha", 1000.0))
        xc = float(params.pop("xc", 0.99))
        yc = float(params.pop("yc", 0.5))
        _check_empty(case, params)
        spec = make_problem("boundary_layer", epsilon=eps)

        def j_vol(x, y):
            return np.exp(-alpha * ((x - xc) ** 2 + (y - yc) ** 2))

        target = TargetFunctional(j_volume=j_vol, kind="volume")
        exact = spec.problem.exact
        ref = lambda: _square_integral(lambda x, y: j_vol(x, y) * exact(x, y))
        return ProblemSpec(name=case, domain="unit_square", problem=spec.problem,
                           params={"epsilon": eps, "alpha": alpha, "xc": xc, "yc": yc},
                           target=target, _reference_target=ref)

    if case == "atan_flux":
        eps = float(params.pop("epsilon", 0.01))
        alpha = float(params.pop("alpha", 50.0))
        _check_empty(case, params)
        x1, x2 = 1.0 / 3.0, 2.0 / 3.0

        def f(t):
            return np.arctan(alpha * (t - x1)) + np.arctan(alpha * (x2 - t))

        def df(t):
            return (alpha / (1.0 + alpha**2 * (t - x1) ** 2)
                    - alpha / (1.0 + alpha**2 * (x2 - t) ** 2))

        def d2f(t):
            return (-2.0 * alpha**3 * (t - x1) / (1.0 + alpha**2 * (t - x1) ** 2) ** 2
                    - 2.0 * alpha**3 * (x2 - t) / (1.0 + alpha**2 * (x2 - t) ** 2) ** 2)

        exact, egrad, source = _convection_diffusion_product(eps, f, df, d2f)
        prob = UltraWeakProblem(beta=(1.0, 1.0), epsilon=eps, source=source,
                                dirichlet=lambda x, y: exact(x, y),
                                exact=exact, exact_grad=egrad)

        def j_bnd(x, y, n):
            on = np.isclose(n[0], 1.0) and np.isclose(n[1], 0.0)
            return np.full_like(np.asarray(x, dtype=float), 1.0 if on else 0.0)

        target = TargetFunctional(j_boundary=j_bnd, kind="boundary-flux")

        def ref():
            val, err = quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
            return float(df(1.0)) * val

        return ProblemSpec(name=case, domain="unit_square", problem=prob,
                           params={"epsilon": eps, "alpha": alpha},
                           target=target, _reference_target=ref)

    if case == "lshape":
        _check_empty(case, params)

        def polar(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            r = np.hypot(x, y)
            th = np.arctan2(y, x)
            th = np.where(th < 0.0, th + 2.0 * math.pi, th)
            return r, th

        def exact(x, y):
            r, th = polar(x, y)
            return r ** (2.0 / 3.0) * np.sin(2.0 * th / 3.0)

        def exact_grad(x, y):
            r, th = polar(x, y)
            rs = np.where(r > 0.0, r, 1.0) ** (-1.0 / 3.0)
            gx = -(2.0 / 3.0) * rs * np.sin(th / 3.0)
            gy = (2.0 / 3.0) * rs * np.cos(th / 3.0)
            return np.where(r > 0.0, gx, 0.0), np.where(r > 0.0, gy, 0.0)

        prob = UltraWeakProblem(beta=(0.0, 0.0), epsilon=1.0,
                                source=None,  # harmonic exact solution
                                dirichlet=lambda x, y: exact(x, y),
                                exact=exact, exact_grad=exact_grad)
        return ProblemSpec(name=case, domain="lshape", problem=prob, params={})

    raise ProblemError(f"unknown case '{case}'")


def _check_empty(case, params):
    if params:
        raise ProblemError(f"case '{case}' got unknown parameters {sorted(params)}")


def verify_manufactured(spec: ProblemSpec, n_points: int = 100, seed: int = 0,
                        h: float = 1e-4, rtol: float = 1e-4) -> float:
    """Check beta.grad(u) - eps*lap(u) = s by fourth-order finite
    differences at random interior points; returns the worst relative
    mismatch.  For the L-shape the harmonic exact solution is checked
    against a zero source away from the corner."""
    prob = spec.problem
    rng = np.random.default_rng(seed)
    if spec.domain == "unit_square":
        pts = rng.uniform(0.03, 0.97, size=(n_points, 2))
    else:
        pts = []
        while len(pts) < n_points:
            x, y = rng.uniform(-0.97, 0.97, size=2)
            if (x >= -0.03 and y <= 0.03) or math.hypot(x, y) < 0.05:
                continue
            pts.append((x, y))
        pts = np.array(pts)
    x, y = pts[:, 0], pts[:, 1]
    u = prob.exact

    def dx(f, x, y, h):
        return (-f(x + 2 * h, y) + 8 * f(x + h, y) - 8 * f(x - h, y)
                + f(x - 2 * h, y)) / (12 * h)

    def dy(f, x, y, h):
        return (-f(x, y + 2 * h) + 8 * f(x, y + h) - 8 * f(x, y - h)
                + f(x, y - 2 * h)) / (12 * h)

    def lap(f, x, y, h):
        return ((-f(x + 2 * h, y) + 16 * f(x + h, y) - 30 * f(x, y)
                 + 16 * f(x - h, y) - f(x - 2 * h, y)) / (12 * h * h)
                + (-f(x, y + 2 * h) + 16 * f(x, y + h) - 30 * f(x, y)
                   + 16 * f(x, y - h) - f(x, y - 2 * h)) / (12 * h * h))

    bx, by = prob.beta
    fd = bx * dx(u, x, y, h) + by * dy(u, x, y, h) - prob.epsilon * lap(u, x, y, h)
    s = prob.eval_source(x, y)
    scale = np.abs(s) + np.abs(u(x, y)) + 1.0
    worst = float(np.max(np.abs(fd - s) / scale))
    if worst > rtol:
        raise ProblemError(
            f"manufactured source of '{spec.name}' fails the finite-difference "
            f"check: worst relative mismatch {worst:.3e}")
    return worst
