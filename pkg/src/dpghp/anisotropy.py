"""Optimal element anisotropy from the error-representation function.

The enriched-order part of the error representation (modes of degree above
the trial order) carries the leading directional error content.  Squaring
and summing its components gives a nonnegative polynomial surrogate q; the
directional bound B(beta, theta) integrates q over the ellipse with the
element's current density, orientation theta, and aspect ratio beta.  The
minimizing pair (beta*, theta*) is found by alternating theta sweeps and
golden-section searches in beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis import _mode_index, tri_tables
from .mesh import GEOM_ALPHA
from .solver import GlobalSolution, _element_geometry

BETA_MAX = 100.0


@dataclass
class LocalErrorModel:
    """Nonnegative polynomial error surrogate q = sum_c comp_c(x)^2 on an
    element, with components stored as monomial coefficients in the scaled
    local frame (x - center)/scale."""

    element: int
    center: np.ndarray
    scale: float
    degree: int
    comps: np.ndarray      # (n_coef, n_components)
    d: float               # current element density

    @property
    def exponents(self):
        return _mode_index(self.degree)

    def is_zero(self):
        return not np.any(self.comps)

    def eval_q(self, pts):
        """q at physical points (n, 2)."""
        X = (np.asarray(pts, dtype=float) - self.center) / self.scale
        V = _monomials(X, self.degree)
        vals = V @ self.comps
        return np.sum(vals**2, axis=1)

    @staticmethod
    def from_components(center, scale, degree, comp_dicts, d, element=-1):
        """Build from explicit monomial dictionaries {(i, j): coef} per
        component, coefficients in the scaled local frame."""
        idx = {e: m for m, e in enumerate(_mode_index(degree))}
        comps = np.zeros((len(idx), len(comp_dicts)))
        for c, dct in enumerate(comp_dicts):
            for (i, j), val in dct.items():
                comps[idx[(i, j)], c] = val
        return LocalErrorModel(element=element, center=np.asarray(center, dtype=float),
                               scale=float(scale), degree=degree, comps=comps, d=float(d))


@dataclass
class AnisotropyResult:
    beta_star: float
    theta_star: float
    bound: float
    capped: bool = False


def _monomials(X, degree):
    x, y = X[:, 0], X[:, 1]
    xp = [np.ones_like(x)]
    yp = [np.ones_like(y)]
    for _ in range(degree):
        xp.append(xp[-1] * x)
        yp.append(yp[-1] * y)
    return np.column_stack([xp[i] * yp[j] for i, j in _mode_index(degree)])


@lru_cache(maxsize=None)
def disc_rule(degree):
    """Tensor Gauss rule on the unit disc, exact for polynomials of the
    given total degree; weights sum to pi."""
    n_r = (degree + 3) // 2
    xs, ws = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (xs + 1.0)
    wr = 0.5 * ws * r            # radial measure r dr
    n_a = degree + 2
    ang = 2.0 * math.pi * np.arange(n_a) / n_a
    wa = 2.0 * math.pi / n_a
    R, A = np.meshgrid(r, ang, indexing="ij")
    pts = np.column_stack([(R * np.cos(A)).ravel(), (R * np.sin(A)).ravel()])
    w = np.outer(wr, np.full(n_a, wa)).ravel()
    return pts, w


def build_error_model(solution: GlobalSolution, k: int) -> LocalErrorModel:
    """Error surrogate of element k from the enriched-order components of
    its error representation."""
    hp, layout = solution.hp, solution.layout
    p = int(hp.p[k])
    t_ord = int(layout.test_order[k])
    rep = solution.reps[k]
    from .basis import _basis_cache
    degrees = _basis_cache(t_ord).mode_degrees
    hi = degrees > p
    coords, J, Jinv, det = _element_geometry(hp.mesh, k)
    area = 0.5 * det
    center = coords.mean(axis=0)
    scale = math.sqrt(area)
    d = GEOM_ALPHA / area

    comp_coeffs = [rep.c_v, *rep.c_tau]
    if not any(np.any(c[hi]) for c in comp_coeffs):
        n_coef = len(_mode_index(t_ord))
        return LocalErrorModel(element=k, center=center, scale=scale,
                               degree=t_ord, comps=np.zeros((n_coef, 3)), d=d)

    rule, V, _, _ = tri_tables(t_ord, 2 * t_ord + 2)
    xq = coords[0, 0] + J[0, 0] * rule.points[:, 1] + J[0, 1] * rule.points[:, 2]
    yq = coords[0, 1] + J[1, 0] * rule.points[:, 1] + J[1, 1] * rule.points[:, 2]
    X = (np.column_stack([xq, yq]) - center) / scale
    Vand = _monomials(X, t_ord)
    vals = np.column_stack([V[:, hi] @ c[hi] for c in comp_coeffs])
    comps, *_ = np.linalg.lstsq(Vand, vals, rcond=None)
    return LocalErrorModel(element=k, center=center, scale=scale,
                           degree=t_ord, comps=comps, d=d)


def anisotropy_bound(model: LocalErrorModel, beta, theta) -> float:
    """Integral of q over the ellipse with orientation theta, aspect beta,
    and area fixed by the model's density."""
    return float(bound_many(model, np.atleast_1d(beta), np.atleast_1d(theta))[0])


def bound_many(model: LocalErrorModel, betas, thetas):
    """Vectorized anisotropy bound over parameter pairs."""
    betas = np.asarray(betas, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    pts, w = disc_rule(2 * model.degree + 2)
    h1 = np.sqrt(betas / model.d)
    h2 = np.sqrt(1.0 / (betas * model.d))
    c, s = np.cos(thetas), np.sin(thetas)
    # x = center + R(theta) diag(h1, h2) xi
    out = np.empty(betas.shape)
    ax = np.empty((len(betas), len(pts), 2))
    for i in range(len(betas)):
        u = h1[i] * pts[:, 0]
        v = h2[i] * pts[:, 1]
        ax[i, :, 0] = model.center[0] + c[i] * u - s[i] * v
        ax[i, :, 1] = model.center[1] + s[i] * u + c[i] * v
    q = model.eval_q(ax.reshape(-1, 2)).reshape(len(betas), len(pts))
    out = (h1 * h2) * (q @ w)
    return out


def _golden(f, a, b, tol=1e-4, max_iter=60):
    """Golden-section minimum of f on [a, b]; returns (x, f(x))."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if (b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def optimize_anisotropy(model: LocalErrorModel, beta_max: float = BETA_MAX,
                        n_theta: int = 32, rel_tol: float = 1e-3,
                        max_outer: int = 10) -> AnisotropyResult:
    """Alternating minimization of the directional bound.

    Theta is swept on a coarse grid and refined by golden section at fixed
    beta; beta is then searched by golden section on [1, beta_max].  The
    best pair seen anywhere is returned, so the result is never worse than
    the isotropic bound.
    """
    if model.is_zero():
        return AnisotropyResult(beta_star=1.0, theta_star=0.0, bound=0.0)

    iso = anisotropy_bound(model, 1.0, 0.0)
    best = [1.0, 0.0, iso]

    def consider(beta, theta, val):
        if val < best[2]:
            best[0], best[1], best[2] = beta, theta, val

    beta_cur = min(2.0, beta_max)
    theta_cur = 0.0
    prev = iso
    for _ in range(max_outer):
        thetas = np.arange(n_theta) * math.pi / n_theta
        vals = bound_many(model, np.full(n_theta, beta_cur), thetas)
        i0 = int(np.argmin(vals))
        consider(beta_cur, thetas[i0], float(vals[i0]))
        span = math.pi / n_theta
        th, fv = _golden(lambda t: anisotropy_bound(model, beta_cur, t),
                         thetas[i0] - span, thetas[i0] + span)
        consider(beta_cur, th % math.pi, fv)
        theta_cur = th % math.pi

        bt, fb = _golden(lambda b: anisotropy_bound(model, b, theta_cur),
                         1.0, beta_max)
        consider(bt, theta_cur, fb)
        beta_cur = bt

        if prev > 0.0 and abs(prev - best[2]) <= rel_tol * prev:
            break
        prev = best[2]

    return AnisotropyResult(beta_star=best[0], theta_star=best[1] % math.pi,
                            bound=best[2], capped=best[0] >= 0.999 * beta_max)


def optimize_all(solution: GlobalSolution, beta_max: float = BETA_MAX):
    """Anisotropy results for every element; elements with negligible error
    keep the isotropic default."""
    nt = solution.hp.mesh.n_triangles
    eta_max = solution.eta_k.max() if nt else 0.0
    out = []
    for k in range(nt):
        if solution.eta_k[k] <= 1e-14 * eta_max or eta_max == 0.0:
            out.append(AnisotropyResult(beta_star=1.0, theta_star=0.0, bound=0.0))
        else:
            out.append(optimize_anisotropy(build_error_model(solution, k),
                                           beta_max=beta_max))
    return out


def write_anisotropy_csv(results, path):
    with open(path, "w") as f:
        f.write("element,beta_star,theta_star\n")
        for k, r in enumerate(results):
            f.write(f"{k},{r.beta_star:.17g},{r.theta_star:.17g}\n")
