"""Adaptation loop: solve, estimate, select orders, optimize anisotropy and
density, remesh, transfer, repeat.

Each iteration writes the mesh, order distribution, and per-element
diagnostics to the output directory, appends a convergence record, and
rewrites `convergence.csv` and `records.jsonl` so aborted runs leave
partial results behind.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .anisotropy import optimize_all, write_anisotropy_csv
from .goal import dwr_estimate, evaluate_target, solve_dual, write_indicator_csv
from .hp_model import (
    ContinuousModel,
    bisect_const,
    build_metric_field,
    compute_abar,
    optimal_density,
    order_selection_pass,
    write_hp_diagnostics_csv,
)
from .mesh import HpMesh, mesh_complexity, read_native, write_native
from .problems import make_problem
from .remesh import interchange_read, interchange_write, remesh_internal, transfer_orders
from .solver import error_norms, solve_global, write_element_csv


class ConfigError(ValueError):
    """Invalid adaptation configuration."""


class RemeshUnavailable(RuntimeError):
    """External remesher output missing."""


@dataclass
class AdaptConfig:
    case: str = "boundary_layer"
    epsilon: float = None
    alpha: float = None
    mode: str = "energy"            # energy | goal
    growth: float = 1.3
    fixed_complexity: float = 0.0   # > 0 switches to fixed-complexity mode
    max_adapt: int = 10
    p_init: object = 2              # integer or 'random'
    p_min: int = 1
    p_max: int = 10
    delta_p: int = 2
    remesher: str = "internal"      # internal | external
    mesh_in: str = ""
    out_dir: str = "out"
    threads: int = 1
    seed: int = 0
    beta_max: float = 100.0
    condense: bool = False
    solver: str = "direct"

    def __post_init__(self):
        if self.mode not in ("energy", "goal"):
            raise ConfigError(f"unknown mode '{self.mode}'")
        if self.remesher not in ("internal", "external"):
            raise ConfigError(f"unknown remesher '{self.remesher}'")
        if self.fixed_complexity <= 0.0 and self.growth <= 1.0:
            raise ConfigError("growth must exceed 1 in growth mode")
        if isinstance(self.p_init, str) and self.p_init != "random":
            try:
                self.p_init = int(self.p_init)
            except ValueError:
                raise ConfigError(f"p_init must be an integer or 'random'") from None
        if isinstance(self.p_init, int) and not (self.p_min <= self.p_init <= self.p_max):
            raise ConfigError("p_init must lie in [p_min, p_max]")
        if self.delta_p < 1:
            raise ConfigError("delta_p must be at least 1")


RECORD_FIELDS = ["adaptation", "ne", "ndof", "complexity", "p_avg", "err_l2",
                 "err_energy", "err_linf", "err_h1_semi", "err_h1",
                 "target_err", "dwr"]


@dataclass
class ConvergenceRecord:
    adaptation: int
    ne: int
    ndof: float
    complexity: float
    p_avg: float
    err_l2: float = None
    err_energy: float = None
    err_linf: float = None
    err_h1_semi: float = None
    err_h1: float = None
    target_err: float = None
    dwr: float = None

    def row(self):
        out = []
        for name in RECORD_FIELDS:
            v = getattr(self, name)
            if v is None:
                out.append("")
            elif name in ("adaptation", "ne"):
                out.append(str(int(v)))
            else:
                out.append(f"{float(v):.17g}")
        return out


def problem_spec_from_config(config: AdaptConfig):
    params = {}
    if config.epsilon is not None:
        params["epsilon"] = config.epsilon
    if config.alpha is not None:
        params["alpha"] = config.alpha
    return make_problem(config.case, **params)


def load_mesh_file(path):
    """Read a mesh in the native text or interchange format (by extension)."""
    if path.endswith(".mesh"):
        return interchange_read(path[: -len(".mesh")])[0]
    return read_native(path)


def initial_hp_mesh(config: AdaptConfig, spec):
    if config.mesh_in:
        tri = load_mesh_file(config.mesh_in)
    elif config.fixed_complexity > 0.0:
        p_ref = config.p_init if isinstance(config.p_init, int) else 2
        tri = spec.mesh_for_complexity(config.fixed_complexity, p_ref)
    else:
        tri = spec.initial_mesh(4 if spec.domain == "unit_square" else 2)
    if config.p_init == "random":
        rng = np.random.default_rng(config.seed)
        p = rng.integers(config.p_min, min(4, config.p_max) + 1, tri.n_triangles)
    else:
        p = np.full(tri.n_triangles, int(config.p_init))
    return HpMesh(tri, p)


def run_adaptation(config: AdaptConfig):
    """Run the adaptation loop and return the convergence records."""
    spec = problem_spec_from_config(config)
    if config.mode == "goal" and spec.target is None:
        raise ConfigError(f"case '{config.case}' has no target functional for goal mode")
    os.makedirs(config.out_dir, exist_ok=True)
    hp = initial_hp_mesh(config, spec)

    n0 = mesh_complexity(hp)
    j_ref = spec.reference_target() if spec.target is not None else None

    records = []
    for it in range(config.max_adapt + 1):
        if config.fixed_complexity > 0.0:
            target_n = config.fixed_complexity
        else:
            target_n = n0 * config.growth**it

        sol = solve_global(hp, spec.problem, delta_p=config.delta_p,
                           condense=config.condense, solver=config.solver)
        norms = error_norms(sol)
        rec = ConvergenceRecord(
            adaptation=it, ne=hp.mesh.n_triangles, ndof=mesh_complexity(hp),
            complexity=target_n, p_avg=hp.p_avg,
            err_l2=norms.get("l2"), err_energy=sol.eta,
            err_linf=norms.get("linf"), err_h1_semi=norms.get("h1_semi"),
            err_h1=norms.get("h1"))

        dual = None
        if config.mode == "goal":
            dual = solve_dual(hp, spec.problem, spec.target, delta_p=config.delta_p,
                              condense=config.condense, solver=config.solver)
            j_h = evaluate_target(sol, spec.target)
            rec.target_err = abs(j_ref - j_h)
            rec.dwr = dwr_estimate(sol, dual)

        records.append(rec)
        _dump_iteration(config, hp, sol, dual, it)
        emit_reports(records, config.out_dir, config)

        if it == config.max_adapt:
            break
        if sol.eta < 1e-14:  # absolute error floor
            break

        # next complexity target drives the remesh
        next_n = (config.fixed_complexity if config.fixed_complexity > 0.0
                  else n0 * config.growth ** (it + 1))

        selections = order_selection_pass(sol, p_min=config.p_min, p_max=config.p_max,
                                          threads=config.threads)
        aniso = optimize_all(sol, beta_max=config.beta_max)

        areas = hp.mesh.areas()
        abar = np.array([
            compute_abar(areas[k], selections[k].p_opt, selections[k].energy_opt,
                         mode=config.mode,
                         eta_star=(dual.eta_star[k] if dual is not None else None))
            for k in range(hp.mesh.n_triangles)])
        p_opt = np.array([s.p_opt for s in selections])

        model = ContinuousModel(abar=abar, p_opt=p_opt, areas=areas,
                                n_target=next_n, mode=config.mode)
        const = bisect_const(model)
        density = optimal_density(model, const)
        write_hp_diagnostics_csv(selections, abar, density,
                                 os.path.join(config.out_dir, f"hp_diag_{it}.csv"))
        write_anisotropy_csv(aniso, os.path.join(config.out_dir, f"aniso_{it}.csv"))

        if config.remesher == "internal":
            new_tri, new_p = _remesh_to_complexity(hp.mesh, density.d_star, aniso,
                                                   p_opt, next_n)
        else:
            _, vertex_metrics = build_metric_field(hp.mesh, density.d_star, aniso)
            # ellipse-circumscribing convention -> unit-edge mesher convention
            mesher_metrics = [m.scaled(1.0 / 3.0) for m in vertex_metrics]
            prefix = os.path.join(config.out_dir, f"remesh_{it}")
            interchange_write(hp.mesh, mesher_metrics, prefix)
            out_prefix = prefix + "_out"
            if not os.path.exists(out_prefix + ".mesh"):
                raise RemeshUnavailable(
                    f"external remesher output '{out_prefix}.mesh' not found; "
                    "run the mesher on the written interchange files")
            new_tri, _ = interchange_read(out_prefix)
            new_p = transfer_orders(hp.mesh, p_opt, new_tri)

        hp = HpMesh(new_tri, np.clip(new_p, config.p_min, config.p_max))

    return records


def _remesh_to_complexity(mesh, d_star, aniso, p_opt, target_n, tol=0.08, attempts=3):
    """Remesh and correct for the mesher's realized-density bias.

    A metric-conforming mesh may sit anywhere inside the edge-length band,
    so the realized complexity can drift from the density integral; rescale
    the density (a pure metric scaling) until the transferred-order
    complexity is within tolerance or attempts run out.  Deterministic.
    """
    factor = 1.0
    best = None
    for _ in range(attempts):
        _, vertex_metrics = build_metric_field(mesh, d_star * factor, aniso)
        mesher_metrics = [m.scaled(1.0 / 3.0) for m in vertex_metrics]
        new_tri, _ = remesh_internal(mesh, mesher_metrics)
        new_p = transfer_orders(mesh, p_opt, new_tri)
        achieved = mesh_complexity(HpMesh(new_tri, new_p))
        miss = achieved / target_n - 1.0
        if best is None or abs(miss) < abs(best[0]):
            best = (miss, new_tri, new_p)
        if abs(miss) <= tol:
            break
        factor = min(4.0, max(0.25, factor * target_n / max(achieved, 1.0)))
    return best[1], best[2]


def _dump_iteration(config, hp, sol, dual, it):
    out = config.out_dir
    write_native(hp.mesh, os.path.join(out, f"mesh_{it}.txt"))
    with open(os.path.join(out, f"pdist_{it}.csv"), "w") as f:
        f.write("element,p\n")
        for k, p in enumerate(hp.p):
            f.write(f"{k},{p}\n")
    write_element_csv(sol, os.path.join(out, f"elements_{it}.csv"))
    if dual is not None:
        write_indicator_csv(sol, dual, os.path.join(out, f"indicators_{it}.csv"))


def emit_reports(records, out_dir, config=None):
    """Write convergence.csv (stable column order), records.jsonl, and the
    run manifest with the cube-root-of-ndof column precomputed."""
    if not records:
        raise ConfigError("no records to report")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "convergence.csv")
    with open(path, "w") as f:
        f.write(",".join(RECORD_FIELDS) + "\n")
        for rec in records:
            f.write(",".join(rec.row()) + "\n")
    with open(os.path.join(out_dir, "records.jsonl"), "w") as f:
        for rec in records:
            f.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
    manifest = {
        "config": _config_echo(config),
        "n_records": len(records),
        "ndof_cbrt": [float(rec.ndof) ** (1.0 / 3.0) for rec in records],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _config_echo(config):
    if config is None:
        return {}
    out = {}
    for f in fields(config):
        v = getattr(config, f.name)
        out[f.name] = v if (v is None or isinstance(v, (int, float, str, bool))) else str(v)
    return out


def load_records(out_dir):
    """Rebuild ConvergenceRecords from records.jsonl."""
    path = os.path.join(out_dir, "records.jsonl")
    if not os.path.exists(path):
        raise ConfigError(f"no records found under '{out_dir}'")
    records = []
    with open(path) as f:
        for line in f:
            if line.strip():
                records.append(ConvergenceRecord(**json.loads(line)))
    return records


def fit_exponential(records, field_name="err_energy"):
    """Least-squares fit log(err) = log(C) - b * ndof^(1/3).

    Returns (C, b, r_squared); b > 0 means exponential decay.  Records with
    nonpositive or missing errors are skipped.
    """
    xs, ys = [], []
    for rec in records:
        err = getattr(rec, field_name)
        if err is not None and err > 0.0:
            xs.append(float(rec.ndof) ** (1.0 / 3.0))
            ys.append(math.log(err))
    if len(xs) < 3:
        raise ConfigError("need at least three positive records for the fit")
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return math.exp(intercept), -slope, r2
