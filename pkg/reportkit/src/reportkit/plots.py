"""Paper-style figures from run artifacts.

Three kinds: `convergence` (semilog error against the cube root of the dof
count, one series per run), `evolution` (element count and average order
per adaptation), and `pdist` (mesh colored by element order with a
discrete colorbar).  Output is SVG by default; rendering is deterministic
for a fixed style (hash salt pinned, no embedded dates).
"""

from __future__ import annotations

import os
import warnings

import matplotlib
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "reportkit"

import matplotlib.pyplot as plt
from matplotlib.colors import BoundaryNorm, ListedColormap

from .artifacts import ArtifactError, RunArtifacts, read_mesh, read_pdist

KINDS = ("convergence", "evolution", "pdist")

_METRIC_LABELS = {
    "err_l2": "L2 error",
    "err_energy": "energy error",
    "err_linf": "Linf error",
    "err_h1_semi": "H1 seminorm error",
    "err_h1": "H1 error",
    "target_err": "target error",
    "dwr": "DWR estimate",
}


def plot_run(artifacts, kind, out_path, metric="err_energy", iteration=None):
    """Render one figure kind to out_path; returns the saved path.

    artifacts is a RunArtifacts or a list of them (overlaid for
    `convergence`; the first run is used otherwise).
    """
    runs = list(artifacts) if isinstance(artifacts, (list, tuple)) else [artifacts]
    if not runs:
        raise ArtifactError("no run artifacts given")
    if kind == "convergence":
        fig = convergence_figure(runs, metric=metric)
    elif kind == "evolution":
        fig = evolution_figure(runs[0])
    elif kind == "pdist":
        fig = pdist_figure(runs[0], iteration=iteration)
    else:
        raise ArtifactError(f"unknown plot kind '{kind}'; choose from {KINDS}")
    save_figure(fig, out_path)
    plt.close(fig)
    return out_path


def save_figure(fig, out_path):
    ext = os.path.splitext(out_path)[1].lower()
    if ext not in (".svg", ".png"):
        raise ArtifactError(f"unsupported image format '{ext}' (use .svg or .png)")
    fig.savefig(out_path, metadata={"Date": None} if ext == ".svg" else None)


def convergence_figure(runs, metric="err_energy"):
    """Semilog-y error against ndof^(1/3), one series per run."""
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    for run in runs:
        x = run.column("ndof") ** (1.0 / 3.0)
        y = run.column(metric)
        keep = np.isfinite(y) & (y > 0.0)
        dropped = int(np.sum(~keep))
        if dropped:
            warnings.warn(f"{run.label}: dropped {dropped} nonpositive/missing "
                          f"'{metric}' values from the log-scale plot")
        if not np.any(keep):
            warnings.warn(f"{run.label}: no positive '{metric}' values to plot")
            continue
        ax.semilogy(x[keep], y[keep], marker="s", markersize=4, label=run.label)
    ax.set_xlabel(r"$\sqrt[3]{\mathrm{ndof}}$")
    ax.set_ylabel(_METRIC_LABELS.get(metric, metric))
    ax.grid(True, which="both", alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def evolution_figure(run):
    """Element count and average order per adaptation (twin axes)."""
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    it = run.column("adaptation")
    ax.plot(it, run.column("ne"), marker="s", markersize=4, color="tab:red",
            label="elements")
    ax.set_xlabel("adaptation")
    ax.set_ylabel("elements", color="tab:red")
    ax.tick_params(axis="y", labelcolor="tab:red")
    ax2 = ax.twinx()
    ax2.plot(it, run.column("p_avg"), marker="o", markersize=4,
             color="tab:blue", label="average order")
    ax2.set_ylabel("average order", color="tab:blue")
    ax2.tick_params(axis="y", labelcolor="tab:blue")
    ax.grid(True, alpha=0.4)
    fig.tight_layout()
    return fig


def pdist_figure(run, iteration=None):
    """Mesh colored by element order; colorbar ticks are the orders present."""
    if not run.iterations:
        raise ArtifactError(f"{run.run_dir}: no mesh/pdist dumps found")
    if iteration is None:
        iteration = run.iterations[-1]
    if iteration not in run.iterations:
        raise ArtifactError(f"{run.run_dir}: iteration {iteration} has no dumps")
    vertices, triangles = read_mesh(run.mesh_path(iteration))
    p = read_pdist(run.pdist_path(iteration))
    if len(p) != len(triangles):
        raise ArtifactError(f"{run.run_dir}: pdist length does not match mesh")

    values = sorted(set(int(v) for v in p))
    base = plt.get_cmap("viridis", max(len(values), 2))
    cmap = ListedColormap([base(i) for i in range(len(values))])
    bounds = [v - 0.5 for v in values] + [values[-1] + 0.5]
    norm = BoundaryNorm(bounds, cmap.N)

    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    tpc = ax.tripcolor(vertices[:, 0], vertices[:, 1], triangles, facecolors=p,
                       cmap=cmap, norm=norm, edgecolors="k", linewidth=0.2)
    cbar = fig.colorbar(tpc, ax=ax, ticks=values)
    cbar.set_label("element order")
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(f"adaptation {iteration}")
    fig.tight_layout()
    return fig
