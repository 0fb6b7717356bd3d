"""Run-directory artifacts: the convergence table, per-iteration mesh and
order dumps, and the manifest.

Only the documented file formats are consumed: `convergence.csv` with the
fixed column order, native mesh text files (`nv nt nbe` header), and
`pdist_<i>.csv`.
"""

from __future__ import annotations

import csv
import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

EXPECTED_COLUMNS = ["adaptation", "ne", "ndof", "complexity", "p_avg",
                    "err_l2", "err_energy", "err_linf", "err_h1_semi",
                    "err_h1", "target_err", "dwr"]


class ArtifactError(ValueError):
    """Missing or malformed run artifacts."""


@dataclass
class RunArtifacts:
    """A run directory with a validated convergence table."""

    run_dir: str
    table: dict                    # column -> float array (nan for blanks)
    iterations: list               # iteration ids with mesh + pdist dumps
    manifest: dict = field(default_factory=dict)

    @property
    def label(self):
        return os.path.basename(os.path.normpath(self.run_dir))

    def column(self, name):
        if name not in self.table:
            raise ArtifactError(f"unknown column '{name}'")
        return self.table[name]

    def mesh_path(self, iteration):
        return os.path.join(self.run_dir, f"mesh_{iteration}.txt")

    def pdist_path(self, iteration):
        return os.path.join(self.run_dir, f"pdist_{iteration}.csv")


def load_run(run_dir) -> RunArtifacts:
    """Load and validate a run directory."""
    csv_path = os.path.join(run_dir, "convergence.csv")
    if not os.path.exists(csv_path):
        raise ArtifactError(f"{run_dir}: convergence.csv not found")
    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        rows = list(reader)
    if not rows:
        raise ArtifactError(f"{csv_path}: empty table")
    header = rows[0]
    missing = [c for c in EXPECTED_COLUMNS if c not in header]
    if missing:
        raise ArtifactError(
            f"{csv_path}: schema mismatch, missing columns: {', '.join(missing)}")

    def parse(cell):
        return float(cell) if cell.strip() else float("nan")

    data = {c: [] for c in header}
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ArtifactError(f"{csv_path}:{i}: expected {len(header)} cells")
        for c, cell in zip(header, row):
            data[c].append(parse(cell))
    table = {c: np.asarray(v) for c, v in data.items()}

    iterations = []
    for name in os.listdir(run_dir):
        m = re.fullmatch(r"mesh_(\d+)\.txt", name)
        if m and os.path.exists(os.path.join(run_dir, f"pdist_{m.group(1)}.csv")):
            iterations.append(int(m.group(1)))
    iterations.sort()

    manifest = {}
    man_path = os.path.join(run_dir, "manifest.json")
    if os.path.exists(man_path):
        with open(man_path) as f:
            manifest = json.load(f)

    return RunArtifacts(run_dir=run_dir, table=table, iterations=iterations,
                        manifest=manifest)


def read_mesh(path):
    """Read the native mesh text format: returns (vertices, triangles)."""
    lines = [ln.split() for ln in open(path).read().splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 3:
        raise ArtifactError(f"{path}: expected 'nv nt nbe' header")
    nv, nt, nbe = (int(v) for v in lines[0])
    if len(lines) != 1 + nv + nt + nbe:
        raise ArtifactError(f"{path}: truncated mesh file")
    vertices = np.array([[float(v) for v in ln[:2]] for ln in lines[1:1 + nv]])
    triangles = np.array([[int(v) - 1 for v in ln[:3]]
                          for ln in lines[1 + nv:1 + nv + nt]])
    return vertices, triangles


def read_pdist(path):
    """Read pdist_<i>.csv: returns the per-element order array."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:2] != ["element", "p"]:
        raise ArtifactError(f"{path}: expected 'element,p' header")
    return np.array([int(row[1]) for row in rows[1:]])
