"""Metric-driven remeshing: interchange files for an external anisotropic
mesher and a self-contained local remesher.

The internal remesher drives every edge toward unit length under the input
vertex metric field (log-Euclidean interpolation along edges): edges longer
than sqrt(2) are split, shorter than 1/sqrt(2) collapsed, diagonals flipped
when the metric shape quality improves, and interior vertices relaxed
toward unit-distance positions.  Boundary vertices stay on the boundary
polyline; corner vertices and boundary tags are preserved.  All passes
iterate in deterministic order and never produce inverted elements.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .locate import PointLocator
from .mesh import (
    MeshError,
    MeshFormatError,
    MetricTensor,
    Triangulation,
    cross2,
    metric_log,
)

BAND_LO = 1.0 / math.sqrt(2.0)
BAND_HI = math.sqrt(2.0)
_GAUSS2 = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


@dataclass
class RemeshReport:
    sweeps: int
    in_band: float
    converged: bool
    warning: str = ""


# ---------------------------------------------------------------------------
# Interchange files (BAMG dialect)
# ---------------------------------------------------------------------------

def interchange_write(tri: Triangulation, vertex_metrics, prefix):
    """Write `prefix.mesh` (Vertices/Edges/Triangles sections, 1-based) and
    `prefix.mtr` (header `nv 3`, rows `m11 m12 m22`)."""
    if len(vertex_metrics) != tri.n_vertices:
        raise MeshError("one metric per vertex required")
    mesh_path = f"{prefix}.mesh"
    mtr_path = f"{prefix}.mtr"
    bids = tri.boundary_edge_ids()
    lines = ["MeshVersionFormatted 1", "", "Dimension 2", "", "Vertices",
             str(tri.n_vertices)]
    for x, y in tri.vertices:
        lines.append(f"{x:.17g} {y:.17g} 1")
    lines += ["", "Edges", str(len(bids))]
    for e in bids:
        a, b = tri.edges[e]
        lines.append(f"{a + 1} {b + 1} {tri.edge_tags[e]}")
    lines += ["", "Triangles", str(tri.n_triangles)]
    for t, (a, b, c) in enumerate(tri.triangles):
        lines.append(f"{a + 1} {b + 1} {c + 1} {tri.tri_tags[t]}")
    lines += ["", "End", ""]
    with open(mesh_path, "w") as f:
        f.write("\n".join(lines))
    mlines = [f"{tri.n_vertices} 3"]
    for m in vertex_metrics:
        mlines.append(f"{m.m11:.17g} {m.m12:.17g} {m.m22:.17g}")
    with open(mtr_path, "w") as f:
        f.write("\n".join(mlines) + "\n")
    return mesh_path, mtr_path


def interchange_read(prefix):
    """Read `prefix.mesh` (+ `prefix.mtr` when present); returns
    (Triangulation, metrics or None)."""
    mesh_path = f"{prefix}.mesh"
    raw = open(mesh_path).read().splitlines()
    tokens = []  # (lineno, token)
    for i, ln in enumerate(raw):
        for tok in ln.split():
            tokens.append((i + 1, tok))
    pos = 0

    def peek():
        return tokens[pos][1] if pos < len(tokens) else None

    def take(kind, what):
        nonlocal pos
        if pos >= len(tokens):
            raise MeshFormatError(f"{mesh_path}: unexpected end of file ({what})")
        lineno, tok = tokens[pos]
        pos += 1
        try:
            return kind(tok)
        except ValueError:
            raise MeshFormatError(f"{mesh_path}:{lineno}: expected {what}, got '{tok}'") from None

    verts = None
    tris = None
    tri_tags = None
    btags = {}
    while pos < len(tokens):
        lineno, tok = tokens[pos]
        pos += 1
        key = tok.lower()
        if key == "meshversionformatted":
            take(int, "format version")
        elif key == "dimension":
            dim = take(int, "dimension")
            if dim != 2:
                raise MeshFormatError(f"{mesh_path}:{lineno}: only dimension 2 supported")
        elif key == "vertices":
            n = take(int, "vertex count")
            verts = np.empty((n, 2))
            for i in range(n):
                verts[i, 0] = take(float, "vertex x")
                verts[i, 1] = take(float, "vertex y")
                take(int, "vertex reference")
        elif key == "edges":
            n = take(int, "edge count")
            for _ in range(n):
                a = take(int, "edge vertex") - 1
                b = take(int, "edge vertex") - 1
                tag = take(int, "edge reference")
                btags[(min(a, b), max(a, b))] = tag
        elif key == "triangles":
            n = take(int, "triangle count")
            tris = np.empty((n, 3), dtype=np.int64)
            tri_tags = np.empty(n, dtype=np.int64)
            for i in range(n):
                tris[i] = [take(int, "triangle vertex") - 1 for _ in range(3)]
                tri_tags[i] = take(int, "triangle reference")
        elif key == "end":
            break
        else:
            raise MeshFormatError(f"{mesh_path}:{lineno}: unknown section '{tok}'")
    if verts is None or tris is None:
        raise MeshFormatError(f"{mesh_path}: missing Vertices or Triangles section")
    tri = Triangulation(verts, tris, boundary_tags=btags, tri_tags=tri_tags)

    metrics = None
    mtr_path = f"{prefix}.mtr"
    if os.path.exists(mtr_path):
        metrics = read_metric_file(mtr_path, tri.n_vertices)
    return tri, metrics


def read_metric_file(path, n_expected=None):
    raw = open(path).read().splitlines()
    rows = [(i + 1, ln.split()) for i, ln in enumerate(raw) if ln.strip()]
    if not rows:
        raise MeshFormatError(f"{path}: empty metric file")
    lineno, head = rows[0]
    if len(head) != 2 or head[1] != "3":
        raise MeshFormatError(f"{path}:{lineno}: expected header 'nv 3'")
    try:
        nv = int(head[0])
    except ValueError:
        raise MeshFormatError(f"{path}:{lineno}: expected header 'nv 3'") from None
    if n_expected is not None and nv != n_expected:
        raise MeshFormatError(f"{path}: metric count {nv} does not match mesh")
    if len(rows) != 1 + nv:
        raise MeshFormatError(f"{path}: expected {nv} metric rows, found {len(rows) - 1}")
    out = []
    for i in range(nv):
        lineno, parts = rows[1 + i]
        if len(parts) != 3:
            raise MeshFormatError(f"{path}:{lineno}: expected 'm11 m12 m22'")
        try:
            m11, m12, m22 = (float(v) for v in parts)
        except ValueError:
            raise MeshFormatError(f"{path}:{lineno}: expected 'm11 m12 m22'") from None
        try:
            out.append(MetricTensor(m11, m12, m22))
        except MeshError:
            raise MeshFormatError(f"{path}:{lineno}: metric row is not SPD") from None
    return out


# ---------------------------------------------------------------------------
# Background metric field
# ---------------------------------------------------------------------------

class BackgroundMetric:
    """Log-Euclidean interpolation of vertex metrics over a fixed mesh."""

    def __init__(self, tri: Triangulation, vertex_metrics):
        self.tri = tri
        self.logs = np.array([metric_log(m) for m in vertex_metrics])
        self.locator = PointLocator(tri)

    def log_at(self, pt):
        k, lam = self.locator.locate_or_nearest(pt)
        vs = self.tri.triangles[k]
        return (lam[0] * self.logs[vs[0]] + lam[1] * self.logs[vs[1]]
                + lam[2] * self.logs[vs[2]])


def _exp2(sym):
    lam, vec = np.linalg.eigh(sym)
    return (vec * np.exp(lam)) @ vec.T


# ---------------------------------------------------------------------------
# Editable mesh
# ---------------------------------------------------------------------------

class _EditMesh:
    def __init__(self, tri: Triangulation, background: BackgroundMetric):
        self.bg = background
        self.verts = [np.array(v) for v in tri.vertices]
        self.logm = [background.log_at(v) for v in tri.vertices]
        self.tris = {}
        self.e2t = {}
        self.v2t = {}
        self.next_tid = 0
        for t in range(tri.n_triangles):
            self._add_tri(tuple(int(v) for v in tri.triangles[t]))
        self.btag = {}
        for e in tri.boundary_edge_ids():
            a, b = (int(v) for v in tri.edges[e])
            self.btag[self._key(a, b)] = int(tri.edge_tags[e])
        self.corners = self._find_corners()
        span = tri.vertices.max(axis=0) - tri.vertices.min(axis=0)
        self.area_floor = 1e-14 * float(span[0] * span[1] + span @ span)

    @staticmethod
    def _key(a, b):
        return (a, b) if a < b else (b, a)

    def _add_tri(self, tri_vs):
        tid = self.next_tid
        self.next_tid += 1
        self.tris[tid] = tri_vs
        a, b, c = tri_vs
        for key in (self._key(b, c), self._key(c, a), self._key(a, b)):
            self.e2t.setdefault(key, set()).add(tid)
        for v in tri_vs:
            self.v2t.setdefault(v, set()).add(tid)
        return tid

    def _remove_tri(self, tid):
        a, b, c = self.tris.pop(tid)
        for key in (self._key(b, c), self._key(c, a), self._key(a, b)):
            s = self.e2t[key]
            s.discard(tid)
            if not s:
                del self.e2t[key]
        for v in (a, b, c):
            self.v2t[v].discard(tid)

    def _find_corners(self):
        nbrs = {}
        for (a, b), tag in self.btag.items():
            nbrs.setdefault(a, []).append((b, tag))
            nbrs.setdefault(b, []).append((a, tag))
        corners = set()
        for v, lst in nbrs.items():
            if len(lst) != 2:
                corners.add(v)
                continue
            (u, tu), (w, tw) = lst
            if tu != tw:
                corners.add(v)
                continue
            d1 = self.verts[u] - self.verts[v]
            d2 = self.verts[w] - self.verts[v]
            if abs(cross2(d1, d2)) > 1e-9 * (np.hypot(*d1) * np.hypot(*d2)):
                corners.add(v)
        return corners

    def _bverts(self):
        out = set()
        for a, b in self.btag:
            out.add(a)
            out.add(b)
        return out

    # -- geometry -----------------------------------------------------------

    def tri_area(self, tri_vs):
        a, b, c = (self.verts[v] for v in tri_vs)
        return 0.5 * float(cross2(b - a, c - a))

    def metric_at_logs(self, la, lb, t):
        return _exp2((1.0 - t) * la + t * lb)

    def edge_length(self, a, b):
        pa, pb = self.verts[a], self.verts[b]
        e = pb - pa
        la, lb = self.logm[a], self.logm[b]
        total = 0.0
        for t in _GAUSS2:
            M = self.metric_at_logs(la, lb, t)
            total += 0.5 * math.sqrt(max(e @ M @ e, 0.0))
        return total

    def all_edge_lengths(self):
        keys = sorted(self.e2t.keys())
        if not keys:
            return keys, np.zeros(0)
        idx = np.array(keys)
        P = np.array(self.verts)
        L = np.array(self.logm)
        e = P[idx[:, 1]] - P[idx[:, 0]]
        la, lb = L[idx[:, 0]], L[idx[:, 1]]
        total = np.zeros(len(keys))
        for t in _GAUSS2:
            lam, vec = np.linalg.eigh((1.0 - t) * la + t * lb)
            # e^T exp(S) e with S = V diag(lam) V^T
            proj = np.einsum("nij,ni->nj", vec, e)
            total += 0.5 * np.sqrt(np.maximum(
                np.einsum("nj,nj->n", np.exp(lam) * proj, proj), 0.0))
        return keys, total

    def quality(self, tri_vs):
        """Metric shape quality in [0, 1]; 1 for a unit equilateral."""
        area = self.tri_area(tri_vs)
        if area <= 0.0:
            return -1.0
        lbar = (self.logm[tri_vs[0]] + self.logm[tri_vs[1]] + self.logm[tri_vs[2]]) / 3.0
        det = math.exp(float(np.trace(lbar)))
        lsum = 0.0
        for i in range(3):
            lsum += self.edge_length(tri_vs[i], tri_vs[(i + 1) % 3]) ** 2
        if lsum <= 0.0:
            return -1.0
        return 4.0 * math.sqrt(3.0) * area * math.sqrt(det) / lsum

    # -- operations ----------------------------------------------------------

    def split_edge(self, a, b):
        key = self._key(a, b)
        tids = sorted(self.e2t.get(key, ()))
        if not tids:
            return False
        mid = 0.5 * (self.verts[a] + self.verts[b])
        m = len(self.verts)
        self.verts.append(mid)
        self.logm.append(self.bg.log_at(mid))
        for tid in tids:
            vs = self.tris[tid]
            # replace edge (a, b) with (a, m) and (m, b), keep orientation
            ia = vs.index(a)
            ib = vs.index(b)
            new1 = list(vs)
            new1[ib] = m
            new2 = list(vs)
            new2[ia] = m
            self._remove_tri(tid)
            self._add_tri(tuple(new1))
            self._add_tri(tuple(new2))
        tag = self.btag.pop(key, None)
        if tag is not None:
            self.btag[self._key(a, m)] = tag
            self.btag[self._key(m, b)] = tag
        return True

    def _vertex_neighbors(self, v):
        out = set()
        for tid in self.v2t.get(v, ()):
            out.update(self.tris[tid])
        out.discard(v)
        return out

    def collapse_edge(self, a, b, band_hi):
        key = self._key(a, b)
        tids = self.e2t.get(key)
        if not tids:
            return False
        bverts = self._bverts()

        def allowed_gone(v):
            if v in self.corners:
                return False
            if v in bverts and key not in self.btag:
                return False  # boundary vertex may only slide along the boundary
            return True

        # link condition: common neighbors must be exactly the opposite vertices
        opp = set()
        for tid in tids:
            opp.update(self.tris[tid])
        opp -= {a, b}
        if self._vertex_neighbors(a) & self._vertex_neighbors(b) != opp:
            return False

        candidates = []
        for gone, keep in ((b, a), (a, b)):
            if not allowed_gone(gone):
                continue
            interior_gone = gone not in bverts
            candidates.append((0 if interior_gone else 1, -gone, gone, keep))
        for _, _, gone, keep in sorted(candidates):
            if self._try_collapse(gone, keep, band_hi):
                return True
        return False

    def _try_collapse(self, gone, keep, band_hi):
        affected = sorted(self.v2t.get(gone, ()))
        new_tris = []
        for tid in affected:
            vs = self.tris[tid]
            if keep in vs:
                continue  # dies
            new_vs = tuple(keep if v == gone else v for v in vs)
            if self.tri_area(new_vs) <= self.area_floor:
                return False
            new_tris.append(new_vs)
        # anti-thrash: no stretched edges created
        for vs in new_tris:
            for v in vs:
                if v != keep:
                    if self.edge_length(keep, v) > 1.4 * band_hi:
                        return False
        for tid in affected:
            self._remove_tri(tid)
        for vs in new_tris:
            self._add_tri(vs)
        # boundary bookkeeping
        for key in [k for k in self.btag if gone in k]:
            tag = self.btag.pop(key)
            other = key[0] if key[1] == gone else key[1]
            if other != keep:
                self.btag[self._key(keep, other)] = tag
        self.v2t.pop(gone, None)
        return True

    def flip_edge(self, a, b):
        key = self._key(a, b)
        if key in self.btag:
            return False
        tids = sorted(self.e2t.get(key, ()))
        if len(tids) != 2:
            return False
        t0, t1 = tids
        vs0, vs1 = self.tris[t0], self.tris[t1]
        c = [v for v in vs0 if v not in key][0]
        d = [v for v in vs1 if v not in key][0]
        if c == d:
            return False
        # orient: t0 = (a', b', c) with edge a'-b' matching (a, b) direction
        ia = vs0.index(a)
        if vs0[(ia + 1) % 3] == b:
            new0 = (a, d, c)
            new1 = (d, b, c)
        else:
            new0 = (a, c, d)
            new1 = (c, b, d)
        if self.tri_area(new0) <= self.area_floor or self.tri_area(new1) <= self.area_floor:
            return False
        q_old = min(self.quality(vs0), self.quality(vs1))
        q_new = min(self.quality(new0), self.quality(new1))
        if q_new <= q_old + 1e-3:
            return False
        self._remove_tri(t0)
        self._remove_tri(t1)
        self._add_tri(new0)
        self._add_tri(new1)
        return True

    def smooth_pass(self, relax=0.4):
        bverts = self._bverts()
        moved = 0
        for v in sorted(self.v2t.keys()):
            if v in bverts or not self.v2t[v]:
                continue
            nbrs = sorted(self._vertex_neighbors(v))
            if not nbrs:
                continue
            target = np.zeros(2)
            for u in nbrs:
                d = self.verts[v] - self.verts[u]
                l = self.edge_length(v, u)
                target += self.verts[u] + (d / l if l > 1e-30 else d)
            target /= len(nbrs)
            new = self.verts[v] + relax * (target - self.verts[v])
            old = self.verts[v]
            old_q = min(self.quality(self.tris[t]) for t in self.v2t[v])
            self.verts[v] = new
            ok = all(self.tri_area(self.tris[t]) > self.area_floor for t in self.v2t[v])
            if ok:
                self.logm[v] = self.bg.log_at(new)
                new_q = min(self.quality(self.tris[t]) for t in self.v2t[v])
                ok = new_q >= old_q - 1e-12
            if not ok:
                self.verts[v] = old
                self.logm[v] = self.bg.log_at(old)
            else:
                moved += 1
        return moved

    # -- export ---------------------------------------------------------------

    def snapshot(self):
        used = sorted({v for vs in self.tris.values() for v in vs})
        remap = {v: i for i, v in enumerate(used)}
        verts = np.array([self.verts[v] for v in used])
        tris = np.array([[remap[v] for v in self.tris[t]] for t in sorted(self.tris)])
        btags = {(remap[a], remap[b]): tag for (a, b), tag in self.btag.items()
                 if a in remap and b in remap}
        return Triangulation(verts, tris, boundary_tags=btags)


# ---------------------------------------------------------------------------
# Driver loop
# ---------------------------------------------------------------------------

def remesh_internal(tri: Triangulation, vertex_metrics, max_sweeps: int = 20,
                    band=(BAND_LO, BAND_HI), target_frac: float = 0.9):
    """Adapt the mesh toward unit metric edge lengths.

    Returns (new Triangulation, RemeshReport).  The metric field is queried
    from the input mesh throughout, so the result does not depend on the
    operation history.
    """
    lo, hi = band
    bg = BackgroundMetric(tri, vertex_metrics)
    em = _EditMesh(tri, bg)

    def in_band_fraction():
        _, lengths = em.all_edge_lengths()
        if len(lengths) == 0:
            return 1.0
        return float(np.mean((lengths >= lo) & (lengths <= hi)))

    best = (in_band_fraction(), em.snapshot())
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        ops = 0

        keys, lengths = em.all_edge_lengths()
        order = np.argsort(-lengths, kind="stable")
        for i in order:
            if lengths[i] <= hi:
                break
            a, b = keys[i]
            if em._key(a, b) in em.e2t and em.edge_length(a, b) > hi:
                ops += em.split_edge(a, b)

        keys, lengths = em.all_edge_lengths()
        order = np.argsort(lengths, kind="stable")
        for i in order:
            if lengths[i] >= lo:
                break
            a, b = keys[i]
            if em._key(a, b) in em.e2t and em.edge_length(a, b) < lo:
                ops += em.collapse_edge(a, b, hi)

        for key in sorted(em.e2t.keys()):
            if key in em.e2t:
                ops += em.flip_edge(*key)

        ops += em.smooth_pass()
        ops += em.smooth_pass()

        frac = in_band_fraction()
        if frac > best[0]:
            best = (frac, em.snapshot())
        if frac >= target_frac:
            return em.snapshot(), RemeshReport(sweeps=sweeps, in_band=frac,
                                               converged=True)
        if ops == 0:
            break

    frac = in_band_fraction()
    if frac >= best[0]:
        return em.snapshot(), RemeshReport(
            sweeps=sweeps, in_band=frac, converged=frac >= target_frac,
            warning="" if frac >= target_frac else "band target not reached")
    return best[1], RemeshReport(sweeps=sweeps, in_band=best[0], converged=False,
                                 warning="no progress; returning best sweep")


def transfer_orders(old_mesh: Triangulation, p_opt, new_mesh: Triangulation):
    """Per-element orders on the new mesh: each new element inherits the
    order of the old element containing its barycenter (nearest-element
    fallback outside the old mesh)."""
    p_opt = np.asarray(p_opt)
    locator = PointLocator(old_mesh)
    out = np.empty(new_mesh.n_triangles, dtype=np.int64)
    for k, b in enumerate(new_mesh.barycenters()):
        kk, _ = locator.locate_or_nearest(b)
        out[k] = p_opt[kk]
    return out
