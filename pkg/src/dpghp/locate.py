"""Point location in a triangulation via a uniform bucket grid."""

from __future__ import annotations

import numpy as np


class PointLocator:
    """Locate points in a triangulation.

    locate returns (triangle id, barycentric coordinates); points outside
    the mesh give (-1, None).  nearest_element falls back to the triangle
    with the closest barycenter.
    """

    def __init__(self, tri, resolution=None):
        self.tri = tri
        v = tri.vertices
        self.lo = v.min(axis=0)
        self.hi = v.max(axis=0)
        span = np.maximum(self.hi - self.lo, 1e-300)
        if resolution is None:
            resolution = max(4, int(np.sqrt(tri.n_triangles)))
        self.res = resolution
        self.cell = span / resolution
        self.buckets = {}
        corners = v[tri.triangles]
        los = corners.min(axis=1)
        his = corners.max(axis=1)
        for k in range(tri.n_triangles):
            i0, j0 = self._cell_of(los[k])
            i1, j1 = self._cell_of(his[k])
            for i in range(i0, i1 + 1):
                for j in range(j0, j1 + 1):
                    self.buckets.setdefault((i, j), []).append(k)
        self._bary = tri.barycenters()

    def _cell_of(self, pt):
        ij = np.floor((pt - self.lo) / self.cell).astype(int)
        return (min(max(ij[0], 0), self.res - 1), min(max(ij[1], 0), self.res - 1))

    def locate(self, pt, tol=1e-10):
        pt = np.asarray(pt, dtype=float)
        cand = self.buckets.get(self._cell_of(pt), ())
        tris = self.tri.triangles
        verts = self.tri.vertices
        for k in cand:
            a, b, c = verts[tris[k]]
            det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
            l1 = ((pt[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (pt[1] - a[1])) / det
            l2 = ((b[0] - a[0]) * (pt[1] - a[1]) - (pt[0] - a[0]) * (b[1] - a[1])) / det
            l0 = 1.0 - l1 - l2
            if l0 >= -tol and l1 >= -tol and l2 >= -tol:
                return int(k), np.array([l0, l1, l2])
        return -1, None

    def locate_many(self, pts, tol=1e-10):
        ks = np.empty(len(pts), dtype=np.int64)
        lams = np.empty((len(pts), 3))
        for i, pt in enumerate(pts):
            k, lam = self.locate(pt, tol)
            ks[i] = k
            lams[i] = lam if lam is not None else np.nan
        return ks, lams

    def nearest_element(self, pt):
        d = np.sum((self._bary - np.asarray(pt, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d))

    def locate_or_nearest(self, pt, tol=1e-10):
        k, lam = self.locate(pt, tol)
        if k >= 0:
            return k, lam
        k = self.nearest_element(pt)
        a, b, c = self.tri.vertices[self.tri.triangles[k]]
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        l1 = ((pt[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (pt[1] - a[1])) / det
        l2 = ((b[0] - a[0]) * (pt[1] - a[1]) - (pt[0] - a[0]) * (b[1] - a[1])) / det
        lam = np.clip(np.array([1.0 - l1 - l2, l1, l2]), 0.0, 1.0)
        lam /= lam.sum()
        return k, lam
