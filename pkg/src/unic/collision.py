"""Body collision handling for garment vertices.

Detection is against the body's vertex cloud: each garment vertex pairs
with its nearest body vertex (exact, lowest index on ties) found through a
uniform hash grid. A vertex whose offset from that body vertex points
against the body normal is intersected and gets dragged to a fixed clearance
along the normal. The drag is a constant shift, so gradients pass through
unchanged.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionError

_RING_CACHE = {}

# past this many rings the expansion costs more than scanning every point
_MAX_RINGS = 64


def _ring_offsets(k):
    """Integer cell offsets at Chebyshev distance exactly k."""
    if k in _RING_CACHE:
        return _RING_CACHE[k]
    if k == 0:
        out = np.zeros((1, 3), dtype=np.int64)
    else:
        rng = np.arange(-k, k + 1)
        grid = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"),
                        axis=-1).reshape(-1, 3)
        out = grid[np.abs(grid).max(axis=1) == k]
    _RING_CACHE[k] = out
    return out


class HashGrid:
    """Uniform grid over a point cloud with exact nearest-point queries.

    Points are bucketed by cell, keys sorted once; a query expands Chebyshev
    rings outward and stops when the best hit is provably closer than any
    unvisited cell (best distance strictly under ring_index * cell_size).
    """

    def __init__(self, points, cell_size):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] == 0:
            raise DimensionError(f"hash grid needs (N, 3) points, got {points.shape}")
        if not cell_size > 0:
            raise DimensionError("hash grid cell size must be positive")
        self.points = points
        self.cell_size = float(cell_size)
        cells = np.floor(points / self.cell_size).astype(np.int64)
        self.min_cell = cells.min(axis=0)
        self.max_cell = cells.max(axis=0)
        self.dims = self.max_cell - self.min_cell + 1
        self.order = None
        self.sorted_keys = None
        rel = cells - self.min_cell
        keys = self._linearize(rel)
        self.order = np.argsort(keys, kind="stable")
        self.sorted_keys = keys[self.order]

    def _linearize(self, rel):
        return (rel[..., 0] * self.dims[1] + rel[..., 1]) * self.dims[2] \
            + rel[..., 2]

    def nearest(self, queries):
        """Index of the nearest stored point for each query row."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if q.shape[1] != 3:
            raise DimensionError(f"queries must be (M, 3), got {q.shape}")
        n = q.shape[0]
        best_d2 = np.full(n, np.inf)
        best_i = np.full(n, -1, dtype=np.int64)
        qcell = np.floor(q / self.cell_size).astype(np.int64)
        # rings below the box distance are empty, skip straight past them
        k0 = np.maximum(np.maximum(self.min_cell - qcell,
                                   qcell - self.max_cell), 0).max(axis=1)
        active = np.arange(n)
        k = int(k0.min()) if n else 0
        while active.size:
            if k > _MAX_RINGS:
                # sparse points or far-off queries keep widening the ring;
                # the dense scan is exact and bounded, so finish with it
                step = max(1, _BRUTE_PAIR_LIMIT // self.points.shape[0])
                for s in range(0, active.size, step):
                    sel = active[s:s + step]
                    best_i[sel] = brute_nearest(q[sel], self.points)
                break
            offs = _ring_offsets(k)
            cand = qcell[active, None, :] + offs[None, :, :]
            inb = np.all((cand >= self.min_cell) & (cand <= self.max_cell),
                         axis=2)
            aq, ac = np.nonzero(inb)
            if aq.size:
                keys = self._linearize(cand[aq, ac] - self.min_cell)
                lo = np.searchsorted(self.sorted_keys, keys, side="left")
                hi = np.searchsorted(self.sorted_keys, keys, side="right")
                counts = hi - lo
                occ = counts > 0
                aq, lo, counts = aq[occ], lo[occ], counts[occ]
                if aq.size:
                    total = int(counts.sum())
                    run_start = np.cumsum(counts) - counts
                    flat = np.repeat(lo, counts) \
                        + np.arange(total) - np.repeat(run_start, counts)
                    bidx = self.order[flat]
                    qidx = active[np.repeat(aq, counts)]
                    d2 = np.sum((q[qidx] - self.points[bidx]) ** 2, axis=1)
                    # lowest body index wins distance ties
                    o = np.lexsort((bidx, d2, qidx))
                    uniq, first = np.unique(qidx[o], return_index=True)
                    sel = o[first]
                    nd2, ni = d2[sel], bidx[sel]
                    cur_d2, cur_i = best_d2[uniq], best_i[uniq]
                    take = (nd2 < cur_d2) | ((nd2 == cur_d2) & (ni < cur_i))
                    best_d2[uniq[take]] = nd2[take]
                    best_i[uniq[take]] = ni[take]
            # strict inequality: an unvisited cell at ring >k is >= k*h away,
            # so an exact tie there is still possible when best == k*h
            done = np.sqrt(best_d2[active]) < k * self.cell_size
            active = active[~done]
            if active.size:
                k = max(k + 1, int(k0[active].min()))
        return best_i

    def nearest_with_distance(self, queries):
        idx = self.nearest(queries)
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        d = np.linalg.norm(q - self.points[idx], axis=1)
        return idx, d


def mean_edge_length(vertices, faces):
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]],
                            faces[:, [2, 0]]], axis=0)
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    return float(np.linalg.norm(
        vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1).mean())


class BodySnapshot:
    """Body surface sample for one frame: vertices with outward unit normals.

    cell_size defaults to twice the mean body edge length when faces are
    given; pass it explicitly for point clouds without connectivity.
    """

    def __init__(self, vertices, normals, faces=None, cell_size=None):
        vertices = np.asarray(vertices, dtype=np.float64)
        normals = np.asarray(normals, dtype=np.float64)
        if vertices.shape != normals.shape or vertices.ndim != 2 \
                or vertices.shape[1] != 3:
            raise DimensionError(
                f"body snapshot needs matching (B, 3) vertices and normals, "
                f"got {vertices.shape} and {normals.shape}")
        lengths = np.linalg.norm(normals, axis=1)
        if np.any(lengths < 1e-12):
            raise DimensionError("body normals must be nonzero")
        self.vertices = vertices
        self.normals = normals / lengths[:, None]
        if cell_size is None:
            if faces is None:
                raise DimensionError(
                    "cell_size required when no faces are given")
            cell_size = 2.0 * mean_edge_length(vertices, faces)
        self.cell_size = float(cell_size)
        self._grid = None

    @property
    def grid(self):
        if self._grid is None:
            self._grid = HashGrid(self.vertices, self.cell_size)
        return self._grid


def brute_nearest(queries, points):
    """Exact nearest index by full distance matrix; lowest index on ties.

    One GEMM via the |q-p|^2 = |q|^2 - 2 q.p + |p|^2 expansion, so it beats
    the grid whenever the pair count fits in memory.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    p = np.asarray(points, dtype=np.float64)
    d2 = (np.sum(q * q, axis=1)[:, None] - 2.0 * (q @ p.T)
          + np.sum(p * p, axis=1)[None, :])
    return np.argmin(d2, axis=1)


_BRUTE_PAIR_LIMIT = 6_000_000


def nearest_body_index(garment, body):
    """Nearest body vertex per garment row, routed by problem size."""
    garment = np.atleast_2d(np.asarray(garment, dtype=np.float64))
    if garment.shape[0] * body.vertices.shape[0] <= _BRUTE_PAIR_LIMIT:
        return brute_nearest(garment, body.vertices)
    return body.grid.nearest(garment)


def classify(garment, body):
    """Nearest body vertex per garment vertex and the intersect flags.

    A garment vertex is intersected when its offset from the nearest body
    vertex has non-positive dot product with that vertex normal.
    """
    garment = np.atleast_2d(np.asarray(garment, dtype=np.float64))
    idx = nearest_body_index(garment, body)
    offset = garment - body.vertices[idx]
    signed = np.sum(offset * body.normals[idx], axis=1)
    return idx, signed <= 0.0


@dataclass
class DragReport:
    num_intersected: int
    num_vertices: int
    max_push_distance: float

    @property
    def any(self):
        return self.num_intersected > 0


def resolve(garment, body, radius):
    """Drag intersected vertices to clearance `radius` along the normal.

    Returns the corrected garment and a DragReport. Untouched vertices pass
    through; dragged ones land exactly at body_vertex + radius * normal.
    """
    garment = np.asarray(garment)
    g64 = np.atleast_2d(np.asarray(garment, dtype=np.float64))
    idx, hit = classify(g64, body)
    out = g64.copy()
    max_push = 0.0
    if hit.any():
        targets = body.vertices[idx[hit]] + radius * body.normals[idx[hit]]
        max_push = float(np.linalg.norm(out[hit] - targets, axis=1).max())
        out[hit] = targets
    report = DragReport(int(hit.sum()), int(g64.shape[0]), max_push)
    return out.astype(garment.dtype, copy=False), report


def resolve_tensor(garment, body, radius, cache=None):
    """Tape variant: the drag is a detached shift, so d(out)/d(in) = I."""
    corrected, report = resolve(garment.data, body, radius)
    shift = (np.asarray(corrected, dtype=np.float64)
             - np.asarray(garment.data, dtype=np.float64))
    shift = shift.astype(garment.data.dtype)
    if cache is not None:
        shift = cache.take(shift)
    return nn.add(garment, nn.Tensor(shift.copy())), report


def intersection_ratio(garments, bodies, per_vertex=False):
    """Share of frames (default) or vertices with an intersection, percent."""
    frames_hit = 0
    verts_hit = 0
    verts_total = 0
    for g, body in zip(garments, bodies):
        _, hit = classify(g, body)
        frames_hit += int(hit.any())
        verts_hit += int(hit.sum())
        verts_total += int(hit.shape[0])
    n = len(garments)
    if n == 0:
        return 0.0
    if per_vertex:
        return 100.0 * verts_hit / max(1, verts_total)
    return 100.0 * frames_hit / n
