"""Continuous piecewise-affine functions on a triangulation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import OutsideDomain, SchemaError, UnsupportedDimension
from .geometry import Triangulation


@dataclass(frozen=True)
class SimplexGradient:
    grad: np.ndarray
    norm2: float


class CpaFunction:
    """Vertex values interpolated affinely on each simplex.

    ``epsilon`` is the constant value assigned outside the triangulation by
    :meth:`evaluate_extended`.
    """

    def __init__(self, tri: Triangulation, values, epsilon: float = 0.1, norm: str = "euclidean"):
        values = np.array(values, dtype=float).ravel()
        if values.shape[0] != tri.n_vertices:
            raise ValueError(f"expected {tri.n_vertices} vertex values, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("vertex values must be finite")
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        if norm not in ("euclidean", "max"):
            raise ValueError("norm must be 'euclidean' or 'max'")
        values.flags.writeable = False
        self.tri = tri
        self.values = values
        self.epsilon = float(epsilon)
        self.norm = norm

    def with_values(self, values) -> "CpaFunction":
        return CpaFunction(self.tri, values, self.epsilon, self.norm)

    # -- gradients -------------------------------------------------------------

    @cached_property
    def gradients(self) -> np.ndarray:
        """(m_T, n) array of per-simplex gradients X_i^{-1} (W_j - W_0)."""
        w = self.values[self.tri.simplices]
        return np.einsum("mjk,mk->mj", self.tri._inv, w[:, 1:] - w[:, :1])

    def gradient(self, i: int) -> SimplexGradient:
        inv = self.tri.inverse(i)
        w = self.values[self.tri.simplices[i]]
        g = inv @ (w[1:] - w[0])
        return SimplexGradient(g, float(self._norm(g)))

    def _norm(self, g):
        if self.norm == "max":
            return np.max(np.abs(g), axis=-1)
        return np.linalg.norm(g, axis=-1)

    def gradient_norms(self) -> np.ndarray:
        return self._norm(self.gradients)

    def gradient_norm_bound(self) -> float:
        if self.tri.n_simplices == 0:
            return 0.0
        return float(np.max(self.gradient_norms()))

    # -- evaluation ------------------------------------------------------------

    def evaluate_many(self, points, extended: bool = True) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        idx = self.tri.locate_many(points)
        out = np.full(points.shape[0], self.epsilon)
        hit = idx >= 0
        if not extended and not np.all(hit):
            bad = int(np.argmin(hit))
            raise OutsideDomain(f"point {points[bad].tolist()} lies outside the triangulation")
        if np.any(hit):
            simp = self.tri.simplices[idx[hit]]
            pts = points[hit]
            lam = self.tri.barycentric_many(idx[hit], pts)
            vals = np.einsum("qj,qj->q", lam, self.values[simp])
            # a query that coincides with a vertex returns the stored value bit-exactly
            same = np.all(self.tri.vertices[simp] == pts[:, None, :], axis=2)
            q, j = np.nonzero(same)
            vals[q] = self.values[simp[q, j]]
            out[hit] = vals
        return out

    def evaluate(self, x) -> float:
        return float(self.evaluate_many(np.asarray(x, dtype=float)[None, :], extended=False)[0])

    def evaluate_extended(self, x) -> float:
        return float(self.evaluate_many(np.asarray(x, dtype=float)[None, :], extended=True)[0])

    __call__ = evaluate_extended

    # -- level sets (2-D) --------------------------------------------------------

    def _require_2d(self):
        if self.tri.dim != 2:
            raise UnsupportedDimension("level-set geometry is implemented for 2-D only")

    def sign_changing(self) -> np.ndarray:
        w = self.values[self.tri.simplices]
        return np.any(w < 0, axis=1) & np.any(w > 0, axis=1)

    def zero_level_set(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Segments of {W = 0}, one per sign-changing simplex."""
        self._require_2d()
        V, W = self.tri.vertices, self.values
        segments = []
        for i in np.flatnonzero(self.sign_changing()):
            simplex = self.tri.simplices[i].tolist()
            pts = []
            for v in simplex:
                if W[v] == 0.0:
                    pts.append(V[v].copy())
            for a, b in ((0, 1), (1, 2), (2, 0)):
                p, q = sorted((simplex[a], simplex[b]))
                if (W[p] < 0 < W[q]) or (W[q] < 0 < W[p]):
                    t = W[p] / (W[p] - W[q])
                    pts.append(V[p] + t * (V[q] - V[p]))
            if len(pts) == 2:
                segments.append((pts[0], pts[1]))
        return segments

    def _clipped_areas(self) -> tuple[np.ndarray, np.ndarray]:
        self._require_2d()
        V, W = self.tri.vertices, self.values
        below = np.zeros(self.tri.n_simplices)
        above = np.zeros(self.tri.n_simplices)
        for i, simplex in enumerate(self.tri.simplices.tolist()):
            poly_lo, poly_hi = [], []
            for a in range(3):
                p, q = simplex[a], simplex[(a + 1) % 3]
                wp, wq = W[p], W[q]
                if wp <= 0:
                    poly_lo.append(V[p])
                if wp >= 0:
                    poly_hi.append(V[p])
                if (wp < 0 < wq) or (wq < 0 < wp):
                    cross = V[p] + (wp / (wp - wq)) * (V[q] - V[p])
                    poly_lo.append(cross)
                    poly_hi.append(cross)
            below[i] = _polygon_area(poly_lo)
            above[i] = _polygon_area(poly_hi)
        return below, above

    def sublevel_region_area(self) -> float:
        """Area of {x in T : W(x) <= 0}."""
        return float(self._clipped_areas()[0].sum())

    def superlevel_region_area(self) -> float:
        return float(self._clipped_areas()[1].sum())

    # -- export ------------------------------------------------------------------

    def to_csv(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "w_values.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex_id", "w"])
            for i, v in enumerate(self.values.tolist()):
                w.writerow([i, repr(v)])
        n = self.tri.dim
        grads = self.gradients
        norms = self.gradient_norms()
        with open(directory / "gradients.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["simplex_id"] + [f"g{k + 1}" for k in range(n)] + ["norm"])
            for i in range(self.tri.n_simplices):
                w.writerow([i] + [repr(float(g)) for g in grads[i]] + [repr(float(norms[i]))])
        if n == 2:
            write_boundary_csv(directory / "boundary.csv", self.zero_level_set())


def _polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def write_boundary_csv(path, segments) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "x1_start", "x2_start", "x1_end", "x2_end"])
        for k, (p, q) in enumerate(segments):
            w.writerow([k, repr(float(p[0])), repr(float(p[1])), repr(float(q[0])), repr(float(q[1]))])


def read_boundary_csv(path) -> list[tuple[np.ndarray, np.ndarray]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [(np.array([float(r[1]), float(r[2])]), np.array([float(r[3]), float(r[4])])) for r in rows]


def read_w_values(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["vertex_id", "w"]:
        raise SchemaError(f"{path}: bad header")
    return np.array([float(r[1]) for r in rows[1:]])


def gradient(f: CpaFunction, i: int) -> SimplexGradient:
    return f.gradient(i)


def evaluate(f: CpaFunction, x) -> float:
    return f.evaluate(x)


def evaluate_extended(f: CpaFunction, x) -> float:
    return f.evaluate_extended(x)


def gradient_norm_bound(f: CpaFunction) -> float:
    return f.gradient_norm_bound()


def zero_level_set(f: CpaFunction):
    return f.zero_level_set()


def sublevel_region_area(f: CpaFunction) -> float:
    return f.sublevel_region_area()


def affine_weights(tri: Triangulation, idx: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vertex ids and barycentric weights expressing W(points) linearly in vertex values."""
    idx = np.asarray(idx, dtype=np.int64)
    lam = tri.barycentric_many(idx, points)
    return tri.simplices[idx], lam


def gradient_operator(tri: Triangulation) -> np.ndarray:
    """(m_T, n, n+1) coefficients: grad_i = sum_j D[i, :, j] * W[simplex_i[j]]."""
    inv = tri._inv
    D = np.zeros((tri.n_simplices, tri.dim, tri.dim + 1))
    D[:, :, 1:] = inv
    D[:, :, 0] = -inv.sum(axis=2)
    return D

