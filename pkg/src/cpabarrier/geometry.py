"""Triangulations over sampled states.

Construction uses the Bowyer-Watson incremental algorithm with a super-triangle
bootstrap.  Orientation and in-circle predicates are evaluated in floating
point and re-evaluated exactly with rationals whenever the floating-point sign
is not certified, so grids full of cocircular quadruples triangulate
deterministically (strict in-circle test, points inserted in index order).
"""
from __future__ import annotations

import csv
import itertools
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import DegenerateInput, SchemaError, SingularSimplex, UnsupportedDimension

BARY_TOL = 1e-9
SINGULAR_COND = 1e12

# ---------------------------------------------------------------------------
# Robust predicates
# ---------------------------------------------------------------------------

_ORIENT_BOUND = 1e-14
_INCIRCLE_BOUND = 1e-13


def _sign(v) -> int:
    return int(v > 0) - int(v < 0)


def orient2d(a, b, c) -> int:
    """Sign of the signed area of triangle (a, b, c): +1 for counter-clockwise."""
    acx, acy = a[0] - c[0], a[1] - c[1]
    bcx, bcy = b[0] - c[0], b[1] - c[1]
    left, right = acx * bcy, acy * bcx
    det = left - right
    if abs(det) > _ORIENT_BOUND * (abs(left) + abs(right)):
        return _sign(det)
    fa = [Fraction(float(v)) for v in a[:2]]
    fb = [Fraction(float(v)) for v in b[:2]]
    fc = [Fraction(float(v)) for v in c[:2]]
    det = (fa[0] - fc[0]) * (fb[1] - fc[1]) - (fa[1] - fc[1]) * (fb[0] - fc[0])
    return _sign(det)


def incircle(a, b, c, d) -> int:
    """+1 if d lies strictly inside the circumcircle of CCW triangle (a, b, c)."""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    t1 = bdx * cdy - cdx * bdy
    t2 = cdx * ady - adx * cdy
    t3 = adx * bdy - bdx * ady
    det = alift * t1 + blift * t2 + clift * t3
    perm = (
        alift * (abs(bdx * cdy) + abs(cdx * bdy))
        + blift * (abs(cdx * ady) + abs(adx * cdy))
        + clift * (abs(adx * bdy) + abs(bdx * ady))
    )
    if abs(det) > _INCIRCLE_BOUND * perm:
        return _sign(det)
    fa, fb, fc, fd = ([Fraction(float(v)) for v in p[:2]] for p in (a, b, c, d))
    adx, ady = fa[0] - fd[0], fa[1] - fd[1]
    bdx, bdy = fb[0] - fd[0], fb[1] - fd[1]
    cdx, cdy = fc[0] - fd[0], fc[1] - fd[1]
    det = (
        (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
        + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady)
    )
    return _sign(det)


# ---------------------------------------------------------------------------
# Triangulation value type
# ---------------------------------------------------------------------------


class Bisection(NamedTuple):
    triangulation: "Triangulation"
    vertex_id: int
    midpoint: np.ndarray
    edge: tuple[int, int]
    # parents[k] is the index (in the old mesh) of the simplex new simplex k came from
    parents: np.ndarray


class Triangulation:
    """Vertices, simplices (vertex-index rows) and derived per-simplex data.

    Instances are treated as immutable; refinement returns a new object.
    Simplex rows are positively oriented in 2-D.
    """

    def __init__(self, vertices, simplices, tol: float = BARY_TOL):
        vertices = np.array(vertices, dtype=float)
        simplices = np.array(simplices, dtype=np.int64)
        if vertices.ndim != 2:
            raise ValueError("vertices must be a 2-D array")
        n = vertices.shape[1]
        if simplices.ndim != 2 or simplices.shape[1] != n + 1:
            raise ValueError(f"simplices must have {n + 1} vertex ids per row")
        if simplices.size and (simplices.min() < 0 or simplices.max() >= len(vertices)):
            raise ValueError("simplex references a missing vertex")
        if not np.all(np.isfinite(vertices)):
            raise ValueError("vertex coordinates must be finite")
        vertices.flags.writeable = False
        simplices.flags.writeable = False
        self.vertices = vertices
        self.simplices = simplices
        self.tol = tol

    def __repr__(self) -> str:
        return f"Triangulation(n_vertices={self.n_vertices}, n_simplices={self.n_simplices}, dim={self.dim})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Triangulation):
            return NotImplemented
        return np.array_equal(self.vertices, other.vertices) and np.array_equal(self.simplices, other.simplices)

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_simplices(self) -> int:
        return self.simplices.shape[0]

    # -- per-simplex linear algebra ------------------------------------------

    @cached_property
    def _origin(self) -> np.ndarray:
        return self.vertices[self.simplices[:, 0]]

    @cached_property
    def _diff(self) -> np.ndarray:
        # row j of X_i is x_{i,j} - x_{i,0}
        return self.vertices[self.simplices[:, 1:]] - self._origin[:, None, :]

    @cached_property
    def _cond(self) -> np.ndarray:
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(self._diff)
        return np.where(np.isfinite(cond), cond, np.inf)

    @cached_property
    def _inv(self) -> np.ndarray:
        inv = np.full_like(self._diff, np.nan)
        ok = self._cond <= SINGULAR_COND
        if np.any(ok):
            inv[ok] = np.linalg.inv(self._diff[ok])
        return inv

    def _check_simplex(self, i: int) -> None:
        if not 0 <= i < self.n_simplices:
            raise IndexError(f"simplex {i} does not exist")
        if self._cond[i] > SINGULAR_COND:
            raise SingularSimplex(f"simplex {i} is numerically singular (cond={self._cond[i]:.3g})")

    def inverse(self, i: int) -> np.ndarray:
        """Cached inverse of the vertex-difference matrix of simplex ``i``."""
        self._check_simplex(i)
        return self._inv[i]

    def signed_volumes(self) -> np.ndarray:
        from math import factorial

        return np.linalg.det(self._diff) / factorial(self.dim)

    def volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes())

    @cached_property
    def neighbors(self) -> np.ndarray:
        """neighbors[i, j]: simplex sharing the facet opposite vertex j of simplex i, or -1."""
        m, k = self.simplices.shape
        out = np.full((m, k), -1, dtype=np.int64)
        owner: dict[tuple, tuple[int, int]] = {}
        for i, simplex in enumerate(self.simplices.tolist()):
            for j in range(k):
                facet = tuple(sorted(simplex[:j] + simplex[j + 1 :]))
                hit = owner.pop(facet, None)
                if hit is None:
                    owner[facet] = (i, j)
                else:
                    out[i, j] = hit[0]
                    out[hit[0], hit[1]] = i
        return out

    def edges(self) -> set[tuple[int, int]]:
        result = set()
        for simplex in self.simplices.tolist():
            for a, b in itertools.combinations(simplex, 2):
                result.add((min(a, b), max(a, b)))
        return result

    def vertex_simplices(self) -> list[list[int]]:
        incident: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for i, simplex in enumerate(self.simplices.tolist()):
            for v in simplex:
                incident[v].append(i)
        return incident

    # -- queries ---------------------------------------------------------------

    def barycentric(self, i: int, x) -> np.ndarray:
        self._check_simplex(i)
        x = np.asarray(x, dtype=float)
        rest = self._inv[i].T @ (x - self._origin[i])
        return np.concatenate(([1.0 - rest.sum()], rest))

    def barycentric_many(self, idx, points) -> np.ndarray:
        """Barycentric coordinates of ``points[q]`` in simplex ``idx[q]``."""
        idx = np.asarray(idx, dtype=np.int64)
        points = np.asarray(points, dtype=float)
        d = points - self._origin[idx]
        rest = np.einsum("qkj,qk->qj", self._inv[idx], d)
        return np.concatenate((1.0 - rest.sum(axis=1, keepdims=True), rest), axis=1)

    def locate_many(self, points, chunk: int = 4_000_000) -> np.ndarray:
        """Lowest-index containing simplex for each point, -1 when outside."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        q = points.shape[0]
        out = np.full(q, -1, dtype=np.int64)
        m = self.n_simplices
        if q == 0 or m == 0:
            return out
        inv, origin = self._inv, self._origin
        lo = self.vertices[self.simplices].min(axis=1) - self.tol
        hi = self.vertices[self.simplices].max(axis=1) + self.tol
        step = max(1, chunk // max(m, 1))
        for start in range(0, q, step):
            p = points[start : start + step]
            in_box = np.all((p[:, None, :] >= lo[None]) & (p[:, None, :] <= hi[None]), axis=2)
            rows, cols = np.nonzero(in_box)
            if rows.size == 0:
                continue
            d = p[rows] - origin[cols]
            rest = np.einsum("rkj,rk->rj", inv[cols], d)
            lam0 = 1.0 - rest.sum(axis=1)
            with np.errstate(invalid="ignore"):
                inside = (lam0 >= -self.tol) & np.all(rest >= -self.tol, axis=1)
            rows, cols = rows[inside], cols[inside]
            # rows come out sorted, cols ascending within a row: keep first hit
            first = np.ones(rows.size, dtype=bool)
            first[1:] = rows[1:] != rows[:-1]
            out[start + rows[first]] = cols[first]
        return out

    def locate(self, x) -> Optional[int]:
        i = int(self.locate_many(np.asarray(x, dtype=float)[None, :])[0])
        return None if i < 0 else i

    def contains(self, points) -> np.ndarray:
        return self.locate_many(points) >= 0

    def simplex_diameter(self, i: int, inputs=None) -> float:
        """Max pairwise distance between (optionally input-stacked) vertices of simplex ``i``."""
        pts = self.vertices[self.simplices[i]]
        if inputs is not None:
            inputs = np.asarray(inputs, dtype=float).reshape(len(pts), -1)
            pts = np.hstack([pts, inputs])
        best = 0.0
        for r, s in itertools.combinations(range(len(pts)), 2):
            best = max(best, float(np.linalg.norm(pts[r] - pts[s])))
        return best

    def diameters(self) -> np.ndarray:
        pts = self.vertices[self.simplices]
        k = pts.shape[1]
        best = np.zeros(self.n_simplices)
        for r, s in itertools.combinations(range(k), 2):
            best = np.maximum(best, np.linalg.norm(pts[:, r] - pts[:, s], axis=1))
        return best

    def longest_edge(self, i: int) -> tuple[int, int]:
        simplex = self.simplices[i].tolist()
        best, best_len = None, -1.0
        for a, b in sorted((min(a, b), max(a, b)) for a, b in itertools.combinations(simplex, 2)):
            length = float(np.linalg.norm(self.vertices[a] - self.vertices[b]))
            # strictly greater keeps the lexicographically smallest edge on ties
            if length > best_len * (1 + 1e-12):
                best, best_len = (a, b), length
        return best

    # -- refinement ------------------------------------------------------------

    def bisect_edge(self, edge: tuple[int, int]) -> Bisection:
        """Insert the midpoint of ``edge`` and split every simplex containing it."""
        a, b = int(edge[0]), int(edge[1])
        mid = 0.5 * (self.vertices[a] + self.vertices[b])
        vid = self.n_vertices
        new_vertices = np.vstack([self.vertices, mid])
        simplices = self.simplices.tolist()
        parents = list(range(len(simplices)))
        for i in range(len(simplices)):
            s = simplices[i]
            if a in s and b in s:
                first = [vid if v == b else v for v in s]
                second = [vid if v == a else v for v in s]
                simplices[i] = first
                simplices.append(second)
                parents.append(i)
        if len(parents) == self.n_simplices:
            raise ValueError(f"edge {edge} is not an edge of the triangulation")
        tri = Triangulation(new_vertices, simplices, tol=self.tol)
        return Bisection(tri, vid, mid, (min(a, b), max(a, b)), np.asarray(parents, dtype=np.int64))

    def bisect_longest_edge(self, i: int):
        """Bisect the longest edge of simplex ``i``; returns (tri, vertex id, midpoint, edge)."""
        res = self.bisect_edge(self.longest_edge(i))
        return res.triangulation, res.vertex_id, res.midpoint, res.edge

    # -- export ----------------------------------------------------------------

    def to_csv(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        n = self.dim
        with open(directory / "vertices.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id"] + [f"x{k + 1}" for k in range(n)])
            for i, row in enumerate(self.vertices.tolist()):
                w.writerow([i] + [repr(v) for v in row])
        with open(directory / "simplices.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id"] + [f"v{k}" for k in range(n + 1)])
            for i, row in enumerate(self.simplices.tolist()):
                w.writerow([i] + row)

    @classmethod
    def from_csv(cls, directory) -> "Triangulation":
        directory = Path(directory)
        try:
            vertices = _read_indexed_rows(directory / "vertices.csv", float)
            simplices = _read_indexed_rows(directory / "simplices.csv", int)
        except FileNotFoundError as exc:
            raise SchemaError(f"missing triangulation file: {exc.filename}") from exc
        return cls(vertices, simplices)


def _read_indexed_rows(path: Path, kind) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path.name}: missing header")
    width = len(rows[0])
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise SchemaError(f"{path.name} line {lineno}: expected {width} columns, got {len(row)}")
        try:
            if int(row[0]) != lineno - 2:
                raise SchemaError(f"{path.name} line {lineno}: ids must be consecutive from 0")
            out.append([kind(v) for v in row[1:]])
        except ValueError as exc:
            raise SchemaError(f"{path.name} line {lineno}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def delaunay_triangulate(points, tol: float = BARY_TOL) -> Triangulation:
    """Delaunay triangulation of a 2-D point set; vertex ``k`` is ``points[k]``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise DegenerateInput("points must be an (N, n) array")
    n_pts, dim = pts.shape
    if dim > 3:
        raise UnsupportedDimension(f"triangulation in {dim} dimensions is not supported")
    if dim != 2:
        raise UnsupportedDimension("only 2-D triangulation is implemented")
    if n_pts < 3:
        raise DegenerateInput("need at least 3 points")
    if not np.all(np.isfinite(pts)):
        raise DegenerateInput("points must be finite")
    if len(np.unique(pts, axis=0)) != n_pts:
        raise DegenerateInput("duplicate points")
    coords0 = [tuple(p) for p in pts.tolist()]
    if all(orient2d(coords0[0], coords0[1], p) == 0 for p in coords0[2:]):
        raise DegenerateInput("all points are collinear")

    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = 0.5 * (lo + hi)
    span = float(max(hi - lo))
    big = span * 2.0**16
    coords = [tuple(p) for p in pts.tolist()]
    coords += [
        (center[0] - 20 * big, center[1] - 10 * big),
        (center[0] + 20 * big, center[1] - 10 * big),
        (center[0], center[1] + 20 * big),
    ]
    sup = (n_pts, n_pts + 1, n_pts + 2)

    tris: dict[int, tuple[int, int, int]] = {0: sup}
    owner: dict[tuple[int, int], int] = {}
    for e in _tri_edges(sup):
        owner[e] = 0
    next_id = 1
    last = 0

    def walk(p, start):
        t = start if start in tris else next(iter(tris))
        for _ in range(4 * len(tris) + 16):
            a, b, c = tris[t]
            for u, v in ((a, b), (b, c), (c, a)):
                if orient2d(coords[u], coords[v], p) < 0:
                    t = owner[(v, u)]
                    break
            else:
                return t
        for t, (a, b, c) in tris.items():  # pragma: no cover - walk fallback
            if all(orient2d(coords[u], coords[v], p) >= 0 for u, v in ((a, b), (b, c), (c, a))):
                return t
        raise RuntimeError("point location failed")  # pragma: no cover

    for k in range(n_pts):
        p = coords[k]
        t0 = walk(p, last)
        bad = {t0}
        stack = [t0]
        while stack:
            t = stack.pop()
            for u, v in _tri_edges(tris[t]):
                nb = owner.get((v, u))
                if nb is not None and nb not in bad:
                    a, b, c = tris[nb]
                    if incircle(coords[a], coords[b], coords[c], p) > 0:
                        bad.add(nb)
                        stack.append(nb)
        boundary = [(u, v) for t in bad for (u, v) in _tri_edges(tris[t]) if owner.get((v, u)) not in bad]
        for t in bad:
            for e in _tri_edges(tris.pop(t)):
                if owner.get(e) == t:
                    del owner[e]
        for u, v in boundary:
            tri = (u, v, k)
            tris[next_id] = tri
            for e in _tri_edges(tri):
                owner[e] = next_id
            last = next_id
            next_id += 1

    final = [t for t in tris.values() if max(t) < n_pts]
    final = _fill_boundary_pockets(final, coords)
    rows = []
    for t in final:
        r = t.index(min(t))
        rows.append(t[r:] + t[:r])
    rows.sort()
    return Triangulation(pts, rows, tol=tol)


def _tri_edges(t):
    a, b, c = t
    return ((a, b), (b, c), (c, a))


def _fill_boundary_pockets(tris: list, coords: list) -> list:
    """Close concavities left on the hull after removing super-triangle simplices."""
    tris = list(tris)
    edges = {e for t in tris for e in _tri_edges(t)}
    nxt = {u: v for (u, v) in edges if (v, u) not in edges}
    prv = {v: u for u, v in nxt.items()}
    changed = True
    while changed:
        changed = False
        for b in list(nxt):
            if b not in nxt:
                continue
            a, c = prv[b], nxt[b]
            if a == c or orient2d(coords[a], coords[b], coords[c]) >= 0:
                continue
            tri = (b, a, c)
            blocked = False
            for v in nxt:
                if v in tri:
                    continue
                p = coords[v]
                if (
                    orient2d(coords[b], coords[a], p) >= 0
                    and orient2d(coords[a], coords[c], p) >= 0
                    and orient2d(coords[c], coords[b], p) >= 0
                ):
                    blocked = True
                    break
            if blocked:
                continue
            tris.append(tri)
            del nxt[b], prv[b]
            nxt[a] = c
            prv[c] = a
            changed = True
    return tris


# ---------------------------------------------------------------------------
# Function-style API
# ---------------------------------------------------------------------------


def locate(tri: Triangulation, x) -> Optional[int]:
    return tri.locate(x)


def barycentric(tri: Triangulation, i: int, x) -> np.ndarray:
    return tri.barycentric(i, x)


def simplex_diameter(tri: Triangulation, i: int, inputs: Optional[Sequence] = None) -> float:
    return tri.simplex_diameter(i, inputs)


def bisect_longest_edge(tri: Triangulation, i: int):
    return tri.bisect_longest_edge(i)


def grid_points(lo, hi, spacing) -> np.ndarray:
    """Regular grid including the box corners; ``round(width/spacing) + 1`` points per axis."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), lo.shape)
    axes = []
    for a, b, h in zip(lo, hi, spacing):
        if h <= 0:
            raise ValueError("spacing must be positive")
        if b < a:
            raise ValueError("empty box")
        count = int(round((b - a) / h)) + 1
        axes.append(a + (b - a) * np.arange(count) / max(count - 1, 1) if count > 1 else np.array([a]))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)
