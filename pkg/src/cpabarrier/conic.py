"""Conic programs (linear rows, second-order and rotated cones) and an interior-point solver.

Programs are written against affine expressions in a flat variable vector and
compiled to the standard form

    minimize    c'x
    subject to  G x + s = h,   s in K = R_+^l x Q^{q_1} x ... x Q^{q_r}
                A x = b

which :func:`solve` handles with a homogeneous self-dual primal-dual method
(Nesterov-Todd scaling, Mehrotra predictor-corrector, sparse LU on the
reduced KKT system).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import NumericalBreakdown

Number = Union[int, float]


# ---------------------------------------------------------------------------
# affine expressions
# ---------------------------------------------------------------------------


class Affine:
    """Sparse affine scalar expression  sum_k coef[k] * x[idx[k]] + const."""

    __slots__ = ("idx", "coef", "const")

    def __init__(self, idx=(), coef=(), const: float = 0.0):
        self.idx = np.asarray(idx, dtype=np.int64).ravel()
        self.coef = np.asarray(coef, dtype=float).ravel()
        if self.idx.shape != self.coef.shape:
            raise ValueError("idx and coef must have equal length")
        self.const = float(const)

    @classmethod
    def var(cls, i: int, coef: float = 1.0) -> "Affine":
        return cls([i], [coef])

    @classmethod
    def constant(cls, c: float) -> "Affine":
        return cls((), (), c)

    @staticmethod
    def lift(e) -> "Affine":
        return e if isinstance(e, Affine) else Affine.constant(float(e))

    def __add__(self, other) -> "Affine":
        other = Affine.lift(other)
        return Affine(np.concatenate([self.idx, other.idx]), np.concatenate([self.coef, other.coef]),
                      self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return Affine(self.idx, -self.coef, -self.const)

    def __sub__(self, other) -> "Affine":
        return self + (-Affine.lift(other))

    def __rsub__(self, other) -> "Affine":
        return Affine.lift(other) + (-self)

    def __mul__(self, k: Number) -> "Affine":
        k = float(k)
        return Affine(self.idx, self.coef * k, self.const * k)

    __rmul__ = __mul__

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.dot(self.coef, x[self.idx]) + self.const) if self.idx.size else self.const

    def __repr__(self) -> str:
        terms = " + ".join(f"{c:g}*x{i}" for i, c in zip(self.idx.tolist(), self.coef.tolist()))
        return f"Affine({terms or '0'} + {self.const:g})"


# ---------------------------------------------------------------------------
# program container
# ---------------------------------------------------------------------------


@dataclass
class RotatedCone:
    """||v||^2 <= s * t with s, t >= 0."""

    s: Affine
    t: Affine
    v: list


@dataclass
class CompiledProgram:
    c: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    l: int
    q: list
    A: sp.csr_matrix
    b: np.ndarray


@dataclass
class ConeProgram:
    """Linear objective, affine rows and cone constraints over ``n_vars`` variables."""

    n_vars: int = 0
    objective: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)  # (Affine, sense) with sense "<=" (expr <= 0) or "==" (expr == 0)
    socs: list = field(default_factory=list)  # [t, v1, ..., vk]:  ||v|| <= t
    rotated: list = field(default_factory=list)
    names: dict = field(default_factory=dict)

    def add_variables(self, count: int, name: Optional[str] = None) -> np.ndarray:
        start = self.n_vars
        self.n_vars += int(count)
        ids = np.arange(start, self.n_vars)
        if name is not None:
            self.names[name] = ids
        return ids

    def add_objective(self, i: int, coef: float) -> None:
        self.objective[int(i)] = self.objective.get(int(i), 0.0) + float(coef)

    def _check(self, e: Affine) -> Affine:
        # index range and finiteness are validated in bulk by compile()
        return Affine.lift(e)

    def add_le(self, lhs, rhs=0.0) -> None:
        """lhs <= rhs."""
        self.rows.append((self._check(Affine.lift(lhs) - rhs), "<="))

    def add_ge(self, lhs, rhs=0.0) -> None:
        """lhs >= rhs."""
        self.rows.append((self._check(Affine.lift(rhs) - lhs), "<="))

    def add_eq(self, lhs, rhs=0.0) -> None:
        self.rows.append((self._check(Affine.lift(lhs) - rhs), "=="))

    def add_soc(self, t, v: Sequence) -> None:
        """||v||_2 <= t."""
        self.socs.append([self._check(t)] + [self._check(e) for e in v])

    def add_rotated_cone(self, s, t, v: Sequence) -> None:
        s, t = self._check(s), self._check(t)
        self.rotated.append(RotatedCone(s, t, [self._check(e) for e in v]))

    @property
    def n_cones(self) -> int:
        return len(self.socs) + len(self.rotated)

    # -- compilation -------------------------------------------------------------

    def cone_blocks(self) -> list:
        """All cones as plain second-order blocks [t, v...] (rotated cones transformed)."""
        blocks = list(self.socs)
        for rc in self.rotated:
            # ||v||^2 <= s t  <=>  ||(2v, s - t)|| <= s + t
            blocks.append([rc.s + rc.t, rc.s - rc.t] + [2.0 * e for e in rc.v])
        return blocks

    def compile(self) -> CompiledProgram:
        n = self.n_vars
        c = np.zeros(n)
        for i, v in self.objective.items():
            c[i] = v
        g_rows, g_cols, g_vals, h = [], [], [], []
        a_rows, a_cols, a_vals, b = [], [], [], []
        r = 0
        ra = 0
        for e, sense in self.rows:
            if sense == "<=":
                g_rows.append(np.full(e.idx.size, r))
                g_cols.append(e.idx)
                g_vals.append(e.coef)
                h.append(-e.const)
                r += 1
            else:
                a_rows.append(np.full(e.idx.size, ra))
                a_cols.append(e.idx)
                a_vals.append(e.coef)
                b.append(-e.const)
                ra += 1
        l = r
        q = []
        for block in self.cone_blocks():
            q.append(len(block))
            for e in block:
                # slack = e(x) = coef x + const  ->  G = -coef, h = const
                g_rows.append(np.full(e.idx.size, r))
                g_cols.append(e.idx)
                g_vals.append(-e.coef)
                h.append(e.const)
                r += 1

        def _mat(rows, cols, vals, m):
            if rows:
                rr, cc, vv = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
            else:
                rr = cc = np.zeros(0, dtype=np.int64)
                vv = np.zeros(0)
            if cc.size and (cc.min() < 0 or cc.max() >= n):
                raise IndexError("expression references a variable out of range")
            if not np.all(np.isfinite(vv)):
                raise ValueError("expression has non-finite coefficients")
            return sp.csr_matrix((vv, (rr, cc)), shape=(m, n))

        G = _mat(g_rows, g_cols, g_vals, r)
        A = _mat(a_rows, a_cols, a_vals, ra)
        h, b = np.array(h, dtype=float), np.array(b, dtype=float)
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("program has non-finite constants")
        return CompiledProgram(c, G, h, l, q, A, b)

    def max_violation(self, x) -> float:
        """Largest violation of any row or cone at ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        for e, sense in self.rows:
            v = e.value(x)
            worst = max(worst, abs(v) if sense == "==" else max(v, 0.0))
        for block in self.cone_blocks():
            vals = [e.value(x) for e in block]
            worst = max(worst, float(np.linalg.norm(vals[1:])) - vals[0])
        return worst

    def objective_value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(sum(v * x[i] for i, v in self.objective.items()))

    # -- text dump ---------------------------------------------------------------

    def dump(self, path) -> None:
        """Write the compiled program in a plain sparse text format.

        Layout (whitespace separated, 0-based indices)::

            vars <n>
            objective <k>           then k lines  "<var> <coef>"
            rows <r>                then per row "<sense> <const> <k>" and k lines "<var> <coef>"
            cones <p>               then per cone "<dim>" and dim expression blocks "<const> <k>" + k lines

        Row semantics are ``expr <= 0`` (sense ``le``) or ``expr == 0`` (``eq``);
        a cone [t, v1..] means ``||v|| <= t``, rotated cones already transformed.
        """
        out = [f"vars {self.n_vars}", f"objective {len(self.objective)}"]
        out += [f"{i} {v!r}" for i, v in sorted(self.objective.items())]

        def _expr(e: Affine):
            lines = [f"{e.const!r} {e.idx.size}"]
            lines += [f"{i} {c!r}" for i, c in zip(e.idx.tolist(), e.coef.tolist())]
            return lines

        out.append(f"rows {len(self.rows)}")
        for e, sense in self.rows:
            out.append("le" if sense == "<=" else "eq")
            out += _expr(e)
        blocks = self.cone_blocks()
        out.append(f"cones {len(blocks)}")
        for block in blocks:
            out.append(str(len(block)))
            for e in block:
                out += _expr(e)
        Path(path).write_text("\n".join(out) + "\n")

    @classmethod
    def load_dump(cls, path) -> "ConeProgram":
        tokens = Path(path).read_text().split()
        pos = 0

        def nxt():
            nonlocal pos
            pos += 1
            return tokens[pos - 1]

        def _expr():
            const = float(nxt())
            k = int(nxt())
            idx, coef = [], []
            for _ in range(k):
                idx.append(int(nxt()))
                coef.append(float(nxt()))
            return Affine(idx, coef, const)

        assert nxt() == "vars"
        p = cls(n_vars=int(nxt()))
        assert nxt() == "objective"
        for _ in range(int(nxt())):
            i = int(nxt())
            p.objective[i] = float(nxt())
        assert nxt() == "rows"
        for _ in range(int(nxt())):
            sense = nxt()
            p.rows.append((_expr(), "<=" if sense == "le" else "=="))
        assert nxt() == "cones"
        for _ in range(int(nxt())):
            d = int(nxt())
            p.socs.append([_expr() for _ in range(d)])
        return p


# ---------------------------------------------------------------------------
# matrix inequality reduction
# ---------------------------------------------------------------------------


def lmi_to_rotated_cone(p: ConeProgram, a, v: Sequence, theta, form: str = "identity") -> None:
    """Add the conic form of  [[a, v1, v2], [v1, -2, 0], [v2, 0, -2]] <= Theta.

    ``form="identity"`` uses Theta = theta*I and emits
    ||v||^2 <= (2 + theta)(theta - a) with theta - a >= 0, 2 + theta >= 0.
    ``form="corner"`` uses Theta = diag(theta, 0, 0), i.e. ||v||^2 <= 2(theta - a);
    both coincide at theta = 0.
    """
    a, theta = Affine.lift(a), Affine.lift(theta)
    t = theta - a
    if form == "identity":
        s = theta + 2.0
        p.add_ge(t, 0.0)
        p.add_ge(s, 0.0)
    elif form == "corner":
        s = Affine.constant(2.0)
    else:
        raise ValueError(f"unknown form {form!r}")
    p.add_rotated_cone(s, t, list(v))


def lmi_matrix(a: float, v1: float, v2: float) -> np.ndarray:
    return np.array([[a, v1, v2], [v1, -2.0, 0.0], [v2, 0.0, -2.0]])


# ---------------------------------------------------------------------------
# interior-point solver
# ---------------------------------------------------------------------------


@dataclass
class ConeSolution:
    status: str  # optimal | infeasible | unbounded | max_iter
    x: np.ndarray
    objective: float
    max_violation: float
    iterations: int
    gap: float = float("nan")
    y: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    residual_history: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _Cones:
    """Index bookkeeping for the product cone, with SOC blocks grouped by size."""

    def __init__(self, l: int, q: Sequence[int]):
        self.l = l
        self.q = list(q)
        self.groups = {}
        off = l
        starts = {}
        for d in self.q:
            starts.setdefault(d, []).append(off)
            off += d
        self.size = off
        for d, st in starts.items():
            self.groups[d] = np.asarray(st)[:, None] + np.arange(d)[None, :]
        self.degree = l + len(self.q)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[: self.l] = 1.0
        for idx in self.groups.values():
            e[idx[:, 0]] = 1.0
        return e

    def min_eig(self, u) -> float:
        m = np.inf
        if self.l:
            m = float(u[: self.l].min())
        for idx in self.groups.values():
            U = u[idx]
            m = min(m, float(np.min(U[:, 0] - np.linalg.norm(U[:, 1:], axis=1))))
        return m

    def inner(self, u, v) -> float:
        return float(np.dot(u, v))

    def product(self, u, v) -> np.ndarray:
        """Jordan product u o v."""
        out = np.empty(self.size)
        out[: self.l] = u[: self.l] * v[: self.l]
        for idx in self.groups.values():
            U, V = u[idx], v[idx]
            res = np.empty_like(U)
            res[:, 0] = np.einsum("kd,kd->k", U, V)
            res[:, 1:] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
            out[idx] = res
        return out

    def divide(self, lam, r) -> np.ndarray:
        """Solve lam o x = r for x."""
        out = np.empty(self.size)
        out[: self.l] = r[: self.l] / lam[: self.l]
        for idx in self.groups.values():
            L, R = lam[idx], r[idx]
            det = L[:, 0] ** 2 - np.einsum("kd,kd->k", L[:, 1:], L[:, 1:])
            x0 = (L[:, 0] * R[:, 0] - np.einsum("kd,kd->k", L[:, 1:], R[:, 1:])) / det
            X = np.empty_like(L)
            X[:, 0] = x0
            X[:, 1:] = (R[:, 1:] - x0[:, None] * L[:, 1:]) / L[:, :1]
            out[idx] = X
        return out

    def max_step(self, lam, d) -> float:
        """Largest alpha with lam + alpha d in the cone (lam interior); inf if unbounded."""
        worst = 0.0  # largest of -(min eigenvalue of the transformed direction)
        if self.l:
            worst = max(worst, float(np.max(-d[: self.l] / lam[: self.l])))
        for idx in self.groups.values():
            L, D = lam[idx], d[idx]
            nrm = np.sqrt(L[:, 0] ** 2 - np.einsum("kd,kd->k", L[:, 1:], L[:, 1:]))
            Lb = L / nrm[:, None]
            rho0 = Lb[:, 0] * D[:, 0] - np.einsum("kd,kd->k", Lb[:, 1:], D[:, 1:])
            rho1 = D[:, 1:] - ((rho0 + D[:, 0]) / (Lb[:, 0] + 1.0))[:, None] * Lb[:, 1:]
            eig = (rho0 - np.linalg.norm(rho1, axis=1)) / nrm
            worst = max(worst, float(np.max(-eig)))
        return np.inf if worst <= 0 else 1.0 / worst


class _Scaling:
    """Nesterov-Todd scaling W with W z = W^{-1} s = lam (W symmetric)."""

    def __init__(self, cones: _Cones, s, z):
        self.cones = cones
        l = cones.l
        self.d = np.sqrt(s[:l] / z[:l])
        self.blocks = {}
        self.inv_blocks = {}
        for dim, idx in cones.groups.items():
            S, Z = s[idx], z[idx]
            sn = np.sqrt(S[:, 0] ** 2 - np.einsum("kd,kd->k", S[:, 1:], S[:, 1:]))
            zn = np.sqrt(Z[:, 0] ** 2 - np.einsum("kd,kd->k", Z[:, 1:], Z[:, 1:]))
            Sb, Zb = S / sn[:, None], Z / zn[:, None]
            gam = np.sqrt(0.5 * (1.0 + np.einsum("kd,kd->k", Sb, Zb)))
            wb = Sb.copy()
            wb[:, 0] += Zb[:, 0]
            wb[:, 1:] -= Zb[:, 1:]
            wb /= 2.0 * gam[:, None]
            beta = np.sqrt(sn / zn)
            k = len(idx)
            Wb = np.zeros((k, dim, dim))
            Wb[:, 0, 0] = wb[:, 0]
            Wb[:, 0, 1:] = wb[:, 1:]
            Wb[:, 1:, 0] = wb[:, 1:]
            Wb[:, 1:, 1:] = np.eye(dim - 1)[None] + np.einsum("ki,kj->kij", wb[:, 1:], wb[:, 1:]) / (
                1.0 + wb[:, 0]
            )[:, None, None]
            J = np.ones(dim)
            J[1:] = -1.0
            self.blocks[dim] = beta[:, None, None] * Wb
            self.inv_blocks[dim] = (J[:, None] * Wb * J[None, :]) / beta[:, None, None]
        self.lam = self.apply(z)

    def _apply(self, v, diag, blocks):
        out = np.empty_like(v)
        l = self.cones.l
        out[:l] = diag * v[:l]
        for dim, idx in self.cones.groups.items():
            out[idx] = np.einsum("kij,kj->ki", blocks[dim], v[idx])
        return out

    def apply(self, v):
        return self._apply(v, self.d, self.blocks)

    def apply_inv(self, v):
        return self._apply(v, 1.0 / self.d, self.inv_blocks)

    def inv_matrix(self) -> sp.csr_matrix:
        l = self.cones.l
        rows = [np.arange(l)]
        cols = [np.arange(l)]
        vals = [1.0 / self.d]
        for dim, idx in self.cones.groups.items():
            B = self.inv_blocks[dim]
            rows.append(np.repeat(idx, dim, axis=1).ravel())
            cols.append(np.tile(idx, (1, dim)).ravel())
            vals.append(B.ravel())
        n = self.cones.size
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


class _KKT:
    """Factorization of [[G'W^{-2}G + dI, A'], [A, -dI]] with iterative refinement."""

    def __init__(self, G, A, Winv: sp.csr_matrix, reg: float):
        self.Gh = (Winv @ G).tocsr()
        self.A = A
        n = G.shape[1]
        p = A.shape[0]
        H = (self.Gh.T @ self.Gh).tocsc()
        K0 = sp.bmat([[H, A.T], [A, None]], format="csc") if p else H
        reg_diag = np.concatenate([np.full(n, reg), np.full(p, -reg)])
        K = (K0 + sp.diags(reg_diag)).tocsc()
        self.n, self.p = n, p
        try:
            # quasi-definite: any symmetric ordering is stable without pivoting
            self.lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
        except RuntimeError:
            # near the optimum G'W^{-2}G can lose definiteness in floating point;
            # retry with regularization scaled to its diagonal and full pivoting,
            # leaving iterative refinement to remove the perturbation
            big = max(1.0, float(np.abs(H.diagonal()).max())) if n else 1.0
            reg_diag = np.concatenate([np.full(n, reg * big), np.full(p, -reg)])
            try:
                self.lu = spla.splu((K0 + sp.diags(reg_diag)).tocsc(), diag_pivot_thresh=1.0)
            except RuntimeError as exc:
                raise NumericalBreakdown(f"KKT factorization failed: {exc}") from None

    def _reduced(self, rhs):
        sol = self.lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise NumericalBreakdown("non-finite KKT solution")
        return sol

    def _solve_scaled(self, r1, r2, r3):
        # [[0, A', Gh'], [A, 0, 0], [Gh, 0, -I]] (dx, dy, dz~) = (r1, r2, r3)
        sol = self._reduced(np.concatenate([r1 + self.Gh.T @ r3, r2]))
        dx, dy = sol[: self.n], sol[self.n :]
        return dx, dy, self.Gh @ dx - r3

    def solve(self, winv, rx, ry, rz, refine: int = 3):
        """Solve A'dy + G'dz = rx, A dx = ry, G dx - W^2 dz = rz.

        Returns (dx, dy, W dz).  Iterative refinement runs on the unreduced
        scaled system, which recovers the accuracy lost in forming G'W^{-2}G.
        """
        r3 = winv(rz)
        dx, dy, dzt = self._solve_scaled(rx, ry, r3)
        scale = max(_norm_inf(rx), _norm_inf(ry), _norm_inf(r3), 1e-300)
        for _ in range(refine):
            e1 = rx - self.A.T @ dy - self.Gh.T @ dzt
            e2 = ry - self.A @ dx
            e3 = r3 - self.Gh @ dx + dzt
            if max(_norm_inf(e1), _norm_inf(e2), _norm_inf(e3)) <= 1e-14 * scale:
                break
            cx, cy, cz = self._solve_scaled(e1, e2, e3)
            dx, dy, dzt = dx + cx, dy + cy, dzt + cz
        return dx, dy, dzt


def _norm_inf(v) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def solve(p: Union[ConeProgram, CompiledProgram], tol: float = 1e-8, max_iter: int = 100,
          reg: float = 1e-9, step_fraction: float = 0.99) -> ConeSolution:
    """Solve a conic program by the homogeneous self-dual interior-point method."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    cp = p.compile() if isinstance(p, ConeProgram) else p
    c, G, h, A, b = cp.c, cp.G, cp.h, cp.A, cp.b
    n = c.size
    cones = _Cones(cp.l, cp.q)
    e = cones.identity()
    nu = cones.degree

    resx0 = max(1.0, _norm_inf(c))
    resy0 = max(1.0, _norm_inf(b))
    resz0 = max(1.0, _norm_inf(h))

    def violation(xv):
        u = h - G @ xv
        worst = max(0.0, float(-u[: cones.l].min())) if cones.l else 0.0
        for idx in cones.groups.values():
            U = u[idx]
            worst = max(worst, float(np.max(np.linalg.norm(U[:, 1:], axis=1) - U[:, 0])))
        if A.shape[0]:
            worst = max(worst, _norm_inf(A @ xv - b))
        return worst

    def objective(xv):
        return float(c @ xv)

    # -- starting point: least-norm solves with identity scaling, shifted into the cone
    ident = _Scaling(cones, e, e)
    kkt = _KKT(G, A, ident.inv_matrix(), reg)
    x, y, zt = kkt.solve(ident.apply_inv, np.zeros(n), b, h)
    s = -zt  # the third block reads G x - z' = h, so s = h - G x = -z'
    _, y, z = kkt.solve(ident.apply_inv, -c, np.zeros(A.shape[0]), np.zeros(cones.size))
    if cones.size:
        for v in (s, z):
            t = -cones.min_eig(v)
            if t >= -1e-8 * max(_norm_inf(v), 1.0):
                v += (1.0 + t) * e
    tau, kappa = 1.0, 1.0

    history = []
    status = "max_iter"
    it = 0
    for it in range(max_iter + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = A @ x - b * tau
        rz = s + G @ x - h * tau
        cx, by, hz = float(c @ x), float(b @ y), float(h @ z)
        rt = kappa + cx + by + hz
        history.append(float(np.sqrt(rx @ rx + ry @ ry + rz @ rz + rt * rt)))
        gap = float(s @ z)
        mu = (gap + tau * kappa) / (nu + 1)

        pres = max(_norm_inf(ry) / resy0, _norm_inf(rz) / resz0) / tau
        dres = _norm_inf(rx) / resx0 / tau
        pcost, dcost = cx / tau, -(hz + by) / tau
        absgap = gap / tau**2
        if pcost < 0:
            relgap = absgap / -pcost
        elif dcost > 0:
            relgap = absgap / dcost
        else:
            relgap = np.inf
        pinf = (_norm_inf(A.T @ y + G.T @ z) / resx0 / -(hz + by)) if hz + by < 0 else np.inf
        dinf = (max(_norm_inf(A @ x) / resy0, _norm_inf(G @ x + s) / resz0) / -cx) if cx < 0 else np.inf

        if pres <= tol and dres <= tol and (absgap <= tol or relgap <= tol):
            xv = x / tau
            if violation(xv) <= tol:
                status = "optimal"
                break
        if pinf <= tol:
            status = "infeasible"
            break
        if dinf <= tol:
            status = "unbounded"
            break
        if it == max_iter:
            break

        W = _Scaling(cones, s, z)
        lam = W.lam
        kkt = _KKT(G, A, W.inv_matrix(), reg)

        dx1, dy1, dzt1 = kkt.solve(W.apply_inv, -c, b, h)
        denom_base = -float(dzt1 @ dzt1)

        def direction(eta, rs, rk):
            # ds~ + dz~ = lam \ rs ; rhs3 = -eta rz - W (lam \ rs)
            lr = cones.divide(lam, rs) if cones.size else np.zeros(0)
            rhs3 = -eta * rz - W.apply(lr)
            dx0, dy0, dzt0 = kkt.solve(W.apply_inv, -eta * rx, -eta * ry, rhs3)
            r4 = -eta * rt - rk / tau
            num = r4 - (float(c @ dx0) + float(b @ dy0) + float(h @ W.apply_inv(dzt0)))
            den = denom_base - kappa / tau
            dtau = num / den
            dx = dx0 + dtau * dx1
            dy = dy0 + dtau * dy1
            dzt = dzt0 + dtau * dzt1
            dst = lr - dzt
            dkappa = (rk - kappa * dtau) / tau
            # the unscaled slack step is taken from the linear equation itself so
            # the primal residual contracts exactly, whatever the conditioning of W
            ds = -eta * rz - G @ dx + h * dtau
            return dx, dy, dzt, dst, ds, dtau, dkappa

        def step_length(dst, dzt, dtau, dkappa):
            a = np.inf
            if cones.size:
                a = min(cones.max_step(lam, dst), cones.max_step(lam, dzt))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        lam2 = cones.product(lam, lam) if cones.size else np.zeros(0)
        # predictor
        _, _, dzta, dsta, _, dtaua, dkappaa = direction(1.0, -lam2, -tau * kappa)
        alpha_aff = min(1.0, step_length(dsta, dzta, dtaua, dkappaa))
        sigma = (1.0 - alpha_aff) ** 3
        # corrector
        rs = -lam2 + sigma * mu * e - (cones.product(dsta, dzta) if cones.size else 0.0)
        rk = -tau * kappa + sigma * mu - dtaua * dkappaa
        dx, dy, dzt, dst, ds, dtau, dkappa = direction(1.0 - sigma, rs, rk)
        alpha = min(1.0, step_fraction * step_length(dst, dzt, dtau, dkappa))

        x = x + alpha * dx
        y = y + alpha * dy
        if cones.size:
            s = s + alpha * ds
            z = z + alpha * W.apply_inv(dzt)
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        if not (tau > 0 and kappa >= 0 and np.all(np.isfinite(x))):
            raise NumericalBreakdown("interior-point iterate left the cone")

    if status == "infeasible":
        scale = -(float(h @ z) + float(b @ y))
        return ConeSolution(status, np.full(n, np.nan), np.inf, np.inf, it, np.nan,
                            y / scale, z / scale, history)
    if status == "unbounded":
        return ConeSolution(status, x / -float(c @ x), -np.inf, np.inf, it, np.nan, None, None, history)
    xv = x / tau
    return ConeSolution(status, xv, objective(xv), violation(xv), it, float(s @ z) / tau**2,
                        y / tau, z / tau, history)
