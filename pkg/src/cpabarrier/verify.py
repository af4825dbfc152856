"""Solver-free certificate checks, controller extraction and brute-force invariance audits.

Nothing here imports the conic module: the checks recompute every quantity
from the triangulation, the vertex values and the raw data.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import SynthesisConfig, resolve_lipschitz
from .cpa import CpaFunction
from .dataset import Dataset
from .exceptions import DimensionMismatch, OutsideDomain
from .geometry import Triangulation

DECREASE_TOL = 1e-9
GRADIENT_TOL = 1e-9
MAX_OFFENDERS = 20


@dataclass
class ConditionResult:
    name: str
    passed: bool
    margin: float
    offenders: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "margin": self.margin, "offenders": self.offenders}


@dataclass
class CertificateReport:
    conditions: dict
    selection: np.ndarray  # (m_T, n+1) input index used at each simplex vertex
    b: float
    gradient_bound: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def failed(self) -> list:
        return [k for k, c in self.conditions.items() if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "b": self.b,
            "gradient_bound": self.gradient_bound,
            "conditions": {k: c.to_dict() for k, c in self.conditions.items()},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def summary(self) -> str:
        lines = []
        for k, c in self.conditions.items():
            tag = "pass" if c.passed else "FAIL"
            extra = f" offenders={c.offenders[:5]}" if c.offenders else ""
            lines.append(f"({k}) {tag} margin={c.margin:.3e}{extra}")
        return "\n".join(lines)


def _successor_values(W: CpaFunction, dataset: Dataset) -> np.ndarray:
    """W-bar at every sampled successor, shape (N, M)."""
    flat = dataset.successors.reshape(-1, dataset.n)
    return W.evaluate_many(flat, extended=True).reshape(dataset.N, dataset.M)


def _pairwise_sq(P: np.ndarray) -> np.ndarray:
    """(..., k, d) -> (..., k, k) squared distances."""
    D = P[..., :, None, :] - P[..., None, :, :]
    return np.einsum("...d,...d->...", D, D)


def error_terms(tri: Triangulation, dataset: Dataset, lipschitz, norm_factor: float = 1.0):
    """Interpolation error multipliers of b.

    Returns ``(uniform, worst)``: ``uniform[i, k]`` applies when every vertex of
    simplex i uses input k, ``worst[i]`` bounds any per-vertex choice of inputs.
    """
    simp = tri.simplices
    X = tri.vertices[simp]
    dx2 = _pairwise_sq(X)
    cx = np.sqrt(dx2.max(axis=(1, 2)))
    m_T, M = len(simp), dataset.M
    if dataset.m == 0:
        base = lipschitz.L * cx if lipschitz.mode == "joint" else lipschitz.L_x * cx
        return norm_factor * np.repeat(base[:, None], M, axis=1), norm_factor * base
    U = dataset.inputs[simp]  # (m_T, n+1, M, m)
    uniform = np.empty((m_T, M))
    for k in range(M):
        du2 = _pairwise_sq(U[:, :, k, :])
        same = du2.max(axis=(1, 2)) == 0.0
        if lipschitz.mode == "joint":
            stacked = np.sqrt((dx2 + du2).max(axis=(1, 2)))
            uniform[:, k] = lipschitz.L * np.where(same, cx, stacked)
        else:
            uniform[:, k] = lipschitz.L_x * cx + lipschitz.L_u * np.sqrt(du2.max(axis=(1, 2)))
    # worst per-vertex choice: largest input gap between two distinct vertices
    n1 = simp.shape[1]
    gap2 = np.zeros((m_T, n1, n1))
    for r in range(n1):
        for s in range(n1):
            if r != s:
                d = U[:, r, :, None, :] - U[:, s, None, :, :]
                gap2[:, r, s] = np.einsum("ikld,ikld->ikl", d, d).max(axis=(1, 2))
    if lipschitz.mode == "joint":
        worst = lipschitz.L * np.sqrt((dx2 + gap2).max(axis=(1, 2)))
    else:
        worst = lipschitz.L_x * cx + lipschitz.L_u * np.sqrt(gap2.max(axis=(1, 2)))
    return norm_factor * uniform, norm_factor * worst


def _check_alignment(tri: Triangulation, dataset: Dataset) -> None:
    if tri.n_vertices != dataset.N or tri.dim != dataset.n:
        raise DimensionMismatch(
            f"triangulation has {tri.n_vertices} vertices in {tri.dim}-D, dataset has {dataset.N} states in {dataset.n}-D"
        )
    if not np.array_equal(tri.vertices, dataset.states):
        raise DimensionMismatch("triangulation vertices differ from the dataset states")


def check_theorem1(W, gamma, b: float, dataset: Dataset, tri: Triangulation,
                   config: Optional[SynthesisConfig] = None) -> CertificateReport:
    """Evaluate the five barrier conditions directly on (W, gamma, b)."""
    config = config or SynthesisConfig()
    _check_alignment(tri, dataset)
    if not isinstance(W, CpaFunction):
        W = CpaFunction(tri, W, config.epsilon, config.norm)
    gamma = np.asarray(gamma, dtype=float).ravel()
    if gamma.shape[0] != tri.n_simplices:
        raise DimensionMismatch(f"gamma has {gamma.shape[0]} entries for {tri.n_simplices} simplices")
    if W.tri is not tri and not np.array_equal(W.tri.simplices, tri.simplices):
        raise DimensionMismatch("W lives on a different triangulation")
    lip = resolve_lipschitz(config, dataset)
    eps, rho, eta = config.epsilon, config.rho, config.strict_margin
    w = W.values
    simp = tri.simplices
    conds = {}

    wbar = _successor_values(W, dataset)
    inside = tri.locate_many(dataset.successors.reshape(-1, dataset.n)).reshape(dataset.N, dataset.M) >= 0
    exits = ~inside.any(axis=1)
    gap_a = w[exits] - eps
    ids_a = np.flatnonzero(exits)
    conds["6a"] = ConditionResult("6a", bool(np.all(gap_a >= 0)), float(gap_a.min()) if gap_a.size else np.inf,
                                  ids_a[gap_a < 0][:MAX_OFFENDERS].tolist())
    gap_b = w + rho
    conds["6b"] = ConditionResult("6b", bool(np.all(gap_b >= 0)), float(gap_b.min()),
                                  np.flatnonzero(gap_b < 0)[:MAX_OFFENDERS].tolist())

    # gradients recomputed from scratch: solve X_i g = W_j - W_0
    X = tri.vertices[simp]
    dX = X[:, 1:, :] - X[:, :1, :]
    dW = w[simp[:, 1:]] - w[simp[:, :1]]
    grads = np.linalg.solve(dX, dW[..., None])[..., 0]
    norms = np.max(np.abs(grads), axis=1) if config.norm == "max" else np.linalg.norm(grads, axis=1)
    gbound = float(norms.max()) if norms.size else 0.0
    gap_c = b + GRADIENT_TOL - norms
    conds["6c"] = ConditionResult("6c", bool(np.all(gap_c >= 0)), float(b - gbound),
                                  np.flatnonzero(gap_c < 0)[:MAX_OFFENDERS].tolist())

    uniform, worst = error_terms(tri, dataset, lip, config.norm_factor(tri.dim))
    lhs_vertex = gamma[:, None] * w[simp]  # gamma_i W(x_ij)
    succ = wbar[simp]  # (m_T, n+1, M)
    vals = succ - lhs_vertex[:, :, None] + b * uniform[:, None, :]  # (m_T, n+1, M)
    per_k = vals.max(axis=1)  # (m_T, M)
    best_k = np.argmin(per_k, axis=1)
    best_uniform = per_k[np.arange(len(simp)), best_k]
    selection = np.repeat(best_k[:, None], simp.shape[1], axis=1)
    value = best_uniform.copy()
    fallback = best_uniform > -eta + DECREASE_TOL
    if np.any(fallback) and dataset.M > 1:
        # per-vertex minimum over inputs with the worst-case stacked diameter
        kv = np.argmin(succ[fallback], axis=2)
        vv = succ[fallback].min(axis=2) - lhs_vertex[fallback] + b * worst[fallback][:, None]
        fb_val = vv.max(axis=1)
        better = fb_val < value[fallback]
        idx = np.flatnonzero(fallback)[better]
        value[idx] = fb_val[better]
        selection[idx] = kv[better]
    bad_d = value > -eta + DECREASE_TOL
    worst_i = np.flatnonzero(bad_d)
    offenders_d = []
    for i in worst_i[np.argsort(-value[worst_i])][:MAX_OFFENDERS]:
        j = int(np.argmax(vals[i, :, selection[i, 0]]))
        offenders_d.append((int(i), j))
    conds["6d"] = ConditionResult("6d", not bool(np.any(bad_d)), float(-eta - value.max()) if value.size else np.inf,
                                  offenders_d)
    conds["6e"] = ConditionResult("6e", bool(np.all(gamma >= 0)), float(gamma.min()) if gamma.size else np.inf,
                                  np.flatnonzero(gamma < 0)[:MAX_OFFENDERS].tolist())
    return CertificateReport(conds, selection, float(b), gbound)


# ---------------------------------------------------------------------------
# controller
# ---------------------------------------------------------------------------


class CpaController:
    """u(x) = sum_j lambda_j u_{i,j,k_ij} on the simplex containing x."""

    def __init__(self, tri: Triangulation, dataset: Dataset, selection):
        self.tri = tri
        self.dataset = dataset
        self.selection = np.asarray(selection, dtype=np.int64)
        if self.selection.ndim == 1:
            self.selection = np.repeat(self.selection[:, None], tri.simplices.shape[1], axis=1)
        # vertex inputs per simplex: (m_T, n+1, m)
        simp = tri.simplices
        self.vertex_inputs = dataset.inputs[simp, self.selection]

    def control(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        idx = self.tri.locate_many(pts)
        if np.any(idx < 0):
            bad = pts[int(np.argmin(idx >= 0))]
            raise OutsideDomain(f"no control defined at {bad.tolist()}: outside the triangulation")
        lam = self.tri.barycentric_many(idx, pts)
        u = np.einsum("qj,qjm->qm", lam, self.vertex_inputs[idx])
        return u[0] if x.ndim == 1 else u

    __call__ = control


def extract_controller(result, dataset: Optional[Dataset] = None, tri: Optional[Triangulation] = None) -> CpaController:
    dataset = dataset if dataset is not None else result.dataset
    tri = tri if tri is not None else result.tri
    if dataset.m == 0:
        raise ValueError("autonomous data has no inputs to interpolate")
    selection = result.certificate.selection if result.certificate is not None else result.xi
    return CpaController(tri, dataset, selection)


# ---------------------------------------------------------------------------
# empirical audits
# ---------------------------------------------------------------------------


@dataclass
class InvarianceAudit:
    seed: int
    samples: int
    horizon: int
    violations: list  # (initial state, first step with W-bar > 0)
    input_violations: int = 0

    @property
    def violation_rate(self) -> float:
        return len(self.violations) / self.samples if self.samples else 0.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "samples": self.samples,
            "horizon": self.horizon,
            "violations": [{"x0": list(map(float, x)), "step": int(k)} for x, k in self.violations],
            "violation_rate": self.violation_rate,
            "input_violations": self.input_violations,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def sample_safe_states(W: CpaFunction, count: int, seed: int = 0, max_draws: int = 200) -> np.ndarray:
    """Uniform rejection samples from {x in T : W(x) <= 0}; fewer if the set is empty."""
    rng = np.random.default_rng(seed)
    lo, hi = W.tri.vertices.min(axis=0), W.tri.vertices.max(axis=0)
    if W.values.min() > 0:
        return np.zeros((0, W.tri.dim))
    got = []
    have = 0
    for _ in range(max_draws):
        cand = rng.uniform(lo, hi, size=(max(4 * count, 1000), W.tri.dim))
        idx = W.tri.locate_many(cand)
        cand = cand[idx >= 0]
        keep = cand[W.evaluate_many(cand) <= 0]
        got.append(keep)
        have += len(keep)
        if have >= count:
            break
    pts = np.vstack(got) if got else np.zeros((0, W.tri.dim))
    return pts[:count]


def empirical_invariance(oracle, result, dataset: Optional[Dataset] = None, tri: Optional[Triangulation] = None,
                         samples: int = 1000, horizon: int = 100, seed: int = 0, input_tol: float = 1e-12
                         ) -> InvarianceAudit:
    dataset = dataset if dataset is not None else result.dataset
    W = result.W
    x0 = sample_safe_states(W, samples, seed)
    controller = extract_controller(result, dataset, tri) if dataset.m > 0 else None
    first_exit = np.full(len(x0), -1)
    input_bad = 0
    x = x0.copy()
    alive = np.ones(len(x0), dtype=bool)
    for k in range(1, horizon + 1):
        if not np.any(alive):
            break
        xa = x[alive]
        if controller is not None:
            u = controller.control(xa)
            lo, hi = dataset.input_box[:, 0], dataset.input_box[:, 1]
            input_bad += int(np.sum(np.any((u < lo - input_tol) | (u > hi + input_tol), axis=1)))
            u = np.clip(u, lo, hi)
            xa = oracle.step(xa, u)
        else:
            xa = oracle.step(xa)
        x[alive] = xa
        out = W.evaluate_many(xa) > 0
        ids = np.flatnonzero(alive)[out]
        first_exit[ids] = k
        alive[ids] = False
    viol = [(x0[i], int(first_exit[i])) for i in np.flatnonzero(first_exit >= 0)]
    return InvarianceAudit(seed, len(x0), horizon, viol, input_bad)


@dataclass
class MaximalSetGrid:
    lo: np.ndarray
    spacing: float
    shape: tuple
    safe: np.ndarray  # boolean, indexed like the centers

    @property
    def centers(self) -> np.ndarray:
        axes = [self.lo[d] + (np.arange(self.shape[d]) + 0.5) * self.spacing for d in range(len(self.shape))]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    @property
    def safe_fraction(self) -> float:
        return float(self.safe.mean())


def maximal_set_oracle(oracle, box, spacing: float, horizon: int = 200) -> MaximalSetGrid:
    """Mark each grid cell whose center trajectory stays in the box for ``horizon`` steps."""
    if getattr(oracle, "m", 0) != 0:
        raise ValueError("the grid oracle needs an autonomous system")
    box = np.asarray(box, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    shape = tuple(int(round((hi[d] - lo[d]) / spacing)) for d in range(len(lo)))
    grid = MaximalSetGrid(lo, float(spacing), shape, np.zeros(shape, dtype=bool))
    x = grid.centers
    alive = np.all((x >= lo) & (x <= hi), axis=1)
    for _ in range(horizon):
        if not np.any(alive):
            break
        xa = oracle.step(x[alive])
        x[alive] = xa
        inside = np.all((xa >= lo) & (xa <= hi), axis=1)
        alive[np.flatnonzero(alive)[~inside]] = False
    grid.safe = alive.reshape(shape)
    return grid
