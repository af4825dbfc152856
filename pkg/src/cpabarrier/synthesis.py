"""Iterative convex overbounding (ICO) for CPA barrier functions.

One ICO step linearizes the barrier decrease condition around the current
vertex values, classifier and input selection, overbounds the bilinear
product of the two increments by a completed square, and solves the
resulting second-order cone program.  Phase one drives the per-vertex
slacks to zero; phase two shrinks the positive part of W to grow the safe
set.  Both phases start every step from a point that is feasible for the
new subproblem, so the cost sequence never increases.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .conic import Affine, ConeProgram, lmi_to_rotated_cone, solve
from .config import SynthesisConfig, resolve_lipschitz
from .cpa import CpaFunction, gradient_operator
from .dataset import Dataset, LipschitzInfo
from .exceptions import AssemblyError, EmptyDataset, NumericalBreakdown
from .geometry import Triangulation, delaunay_triangulate
from .verify import CertificateReport, check_theorem1

FEASIBILITY = "feasibility"
EXPANSION = "expansion"


# ---------------------------------------------------------------------------
# per-(mesh, data) quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Context:
    """Successor locations and error multipliers for one (triangulation, dataset) pair."""

    succ_simplex: np.ndarray  # (N, M) simplex index or -1
    succ_vertices: np.ndarray  # (N, M, n+1) vertex ids (0 where outside)
    succ_weights: np.ndarray  # (N, M, n+1) barycentric weights (0 where outside)
    exits: np.ndarray  # (N,) all successors leave T
    error: np.ndarray  # (m_T, M) multiplier of b in the decrease rows
    grad_op: np.ndarray  # (m_T, n, n+1)

    @property
    def inside(self) -> np.ndarray:
        return self.succ_simplex >= 0


def _stacked_error(tri: Triangulation, dataset: Dataset, lip: LipschitzInfo, norm_factor: float) -> np.ndarray:
    simp = tri.simplices
    X = tri.vertices[simp]
    D = X[:, :, None, :] - X[:, None, :, :]
    dx2 = (D**2).sum(-1)
    cx = np.sqrt(dx2.reshape(len(simp), -1).max(1))
    M = dataset.M
    out = np.empty((len(simp), M))
    for k in range(M):
        if dataset.m == 0:
            cu2 = np.zeros_like(dx2)
        else:
            U = dataset.inputs[simp, k]  # (m_T, n+1, m)
            E = U[:, :, None, :] - U[:, None, :, :]
            cu2 = (E**2).sum(-1)
        identical = cu2.reshape(len(simp), -1).max(1) == 0.0
        if lip.mode == "joint":
            c = np.where(identical, cx, np.sqrt((dx2 + cu2).reshape(len(simp), -1).max(1)))
            out[:, k] = lip.L * c
        else:
            out[:, k] = lip.L_x * cx + lip.L_u * np.sqrt(cu2.reshape(len(simp), -1).max(1))
    return norm_factor * out


def build_context(tri: Triangulation, dataset: Dataset, config: SynthesisConfig) -> _Context:
    if tri.n_vertices != dataset.N or not np.array_equal(tri.vertices, dataset.states):
        raise AssemblyError("triangulation vertices must be the dataset states, in order")
    lip = resolve_lipschitz(config, dataset)
    flat = dataset.successors.reshape(-1, dataset.n)
    idx = tri.locate_many(flat)
    n1 = tri.dim + 1
    verts = np.zeros((flat.shape[0], n1), dtype=np.int64)
    lam = np.zeros((flat.shape[0], n1))
    hit = idx >= 0
    if np.any(hit):
        verts[hit] = tri.simplices[idx[hit]]
        lam[hit] = tri.barycentric_many(idx[hit], flat[hit])
    shape = (dataset.N, dataset.M)
    succ_simplex = idx.reshape(shape)
    return _Context(
        succ_simplex,
        verts.reshape(shape + (n1,)),
        lam.reshape(shape + (n1,)),
        ~np.any(succ_simplex >= 0, axis=1),
        _stacked_error(tri, dataset, lip, config.norm_factor(tri.dim)),
        gradient_operator(tri),
    )


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass
class IcoState:
    tri: Triangulation
    dataset: Dataset
    W: np.ndarray
    gamma: np.ndarray
    xi: np.ndarray  # selected input index per simplex, 0-based
    b: float
    theta: np.ndarray
    phase: str = FEASIBILITY
    iteration: int = 0
    cost_history: list = field(default_factory=list)
    ctx: Optional[_Context] = field(default=None, repr=False)

    def copy(self) -> "IcoState":
        return replace(self, W=self.W.copy(), gamma=self.gamma.copy(), xi=self.xi.copy(),
                       theta=self.theta.copy(), cost_history=list(self.cost_history))

    def function(self, config: SynthesisConfig) -> CpaFunction:
        return CpaFunction(self.tri, self.W, config.epsilon, config.norm)


def successor_values(state: IcoState, config: SynthesisConfig, W=None) -> np.ndarray:
    """W-bar at every sampled successor (N, M) from the cached barycentric data."""
    W = state.W if W is None else W
    ctx = state.ctx
    vals = np.einsum("zkj,zkj->zk", ctx.succ_weights, W[ctx.succ_vertices])
    return np.where(ctx.inside, vals, config.epsilon)


def decrease_values(state: IcoState, config: SynthesisConfig, W=None, gamma=None, b=None) -> np.ndarray:
    """W-bar(x+_{i,j,k}) - gamma_i W(x_ij) + b E_ik for every (i, j, k), shape (m_T, n+1, M)."""
    W = state.W if W is None else W
    gamma = state.gamma if gamma is None else gamma
    b = state.b if b is None else b
    simp = state.tri.simplices
    succ = successor_values(state, config, W)[simp]
    return succ - (gamma[:, None] * W[simp])[:, :, None] + b * state.ctx.error[:, None, :]


def needed_slack(state: IcoState, config: SynthesisConfig) -> np.ndarray:
    """Smallest per-vertex theta that makes delta = 0 feasible in phase one."""
    simp = state.tri.simplices
    vals = decrease_values(state, config)
    sel = vals[np.arange(len(simp)), :, state.xi] + config.decrease_margin  # (m_T, n+1)
    theta = np.zeros(state.tri.n_vertices)
    np.maximum.at(theta, simp.ravel(), np.maximum(sel, 0.0).ravel())
    return theta


def select_inputs(state: IcoState, config: SynthesisConfig) -> np.ndarray:
    """Per simplex, the input minimizing max_j [W-bar(x+) - gamma W(x) + b E]; ties to the lowest index."""
    if state.dataset.M == 1:
        return np.zeros(state.tri.n_simplices, dtype=np.int64)
    crit = decrease_values(state, config).max(axis=1)  # (m_T, M)
    return np.argmin(crit, axis=1).astype(np.int64)


def _guarded_selection(state: IcoState, config: SynthesisConfig) -> np.ndarray:
    """Reselect inputs, keeping the old choice wherever a vertex's needed slack would grow."""
    new = select_inputs(state, config)
    if not config.guard_inputs:
        return new
    vals = decrease_values(state, config) + config.decrease_margin
    rows = np.arange(len(new))
    old_need = np.maximum(vals[rows, :, state.xi], 0.0)
    new_need = np.maximum(vals[rows, :, new], 0.0)
    ok = np.all(new_need <= old_need, axis=1)
    return np.where(ok, new, state.xi)


def initialize(dataset: Dataset, tri: Optional[Triangulation] = None,
               config: Optional[SynthesisConfig] = None) -> IcoState:
    config = config or SynthesisConfig()
    if dataset is None or dataset.N == 0:
        raise EmptyDataset("no samples to synthesize from")
    tri = tri if tri is not None else delaunay_triangulate(dataset.states)
    ctx = build_context(tri, dataset, config)
    W = np.full(tri.n_vertices, -config.rho)
    W[ctx.exits] = config.epsilon
    all_low = np.all(W[tri.simplices] == -config.rho, axis=1)
    gamma = np.where(all_low, 0.1, 1.0)
    b = CpaFunction(tri, W, config.epsilon, config.norm).gradient_norm_bound()
    state = IcoState(tri, dataset, W, gamma, np.zeros(tri.n_simplices, dtype=np.int64), b,
                     np.zeros(tri.n_vertices), FEASIBILITY, 0, [], ctx)
    state.xi = select_inputs(state, config)
    state.theta = needed_slack(state, config)
    return state


# ---------------------------------------------------------------------------
# subproblem assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariableMap:
    dW: np.ndarray
    dgamma: np.ndarray
    b: Optional[int]
    theta: Optional[np.ndarray]
    hinge: Optional[np.ndarray]


def assemble_subproblem(state: IcoState, config: SynthesisConfig, phase: Optional[str] = None
                        ) -> tuple[ConeProgram, VariableMap]:
    phase = phase or state.phase
    if state.ctx is None:
        raise AssemblyError("state has no successor containment annotation")
    tri, ctx = state.tri, state.ctx
    Nv, mT = tri.n_vertices, tri.n_simplices
    simp = tri.simplices
    Wl, gl = state.W, state.gamma
    eps, rho, W_max = config.epsilon, config.rho, config.W_max
    frozen = config.b_mode == "frozen"

    p = ConeProgram()
    dW = p.add_variables(Nv, "dW")
    dg = p.add_variables(mT, "dgamma")
    b_var = None if frozen else int(p.add_variables(1, "b")[0])
    theta = p.add_variables(Nv, "theta") if phase == FEASIBILITY else None
    hinge = p.add_variables(Nv, "hinge") if phase == EXPANSION else None

    def w_expr(v):
        return Affine([dW[v]], [1.0], Wl[v])

    for v in range(Nv):
        wv = w_expr(v)
        if ctx.exits[v]:
            p.add_ge(wv, eps)
        p.add_ge(wv, -rho)
        p.add_le(wv, W_max)
    for i in range(mT):
        g = Affine([dg[i]], [1.0], gl[i])
        p.add_ge(g, 0.0)
        p.add_le(g, config.gamma_cap)
    if theta is not None:
        for v in range(Nv):
            p.add_ge(Affine.var(theta[v]), 0.0)
            p.add_objective(theta[v], 1.0)
    if hinge is not None:
        for v in range(Nv):
            p.add_ge(Affine.var(hinge[v]), 0.0)
            p.add_ge(Affine.var(hinge[v]) - w_expr(v), 0.0)
            p.add_objective(hinge[v], 1.0)

    # gradient bound: || grad_i (W + dW) || <= b
    b_expr = Affine.constant(state.b) if frozen else Affine.var(b_var)
    for i in range(mT):
        ids = dW[simp[i]]
        base = ctx.grad_op[i] @ Wl[simp[i]]
        comps = [Affine(ids, ctx.grad_op[i, k], base[k]) for k in range(tri.dim)]
        if config.norm == "max":
            for e in comps:
                p.add_le(e, b_expr)
                p.add_ge(e, -b_expr)
        else:
            p.add_soc(b_expr, comps)

    # decrease rows, one per (simplex, vertex)
    margin = config.decrease_margin
    for i in range(mT):
        k = int(state.xi[i])
        E = float(ctx.error[i, k])
        for j in range(simp.shape[1]):
            v = int(simp[i, j])
            if ctx.succ_simplex[v, k] >= 0:
                sv = ctx.succ_vertices[v, k]
                sw = ctx.succ_weights[v, k]
                idx = [dW[sv]]
                coef = [sw]
                const = float(sw @ Wl[sv])
            else:
                idx, coef, const = [], [], eps
            const += -gl[i] * Wl[v] + margin
            idx += [[dg[i]], [dW[v]]]
            coef += [[-Wl[v]], [-gl[i]]]
            if frozen:
                const += state.b * E
            else:
                idx.append([b_var])
                coef.append([E])
            a = Affine(np.concatenate(idx), np.concatenate(coef), const)
            th = Affine.var(theta[v]) if theta is not None else Affine.constant(0.0)
            lmi_to_rotated_cone(p, a, [Affine.var(dg[i]), Affine.var(dW[v])], th, form=config.slack_form)
    return p, VariableMap(dW, dg, b_var, theta, hinge)


# ---------------------------------------------------------------------------
# one ICO step
# ---------------------------------------------------------------------------


@dataclass
class StepInfo:
    cost: float
    max_slack: float
    solver_status: str
    solver_iters: int
    wall_ms: float


def ico_step(state: IcoState, config: SynthesisConfig, dump: Optional[Path] = None
             ) -> tuple[IcoState, StepInfo]:
    t0 = time.perf_counter()
    prog, vm = assemble_subproblem(state, config)
    if dump is not None:
        prog.dump(dump)
    sol = solve(prog, tol=config.tol, max_iter=config.solver_max_iter)
    if sol.status != "optimal":
        if sol.status == "max_iter" and np.all(np.isfinite(sol.x)) and sol.max_violation <= 1e3 * config.tol:
            pass  # accept a slightly early iterate; the projection below restores the bounds
        else:
            raise NumericalBreakdown(f"ICO subproblem ended with status {sol.status!r}")
    x = sol.x
    new = state.copy()
    W = state.W + x[vm.dW]
    W = np.clip(W, -config.rho, config.W_max)
    W[state.ctx.exits] = np.maximum(W[state.ctx.exits], config.epsilon)
    gamma = np.clip(state.gamma + x[vm.dgamma], 0.0, config.gamma_cap)
    grad_bound = CpaFunction(state.tri, W, config.epsilon, config.norm).gradient_norm_bound()
    b = grad_bound if vm.b is None else max(float(x[vm.b]), grad_bound)
    new.W, new.gamma, new.b = W, gamma, b
    if vm.theta is not None:
        new.theta = np.maximum(x[vm.theta], 0.0)
        cost = float(new.theta.sum())
    else:
        new.theta = np.zeros_like(state.theta)
        cost = float(np.maximum(W, 0.0).sum())
    new.xi = _guarded_selection(new, config)
    new.iteration = state.iteration + 1
    new.cost_history.append(cost)
    info = StepInfo(cost, float(new.theta.max()) if new.theta.size else 0.0, sol.status, sol.iterations,
                    1e3 * (time.perf_counter() - t0))
    return new, info


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------


@dataclass
class Refinement:
    """A refined mesh with inherited values, waiting for the new vertices' transitions."""

    state: IcoState
    tri: Triangulation
    W: np.ndarray
    gamma: np.ndarray
    xi: np.ndarray
    points: np.ndarray  # new vertex coordinates, in vertex-id order
    edges: list
    parents: np.ndarray  # original simplex of every new simplex
    sources: list = field(default_factory=list)  # simplex (of the old mesh) that chose each edge

    def records(self, round_no: int, kind: str) -> list:
        """Log entries for the inserted points, with the edge and the simplex that asked for it."""
        tri, W = self.state.tri, self.state.W
        out = []
        for p, e, i in zip(self.points, self.edges, self.sources):
            simplex = tri.simplices[i]
            out.append({"round": round_no, "kind": kind, "point": p.tolist(), "edge": [int(v) for v in e],
                        "simplex": simplex.tolist(), "simplex_w": W[simplex].tolist()})
        return out

    def apply(self, inputs, successors, config: SynthesisConfig) -> IcoState:
        """Attach transitions for the new points and rebuild the state."""
        data = self.state.dataset.with_samples(self.points, inputs, successors)
        ctx = build_context(self.tri, data, config)
        new = IcoState(self.tri, data, self.W.copy(), self.gamma.copy(), self.xi.copy(), self.state.b,
                       np.zeros(self.tri.n_vertices), FEASIBILITY, self.state.iteration, [], ctx)
        W = new.W
        W[ctx.exits] = np.maximum(W[ctx.exits], config.epsilon)
        new.b = max(new.b, new.function(config).gradient_norm_bound())
        new.theta = needed_slack(new, config)
        return new

    def sample_with(self, oracle, config: SynthesisConfig) -> IcoState:
        """Complete the refinement using a dynamics oracle and the dataset's input grid."""
        data = self.state.dataset
        if data.m and not np.all(data.inputs == data.inputs[:1]):
            raise ValueError("inputs differ between states; supply transitions explicitly")
        inputs = data.inputs[0]
        P = len(self.points)
        X = np.repeat(self.points[:, None, :], data.M, axis=1)
        U = np.broadcast_to(inputs[None], (P, data.M, data.m)).copy()
        succ = oracle.step(X, U) if data.m else oracle.step(X)
        return self.apply(U, succ, config)


def _bisect_edges(state: IcoState, edges, sources) -> Refinement:
    tri = state.tri
    W, gamma, xi = state.W.copy(), state.gamma.copy(), state.xi.copy()
    origin = np.arange(tri.n_simplices)
    points = []
    for e in edges:
        bis = tri.bisect_edge(e)
        a, b = bis.edge
        W = np.append(W, 0.5 * (W[a] + W[b]))
        gamma = gamma[bis.parents]
        xi = xi[bis.parents]
        origin = origin[bis.parents]
        points.append(bis.midpoint)
        tri = bis.triangulation
    pts = np.array(points).reshape(-1, state.tri.dim)
    return Refinement(state, tri, W, gamma, xi, pts, list(edges), origin, list(sources))


def refine_feasibility(state: IcoState) -> Refinement:
    """Bisect the longest edge of the simplex whose vertices carry the most slack."""
    sums = state.theta[state.tri.simplices].sum(axis=1)
    i = int(np.argmax(sums))
    return _bisect_edges(state, [state.tri.longest_edge(i)], [i])


def refine_boundary(state: IcoState) -> Refinement:
    """Bisect every simplex where W changes sign, inserting each distinct edge midpoint once."""
    W = state.W[state.tri.simplices]
    changing = np.flatnonzero(np.any(W < 0, axis=1) & np.any(W > 0, axis=1))
    chosen = {}
    for i in changing:
        chosen.setdefault(state.tri.longest_edge(int(i)), int(i))
    edges = sorted(chosen)
    return _bisect_edges(state, edges, [chosen[e] for e in edges])


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass
class SynthesisResult:
    W: CpaFunction
    gamma: np.ndarray
    b: float
    xi: np.ndarray
    feasible: bool
    boundary: list
    area: float
    certificate: Optional[CertificateReport]
    stats: dict
    worst_simplices: list
    inserted_points: list
    runlog: list
    tri: Triangulation
    dataset: Dataset
    config: SynthesisConfig
    state: IcoState = field(repr=False, default=None)

    @property
    def values(self) -> np.ndarray:
        return self.W.values


class _Monitor:
    """Run-log bookkeeping and the per-phase monotonicity audit."""

    def __init__(self, config: SynthesisConfig, log: Optional[Callable] = None):
        self.config = config
        self.records = []
        self.violations = []
        self.log = log
        self.segment = 0

    def record(self, state: IcoState, info: StepInfo, prev_cost: Optional[float]):
        rec = {
            "iter": state.iteration,
            "phase": state.phase,
            "segment": self.segment,
            "cost": info.cost,
            "max_slack": info.max_slack,
            "b": state.b,
            "solver_iters": info.solver_iters,
            "wall_ms": round(info.wall_ms, 3),
        }
        self.records.append(rec)
        if prev_cost is not None:
            allowed = 10.0 * self.config.tol * max(1.0, abs(prev_cost))
            if info.cost > prev_cost + allowed:
                self.violations.append({"iter": state.iteration, "phase": state.phase,
                                        "prev": prev_cost, "cost": info.cost})
        if self.log is not None:
            self.log(rec)


def _phase_one(state: IcoState, config: SynthesisConfig, mon: _Monitor, dump_dir) -> tuple[IcoState, bool]:
    prev = float(state.theta.sum())
    state.phase = FEASIBILITY
    if state.theta.max(initial=0.0) <= config.theta_tol and _certify(state, config).passed:
        return state, True
    for _ in range(config.max_iter_phase1):
        dump = None if dump_dir is None else Path(dump_dir) / f"subproblem_{state.iteration + 1}.cone"
        state, info = ico_step(state, config, dump)
        mon.record(state, info, prev)
        if info.max_slack <= config.theta_tol:
            if _certify(state, config).passed:
                return state, True
        if prev - info.cost < config.chi:
            break
        prev = info.cost
    return state, False


def _phase_two(state: IcoState, config: SynthesisConfig, mon: _Monitor, dump_dir) -> IcoState:
    state.phase = EXPANSION
    state.theta = np.zeros_like(state.theta)
    best = state.copy()
    prev = float(np.maximum(state.W, 0.0).sum())
    for _ in range(config.max_iter_phase2):
        dump = None if dump_dir is None else Path(dump_dir) / f"subproblem_{state.iteration + 1}.cone"
        try:
            state, info = ico_step(state, config, dump)
        except NumericalBreakdown:
            break
        mon.record(state, info, prev)
        if _certify(state, config).passed:
            best = state.copy()
        else:
            break
        if prev - info.cost < config.chi:
            break
        prev = info.cost
    return best


def _certify(state: IcoState, config: SynthesisConfig) -> CertificateReport:
    return check_theorem1(state.W, state.gamma, state.b, state.dataset, state.tri, config)


def _area(state: IcoState, config: SynthesisConfig) -> float:
    return state.function(config).sublevel_region_area() if state.tri.dim == 2 else float("nan")


def run(dataset: Dataset, config: Optional[SynthesisConfig] = None, oracle=None,
        tri: Optional[Triangulation] = None, log: Optional[Callable] = None) -> SynthesisResult:
    """Both ICO phases, with optional oracle-backed refinement."""
    config = config or SynthesisConfig()
    t_start = time.perf_counter()
    state = initialize(dataset, tri, config)
    mon = _Monitor(config, log)
    inserted = []
    dump_dir = config.dump_dir
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)

    state, feasible = _phase_one(state, config, mon, dump_dir)
    rounds = 0
    while not feasible and config.refine == "feasibility" and oracle is not None and rounds < config.refine_rounds:
        rounds += 1
        ref = refine_feasibility(state)
        inserted += ref.records(rounds, FEASIBILITY)
        state = ref.sample_with(oracle, config)
        mon.segment += 1
        state, feasible = _phase_one(state, config, mon, dump_dir)

    if feasible:
        mon.segment += 1
        state = _phase_two(state, config, mon, dump_dir)
        if config.refine == "boundary" and oracle is not None:
            area = _area(state, config)
            for r in range(1, config.refine_rounds + 1):
                ref = refine_boundary(state)
                if len(ref.points) == 0:
                    break
                cand = ref.sample_with(oracle, config)
                mon.segment += 1
                cand, ok = _phase_one(cand, config, mon, dump_dir)
                if not ok:
                    break
                mon.segment += 1
                cand = _phase_two(cand, config, mon, dump_dir)
                new_area = _area(cand, config)
                if not _certify(cand, config).passed or new_area < area - 1e-9:
                    break
                inserted += ref.records(r, "boundary")
                state, area = cand, new_area

    cert = _certify(state, config)
    feasible = feasible and cert.passed
    f = state.function(config)
    sums = state.theta[state.tri.simplices].sum(axis=1)
    worst = [] if feasible else [int(i) for i in np.argsort(-sums)[:10] if sums[i] > 0]
    phase1_iters = sum(1 for r in mon.records if r["phase"] == FEASIBILITY)
    stats = {
        "iterations": state.iteration,
        "phase1_iterations": phase1_iters,
        "phase2_iterations": sum(1 for r in mon.records if r["phase"] == EXPANSION),
        "monotonicity_violations": mon.violations,
        "wall_s": time.perf_counter() - t_start,
        "n_vertices": state.tri.n_vertices,
        "n_simplices": state.tri.n_simplices,
        "refine_rounds": rounds,
    }
    return SynthesisResult(
        W=f,
        gamma=state.gamma.copy(),
        b=state.b,
        xi=state.xi.copy(),
        feasible=feasible,
        boundary=f.zero_level_set() if state.tri.dim == 2 else [],
        area=_area(state, config),
        certificate=cert,
        stats=stats,
        worst_simplices=worst,
        inserted_points=inserted,
        runlog=mon.records,
        tri=state.tri,
        dataset=state.dataset,
        config=config,
        state=state,
    )


def write_runlog(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
