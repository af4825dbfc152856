"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints exactly one ``CRITERION k PASS|FAIL`` line (also when it
fails) so that the run log doubles as the acceptance report.
"""
import contextlib
import itertools
import math

import numpy as np
import pytest

from cpabarrier.conic import ConeProgram, Affine, lmi_matrix, lmi_to_rotated_cone, solve
from cpabarrier.cpa import CpaFunction
from cpabarrier.dynamics import linear_autonomous, linear_nonautonomous, nonlinear_autonomous
from cpabarrier.geometry import Triangulation, bisect_longest_edge, delaunay_triangulate
from cpabarrier.verify import check_theorem1, empirical_invariance, maximal_set_oracle

from conftest import NONLINEAR_PHASE1_CAP, random_simplex


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def report(k, label):
        detail = {}
        try:
            yield detail
        except BaseException:
            with capsys.disabled():
                print(f"\nCRITERION {k} FAIL  {label}  {detail}")
            raise
        with capsys.disabled():
            print(f"\nCRITERION {k} PASS  {label}  {detail}")
    return report


def phase_costs(runlog):
    """Per (segment, phase) cost sequences from a run log."""
    return [[r["cost"] for r in g] for _, g in itertools.groupby(runlog, key=lambda r: (r["segment"], r["phase"]))]


def test_criterion_1_linear_autonomous(criterion, linear_auto_run):
    with criterion(1, "linear autonomous synthesis") as d:
        res = linear_auto_run.result
        p1 = [r for r in res.runlog if r["phase"] == "feasibility"]
        d.update(phase1_iters=len(p1), area=round(res.area, 6), seconds=round(linear_auto_run.seconds, 1))
        assert res.dataset.N == 441
        assert len(p1) <= 200 and p1[-1]["max_slack"] <= 1e-7
        assert res.config.strict_margin == 1e-8
        rep = check_theorem1(res.W, res.gamma, res.b, res.dataset, res.tri, res.config)
        assert rep.passed
        assert res.area > 0
        assert linear_auto_run.seconds < 600


def test_criterion_2_invariance_audit(criterion, linear_auto_run):
    with criterion(2, "invariance audit, 1000 x 100 steps") as d:
        audit = empirical_invariance(linear_auto_run.oracle, linear_auto_run.result, samples=1000, horizon=100,
                                     seed=0)
        d.update(samples=audit.samples, violations=len(audit.violations))
        assert audit.samples == 1000
        assert audit.violations == []


def test_criterion_3_linear_nonautonomous(criterion, linear_nonauto_run):
    with criterion(3, "linear non-autonomous synthesis and controller audit") as d:
        res = linear_nonauto_run.result
        p1 = sum(1 for r in res.runlog if r["phase"] == "feasibility")
        audit = empirical_invariance(linear_nonauto_run.oracle, res, samples=1000, horizon=100, seed=0)
        d.update(phase1_iters=p1, violations=len(audit.violations), input_violations=audit.input_violations)
        assert (res.dataset.N, res.dataset.M) == (441, 21)
        assert res.feasible and res.certificate.passed and p1 <= 100
        assert audit.samples == 1000 and audit.violations == [] and audit.input_violations == 0


def test_criterion_4_nonlinear(criterion, nonlinear_run):
    with criterion(4, "nonlinear desk-density run") as d:
        res = nonlinear_run.result
        rep = check_theorem1(res.W, res.gamma, res.b, res.dataset, res.tri, res.config)
        d.update(feasible=res.feasible, refinements=res.stats["refine_rounds"], inserted=len(res.inserted_points))
        assert res.config.max_iter_phase1 == NONLINEAR_PHASE1_CAP
        if res.feasible:
            assert rep.passed  # a feasible result must verify
        else:
            assert not rep.passed
            assert res.stats["refine_rounds"] >= 5
            assert len(res.inserted_points) == res.stats["refine_rounds"]
            V = res.tri.vertices
            for rec in res.inserted_points:
                assert rec["kind"] == "feasibility"
                a, b = rec["edge"]
                assert rec["point"] == (0.5 * (V[a] + V[b])).tolist()
                assert any(np.array_equal(v, rec["point"]) for v in V)


def test_criterion_5_containment(criterion, linear_auto_run):
    with criterion(5, "certified cells inside the brute-force maximal set") as d:
        res = linear_auto_run.result
        spacing = 0.01
        grid = maximal_set_oracle(linear_autonomous(), res.dataset.state_box, spacing, horizon=200)
        c = grid.centers
        w = res.W.evaluate_many(c)
        certified = w <= -res.b * spacing * math.sqrt(2)
        bad = int(np.sum(certified & ~grid.safe.ravel()))
        d.update(cells=len(c), certified=int(certified.sum()), exceptions=bad)
        assert certified.any()
        assert bad == 0


def test_criterion_6_monotonicity(criterion, linear_auto_run, linear_nonauto_run, nonlinear_run,
                                  boundary_refine_run):
    with criterion(6, "per-phase ICO monotonicity") as d:
        runs = [linear_auto_run, linear_nonauto_run, nonlinear_run, *boundary_refine_run]
        flagged = sum(len(r.result.stats["monotonicity_violations"]) for r in runs)
        recount = 0
        for r in runs:
            tol = r.config.tol
            for costs in phase_costs(r.result.runlog):
                recount += sum(b > a + 10 * tol * max(1.0, abs(a)) for a, b in zip(costs, costs[1:]))
        d.update(runs=len(runs), steps=sum(len(r.result.runlog) for r in runs), violations=flagged + recount)
        assert flagged == 0 and recount == 0


def test_criterion_7_conic_reduction(criterion):
    with criterion(7, "rotated-cone reduction vs eigenvalue oracle") as d:
        rng = np.random.default_rng(7)
        disagree = 0
        for _ in range(1000):
            a = rng.uniform(-3, 3)
            v = rng.normal(size=2) * rng.choice([0.1, 1.0, 3.0])
            theta = rng.uniform(0, 4)
            p = ConeProgram()
            p.add_variables(1)
            lmi_to_rotated_cone(p, a, list(v), theta)
            viol = p.max_violation([0.0])
            lam = float(np.linalg.eigvalsh(lmi_matrix(a, v[0], v[1]) - theta * np.eye(3)).max())
            cone_in = viol <= 1e-9
            eig_in = lam <= 1e-9
            if cone_in != eig_in and abs(lam) > 1e-9 and viol > 1e-9:
                disagree += 1
        p = ConeProgram()
        (th,) = p.add_variables(1)
        p.add_objective(th, 1.0)
        p.add_ge(Affine.var(th), 0.0)
        lmi_to_rotated_cone(p, 0.0, [1.0, 0.0], Affine.var(th))
        sol = solve(p)
        err = abs(sol.x[th] - (math.sqrt(2) - 1))
        d.update(disagreements=disagree, theta_error=f"{err:.2e}")
        assert disagree == 0
        assert sol.status == "optimal" and err <= 1e-6


def test_criterion_8_property_suites(criterion):
    with criterion(8, "geometry and CPA property suites, 1e4 cases each") as d:
        rng = np.random.default_rng(8)
        cases = 10_000
        S = [random_simplex(rng, scale=10.0 ** rng.uniform(-2, 1)) for _ in range(cases)]
        tri = Triangulation(np.vstack(S), np.arange(3 * cases).reshape(cases, 3))
        # barycentric reconstruction
        pts = np.einsum("qj,qjk->qk", rng.dirichlet(np.ones(3), size=cases), np.array(S))
        lam = tri.barycentric_many(np.arange(cases), pts)
        resid = np.linalg.norm(np.einsum("qj,qjk->qk", lam, np.array(S)) - pts, axis=1)
        assert np.all(resid <= 1e-9 * tri.diameters())
        # planted affine gradient recovery
        a = rng.normal(size=(cases, 2))
        vals = np.einsum("qjk,qk->qj", np.array(S), a) + rng.normal(size=(cases, 1))
        g = CpaFunction(tri, vals.ravel()).gradients
        grad_err = float((np.linalg.norm(g - a, axis=1) / np.maximum(1, np.linalg.norm(a, axis=1))).max())
        assert grad_err <= 1e-7
        # shared-face continuity
        mesh = delaunay_triangulate(rng.uniform(-1, 1, size=(300, 2)))
        f = CpaFunction(mesh, rng.normal(size=mesh.n_vertices))
        pairs = [(i, int(k), j) for i in range(mesh.n_simplices) for j in range(3) if (k := mesh.neighbors[i, j]) > i]
        worst = 0.0
        for (i, k, j), t in zip((pairs[p] for p in rng.integers(len(pairs), size=cases)), rng.uniform(size=cases)):
            u, w = [mesh.simplices[i][q] for q in range(3) if q != j]
            x = (1 - t) * mesh.vertices[u] + t * mesh.vertices[w]
            worst = max(worst, abs(mesh.barycentric(i, x) @ f.values[mesh.simplices[i]]
                                   - mesh.barycentric(k, x) @ f.values[mesh.simplices[k]]))
        assert worst <= 1e-8
        # bisection conformity
        done = 0
        for _ in range(20):
            m = delaunay_triangulate(rng.uniform(0, 1, size=(30, 2)))
            area = m.volumes().sum()
            for _ in range(500):
                m, *_ = bisect_longest_edge(m, int(rng.integers(m.n_simplices)))
                done += 1
            counts = {}
            for s in m.simplices.tolist():
                for e in itertools.combinations(sorted(s), 2):
                    counts[e] = counts.get(e, 0) + 1
            assert max(counts.values()) <= 2 and np.all(m.signed_volumes() > 0)
            assert m.volumes().sum() == pytest.approx(area, rel=1e-12)
        d.update(grad_err=f"{grad_err:.1e}", continuity=f"{worst:.1e}", bisections=done)
        assert done >= cases


def test_criterion_9_lipschitz(criterion):
    with criterion(9, "Lipschitz audit, 1e5 pairs per benchmark") as d:
        rng = np.random.default_rng(9)
        n = 100_000
        viol = {}
        o = linear_autonomous()
        p, q = (rng.uniform(o.state_box[:, 0], o.state_box[:, 1], size=(n, 2)) for _ in range(2))
        viol["linear"] = int(np.sum(np.linalg.norm(o.step(p) - o.step(q), axis=1)
                                    > 0.5837 * np.linalg.norm(p - q, axis=1)))
        o = nonlinear_autonomous()
        p, q = (rng.uniform(-1, 1, size=(n, 2)) for _ in range(2))
        viol["nonlinear"] = int(np.sum(np.linalg.norm(o.step(p) - o.step(q), axis=1)
                                       > 4.05 * np.linalg.norm(p - q, axis=1)))
        o = linear_nonautonomous()
        box = np.vstack([o.state_box, o.input_box])
        p, q = (rng.uniform(box[:, 0], box[:, 1], size=(n, 3)) for _ in range(2))
        lhs = np.linalg.norm(o.step(p[:, :2], p[:, 2:]) - o.step(q[:, :2], q[:, 2:]), axis=1)
        viol["split"] = int(np.sum(lhs > 0.5837 * np.linalg.norm(p[:, :2] - q[:, :2], axis=1)
                                   + np.abs(p[:, 2] - q[:, 2])))
        d.update(viol)
        assert sum(viol.values()) == 0


def test_criterion_10_boundary_refinement(criterion, boundary_refine_run):
    with criterion(10, "boundary refinement at spacing 0.25") as d:
        base, refined = boundary_refine_run
        b, r = base.result, refined.result
        pts = [p for p in r.inserted_points if p["kind"] == "boundary"]
        d.update(area_before=round(b.area, 6), area_after=round(r.area, 6), inserted=len(pts))
        assert b.feasible and r.feasible and r.certificate.passed
        assert r.area >= b.area - 1e-9
        assert pts, "no boundary round was accepted"
        V = r.tri.vertices
        # round one starts from the base result, which is checked directly
        first = [p for p in pts if p["round"] == 1]
        changing = b.W.sign_changing()
        edges = {tuple(sorted(e)) for i in np.flatnonzero(changing)
                 for e in itertools.combinations(b.tri.simplices[i].tolist(), 2)}
        for p in first:
            assert tuple(sorted(p["edge"])) in edges
        for p in pts:
            u, w = p["edge"]
            assert p["point"] == (0.5 * (V[u] + V[w])).tolist()
            assert u in p["simplex"] and w in p["simplex"]
            sw = np.array(p["simplex_w"])
            assert sw.min() < 0 < sw.max()
