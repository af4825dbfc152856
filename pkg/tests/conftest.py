"""Shared fixtures.

Benchmark synthesis runs are expensive (minutes on one core), so each is
computed once per session and shared by the unit, integration and
acceptance tests.
"""
from __future__ import annotations

import time

import numpy as np
import pytest

from cpabarrier import SynthesisConfig, grid_sample, linear_autonomous, linear_nonautonomous, nonlinear_autonomous
from cpabarrier.geometry import delaunay_triangulate, grid_points
from cpabarrier.synthesis import run

# per-segment phase-one cap for the nonlinear desk run: with L = 4.05 at spacing 0.1
# the slack plateaus, so the run is expected to exercise refinement instead
NONLINEAR_PHASE1_CAP = 25


def random_simplex(rng, n=2, scale=1.0, min_volume=1e-3):
    while True:
        pts = rng.uniform(-scale, scale, size=(n + 1, n))
        d = pts[1:] - pts[0]
        if abs(np.linalg.det(d)) > min_volume * scale**n:
            return pts


@pytest.fixture(scope="session")
def grid_tri():
    return delaunay_triangulate(grid_points([-0.25, -1.0], [1.0, 0.25], 0.0625))


class TimedRun:
    def __init__(self, oracle, dataset, config, result, seconds):
        self.oracle = oracle
        self.dataset = dataset
        self.config = config
        self.result = result
        self.seconds = seconds


def _timed(system, dataset, config, **kw):
    t0 = time.perf_counter()
    res = run(dataset, config, **kw)
    return TimedRun(system, dataset, config, res, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def linear_auto_run():
    o = linear_autonomous()
    d = grid_sample(o, o.state_box, 0.0625)
    return _timed(o, d, SynthesisConfig())


@pytest.fixture(scope="session")
def linear_nonauto_run():
    o = linear_nonautonomous()
    d = grid_sample(o, o.state_box, 0.0625, o.input_box, 0.1)
    return _timed(o, d, SynthesisConfig(max_iter_phase1=100))


@pytest.fixture(scope="session")
def nonlinear_run():
    o = nonlinear_autonomous()
    d = grid_sample(o, o.state_box, 0.1)
    cfg = SynthesisConfig(max_iter_phase1=NONLINEAR_PHASE1_CAP, max_iter_phase2=10, refine="feasibility",
                          refine_rounds=5)
    return _timed(o, d, cfg, oracle=o)


@pytest.fixture(scope="session")
def boundary_refine_run():
    """The boundary-refinement protocol at spacing 0.25 on the linear system.

    The bare 0.25 grid stalls in phase one, so the base mesh is first made
    feasible by feasibility refinement; boundary rounds then start from it.
    """
    o = linear_autonomous()
    d = grid_sample(o, o.state_box, 0.25)
    seeded = run(d, SynthesisConfig(max_iter_phase2=0, refine="feasibility", refine_rounds=5), oracle=o)
    base = _timed(o, seeded.dataset, SynthesisConfig(max_iter_phase2=20), tri=seeded.tri)
    refined = _timed(o, seeded.dataset, SynthesisConfig(max_iter_phase2=20, refine="boundary", refine_rounds=3),
                     oracle=o, tri=seeded.tri)
    return base, refined


@pytest.fixture(scope="session")
def small_linear_run():
    """A quick feasible run used by bundle and CLI tests."""
    o = linear_autonomous()
    d = grid_sample(o, o.state_box, 0.125)
    return _timed(o, d, SynthesisConfig(max_iter_phase2=3))
