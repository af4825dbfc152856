"""Benchmark dynamics oracles and trajectory simulation."""
from __future__ import annotations

import csv
from abc import ABC, abstractmethod
from typing import Callable, Optional, Protocol

import numpy as np

from .dataset import LipschitzInfo
from .exceptions import InputOutOfRange

A_BENCH = np.array([[0.22, 0.4013], [-0.5364, 0.2109]])
B_BENCH = np.array([[0.0], [1.0]])
L_LINEAR = 0.5837
L_NONLINEAR = 4.05


class DynamicsOracle(ABC):
    """Deterministic one-step map x+ = g(x, u), vectorized over leading axes."""

    n: int
    m: int
    lipschitz: LipschitzInfo
    state_box: np.ndarray
    input_box: np.ndarray

    @abstractmethod
    def step(self, x, u=None) -> np.ndarray: ...

    def __call__(self, x, u=None) -> np.ndarray:
        return self.step(x, u)


class Controller(Protocol):
    def control(self, x) -> np.ndarray: ...


class LinearOracle(DynamicsOracle):
    def __init__(self, A, B=None, lipschitz: Optional[LipschitzInfo] = None, state_box=None, input_box=None,
                 input_tol: float = 1e-12):
        self.A = np.asarray(A, dtype=float)
        self.n = self.A.shape[0]
        self.B = np.zeros((self.n, 0)) if B is None else np.asarray(B, dtype=float)
        self.m = self.B.shape[1]
        self.lipschitz = lipschitz
        self.state_box = None if state_box is None else np.asarray(state_box, dtype=float)
        self.input_box = np.zeros((0, 2)) if input_box is None else np.asarray(input_box, dtype=float)
        self.input_tol = input_tol

    def step(self, x, u=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = x @ self.A.T
        if self.m:
            if u is None:
                raise InputOutOfRange("this system requires an input")
            u = np.asarray(u, dtype=float).reshape(x.shape[:-1] + (self.m,))
            lo, hi = self.input_box[:, 0], self.input_box[:, 1]
            if np.any(u < lo - self.input_tol) or np.any(u > hi + self.input_tol):
                raise InputOutOfRange(f"input outside {self.input_box.tolist()}")
            out = out + u @ self.B.T
        return out


class PolynomialOracle(DynamicsOracle):
    """x+ = (0.5 x1 - 0.7 x2^2, 0.9 x2^3 + x1 x2)."""

    n, m = 2, 0

    def __init__(self):
        self.lipschitz = LipschitzInfo.joint(L_NONLINEAR)
        self.state_box = np.array([[-1.0, 1.0], [-1.0, 1.0]])
        self.input_box = np.zeros((0, 2))

    def step(self, x, u=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([0.5 * x1 - 0.7 * x2**2, 0.9 * x2**3 + x1 * x2], axis=-1)


def linear_autonomous() -> LinearOracle:
    return LinearOracle(A_BENCH, lipschitz=LipschitzInfo.joint(L_LINEAR),
                        state_box=[[-0.25, 1.0], [-1.0, 0.25]])


def nonlinear_autonomous() -> PolynomialOracle:
    return PolynomialOracle()


def linear_nonautonomous() -> LinearOracle:
    return LinearOracle(A_BENCH, B_BENCH, lipschitz=LipschitzInfo.split(L_LINEAR, 1.0),
                        state_box=[[-0.25, 1.0], [-1.0, 0.25]], input_box=[[-1.0, 1.0]])


BENCHMARKS: dict[str, Callable[[], DynamicsOracle]] = {
    "linear-auto": linear_autonomous,
    "nonlinear-auto": nonlinear_autonomous,
    "linear-nonauto": linear_nonautonomous,
}


def benchmark(name: str) -> DynamicsOracle:
    try:
        return BENCHMARKS[name]()
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None


class ConstantController:
    def __init__(self, u):
        self.u = np.atleast_1d(np.asarray(u, dtype=float))

    def control(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.u, x.shape[:-1] + self.u.shape).copy()


def simulate(oracle: DynamicsOracle, controller: Optional[Controller], x0, horizon: int,
             return_inputs: bool = False):
    """Roll ``oracle`` forward ``horizon`` steps from ``x0``.

    Returns the (horizon+1, n) state array, plus the (horizon, m) inputs when
    ``return_inputs`` is set.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if oracle.m > 0 and controller is None:
        raise ValueError("a controller is required for systems with inputs")
    x = np.asarray(x0, dtype=float)
    states = [x]
    inputs = []
    for _ in range(horizon):
        if oracle.m > 0:
            u = np.asarray(controller.control(x), dtype=float)
            inputs.append(u)
            x = oracle.step(x, u)
        else:
            inputs.append(np.zeros(0))
            x = oracle.step(x)
        states.append(x)
    traj = np.array(states)
    if return_inputs:
        return traj, np.array(inputs).reshape(horizon, oracle.m)
    return traj


def save_trajectory(path, states, inputs=None) -> None:
    states = np.asarray(states, dtype=float)
    n = states.shape[1]
    m = 0 if inputs is None else np.asarray(inputs).reshape(len(states) - 1, -1).shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"x{k + 1}" for k in range(n)] + [f"u{k + 1}" for k in range(m)])
        for k, x in enumerate(states.tolist()):
            row = [k] + [repr(v) for v in x]
            if m:
                u = np.asarray(inputs).reshape(len(states) - 1, m)
                row += [repr(float(v)) for v in u[k]] if k < len(u) else [""] * m
            w.writerow(row)
