"""One-step trajectory data: containers, grid sampling, CSV/JSON I/O."""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import EmptyDataset, SchemaError
from .geometry import Triangulation, grid_points


@dataclass(frozen=True)
class LipschitzInfo:
    """Lipschitz constant(s) of the dynamics w.r.t. the Euclidean norm.

    ``joint`` uses one constant for the stacked (x, u) argument; ``split``
    bounds ||g(x,u) - g(y,w)|| <= L_x ||x - y|| + L_u ||u - w||.
    """

    mode: str = "joint"
    L: Optional[float] = None
    L_x: Optional[float] = None
    L_u: Optional[float] = None

    def __post_init__(self):
        if self.mode == "joint":
            if self.L is None or not self.L > 0:
                raise ValueError("joint mode needs L > 0")
        elif self.mode == "split":
            if self.L_x is None or self.L_u is None or not (self.L_x > 0 and self.L_u > 0):
                raise ValueError("split mode needs L_x > 0 and L_u > 0")
        else:
            raise ValueError(f"unknown Lipschitz mode {self.mode!r}")

    @classmethod
    def joint(cls, L: float) -> "LipschitzInfo":
        return cls("joint", L=float(L))

    @classmethod
    def split(cls, L_x: float, L_u: float) -> "LipschitzInfo":
        return cls("split", L_x=float(L_x), L_u=float(L_u))

    def error_coefficient(self, c_state: float, c_input: float, c_joint: float) -> float:
        """Multiplier of the gradient bound in the interpolation error term."""
        if self.mode == "joint":
            return self.L * c_joint
        return self.L_x * c_state + self.L_u * c_input

    def bound(self, dx: float, du: float) -> float:
        if self.mode == "joint":
            return self.L * float(np.hypot(dx, du))
        return self.L_x * dx + self.L_u * du

    def to_dict(self) -> dict:
        if self.mode == "joint":
            return {"L_mode": "joint", "L": self.L}
        return {"L_mode": "split", "L_x": self.L_x, "L_u": self.L_u}

    @classmethod
    def from_dict(cls, d: dict) -> "LipschitzInfo":
        mode = d.get("L_mode", "joint")
        if mode == "joint":
            return cls.joint(d["L"])
        return cls.split(d["L_x"], d["L_u"])


@dataclass(frozen=True)
class OneStepSample:
    state: np.ndarray
    transitions: list  # [(input, successor), ...]


@dataclass(eq=False)
class Dataset:
    """N sampled states, each with M (input, successor) transitions.

    ``inputs`` has shape (N, M, m) (m = 0 for autonomous data) and
    ``successors`` has shape (N, M, n).
    """

    states: np.ndarray
    inputs: np.ndarray
    successors: np.ndarray
    state_box: np.ndarray
    input_box: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    lipschitz: Optional[LipschitzInfo] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.successors = np.asarray(self.successors, dtype=float)
        N = self.states.shape[0]
        if self.states.ndim != 2 or N == 0:
            raise EmptyDataset("dataset needs at least one sample")
        n = self.states.shape[1]
        if self.successors.ndim == 2:
            self.successors = self.successors[:, None, :]
        M = self.successors.shape[1]
        if self.successors.shape != (N, M, n) or M < 1:
            raise SchemaError("successors must have shape (N, M, n) with M >= 1")
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(N, M, -1)
        self.state_box = np.asarray(self.state_box, dtype=float).reshape(n, 2)
        self.input_box = np.asarray(self.input_box, dtype=float).reshape(-1, 2)
        if self.input_box.shape[0] != self.m:
            raise SchemaError("input box dimension does not match the inputs")
        lo, hi = self.state_box[:, 0], self.state_box[:, 1]
        if np.any(self.states < lo) or np.any(self.states > hi):
            raise SchemaError("sample states must lie inside the state box")
        if self.m:
            ulo, uhi = self.input_box[:, 0], self.input_box[:, 1]
            if np.any(self.inputs < ulo) or np.any(self.inputs > uhi):
                raise SchemaError("inputs must lie inside the input box")

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.inputs.shape[2]

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def M(self) -> int:
        return self.successors.shape[1]

    @property
    def samples(self) -> list[OneStepSample]:
        return [
            OneStepSample(self.states[z], [(self.inputs[z, k], self.successors[z, k]) for k in range(self.M)])
            for z in range(self.N)
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.states, other.states)
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.successors, other.successors)
            and np.array_equal(self.state_box, other.state_box)
            and np.array_equal(self.input_box, other.input_box)
            and self.lipschitz == other.lipschitz
        )

    def with_samples(self, states, inputs, successors) -> "Dataset":
        """Copy of the dataset with extra samples appended."""
        states = np.asarray(states, dtype=float).reshape(-1, self.n)
        return Dataset(
            np.vstack([self.states, states]),
            np.concatenate([self.inputs, np.asarray(inputs, dtype=float).reshape(len(states), self.M, self.m)]),
            np.concatenate([self.successors, np.asarray(successors, dtype=float).reshape(len(states), self.M, self.n)]),
            self.state_box,
            self.input_box,
            self.lipschitz,
        )

    # -- I/O ---------------------------------------------------------------------

    def save(self, path) -> None:
        save(self, path)

    @classmethod
    def load(cls, path) -> "Dataset":
        return load(path)


def input_grid(input_box, input_spacing) -> np.ndarray:
    input_box = np.asarray(input_box, dtype=float).reshape(-1, 2)
    if input_box.shape[0] == 0:
        return np.zeros((1, 0))
    return grid_points(input_box[:, 0], input_box[:, 1], input_spacing)


def grid_sample(oracle, state_box, spacing, input_box=None, input_spacing=None, lipschitz=None) -> Dataset:
    """Sample one-step transitions on a regular state grid times a regular input grid."""
    state_box = np.asarray(state_box, dtype=float)
    states = grid_points(state_box[:, 0], state_box[:, 1], spacing)
    if input_box is None or np.asarray(input_box).size == 0:
        input_box = np.zeros((0, 2))
        inputs = np.zeros((1, 0))
    else:
        if input_spacing is None:
            raise ValueError("input_spacing is required when an input box is given")
        input_box = np.asarray(input_box, dtype=float).reshape(-1, 2)
        inputs = input_grid(input_box, input_spacing)
    N, M = len(states), len(inputs)
    X = np.repeat(states[:, None, :], M, axis=1)
    U = np.broadcast_to(inputs[None, :, :], (N, M, inputs.shape[1])).copy()
    succ = oracle.step(X, U) if inputs.shape[1] else oracle.step(X)
    return Dataset(states, U, succ, state_box, input_box,
                   lipschitz if lipschitz is not None else getattr(oracle, "lipschitz", None))


def sample_states(oracle, states, input_values) -> tuple[np.ndarray, np.ndarray]:
    """Transitions for new states using the given per-state input list (M, m)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    input_values = np.asarray(input_values, dtype=float).reshape(-1, oracle.m)
    N, M = len(states), len(input_values)
    X = np.repeat(states[:, None, :], M, axis=1)
    U = np.broadcast_to(input_values[None], (N, M, oracle.m)).copy()
    succ = oracle.step(X, U) if oracle.m else oracle.step(X)
    return U, succ


_COL = re.compile(r"^(x|u|xp)(\d+)$")


def save(dataset: Dataset, path) -> None:
    path = Path(path)
    n, m = dataset.n, dataset.m
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state_id"] + [f"x{k + 1}" for k in range(n)] + [f"u{k + 1}" for k in range(m)]
                   + [f"xp{k + 1}" for k in range(n)])
        for z in range(dataset.N):
            xs = [repr(float(v)) for v in dataset.states[z]]
            for k in range(dataset.M):
                w.writerow([z] + xs + [repr(float(v)) for v in dataset.inputs[z, k]]
                           + [repr(float(v)) for v in dataset.successors[z, k]])
    sidecar = {
        "n": n,
        "m": m,
        "state_box": dataset.state_box.tolist(),
        "input_box": dataset.input_box.tolist(),
    }
    if dataset.lipschitz is not None:
        sidecar.update(dataset.lipschitz.to_dict())
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load(path) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path.name}: missing header")
    header = [h.strip() for h in rows[0]]
    if header[0] != "state_id":
        raise SchemaError(f"{path.name}: first column must be state_id")
    kinds = []
    for h in header[1:]:
        mt = _COL.match(h)
        if mt is None:
            raise SchemaError(f"{path.name}: unexpected column {h!r}")
        kinds.append(mt.group(1))
    n = kinds.count("x")
    m = kinds.count("u")
    if kinds != ["x"] * n + ["u"] * m + ["xp"] * n or n == 0:
        raise SchemaError(f"{path.name}: columns must be state_id, x1..xn, u1..um, xp1..xpn")
    width = len(header)
    groups: dict[int, list] = {}
    order = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise SchemaError(f"{path.name} row {lineno}: expected {width} columns, got {len(row)}")
        try:
            sid = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise SchemaError(f"{path.name} row {lineno}: non-numeric cell ({exc})") from None
        if sid not in groups:
            groups[sid] = []
            order.append(sid)
        groups[sid].append((lineno, vals))
    if not order:
        raise EmptyDataset(f"{path.name}: no samples")
    counts = {len(g) for g in groups.values()}
    if len(counts) != 1:
        raise SchemaError(f"{path.name}: inconsistent transition counts per state {sorted(counts)}")
    states, inputs, succ = [], [], []
    for sid in order:
        rows_z = groups[sid]
        x0 = rows_z[0][1][:n]
        for lineno, vals in rows_z:
            if vals[:n] != x0:
                raise SchemaError(f"{path.name} row {lineno}: state {sid} has inconsistent coordinates")
        states.append(x0)
        inputs.append([vals[n : n + m] for _, vals in rows_z])
        succ.append([vals[n + m :] for _, vals in rows_z])
    states = np.array(states)
    M = len(inputs[0])
    inputs = np.array(inputs, dtype=float).reshape(len(states), M, m)
    succ = np.array(succ)
    side_path = path.with_suffix(".json")
    lipschitz = None
    if side_path.exists():
        side = json.loads(side_path.read_text())
        if side.get("n", n) != n or side.get("m", m) != m:
            raise SchemaError(f"{side_path.name}: dimensions disagree with {path.name}")
        state_box = np.array(side["state_box"], dtype=float)
        input_box = np.array(side.get("input_box", []), dtype=float).reshape(-1, 2)
        if "L_mode" in side:
            lipschitz = LipschitzInfo.from_dict(side)
    else:
        state_box = np.stack([states.min(axis=0), states.max(axis=0)], axis=1)
        input_box = (np.stack([inputs.reshape(-1, m).min(axis=0), inputs.reshape(-1, m).max(axis=0)], axis=1)
                     if m else np.zeros((0, 2)))
    return Dataset(states, inputs, succ, state_box, input_box, lipschitz)


def annotate_containment(dataset: Dataset, tri: Triangulation) -> np.ndarray:
    """(N, M) flags: successor lies in the triangulated domain."""
    idx = tri.locate_many(dataset.successors.reshape(-1, dataset.n))
    return (idx >= 0).reshape(dataset.N, dataset.M)


def estimate_lipschitz_lower_bound(dataset: Dataset, chunk: int = 2048) -> float:
    """Largest observed ratio ||x+_a - x+_b|| / ||(x_a,u_a) - (x_b,u_b)|| over sample pairs."""
    P = np.concatenate([np.repeat(dataset.states[:, None, :], dataset.M, axis=1), dataset.inputs], axis=2)
    P = P.reshape(-1, dataset.n + dataset.m)
    Y = dataset.successors.reshape(-1, dataset.n)
    if len(P) < 2:
        raise ValueError("need at least two samples")
    best = 0.0
    for start in range(0, len(P), chunk):
        dp = np.linalg.norm(P[start : start + chunk, None, :] - P[None, :, :], axis=2)
        dy = np.linalg.norm(Y[start : start + chunk, None, :] - Y[None, :, :], axis=2)
        ok = dp > 0
        if np.any(ok):
            best = max(best, float(np.max(dy[ok] / dp[ok])))
    return best
