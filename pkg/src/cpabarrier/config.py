"""Synthesis settings shared by the ICO loop, the verifier and the CLI."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .dataset import LipschitzInfo

B_MODES = ("decision-variable", "frozen")
SLACK_FORMS = ("corner", "identity")
REFINE_MODES = ("none", "feasibility", "boundary")


@dataclass(frozen=True)
class SynthesisConfig:
    epsilon: float = 0.1
    rho: float = 1.0
    chi: float = 1e-6
    gamma_cap: float = 1e3
    w_cap: Optional[float] = None  # defaults to 10 * max(rho, epsilon)
    strict_margin: float = 1e-8
    # extra margin added to the decrease rows so that slacks below the
    # solver tolerance still leave the exact condition strictly satisfied
    margin_buffer: float = 1e-6
    max_iter_phase1: int = 200
    max_iter_phase2: int = 50
    b_mode: str = "decision-variable"
    slack_form: str = "corner"
    tol: float = 1e-8
    solver_max_iter: int = 100
    norm: str = "euclidean"
    guard_inputs: bool = True
    lipschitz: Optional[LipschitzInfo] = None
    refine: str = "none"
    refine_rounds: int = 5
    dump_dir: Optional[str] = None

    def __post_init__(self):
        for name in ("epsilon", "rho", "chi", "gamma_cap", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.gamma_cap < 1:
            raise ValueError("gamma_cap must be at least 1")
        if self.w_cap is not None and (self.w_cap < self.rho or self.w_cap < self.epsilon):
            raise ValueError("w_cap must be at least max(rho, epsilon)")
        if self.strict_margin < 0 or self.margin_buffer < 0:
            raise ValueError("margins must be non-negative")
        if self.b_mode not in B_MODES:
            raise ValueError(f"b_mode must be one of {B_MODES}")
        if self.slack_form not in SLACK_FORMS:
            raise ValueError(f"slack_form must be one of {SLACK_FORMS}")
        if self.refine not in REFINE_MODES:
            raise ValueError(f"refine must be one of {REFINE_MODES}")
        if self.norm not in ("euclidean", "max"):
            raise ValueError("norm must be 'euclidean' or 'max'")
        if self.max_iter_phase1 < 0 or self.max_iter_phase2 < 0:
            raise ValueError("iteration caps must be non-negative")

    @property
    def W_max(self) -> float:
        return self.w_cap if self.w_cap is not None else 10.0 * max(self.rho, self.epsilon)

    @property
    def theta_tol(self) -> float:
        return 10.0 * self.tol

    @property
    def decrease_margin(self) -> float:
        return self.strict_margin + self.margin_buffer

    def norm_factor(self, n: int) -> float:
        """Converts the gradient bound into a Euclidean Lipschitz bound of W."""
        return math.sqrt(n) if self.norm == "max" else 1.0

    def with_(self, **changes) -> "SynthesisConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "lipschitz"}
        d["w_cap"] = self.W_max
        d["lipschitz"] = None if self.lipschitz is None else self.lipschitz.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisConfig":
        d = dict(d)
        lip = d.pop("lipschitz", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if lip is not None:
            d["lipschitz"] = LipschitzInfo.from_dict(lip)
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "SynthesisConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def resolve_lipschitz(config: SynthesisConfig, dataset) -> LipschitzInfo:
    lip = config.lipschitz if config.lipschitz is not None else dataset.lipschitz
    if lip is None:
        raise ValueError("no Lipschitz constant: set it in the config or the dataset sidecar")
    if lip.mode == "split" and dataset.m == 0:
        raise ValueError("split Lipschitz mode needs inputs")
    return lip
