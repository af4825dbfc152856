"""scikit-learn style facade over the synthesis pipeline.

``fit`` takes a one-step :class:`~cpabarrier.dataset.Dataset` (or a path to
one) rather than a feature matrix; after fitting, ``decision_function`` is the
extended barrier value and ``predict`` flags membership of the safe set.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import dataset as ds
from .config import SynthesisConfig
from .dynamics import benchmark
from .synthesis import run
from .verify import extract_controller


class CpaBarrier(BaseEstimator):
    def __init__(self, epsilon: float = 0.1, rho: float = 1.0, chi: float = 1e-6, gamma_cap: float = 1e3,
                 max_iter_phase1: int = 200, max_iter_phase2: int = 50, b_mode: str = "decision-variable",
                 slack_form: str = "corner", tol: float = 1e-8, norm: str = "euclidean",
                 refine: str = "none", refine_rounds: int = 5, oracle: Optional[str] = None):
        self.epsilon = epsilon
        self.rho = rho
        self.chi = chi
        self.gamma_cap = gamma_cap
        self.max_iter_phase1 = max_iter_phase1
        self.max_iter_phase2 = max_iter_phase2
        self.b_mode = b_mode
        self.slack_form = slack_form
        self.tol = tol
        self.norm = norm
        self.refine = refine
        self.refine_rounds = refine_rounds
        self.oracle = oracle

    def _config(self) -> SynthesisConfig:
        params = self.get_params()
        params.pop("oracle")
        return SynthesisConfig(**params)

    def fit(self, X, y=None):
        """Synthesize a barrier from one-step data ``X`` (Dataset or CSV path)."""
        data = X if isinstance(X, ds.Dataset) else ds.load(X)
        oracle = benchmark(self.oracle) if isinstance(self.oracle, str) else self.oracle
        self.result_ = run(data, self._config(), oracle=oracle)
        self.W_ = self.result_.W
        self.gamma_ = self.result_.gamma
        self.b_ = self.result_.b
        self.feasible_ = self.result_.feasible
        self.certificate_ = self.result_.certificate
        self.area_ = self.result_.area
        self.n_features_in_ = data.n
        return self

    def _points(self, X) -> np.ndarray:
        check_is_fitted(self, "result_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def decision_function(self, X) -> np.ndarray:
        """Extended barrier value; non-positive means inside the safe set."""
        pts = self._points(X)
        return self.W_.evaluate_many(pts, extended=True)

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X) <= 0

    def controller(self):
        check_is_fitted(self, "result_")
        return extract_controller(self.result_)
