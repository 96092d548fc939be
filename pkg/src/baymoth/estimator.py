from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .benchmark import bounds_of
from .gp import Dataset, Domain, KernelConfig
from .meta import build_environments
from .policy import PolicyConfig, SessionState, ask, tell


class BayMOTH(BaseEstimator):
    """Meta-informed two-step lookahead optimizer with an ask/tell interface.

    ``fit`` takes the source tasks as a list of ``(X, y)`` pairs and builds one
    virtual environment per task.  Proposals are in the coordinates of
    ``bounds`` (default: the bounding box of all source inputs).

    Example::

        opt = BayMOTH(budget=10).fit([(X1, y1), (X2, y2)])
        x_best, y_best = opt.optimize(f)
    """

    def __init__(self, alpha: float = 0.5, gamma: float = 0.7, mc_samples: int = 5,
                 budget: int = 10, noise: float = 1e-6, length_scale: float = 0.2,
                 lookahead_length_scale: float = 0.05, source_length_scale: float = 0.05,
                 bounds=None, random_state: Optional[int] = 0):
        self.alpha = alpha
        self.gamma = gamma
        self.mc_samples = mc_samples
        self.budget = budget
        self.noise = noise
        self.length_scale = length_scale
        self.lookahead_length_scale = lookahead_length_scale
        self.source_length_scale = source_length_scale
        self.bounds = bounds
        self.random_state = random_state

    def _policy_config(self) -> PolicyConfig:
        seed = self.random_state
        if not isinstance(seed, (int, np.integer)):
            seed = int(check_random_state(seed).randint(2**31 - 1))
        return PolicyConfig(
            alpha=self.alpha, gamma=self.gamma, mc_samples=self.mc_samples,
            budget=self.budget, noise=self.noise,
            lambda0=KernelConfig(self.length_scale),
            lambda1=KernelConfig(self.lookahead_length_scale),
            source=KernelConfig(self.source_length_scale),
            comparison=KernelConfig(self.length_scale),
            seed=int(seed),
        )

    def fit(self, sources: Sequence[Tuple[np.ndarray, np.ndarray]], y=None) -> "BayMOTH":
        cfg = self._policy_config()
        pairs = [check_X_y(X, yy, y_numeric=True) for X, yy in sources]
        if not pairs and self.bounds is None:
            raise ValueError("need source tasks or explicit bounds")
        if self.bounds is not None:
            domain = Domain(np.asarray(self.bounds, dtype=float))
        else:
            domain = bounds_of(*[X for X, _ in pairs])
        for X, _ in pairs:
            if X.shape[1] != domain.dim:
                raise ValueError(f"source has {X.shape[1]} features, expected {domain.dim}")
        self.domain_ = domain
        self.envs_ = build_environments(
            [Dataset(domain.to_unit(X), yy) for X, yy in pairs], cfg.source, cfg.noise)
        self.state_ = SessionState.new(cfg, domain)
        self.n_features_in_ = domain.dim
        return self

    def ask(self) -> np.ndarray:
        check_is_fitted(self, "state_")
        x, self.last_info_ = ask(self.state_, self.envs_)
        return x

    def tell(self, x, y: float) -> "BayMOTH":
        check_is_fitted(self, "state_")
        tell(self.state_, check_array(np.atleast_2d(x)).ravel(), float(y))
        return self

    def optimize(self, func, n_iter: Optional[int] = None) -> Tuple[np.ndarray, float]:
        """Run ask/func/tell for ``n_iter`` (default ``budget``) evaluations."""
        for _ in range(self.budget if n_iter is None else n_iter):
            x = self.ask()
            self.tell(x, func(x))
        return self.best_

    @property
    def X_(self) -> np.ndarray:
        check_is_fitted(self, "state_")
        return self.domain_.from_unit(self.state_.history.points)

    @property
    def y_(self) -> np.ndarray:
        check_is_fitted(self, "state_")
        return self.state_.history.values.copy()

    @property
    def best_(self) -> Tuple[np.ndarray, float]:
        if len(self.y_) == 0:
            raise ValueError("no observations yet")
        i = int(np.argmax(self.y_))
        return self.X_[i], float(self.y_[i])
