"""scikit-learn style wrappers around the descriptor, binning, surrogate and search.

Arrays are ``(n, 3)``: behaviors as ``dx, dy, dpsi`` and parameters as
``f1, f2, f3``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .angles import wrap_angle
from .bridge import Evaluator, EvaluatorConfig, SurrogateBackend
from .repertoire import (Behavior, BinGeometry, ParameterSet, SearchConfig, bin_index, fitness,
                         run_map_elites)


def _check_behaviors(X) -> np.ndarray:
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != 3:
        raise ValueError(f"expected 3 columns (dx, dy, dpsi), got {X.shape[1]}")
    return X


def _check_params(X) -> np.ndarray:
    X = check_array(X, dtype=None)
    if X.shape[1] != 3:
        raise ValueError(f"expected 3 columns (f1, f2, f3), got {X.shape[1]}")
    Xf = X.astype(np.float64)
    if not np.all(Xf == np.round(Xf)) or Xf.min() < 0 or Xf.max() > 255:
        raise ValueError("parameters must be integers in [0, 255]")
    return Xf.astype(np.int64)


class BehaviorBinner(TransformerMixin, BaseEstimator):
    """Map behaviors to ``(ix, iy, ipsi)`` bin indices of a uniform grid."""

    def __init__(self, x_bounds=(-360.0, 360.0), y_bounds=(-360.0, 360.0), nx=12, ny=12, npsi=6):
        self.x_bounds = x_bounds
        self.y_bounds = y_bounds
        self.nx = nx
        self.ny = ny
        self.npsi = npsi

    def fit(self, X=None, y=None):
        self.geometry_ = BinGeometry(tuple(self.x_bounds), tuple(self.y_bounds), (-180.0, 180.0),
                                     int(self.nx), int(self.ny), int(self.npsi))
        self.n_features_in_ = 3
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "geometry_")
        X = _check_behaviors(X)
        out = np.empty((len(X), 3), dtype=np.int64)
        for k, row in enumerate(X):
            out[k] = bin_index(Behavior(*row), self.geometry_)[0]
        return out

    def fitness(self, X) -> np.ndarray:
        check_is_fitted(self, "geometry_")
        X = _check_behaviors(X)
        return np.array([fitness(Behavior(*row), self.geometry_) for row in X])


class PoseToBehavior(TransformerMixin, BaseEstimator):
    """Rows ``x0, y0, yaw0, x1, y1, yaw1`` (global frame) to local behaviors."""

    def fit(self, X=None, y=None):
        self.n_features_in_ = 6
        return self

    def transform(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 6:
            raise ValueError(f"expected 6 columns (x0, y0, yaw0, x1, y1, yaw1), got {X.shape[1]}")
        gx, gy = X[:, 3] - X[:, 0], X[:, 4] - X[:, 1]
        a = np.radians(-X[:, 2])
        c, s = np.cos(a), np.sin(a)
        return np.column_stack([c * gx - s * gy, s * gx + c * gy, wrap_angle(X[:, 5] - X[:, 2])])


class TensegritySurrogate(BaseEstimator):
    """``predict`` maps parameter sets to surrogate behaviors."""

    def __init__(self, duration_s=2.0, seed=0, noise_mm=0.0, friction=0.6, eccentric_mass=7.5):
        self.duration_s = duration_s
        self.seed = seed
        self.noise_mm = noise_mm
        self.friction = friction
        self.eccentric_mass = eccentric_mass

    def fit(self, X=None, y=None):
        from .sim import SimConfig, TensegritySim, default_structure

        cfg = SimConfig(duration_s=float(self.duration_s), noise_mm=float(self.noise_mm),
                        friction=float(self.friction), seed=int(self.seed))
        self.sim_ = TensegritySim(default_structure(eccentric_mass=float(self.eccentric_mass)), cfg)
        self.sim_.settled  # settle once, up front
        self.n_features_in_ = 3
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "sim_")
        P = _check_params(X)
        return np.array([self.sim_.evaluate(ParameterSet(*map(int, p))).as_tuple() for p in P])


class MapElites(BaseEstimator):
    """Two-phase MAP-Elites; ``predict`` looks up the elite parameters for behaviors.

    Bins without an elite yield ``-1`` in every column.
    """

    def __init__(self, n_random=100, n_mutation=400, sigma=16.0, seed=0,
                 stationarity_threshold=90, duration_s=2.0):
        self.n_random = n_random
        self.n_mutation = n_mutation
        self.sigma = sigma
        self.seed = seed
        self.stationarity_threshold = stationarity_threshold
        self.duration_s = duration_s

    def fit(self, X=None, y=None, evaluator=None):
        """Run the search. ``evaluator`` defaults to the surrogate."""
        if evaluator is None:
            cfg = EvaluatorConfig(stationarity_threshold=int(self.stationarity_threshold),
                                  trial_duration_s=float(self.duration_s))
            evaluator = Evaluator(cfg, SurrogateBackend())
        search = SearchConfig(n_random=int(self.n_random), n_mutation=int(self.n_mutation),
                              sigma=float(self.sigma), seed=int(self.seed))
        self.archive_, self.trials_ = run_map_elites(search, evaluator)
        self.n_bins_filled_ = len(self.archive_)
        self.coverage_ = self.archive_.coverage
        self.n_features_in_ = 3
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "archive_")
        X = _check_behaviors(X)
        out = np.full((len(X), 3), -1, dtype=np.int64)
        for k, row in enumerate(X):
            elite = self.archive_.get(bin_index(Behavior(*row), self.archive_.geometry)[0])
            if elite is not None:
                out[k] = elite.params.as_tuple()
        return out

    def elites_frame(self) -> np.ndarray:
        """One row per elite: bin index, parameters, behavior, fitness."""
        check_is_fitted(self, "archive_")
        return np.array([[*idx, *e.params.as_tuple(), *e.behavior.as_tuple(), e.fitness]
                         for idx, e in self.archive_.items()]).reshape(-1, 10)
