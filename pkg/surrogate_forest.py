# --- START OF FILE surrogate_forest.py ---
"""
Probabilistic random forest (SMAC-style) used as every base surrogate.

The trees come from scikit-learn's RandomForestRegressor. The predictive
variance is the spread of the per-tree leaf means, floored by
`variance_floor` so gPoE never divides by zero.
"""

import math
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from utils import DomainError, InsufficientDataError, InvalidParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 10
    min_samples_leaf: int = 3
    max_features_ratio: float = 5.0 / 6.0
    bootstrap: bool = True
    variance_floor: float = 1e-10

    def __post_init__(self):
        if int(self.n_trees) < 1: raise InvalidParameterError(f"n_trees must be positive, got {self.n_trees}")
        if int(self.min_samples_leaf) < 1: raise InvalidParameterError(f"min_samples_leaf must be positive, got {self.min_samples_leaf}")
        if not 0.0 < float(self.max_features_ratio) <= 1.0:
            raise InvalidParameterError(f"max_features_ratio must be in (0, 1], got {self.max_features_ratio}")
        if not float(self.variance_floor) > 0.0:
            raise InvalidParameterError(f"variance_floor must be positive, got {self.variance_floor}")

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "min_samples_leaf": self.min_samples_leaf,
                "max_features_ratio": self.max_features_ratio, "bootstrap": self.bootstrap,
                "variance_floor": self.variance_floor}


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: float


class ForestSurrogate:
    """Fitted forest; immutable after `fit`, so concurrent predictions are safe."""

    def __init__(self, params: ForestParams, trees: list, width: int, train_count: int):
        self.params = params
        self.trees = trees
        self.width = width
        self.train_count = train_count

    def tree_means(self, X: np.ndarray) -> np.ndarray:
        X = _as_matrix(X, self.width)
        return np.vstack([t.predict(X) for t in self.trees])

    def predict_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        per_tree = self.tree_means(X)
        mean = per_tree.mean(axis=0)
        var = np.maximum(per_tree.var(axis=0), self.params.variance_floor)
        return mean, var

    def predict(self, x) -> Prediction:
        mean, var = self.predict_batch(np.asarray(x, dtype=float).reshape(1, -1))
        return Prediction(float(mean[0]), float(var[0]))


def _as_matrix(X, width: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1: X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != width:
        raise DomainError(f"input width {X.shape[-1] if X.ndim else 0} does not match training width {width}")
    return X


# --- Operations ---
def fit_arrays(X, y, params: ForestParams, rng: np.random.Generator) -> ForestSurrogate:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(y) != X.shape[0]:
        raise DomainError(f"training data shapes disagree: X{X.shape}, y{y.shape}")
    if len(y) < 2:
        raise InsufficientDataError(f"forest needs at least 2 points, got {len(y)}")
    n, d = X.shape
    # 5/6 of 6 features is 5, not 6 through float error
    n_features = max(1, math.ceil(params.max_features_ratio * d - 1e-9))
    forest = RandomForestRegressor(
        n_estimators=int(params.n_trees), min_samples_leaf=int(params.min_samples_leaf), max_features=n_features,
        bootstrap=bool(params.bootstrap), random_state=int(rng.integers(0, 2**31 - 1)), n_jobs=1,
    )
    forest.fit(X, y)
    return ForestSurrogate(params, list(forest.estimators_), d, n)


def fit(data: list, params: ForestParams, rng: np.random.Generator) -> ForestSurrogate:
    """Fits on a list of (vector, target) pairs."""
    if len(data) < 2:
        raise InsufficientDataError(f"forest needs at least 2 points, got {len(data)}")
    widths = {len(v) for v, _ in data}
    if len(widths) != 1:
        raise DomainError(f"training vectors have mixed widths {sorted(widths)}")
    X = np.vstack([np.asarray(v, dtype=float) for v, _ in data])
    y = np.asarray([float(t) for _, t in data])
    return fit_arrays(X, y, params, rng)


def predict(surrogate: ForestSurrogate, x) -> Prediction:
    return surrogate.predict(x)

# --- END OF FILE surrogate_forest.py ---
