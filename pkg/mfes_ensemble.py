# --- START OF FILE mfes_ensemble.py ---
"""
Multi-fidelity ensemble surrogate.

One forest per fidelity group, each trained on that group's standardized
losses. Base surrogates are weighted by how well they rank the
top-fidelity measurements (pairwise ranking loss, cross-validated for the
top-fidelity surrogate itself) and fused with a generalized product of
experts.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from config_space import Configuration, ConfigurationSpace, encode_many
from surrogate_forest import ForestParams, ForestSurrogate, Prediction, fit_arrays
from utils import DegenerateEnsembleError, InsufficientDataError, InvalidParameterError

logger = logging.getLogger(__name__)

FUSION_MODES = ("gpoe", "equal_weight", "single_best", "top_only")
CV_FOLDS = 5


@dataclass(frozen=True)
class EnsembleParams:
    theta: int = 3
    k_full_threshold: int = 50
    fusion: str = "gpoe"

    def __post_init__(self):
        if int(self.theta) < 1: raise InvalidParameterError(f"theta must be a positive integer, got {self.theta}")
        if int(self.k_full_threshold) < 1: raise InvalidParameterError(f"k_full_threshold must be positive, got {self.k_full_threshold}")
        if self.fusion not in FUSION_MODES: raise InvalidParameterError(f"fusion must be one of {FUSION_MODES}, got '{self.fusion}'")

    def to_dict(self) -> dict:
        return {"theta": self.theta, "k_full_threshold": self.k_full_threshold, "fusion": self.fusion}


@dataclass(frozen=True)
class Measurement:
    """One evaluation: configuration, resource level and raw loss (+inf when the evaluation failed)."""
    config: Configuration
    resource: float
    loss: float
    duration: float = 0.0
    bracket: int = -1
    rung: int = -1

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.loss)


@dataclass
class FidelityGroup:
    """All measurements taken at one resource level. Statistics ignore failed evaluations."""
    resource_level: float
    measurements: list = field(default_factory=list)

    def add(self, measurement: Measurement):
        if not math.isclose(measurement.resource, self.resource_level, rel_tol=1e-9):
            raise InvalidParameterError(f"measurement at resource {measurement.resource} added to group {self.resource_level}")
        self.measurements.append(measurement)

    def finite(self) -> list[Measurement]:
        return [m for m in self.measurements if not m.failed]

    def losses(self) -> np.ndarray:
        return np.asarray([m.loss for m in self.finite()], dtype=float)

    @property
    def mean(self) -> float:
        y = self.losses()
        return float(y.mean()) if len(y) else 0.0

    @property
    def std(self) -> float:
        y = self.losses()
        return float(y.std()) if len(y) else 0.0

    def __len__(self):
        return len(self.measurements)


class EnsembleSurrogate:
    """
    Immutable once built; `bases` and `weights` are aligned with the fidelity levels.

    `variance_scales` holds each base's mean predictive variance over every
    configuration measured so far. Before fusion a base's variance is divided
    by its scale and multiplied by the weighted mean scale, so the weights
    decide how much each base counts and a base's own variance only says
    where it is unsure. None fuses the raw variances.
    """

    def __init__(self, bases: list, weights: list, theta: int, k_full_threshold: int,
                 fusion: str = "gpoe", order_preserving: list | None = None, safeguard_fired: bool = False,
                 variance_scales: list | None = None):
        self.bases = bases
        self.weights = [float(w) for w in weights]
        self.theta = theta
        self.k_full_threshold = k_full_threshold
        self.fusion = fusion
        self.order_preserving = order_preserving or [None] * len(bases)
        self.safeguard_fired = safeguard_fired
        self.variance_scales = variance_scales

    @property
    def levels(self) -> list[float]:
        return [level for level, _ in self.bases]

    def predict_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        means, variances, weights, scales = [], [], [], []
        for i, ((_, model), w) in enumerate(zip(self.bases, self.weights)):
            if model is None or w <= 0.0:
                continue
            m, v = model.predict_batch(X)
            means.append(m); variances.append(v); weights.append(w)
            if self.variance_scales is not None:
                scales.append(self.variance_scales[i])
        if not weights:
            raise DegenerateEnsembleError("ensemble has no base surrogate with positive weight")
        weights = np.asarray(weights)
        variances = np.vstack(variances)
        if scales:
            scales = np.asarray(scales, dtype=float)
            typical = float((weights * scales).sum() / weights.sum())
            variances = variances / scales[:, None] * typical
        return gpoe_combine(np.vstack(means), variances, weights)

    def predict(self, x) -> Prediction:
        mean, var = self.predict_batch(np.asarray(x, dtype=float).reshape(1, -1))
        return Prediction(float(mean[0]), float(var[0]))

    def summary(self) -> dict:
        return {"levels": self.levels, "weights": self.weights, "p": self.order_preserving,
                "fusion": self.fusion, "safeguard": self.safeguard_fired,
                "available": [model is not None for _, model in self.bases]}


# --- Operations ---
def standardize(group: FidelityGroup, space: ConfigurationSpace) -> tuple[np.ndarray, np.ndarray]:
    """Encoded configurations and z-scored losses (population std; z = 0 when the std is 0)."""
    finite = group.finite()
    if not finite:
        raise InsufficientDataError(f"fidelity group {group.resource_level} has no successful measurements")
    X = encode_many(space, [m.config for m in finite])
    y = np.asarray([m.loss for m in finite], dtype=float)
    std = y.std()
    if std == 0.0:
        return X, np.zeros_like(y)
    return X, (y - y.mean()) / std


def ranking_loss_from_means(mu, y) -> int:
    """Ordered pairs where (mu_j < mu_k) XOR (y_j < y_k); the diagonal never counts."""
    mu = np.asarray(mu, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(mu) != len(y):
        raise InvalidParameterError(f"{len(mu)} predictions for {len(y)} measurements")
    if len(y) < 2:
        raise InsufficientDataError(f"ranking loss needs at least 2 measurements, got {len(y)}")
    pred_less = mu[:, None] < mu[None, :]
    true_less = y[:, None] < y[None, :]
    return int(np.count_nonzero(pred_less ^ true_less))


def ranking_loss(surrogate: ForestSurrogate, d_k: FidelityGroup, space: ConfigurationSpace) -> int:
    finite = d_k.finite()
    if len(finite) < 2:
        raise InsufficientDataError(f"ranking loss needs at least 2 measurements, got {len(finite)}")
    X = encode_many(space, [m.config for m in finite])
    mu, _ = surrogate.predict_batch(X)
    return ranking_loss_from_means(mu, [m.loss for m in finite])


def cv_folds(n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Leave-one-out up to CV_FOLDS points, otherwise CV_FOLDS shuffled folds."""
    if n < 2:
        raise InsufficientDataError(f"cross-validation needs at least 2 measurements, got {n}")
    folds = [np.array([j]) for j in range(n)]
    if n > CV_FOLDS:
        shuffled = rng.permutation(n)
        candidate = [np.sort(f) for f in np.array_split(shuffled, CV_FOLDS)]
        if all(n - len(f) >= 2 for f in candidate):
            folds = candidate
        else:
            logger.warning(f"5-fold split of {n} points leaves a fold with < 2 training points, using leave-one-out.")
    return folds


def cv_out_of_sample_means(d_k: FidelityGroup, params: ForestParams, rng: np.random.Generator,
                           space: ConfigurationSpace, folds: list | None = None) -> tuple[np.ndarray, int]:
    """Out-of-sample predicted means for every top-fidelity point and the number of refits used."""
    X, z = standardize(d_k, space)
    n = len(z)
    if n < 2:
        raise InsufficientDataError(f"cross-validated ranking loss needs at least 2 measurements, got {n}")
    if folds is None:
        folds = cv_folds(n, rng)
    mu = np.empty(n)
    refits = 0
    for held_out in folds:
        mask = np.ones(n, dtype=bool)
        mask[held_out] = False
        if mask.sum() < 2:
            # two-point group: the remaining single point is the whole prediction
            mu[held_out] = z[mask].mean()
            continue
        model = fit_arrays(X[mask], z[mask], params, rng)
        refits += 1
        mu[held_out], _ = model.predict_batch(X[held_out])
    return mu, refits


def cv_ranking_loss(d_k: FidelityGroup, params: ForestParams, rng: np.random.Generator,
                    space: ConfigurationSpace, folds: list | None = None) -> int:
    mu, _ = cv_out_of_sample_means(d_k, params, rng, space, folds)
    return ranking_loss_from_means(mu, d_k.losses())


def held_out_ranking_loss(d_i: FidelityGroup, model: ForestSurrogate, d_k: FidelityGroup, params: ForestParams,
                          rng: np.random.Generator, space: ConfigurationSpace, folds: list | None = None) -> int:
    """
    Ranking loss of a lower-fidelity base on D_K where no configuration is
    predicted by a forest that saw it. Configurations promoted to the top
    rung were also measured in D_i; for every fold of D_K that shares
    configurations with D_i the base is refit without them. Folds with no
    overlap reuse `model`.
    """
    top = d_k.finite()
    if len(top) < 2:
        raise InsufficientDataError(f"ranking loss needs at least 2 measurements, got {len(top)}")
    if folds is None:
        folds = cv_folds(len(top), rng)
    X_k = encode_many(space, [m.config for m in top])
    X_i, z_i = standardize(d_i, space)
    ids_i = np.asarray([m.config.id for m in d_i.finite()])
    mu = np.empty(len(top))
    for held_out in folds:
        seen = np.isin(ids_i, [top[j].config.id for j in held_out])
        if not seen.any() or np.count_nonzero(~seen) < 2:
            mu[held_out], _ = model.predict_batch(X_k[held_out])
            continue
        refit = fit_arrays(X_i[~seen], z_i[~seen], params, rng)
        mu[held_out], _ = refit.predict_batch(X_k[held_out])
    return ranking_loss_from_means(mu, [m.loss for m in top])


def compute_weights(losses: list, n_k: int, theta: int) -> list[float]:
    """Weight discrimination operator: w_i = p_i^theta / sum_k p_k^theta with p_i = 1 - loss_i / N_pairs."""
    if n_k < 2:
        raise InsufficientDataError(f"weights need at least 2 top-fidelity measurements, got {n_k}")
    if not losses:
        return []
    n_pairs = n_k * (n_k - 1)
    p = np.clip(1.0 - np.asarray(losses, dtype=float) / n_pairs, 0.0, 1.0)
    powered = p ** int(theta)
    total = powered.sum()
    if total <= 0.0:
        return [1.0 / len(losses)] * len(losses)
    return list(powered / total)


def gpoe_combine(means: np.ndarray, variances: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized gPoE over K experts (rows) and n points (columns)."""
    weights = np.asarray(weights, dtype=float).reshape(-1, 1)
    if not np.any(weights > 0.0):
        raise DegenerateEnsembleError("all gPoE weights are zero")
    precision = weights / variances
    total_precision = precision.sum(axis=0)
    var = 1.0 / total_precision
    mean = (means * precision).sum(axis=0) * var
    return mean, var


def gpoe_predict(predictions: list[Prediction], weights: list[float]) -> Prediction:
    if len(predictions) != len(weights):
        raise InvalidParameterError(f"{len(predictions)} predictions but {len(weights)} weights")
    keep = [(p, w) for p, w in zip(predictions, weights) if w > 0.0]
    if not keep:
        raise DegenerateEnsembleError("all gPoE weights are zero")
    means = np.asarray([[p.mean] for p, _ in keep])
    variances = np.asarray([[p.variance] for p, _ in keep])
    mean, var = gpoe_combine(means, variances, np.asarray([w for _, w in keep]))
    return Prediction(float(mean[0]), float(var[0]))


def variance_scales(bases: list, groups: list[FidelityGroup], space: ConfigurationSpace) -> list:
    """Mean predictive variance of each base over every distinct configuration measured so far."""
    configs = {}
    for group in groups:
        for m in group.finite():
            configs.setdefault(m.config.id, m.config)
    X = encode_many(space, list(configs.values()))
    scales = []
    for _, model in bases:
        if model is None:
            scales.append(None)
            continue
        _, var = model.predict_batch(X)
        scales.append(float(var.mean()))
    return scales


def build_ensemble(groups: list[FidelityGroup], params: ForestParams, theta: int, k_full_threshold: int,
                   rng: np.random.Generator, space: ConfigurationSpace, fusion: str = "gpoe") -> EnsembleSurrogate | None:
    """Refits every base surrogate and recomputes the weights. Returns None when nothing is trainable."""
    groups = sorted(groups, key=lambda g: g.resource_level)
    if not groups:
        return None
    bases = []
    for group in groups:
        model = None
        if len(group.finite()) >= 2:
            X, z = standardize(group, space)
            try: model = fit_arrays(X, z, params, rng)
            except InsufficientDataError as e: logger.warning(f"Base surrogate at r={group.resource_level} unavailable: {e}")
        bases.append((group.resource_level, model))

    available = [i for i, (_, model) in enumerate(bases) if model is not None]
    if not available:
        logger.debug("No fidelity group has 2 successful measurements yet; ensemble unavailable.")
        return None

    top_index = len(groups) - 1
    top = groups[top_index]
    n_k = len(top.finite())
    weights = [0.0] * len(bases)
    p_values = [None] * len(bases)

    if fusion == "top_only" and bases[top_index][1] is None:
        return None

    losses = {}
    if n_k >= 2 and fusion != "top_only":
        n_pairs = n_k * (n_k - 1)
        # one split of D_K scores every base
        folds = cv_folds(n_k, rng)
        for i in available:
            if i == top_index: losses[i] = cv_ranking_loss(top, params, rng, space, folds)
            else: losses[i] = held_out_ranking_loss(groups[i], bases[i][1], top, params, rng, space, folds)
            p_values[i] = 1.0 - losses[i] / n_pairs

    if fusion == "top_only":
        weights[top_index] = 1.0
    elif fusion == "single_best" and losses:
        # highest fidelity wins ties
        best = min(available, key=lambda i: (losses[i], -i))
        weights[best] = 1.0
    elif fusion == "gpoe" and losses:
        for i, w in zip(available, compute_weights([losses[i] for i in available], n_k, theta)):
            weights[i] = float(w)
    else:
        for i in available:
            weights[i] = 1.0 / len(available)

    safeguard = False
    if n_k >= k_full_threshold and bases[top_index][1] is not None:
        weights = [0.0] * len(bases)
        weights[top_index] = 1.0
        safeguard = True

    ensemble = EnsembleSurrogate(bases, weights, theta, k_full_threshold, fusion, p_values, safeguard,
                                 variance_scales(bases, groups, space))
    logger.info(f"Built ensemble ({fusion}): N_K={n_k}, weights={[round(w, 4) for w in weights]}"
                + (" [w_K=1 safeguard]" if safeguard else ""))
    return ensemble

# --- END OF FILE mfes_ensemble.py ---
