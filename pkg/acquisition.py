# --- START OF FILE acquisition.py ---
"""Expected improvement over the ensemble surrogate and the rho-safeguarded Sample procedure."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from config_space import Configuration, ConfigurationSpace, sample_candidates, sample_uniform
from mfes_ensemble import EnsembleSurrogate, FidelityGroup
from surrogate_forest import Prediction
from utils import InvalidParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerParams:
    rho: float = 0.2
    n_candidates: int = 5000

    def __post_init__(self):
        if not 0.0 <= float(self.rho) <= 1.0: raise InvalidParameterError(f"rho must be in [0, 1], got {self.rho}")
        if int(self.n_candidates) < 1: raise InvalidParameterError(f"n_candidates must be positive, got {self.n_candidates}")

    def to_dict(self) -> dict:
        return {"rho": self.rho, "n_candidates": self.n_candidates}


def expected_improvement_batch(mean, variance, y_star: float) -> np.ndarray:
    """Closed-form EI for minimization; zero-variance points get max(y* - mu, 0)."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    improvement = y_star - mean
    ei = np.maximum(improvement, 0.0)
    positive = sigma > 0.0
    if np.any(positive):
        z = improvement[positive] / sigma[positive]
        ei[positive] = improvement[positive] * norm.cdf(z) + sigma[positive] * norm.pdf(z)
    return np.maximum(ei, 0.0)


def expected_improvement(pred: Prediction, y_star: float) -> float:
    return float(expected_improvement_batch([pred.mean], [pred.variance], y_star)[0])


def incumbent_value(groups: list[FidelityGroup]) -> float | None:
    """Best loss of the highest-fidelity non-empty group, standardized by that group's own statistics."""
    for group in sorted(groups, key=lambda g: g.resource_level, reverse=True):
        y = group.losses()
        if len(y) == 0:
            continue
        std = y.std()
        if std == 0.0:
            return 0.0
        return float((y.min() - y.mean()) / std)
    return None


def sample_next(space: ConfigurationSpace, ensemble: EnsembleSurrogate | None, params: SamplerParams,
                y_star: float | None, rng: np.random.Generator) -> Configuration:
    """One configuration: uniform with probability rho (or without a model), else the EI arg-max of N_s random candidates."""
    if ensemble is None or y_star is None or rng.random() < params.rho:
        return sample_uniform(space, rng)
    candidates = sample_candidates(space, rng, params.n_candidates)
    mean, var = ensemble.predict_batch(candidates.encoded)
    scores = expected_improvement_batch(mean, var, y_star)
    # np.argmax keeps the first maximum, i.e. the earliest draw
    return candidates.config(int(np.argmax(scores)), origin="acquisition")


def sample_batch(space: ConfigurationSpace, ensemble: EnsembleSurrogate | None, params: SamplerParams,
                 y_star: float | None, rng: np.random.Generator, n: int) -> list[Configuration]:
    """n i.i.d. draws of sample_next (no batch diversification)."""
    configs = [sample_next(space, ensemble, params, y_star, rng) for _ in range(n)]
    n_model = sum(1 for c in configs if c.origin == "acquisition")
    logger.debug(f"Sampled {n} configurations ({n_model} from the acquisition, {n - n_model} random).")
    return configs

# --- END OF FILE acquisition.py ---
