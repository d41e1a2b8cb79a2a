# --- START OF FILE config_space.py ---
"""
Hyperparameter search space: parameter specs, uniform sampling and the
numeric encoding consumed by the forest surrogates.

Continuous and integer parameters map to [0, 1] (after a log transform when
flagged); categorical parameters are one-hot encoded.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

from utils import DomainError, InvalidParameterError, stable_hash

logger = logging.getLogger(__name__)

KINDS = ("continuous", "integer", "categorical")


@dataclass(frozen=True)
class ParameterSpec:
    """One hyperparameter. Numeric kinds use low/high, categorical uses choices."""
    name: str
    kind: Literal["continuous", "integer", "categorical"]
    low: float | None = None
    high: float | None = None
    log: bool = False
    choices: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name: raise InvalidParameterError("parameter name must be non-empty")
        if self.kind not in KINDS:
            raise InvalidParameterError(f"parameter '{self.name}': unknown kind '{self.kind}'")
        if self.kind == "categorical":
            object.__setattr__(self, "choices", tuple(str(c) for c in self.choices))
            if len(set(self.choices)) < 2 or len(set(self.choices)) != len(self.choices):
                raise InvalidParameterError(f"parameter '{self.name}': categorical needs >= 2 distinct choices")
            return
        if self.low is None or self.high is None:
            raise InvalidParameterError(f"parameter '{self.name}': numeric kinds need low and high")
        if not float(self.low) < float(self.high):
            raise InvalidParameterError(f"parameter '{self.name}': low ({self.low}) must be < high ({self.high})")
        if self.kind == "integer" and not (float(self.low).is_integer() and float(self.high).is_integer()):
            raise InvalidParameterError(f"parameter '{self.name}': integer bounds must be whole numbers, got [{self.low}, {self.high}]")
        if self.log and float(self.low) <= 0:
            raise InvalidParameterError(f"parameter '{self.name}': log scale requires low > 0")

    @property
    def width(self) -> int:
        return len(self.choices) if self.kind == "categorical" else 1

    # numeric helpers work in the (optionally log-transformed) coordinate
    def _bounds(self) -> tuple[float, float]:
        if self.log: return math.log(self.low), math.log(self.high)
        return float(self.low), float(self.high)

    def contains(self, value: Any) -> bool:
        if self.kind == "categorical":
            return isinstance(value, str) and value in self.choices
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            return False
        if self.kind == "integer" and float(value) != math.floor(float(value)):
            return False
        return float(self.low) <= float(value) <= float(self.high)

    def sample(self, rng: np.random.Generator):
        if self.kind == "categorical":
            return self.choices[int(rng.integers(len(self.choices)))]
        lo, hi = self._bounds()
        if self.kind == "integer":
            if self.log:
                # widen by half a unit so every integer owns an equal log-slice
                if self.low > 0.5: lo = math.log(self.low - 0.5)
                hi = math.log(self.high + 0.5)
                v = _round_half_up(math.exp(rng.uniform(lo, hi)))
            else:
                v = int(rng.integers(int(self.low), int(self.high) + 1))
            return int(min(max(v, int(self.low)), int(self.high)))
        u = rng.uniform(lo, hi)
        v = math.exp(u) if self.log else u
        return float(min(max(v, float(self.low)), float(self.high)))

    def to_unit(self, value) -> float:
        lo, hi = self._bounds()
        v = math.log(float(value)) if self.log else float(value)
        return (v - lo) / (hi - lo)

    def from_unit(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        lo, hi = self._bounds()
        v = lo + u * (hi - lo)
        if self.log: v = math.exp(v)
        if self.kind == "integer":
            return int(min(max(_round_half_up(v), int(self.low)), int(self.high)))
        return float(min(max(v, float(self.low)), float(self.high)))

    def to_dict(self) -> dict:
        if self.kind == "categorical":
            return {"name": self.name, "type": self.kind, "choices": list(self.choices)}
        d = {"name": self.name, "type": self.kind, "low": self.low, "high": self.high}
        if self.log: d["log"] = True
        return d


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class Configuration:
    """A concrete point of a space. `id` is a content hash so it is stable across runs."""
    values: dict
    id: str = ""
    origin: str = field(default="random", compare=False)

    def __post_init__(self):
        if not self.id:
            object.__setattr__(self, "id", stable_hash(self.values))

    def __hash__(self):
        return hash(self.id)

    def __getitem__(self, name):
        return self.values[name]

    def to_dict(self) -> dict:
        return dict(self.values)


class ConfigurationSpace:
    """Immutable ordered collection of ParameterSpec; safe to share across threads."""

    def __init__(self, parameters: list[ParameterSpec]):
        if not parameters:
            raise InvalidParameterError("configuration space needs at least one parameter")
        names = [p.name for p in parameters]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes: raise InvalidParameterError(f"duplicate parameter names: {dupes}")
        self._parameters = tuple(parameters)
        self._offsets = []
        offset = 0
        for p in self._parameters:
            self._offsets.append(offset)
            offset += p.width
        self._width = offset

    @property
    def parameters(self) -> tuple[ParameterSpec, ...]:
        return self._parameters

    @property
    def dimension(self) -> int:
        return len(self._parameters)

    @property
    def encoded_width(self) -> int:
        return self._width

    @property
    def names(self) -> list[str]:
        return [p.name for p in self._parameters]

    def __iter__(self):
        return iter(self._parameters)

    def __len__(self):
        return len(self._parameters)

    def __eq__(self, other):
        return isinstance(other, ConfigurationSpace) and self._parameters == other._parameters

    def __hash__(self):
        return hash(self._parameters)

    def __repr__(self):
        return f"ConfigurationSpace({', '.join(f'{p.name}:{p.kind}' for p in self._parameters)})"

    def to_list(self) -> list[dict]:
        return [p.to_dict() for p in self._parameters]

    @classmethod
    def from_list(cls, items: list[dict]) -> "ConfigurationSpace":
        params = []
        for item in items:
            item = dict(item)
            kind = item.pop("type", item.pop("kind", None))
            params.append(ParameterSpec(
                name=item.pop("name", ""), kind=kind,
                low=item.pop("low", None), high=item.pop("high", None),
                log=bool(item.pop("log", False)), choices=tuple(item.pop("choices", ())),
            ))
            if item: raise InvalidParameterError(f"parameter '{params[-1].name}': unknown keys {sorted(item)}")
        return cls(params)

    def validate(self, config: Configuration):
        if set(config.values) != set(self.names):
            raise DomainError(f"configuration keys {sorted(config.values)} do not match space {self.names}")
        for p in self._parameters:
            if not p.contains(config.values[p.name]):
                raise DomainError(f"value {config.values[p.name]!r} outside domain of '{p.name}'")

    def make(self, values: dict, origin: str = "random") -> Configuration:
        """Builds a validated Configuration from raw values (integers coerced to int)."""
        clean = {}
        for p in self._parameters:
            if p.name not in values: raise DomainError(f"missing value for '{p.name}'")
            v = values[p.name]
            if p.kind == "integer" and isinstance(v, float) and v.is_integer(): v = int(v)
            elif p.kind == "continuous" and isinstance(v, (int, np.integer)) and not isinstance(v, bool): v = float(v)
            clean[p.name] = v
        extra = set(values) - set(clean)
        if extra: raise DomainError(f"unknown parameters {sorted(extra)}")
        config = Configuration(clean, origin=origin)
        self.validate(config)
        return config


# --- Operations ---
def sample_uniform(space: ConfigurationSpace, rng: np.random.Generator) -> Configuration:
    values = {p.name: p.sample(rng) for p in space.parameters}
    return Configuration(values, origin="random")


def encode(space: ConfigurationSpace, config: Configuration) -> np.ndarray:
    space.validate(config)
    vec = np.zeros(space.encoded_width)
    for p, off in zip(space.parameters, space._offsets):
        v = config.values[p.name]
        if p.kind == "categorical":
            vec[off + p.choices.index(v)] = 1.0
        else:
            vec[off] = p.to_unit(v)
    return vec


def encode_many(space: ConfigurationSpace, configs: list[Configuration]) -> np.ndarray:
    if not configs: return np.zeros((0, space.encoded_width))
    return np.vstack([encode(space, c) for c in configs])


def decode(space: ConfigurationSpace, vector, origin: str = "random") -> Configuration:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (space.encoded_width,):
        raise DomainError(f"vector width {vector.shape} does not match encoded width {space.encoded_width}")
    values = {}
    for p, off in zip(space.parameters, space._offsets):
        if p.kind == "categorical":
            block = vector[off:off + p.width]
            values[p.name] = p.choices[int(np.argmax(block))]
        else:
            values[p.name] = p.from_unit(vector[off])
    return Configuration(values, origin=origin)


class CandidateBatch:
    """n uniform draws held column-wise; configurations are materialized only on request."""

    def __init__(self, space: ConfigurationSpace, columns: dict, encoded: np.ndarray):
        self.space = space
        self.columns = columns
        self.encoded = encoded

    def __len__(self):
        return self.encoded.shape[0]

    def config(self, i: int, origin: str = "random") -> Configuration:
        values = {}
        for p in self.space.parameters:
            v = self.columns[p.name][i]
            if p.kind == "categorical": values[p.name] = p.choices[int(v)]
            elif p.kind == "integer": values[p.name] = int(v)
            else: values[p.name] = float(v)
        return Configuration(values, origin=origin)


def sample_candidates(space: ConfigurationSpace, rng: np.random.Generator, n: int) -> CandidateBatch:
    """Vectorized sample_uniform for acquisition search; same laws per parameter."""
    columns = {}
    encoded = np.zeros((n, space.encoded_width))
    for p, off in zip(space.parameters, space._offsets):
        if p.kind == "categorical":
            idx = rng.integers(len(p.choices), size=n)
            columns[p.name] = idx
            encoded[np.arange(n), off + idx] = 1.0
            continue
        lo, hi = p._bounds()
        if p.kind == "integer":
            if p.log:
                lo = math.log(p.low - 0.5) if p.low > 0.5 else lo
                hi = math.log(p.high + 0.5)
                v = np.floor(np.exp(rng.uniform(lo, hi, size=n)) + 0.5)
            else:
                v = rng.integers(int(p.low), int(p.high) + 1, size=n).astype(float)
            v = np.clip(v, p.low, p.high)
        else:
            u = rng.uniform(lo, hi, size=n)
            v = np.clip(np.exp(u) if p.log else u, p.low, p.high)
        columns[p.name] = v
        lo, hi = p._bounds()
        encoded[:, off] = ((np.log(v) if p.log else v) - lo) / (hi - lo)
    return CandidateBatch(space, columns, encoded)

# --- END OF FILE config_space.py ---
