# --- START OF FILE benchmarks.py ---
"""
Built-in synthetic multi-fidelity objectives.

loss = f_true(x) + fidelity_bias * (1 - r/R) * spread * b(x) + noise

b(x) is a fixed low-frequency sinusoid of the encoded configuration, so
cheap evaluations are biased in a configuration-dependent way that fades
to nothing at full resource.

`spread` is the benchmark's loss unit (25 for Branin, 1 for Hartmann,
0.25 for counting ones). b(x) is unit-scale in that unit, so with
fidelity_bias = 1 the cheapest evaluation is off by at most one unit.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from config_space import Configuration, ConfigurationSpace, ParameterSpec, encode
from evaluation import Evaluator
from utils import InvalidParameterError, make_rng, stable_int

logger = logging.getLogger(__name__)

# --- Test Functions ---
HARTMANN3_A = np.array([[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]])
HARTMANN3_P = 1e-4 * np.array([[3689, 1170, 2673], [4699, 4387, 7470], [1091, 8732, 5547], [381, 5743, 8828]])
HARTMANN6_A = np.array([[10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
                        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
                        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
                        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0]])
HARTMANN6_P = 1e-4 * np.array([[1312, 1696, 5569, 124, 8283, 5886],
                               [2329, 4135, 8307, 3736, 1004, 9991],
                               [2348, 1451, 3522, 2883, 3047, 6650],
                               [4047, 8828, 8732, 5743, 1091, 381]])
HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])


def branin(x1: float, x2: float) -> float:
    b, c, t = 5.1 / (4 * math.pi ** 2), 5.0 / math.pi, 1.0 / (8 * math.pi)
    return (x2 - b * x1 ** 2 + c * x1 - 6.0) ** 2 + 10.0 * (1 - t) * math.cos(x1) + 10.0


def hartmann(x, A, P) -> float:
    x = np.asarray(x, dtype=float)
    inner = np.sum(A * (x - P) ** 2, axis=1)
    return float(-np.sum(HARTMANN_ALPHA * np.exp(-inner)))


def counting_ones(values: dict, n_categorical: int, n_continuous: int) -> float:
    ones = sum(int(values[f"c{i}"]) for i in range(n_categorical))
    mass = sum(float(values[f"x{i}"]) for i in range(n_continuous))
    return -(ones + mass) / (n_categorical + n_continuous)


@dataclass(frozen=True)
class Benchmark:
    name: str
    space: ConfigurationSpace
    optimum: float
    spread: float
    default_R: float
    description: str

    @property
    def dimension(self) -> int:
        return self.space.dimension

    def f_true(self, config: Configuration) -> float:
        v = config.values
        if self.name == "branin":
            return branin(v["x1"], v["x2"])
        if self.name == "hartmann3":
            return hartmann([v[f"x{i}"] for i in range(3)], HARTMANN3_A, HARTMANN3_P)
        if self.name == "hartmann6":
            return hartmann([v[f"x{i}"] for i in range(6)], HARTMANN6_A, HARTMANN6_P)
        if self.name == "counting_ones":
            return counting_ones(v, 4, 4)
        raise InvalidParameterError(f"unknown benchmark '{self.name}'")


def _unit_cube(names: list[str]) -> ConfigurationSpace:
    return ConfigurationSpace([ParameterSpec(n, "continuous", 0.0, 1.0) for n in names])


BENCHMARKS = {
    "branin": Benchmark(
        "branin",
        ConfigurationSpace([ParameterSpec("x1", "continuous", -5.0, 10.0), ParameterSpec("x2", "continuous", 0.0, 15.0)]),
        0.397887, 25.0, 27, "Branin-Hoo, 2 continuous parameters"),
    "hartmann3": Benchmark("hartmann3", _unit_cube([f"x{i}" for i in range(3)]), -3.86278, 1.0, 27,
                           "Hartmann 3-D on the unit cube"),
    "hartmann6": Benchmark("hartmann6", _unit_cube([f"x{i}" for i in range(6)]), -3.32237, 1.0, 27,
                           "Hartmann 6-D on the unit cube"),
    "counting_ones": Benchmark(
        "counting_ones",
        ConfigurationSpace([ParameterSpec(f"c{i}", "categorical", choices=("0", "1")) for i in range(4)]
                           + [ParameterSpec(f"x{i}", "continuous", 0.0, 1.0) for i in range(4)]),
        -1.0, 0.25, 27, "4 binary categorical + 4 continuous parameters, loss = -mean"),
}


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    noise_std: float = 0.0
    fidelity_bias: float = 1.0
    max_resource: float = 27.0

    def __post_init__(self):
        if self.name not in BENCHMARKS: raise InvalidParameterError(f"unknown benchmark '{self.name}', choose from {sorted(BENCHMARKS)}")
        if float(self.noise_std) < 0: raise InvalidParameterError(f"noise_std must be >= 0, got {self.noise_std}")
        if float(self.max_resource) <= 0: raise InvalidParameterError(f"max_resource must be positive, got {self.max_resource}")

    @property
    def benchmark(self) -> Benchmark:
        return BENCHMARKS[self.name]

    @property
    def dimension(self) -> int:
        return self.benchmark.dimension

    @property
    def space(self) -> ConfigurationSpace:
        return self.benchmark.space


def distortion(spec: BenchmarkSpec, config: Configuration) -> float:
    """b(x) in [-1, 1]: sin(2*pi*<omega, u> + phase), frequencies and phase fixed per benchmark name."""
    u = encode(spec.space, config)
    rng = make_rng(stable_int(spec.name), "bias")
    omega = rng.uniform(-1.0, 1.0, size=len(u))
    phase = rng.uniform(0.0, 2 * math.pi)
    return float(math.sin(2 * math.pi * float(omega @ u) + phase))


def synthetic_objective(spec: BenchmarkSpec, config: Configuration, resource: float, rng: np.random.Generator) -> float:
    value = spec.benchmark.f_true(config)
    fraction = 1.0 - float(resource) / float(spec.max_resource)
    if spec.fidelity_bias != 0.0 and fraction > 0.0:
        value += spec.fidelity_bias * fraction * spec.benchmark.spread * distortion(spec, config)
    if spec.noise_std > 0.0:
        value += float(rng.normal(0.0, spec.noise_std))
    return value


class SyntheticEvaluator(Evaluator):
    """Noise is drawn from a stream keyed by (seed, config id, resource), so evaluations are reproducible."""

    def __init__(self, spec: BenchmarkSpec, seed: int = 0):
        self.spec = spec
        self.seed = int(seed)
        self.name = spec.name

    def __call__(self, config: Configuration, resource: float) -> float:
        rng = make_rng(self.seed, "noise", stable_int([config.id, float(resource)]))
        return synthetic_objective(self.spec, config, resource, rng)


def simple_regret(spec: BenchmarkSpec, loss: float) -> float:
    return float(loss) - spec.benchmark.optimum


def list_benchmarks() -> list[dict]:
    return [{"name": b.name, "dimension": b.dimension, "optimum": b.optimum,
             "default_R": b.default_R, "description": b.description} for b in BENCHMARKS.values()]

# --- END OF FILE benchmarks.py ---
