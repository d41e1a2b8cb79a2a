# --- START OF FILE run_config.py ---
"""
Run configuration file (YAML, JSON accepted) and its validation.

Every error is a ConfigFileError naming the dotted key path and, when the
value came from a file, its line number.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import yaml

from acquisition import SamplerParams
from benchmarks import BENCHMARKS, BenchmarkSpec, SyntheticEvaluator
from config_space import ConfigurationSpace
from evaluation import Evaluator, SubprocessEvaluator
from hyperband import CLOCKS, HBParams
from mfes_ensemble import EnsembleParams
from surrogate_forest import ForestParams
from utils import DEFAULT_WORKERS, ConfigFileError, EvaluatorSetupError, InvalidParameterError, MFESError

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = {"space", "hyperband", "budget", "sampler", "forest", "ensemble", "evaluator", "workers", "seed", "history", "clock"}
SECTION_KEYS = {
    "hyperband": {"R", "eta"},
    "budget": {"kind", "total"},
    "sampler": {"rho", "n_candidates"},
    "forest": {"n_trees", "min_samples_leaf", "max_features_ratio", "bootstrap", "variance_floor"},
    "ensemble": {"theta", "k_full_threshold", "fusion"},
    "evaluator": {"benchmark", "noise_std", "fidelity_bias", "command", "timeout", "backend"},
}
INTEGER_KEYS = {"sampler.n_candidates", "forest.n_trees", "forest.min_samples_leaf", "ensemble.theta",
                "ensemble.k_full_threshold", "workers", "seed"}
STRING_KEYS = {"budget.kind", "ensemble.fusion", "evaluator.benchmark", "evaluator.command", "evaluator.backend", "history", "clock"}
BACKENDS = ("thread", "process")


@dataclass
class RunConfig:
    space: ConfigurationSpace
    hyperband: HBParams
    sampler: SamplerParams = field(default_factory=SamplerParams)
    forest: ForestParams = field(default_factory=ForestParams)
    ensemble: EnsembleParams = field(default_factory=EnsembleParams)
    evaluator: dict = field(default_factory=dict)
    workers: int = 1
    seed: int = 0
    history: str | None = None
    clock: str = "wall"

    @property
    def backend(self) -> str:
        return self.evaluator.get("backend", "thread")

    @property
    def pool_timeout(self) -> float | None:
        # subprocess evaluators enforce their own timeout on the child
        if "command" in self.evaluator: return None
        return self.evaluator.get("timeout")

    def to_dict(self) -> dict:
        hb = self.hyperband
        return {
            "space": self.space.to_list(),
            "hyperband": {"R": hb.R, "eta": hb.eta},
            "budget": {"kind": hb.budget_kind, "total": hb.total_budget},
            "sampler": self.sampler.to_dict(), "forest": self.forest.to_dict(), "ensemble": self.ensemble.to_dict(),
            "evaluator": dict(self.evaluator), "workers": self.workers, "seed": self.seed, "clock": self.clock,
        }


# --- Line Tracking ---
def _line_index(node, prefix: str = "", index: dict | None = None) -> dict:
    """Maps dotted key paths (list items as path[i]) to 1-based line numbers."""
    index = {} if index is None else index
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            index[path] = key_node.start_mark.line + 1
            _line_index(value_node, path, index)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            index[path] = item.start_mark.line + 1
            _line_index(item, path, index)
    return index


def load_config_text(text: str) -> tuple[dict, dict]:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigFileError(f"not valid YAML: {getattr(e, 'problem', None) or e}",
                              line=mark.line + 1 if mark is not None else None)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigFileError("top level must be a mapping", line=1)
    return data, _line_index(node) if node is not None else {}


def load_config(path: str) -> "RunConfig":
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigFileError(f"cannot read config file '{path}': {e}")
    data, lines = load_config_text(text)
    logger.info(f"Loaded run configuration from {path}.")
    return config_from_dict(data, lines)


# --- Validation ---
def _check_value(path: str, value, lines: dict):
    if path in STRING_KEYS:
        if not isinstance(value, str):
            raise ConfigFileError(f"expected a string, got {value!r}", path, lines.get(path))
        return value
    if isinstance(value, bool):
        if path == "forest.bootstrap": return value
        raise ConfigFileError(f"expected a number, got {value!r}", path, lines.get(path))
    if path == "forest.bootstrap":
        raise ConfigFileError(f"expected true or false, got {value!r}", path, lines.get(path))
    if isinstance(value, str):
        # YAML 1.1 reads 1e-10 (no dot) as a string
        try: value = float(value) if path not in INTEGER_KEYS else int(value)
        except ValueError: pass
    if not isinstance(value, (int, float)):
        raise ConfigFileError(f"expected a number, got {value!r}", path, lines.get(path))
    if path in INTEGER_KEYS:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigFileError(f"expected an integer, got {value!r}", path, lines.get(path))
        return int(value)
    if not math.isfinite(float(value)):
        raise ConfigFileError(f"expected a finite number, got {value!r}", path, lines.get(path))
    return float(value)


def _section(data: dict, name: str, lines: dict) -> dict:
    raw = data.get(name)
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigFileError("expected a mapping", name, lines.get(name))
    out = {}
    for key, value in raw.items():
        path = f"{name}.{key}"
        if key not in SECTION_KEYS[name]:
            raise ConfigFileError(f"unknown key (allowed: {sorted(SECTION_KEYS[name])})", path, lines.get(path))
        out[key] = _check_value(path, value, lines)
    return out


def _build(name: str, factory, kwargs: dict, lines: dict):
    """Runs a params constructor, pinning its InvalidParameterError to the key it names."""
    try:
        return factory(**kwargs)
    except InvalidParameterError as e:
        message = str(e)
        key = next((k for k in sorted(kwargs, key=len, reverse=True) if message.startswith(k)), None)
        path = f"{name}.{key}" if key else name
        raise ConfigFileError(message, path, lines.get(path, lines.get(name)))


def _build_space(data: dict, lines: dict, benchmark: str | None) -> ConfigurationSpace:
    raw = data.get("space")
    if raw is None:
        if benchmark is None:
            raise ConfigFileError("a search space is required unless evaluator.benchmark is set", "space")
        return BENCHMARKS[benchmark].space
    if not isinstance(raw, list):
        raise ConfigFileError("expected a list of parameters", "space", lines.get("space"))
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            raise ConfigFileError("expected a mapping", f"space[{i}]", lines.get(f"space[{i}]"))
        for key in ("low", "high"):
            if isinstance(item.get(key), str):
                try: item[key] = float(item[key])
                except ValueError: raise ConfigFileError(f"expected a number, got {item[key]!r}", f"space[{i}].{key}", lines.get(f"space[{i}].{key}"))
    try:
        space = ConfigurationSpace.from_list(raw)
    except InvalidParameterError as e:
        message = str(e)
        at = next((i for i, item in enumerate(raw) if f"'{item.get('name')}'" in message), None)
        path = f"space[{at}]" if at is not None else "space"
        raise ConfigFileError(message, path, lines.get(path, lines.get("space")))
    if benchmark is not None and space != BENCHMARKS[benchmark].space:
        raise ConfigFileError(f"does not match the space of benchmark '{benchmark}'; omit it to use the benchmark's own",
                              "space", lines.get("space"))
    return space


def config_from_dict(data: dict, lines: dict | None = None) -> RunConfig:
    lines = lines or {}
    for key in data:
        if key not in TOP_LEVEL_KEYS:
            raise ConfigFileError(f"unknown key (allowed: {sorted(TOP_LEVEL_KEYS)})", str(key), lines.get(str(key)))

    evaluator = _section(data, "evaluator", lines)
    has_bench, has_cmd = "benchmark" in evaluator, "command" in evaluator
    if has_bench == has_cmd:
        raise ConfigFileError("set exactly one of 'benchmark' or 'command'", "evaluator", lines.get("evaluator"))
    if has_bench and evaluator["benchmark"] not in BENCHMARKS:
        raise ConfigFileError(f"unknown benchmark '{evaluator['benchmark']}' (choose from {sorted(BENCHMARKS)})",
                              "evaluator.benchmark", lines.get("evaluator.benchmark"))
    if has_cmd:
        extra = {"noise_std", "fidelity_bias"} & set(evaluator)
        if extra:
            path = f"evaluator.{sorted(extra)[0]}"
            raise ConfigFileError("only applies to built-in benchmarks", path, lines.get(path))
        if "timeout" not in evaluator:
            raise ConfigFileError("subprocess evaluators need a timeout", "evaluator.timeout", lines.get("evaluator"))
    if evaluator.get("backend", "thread") not in BACKENDS:
        raise ConfigFileError(f"must be one of {BACKENDS}", "evaluator.backend", lines.get("evaluator.backend"))
    if "timeout" in evaluator and evaluator["timeout"] <= 0:
        raise ConfigFileError("must be positive", "evaluator.timeout", lines.get("evaluator.timeout"))
    for key in ("noise_std", "fidelity_bias"):
        if key in evaluator and evaluator[key] < 0:
            raise ConfigFileError("must be >= 0", f"evaluator.{key}", lines.get(f"evaluator.{key}"))

    hb = _section(data, "hyperband", lines)
    budget = _section(data, "budget", lines)
    if "total" not in budget:
        raise ConfigFileError("a total budget is required", "budget.total", lines.get("budget"))
    hb_args = {"R": hb.get("R", 27.0), "eta": hb.get("eta", 3.0), "total_budget": budget["total"],
               "budget_kind": budget.get("kind", "wallclock")}
    try:
        hyperband = HBParams(**hb_args)
    except InvalidParameterError as e:
        message = str(e)
        if message.startswith("total_budget"): path = "budget.total"
        elif message.startswith("budget_kind"): path = "budget.kind"
        elif message.startswith("R"): path = "hyperband.R"
        else: path = "hyperband.eta"
        raise ConfigFileError(message, path, lines.get(path, lines.get(path.split(".")[0])))

    space = _build_space(data, lines, evaluator.get("benchmark"))
    sampler = _build("sampler", SamplerParams, _section(data, "sampler", lines), lines)
    forest = _build("forest", ForestParams, _section(data, "forest", lines), lines)
    ensemble = _build("ensemble", EnsembleParams, _section(data, "ensemble", lines), lines)

    workers = _check_value("workers", data["workers"], lines) if "workers" in data else DEFAULT_WORKERS
    if workers < 1:
        raise ConfigFileError("must be >= 1", "workers", lines.get("workers"))
    seed = _check_value("seed", data["seed"], lines) if "seed" in data else 0
    history = _check_value("history", data["history"], lines) if data.get("history") is not None else None
    clock = _check_value("clock", data["clock"], lines) if "clock" in data else "wall"
    if clock not in CLOCKS:
        raise ConfigFileError(f"must be one of {CLOCKS}", "clock", lines.get("clock"))
    if clock == "virtual" and hyperband.budget_kind != "resource":
        raise ConfigFileError("the virtual clock needs budget.kind: resource", "clock", lines.get("clock"))
    return RunConfig(space, hyperband, sampler, forest, ensemble, evaluator, workers, seed, history, clock)


def apply_overrides(cfg: RunConfig, seed: int | None = None, workers: int | None = None, budget: float | None = None,
                    budget_kind: str | None = None, history: str | None = None, clock: str | None = None,
                    rho: float | None = None, fusion: str | None = None) -> RunConfig:
    """Command-line flags win over the file."""
    try:
        hb = cfg.hyperband
        if budget is not None or budget_kind is not None:
            hb = replace(hb, total_budget=budget if budget is not None else hb.total_budget,
                         budget_kind=budget_kind or hb.budget_kind)
        sampler = replace(cfg.sampler, rho=rho) if rho is not None else cfg.sampler
        ensemble = replace(cfg.ensemble, fusion=fusion) if fusion is not None else cfg.ensemble
    except InvalidParameterError as e:
        raise ConfigFileError(str(e), "command line")
    if workers is not None and workers < 1:
        raise ConfigFileError("must be >= 1", "--workers")
    clock = clock or cfg.clock
    if clock not in CLOCKS:
        raise ConfigFileError(f"must be one of {CLOCKS}", "--clock")
    if clock == "virtual" and hb.budget_kind != "resource":
        raise ConfigFileError("the virtual clock needs a resource budget", "--clock")
    return replace(cfg, hyperband=hb, sampler=sampler, ensemble=ensemble,
                   seed=cfg.seed if seed is None else int(seed),
                   workers=cfg.workers if workers is None else int(workers),
                   history=history or cfg.history, clock=clock)


def build_evaluator(cfg: RunConfig) -> Evaluator:
    ev = cfg.evaluator
    try:
        if "benchmark" in ev:
            spec = BenchmarkSpec(ev["benchmark"], ev.get("noise_std", 0.0), ev.get("fidelity_bias", 1.0),
                                 float(cfg.hyperband.R))
            return SyntheticEvaluator(spec, cfg.seed)
        return SubprocessEvaluator(ev["command"], ev.get("timeout"))
    except EvaluatorSetupError:
        raise
    except MFESError as e:
        raise EvaluatorSetupError(str(e))

# --- END OF FILE run_config.py ---
