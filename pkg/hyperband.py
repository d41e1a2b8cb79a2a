# --- START OF FILE hyperband.py ---
"""
Hyperband scheduling and the MFES-HB driver.

Brackets follow the classic Hyperband grid (s = s_max .. 0), each bracket
runs successive halving, and every measurement lands in the fidelity group
of its resource level. Between brackets the ensemble surrogate is refit
and the next bracket's configurations come from the acquisition sampler.
"""

import logging
import math
import time
from dataclasses import dataclass, field

from tqdm import tqdm

from acquisition import SamplerParams, incumbent_value, sample_batch
from config_space import Configuration, ConfigurationSpace
from evaluation import EvaluationRequest, Evaluator, WorkerPool
from mfes_ensemble import EnsembleParams, EnsembleSurrogate, FidelityGroup, Measurement, build_ensemble
from surrogate_forest import ForestParams
from utils import SHOW_PROGRESS, DomainError, InvalidParameterError, format_loss, make_rng

logger = logging.getLogger(__name__)

BUDGET_KINDS = ("wallclock", "resource")
CLOCKS = ("wall", "virtual")


@dataclass(frozen=True)
class HBParams:
    R: float = 27.0
    eta: float = 3.0
    total_budget: float = 3600.0
    budget_kind: str = "wallclock"

    def __post_init__(self):
        if not float(self.eta) > 1.0: raise InvalidParameterError(f"eta must be > 1, got {self.eta}")
        if not float(self.R) >= float(self.eta): raise InvalidParameterError(f"R ({self.R}) must be >= eta ({self.eta})")
        if not 0.0 < float(self.total_budget) < math.inf:
            raise InvalidParameterError(f"total_budget must be positive and finite, got {self.total_budget}")
        if self.budget_kind not in BUDGET_KINDS:
            raise InvalidParameterError(f"budget_kind must be one of {BUDGET_KINDS}, got '{self.budget_kind}'")

    @property
    def s_max(self) -> int:
        # log(243, 3) evaluates to 4.999..., hence the nudge
        return int(math.floor(math.log(float(self.R)) / math.log(float(self.eta)) + 1e-9))

    @property
    def K(self) -> int:
        return self.s_max + 1

    @property
    def levels(self) -> list[float]:
        """Canonical resource levels, ascending; the last one is exactly R."""
        R, eta, K = float(self.R), float(self.eta), self.K
        return [R / eta ** (K - 1 - j) for j in range(K)]

    def to_dict(self) -> dict:
        return {"R": self.R, "eta": self.eta, "total_budget": self.total_budget, "budget_kind": self.budget_kind}


@dataclass(frozen=True)
class BracketPlan:
    s: int
    n1: int
    r1: float
    rungs: tuple

    @property
    def total_resource(self) -> float:
        return sum(n * r for n, r in self.rungs)

    @property
    def evaluations(self) -> int:
        return sum(n for n, _ in self.rungs)

    def to_dict(self) -> dict:
        return {"s": self.s, "n1": self.n1, "r1": self.r1, "rungs": [[n, r] for n, r in self.rungs]}


def bracket_schedule(params: HBParams) -> list[BracketPlan]:
    """One Hyperband iteration: brackets s = s_max down to 0."""
    eta, s_max = float(params.eta), params.s_max
    levels = params.levels
    K = len(levels)
    plans = []
    for s in range(s_max, -1, -1):
        n = int(math.ceil((s_max + 1) * eta ** s / (s + 1) - 1e-9))
        rungs = []
        for i in range(s + 1):
            rungs.append((n, levels[K - 1 - s + i]))
            n = max(1, int(math.floor(n / eta)))
        plans.append(BracketPlan(s, rungs[0][0], rungs[0][1], tuple(rungs)))
    return plans


# --- Measurement Store ---
class MeasurementStore:
    """D_1..D_K keyed by canonical resource level, ascending."""

    def __init__(self, R: float, eta: float):
        self.levels = HBParams(R, eta, 1.0).levels
        self.groups = {level: FidelityGroup(level) for level in self.levels}

    @property
    def K(self) -> int:
        return len(self.levels)

    def level_for(self, resource: float) -> float:
        for level in self.levels:
            if math.isclose(level, float(resource), rel_tol=1e-9):
                return level
        raise DomainError(f"resource {resource} is not one of the levels {self.levels}")

    def add(self, measurement: Measurement):
        level = self.level_for(measurement.resource)
        if measurement.resource != level:
            measurement = Measurement(measurement.config, level, measurement.loss, measurement.duration,
                                      measurement.bracket, measurement.rung)
        self.groups[level].add(measurement)

    def group_list(self) -> list[FidelityGroup]:
        return [self.groups[level] for level in self.levels]

    def counts(self) -> list[int]:
        return [len(self.groups[level]) for level in self.levels]

    @property
    def top(self) -> FidelityGroup:
        return self.groups[self.levels[-1]]

    def all_measurements(self) -> list[Measurement]:
        return [m for g in self.group_list() for m in g.measurements]

    def __len__(self):
        return sum(self.counts())

    def best(self) -> Measurement | None:
        """Exact argmin over D_K; falls back to the highest non-empty group."""
        for group in reversed(self.group_list()):
            finite = group.finite()
            if not finite:
                continue
            if group is not self.top:
                logger.warning(f"No successful top-fidelity measurement; best is taken from r={group.resource_level}.")
            return min(finite, key=lambda m: m.loss)
        return None

    def snapshot(self) -> dict:
        return {level: [(m.config.id, m.resource, m.loss, m.bracket, m.rung) for m in self.groups[level].measurements]
                for level in self.levels}

    def __eq__(self, other):
        return isinstance(other, MeasurementStore) and self.levels == other.levels and self.snapshot() == other.snapshot()


def measurement_payload(m: Measurement, request_id: str = "", error: str | None = None) -> dict:
    return {
        "bracket": m.bracket, "rung": m.rung, "config_id": m.config.id, "config": m.config.to_dict(),
        "origin": m.config.origin, "resource": m.resource, "loss": None if m.failed else m.loss,
        "failed": m.failed, "duration": m.duration, "request_id": request_id, "error": error,
    }


def measurement_from_payload(payload: dict, space: ConfigurationSpace) -> Measurement:
    config = space.make(payload["config"], origin=payload.get("origin", "random"))
    loss = payload.get("loss")
    loss = math.inf if loss is None or payload.get("failed") else float(loss)
    return Measurement(config, float(payload["resource"]), loss, float(payload.get("duration", 0.0)),
                       int(payload.get("bracket", -1)), int(payload.get("rung", -1)))


# --- Successive Halving ---
def successive_halving(configs: list[Configuration], plan: BracketPlan, evaluator, store: MeasurementStore, *,
                       bracket: int = 0, pool: WorkerPool | None = None, on_rung=None, should_stop=None) -> dict:
    """
    Runs one bracket. Each rung's measurements go into `store`; the best
    n_{i+1} finite losses advance (ties: earlier completion, then config id).

    on_rung(rung, requests, results, measurements) is called after each rung;
    should_stop() is checked between rungs so a rung in flight always completes.
    Returns the new measurements grouped by resource level.
    """
    if len(configs) != plan.n1:
        raise InvalidParameterError(f"bracket s={plan.s} needs {plan.n1} configurations, got {len(configs)}")
    if pool is None:
        pool = evaluator if isinstance(evaluator, WorkerPool) else WorkerPool(evaluator)
    new = {}
    survivors = list(configs)
    for i, (_, resource) in enumerate(plan.rungs):
        requests = [EvaluationRequest(c, resource, f"b{bracket}-r{i}-{j}") for j, c in enumerate(survivors)]
        results = pool.evaluate_batch(requests)
        measurements = []
        for req, res in zip(requests, results):
            if res.failed:
                logger.warning(f"Evaluation {req.request_id} (config {req.config.id}, r={resource:g}) failed: {res.error}")
            m = Measurement(req.config, resource, res.loss_or_inf, res.duration, bracket, i)
            store.add(m)
            measurements.append(m)
        new.setdefault(resource, []).extend(measurements)
        if on_rung is not None:
            on_rung(i, requests, results, measurements)

        if i == len(plan.rungs) - 1:
            break
        if should_stop is not None and should_stop():
            logger.info(f"Budget exhausted after rung {i} of bracket {bracket}.")
            break
        n_next = plan.rungs[i + 1][0]
        order = sorted(range(len(survivors)),
                       key=lambda j: (results[j].loss_or_inf, results[j].finished_seq, survivors[j].id))
        promoted = [j for j in order if not results[j].failed][:n_next]
        if len(promoted) < n_next:
            logger.warning(f"Bracket {bracket} rung {i}: only {len(promoted)} successful configurations to promote (wanted {n_next}).")
        survivors = [survivors[j] for j in promoted]
        if not survivors:
            break
    return new


# --- Driver ---
@dataclass
class RunResult:
    best: Measurement | None
    store: MeasurementStore
    ensemble: EnsembleSurrogate | None
    brackets_run: int
    resource_used: float
    elapsed: float
    finished: bool
    weight_history: list = field(default_factory=list)

    @property
    def best_config(self) -> Configuration | None:
        return self.best.config if self.best else None

    @property
    def best_loss(self) -> float:
        return self.best.loss if self.best else math.inf


class MFESHyperband:
    """
    Owns one optimization run. `recorder` is any object with
    record(kind, payload, t); the history writer is the usual one.
    """

    def __init__(self, space: ConfigurationSpace, params: HBParams, sampler: SamplerParams | None = None,
                 forest: ForestParams | None = None, ensemble: EnsembleParams | None = None,
                 evaluator: Evaluator | None = None, seed: int = 0, workers: int = 1, timeout: float | None = None,
                 backend: str = "thread", clock: str = "wall", recorder=None, show_progress: bool | None = None):
        if evaluator is None: raise InvalidParameterError("an evaluator is required")
        if clock not in CLOCKS: raise InvalidParameterError(f"clock must be one of {CLOCKS}, got '{clock}'")
        if clock == "virtual" and params.budget_kind != "resource":
            raise InvalidParameterError("the virtual clock needs a resource budget")
        self.space = space
        self.params = params
        self.sampler = sampler or SamplerParams()
        self.forest = forest or ForestParams()
        self.ensemble_params = ensemble or EnsembleParams()
        self.seed = int(seed)
        self.clock = clock
        self.recorder = recorder
        self.show_progress = SHOW_PROGRESS if show_progress is None else show_progress
        self.pool = WorkerPool(evaluator, workers, timeout, backend)
        self.schedule = bracket_schedule(params)
        self.store = MeasurementStore(params.R, params.eta)
        self.ensemble: EnsembleSurrogate | None = None
        self.next_bracket = 0
        self.resource_used = 0.0
        self.brackets_run = 0
        self.weight_history = []
        self._elapsed_offset = 0.0
        self._started = time.perf_counter()

    # --- clocks and budget ---
    def elapsed(self) -> float:
        if self.clock == "virtual":
            return self.resource_used
        return self._elapsed_offset + time.perf_counter() - self._started

    def spent(self) -> float:
        if self.params.budget_kind == "resource":
            return self.resource_used
        return self._elapsed_offset + time.perf_counter() - self._started

    def exhausted(self) -> bool:
        return self.spent() >= float(self.params.total_budget)

    def _record(self, kind: str, payload: dict):
        if self.recorder is not None:
            self.recorder.record(kind, payload, self.elapsed())

    # --- resume ---
    def restore(self, measurements: list[Measurement], next_bracket: int, elapsed: float = 0.0):
        """Replays measurements into the store and refits the ensemble left by bracket next_bracket - 1."""
        for m in measurements:
            self.store.add(m)
        self.resource_used = float(sum(m.resource for m in measurements))
        self.next_bracket = int(next_bracket)
        self._elapsed_offset = float(elapsed) if self.clock == "wall" else 0.0
        self._started = time.perf_counter()
        if self.next_bracket > 0:
            self.ensemble = self._fit_ensemble(self.next_bracket - 1)
        logger.info(f"Restored {len(measurements)} measurements; continuing at bracket {self.next_bracket} "
                    f"(spent {self.spent():.3f} of {self.params.total_budget}).")

    def _fit_ensemble(self, bracket: int) -> EnsembleSurrogate | None:
        ep = self.ensemble_params
        return build_ensemble(self.store.group_list(), self.forest, ep.theta, ep.k_full_threshold,
                              make_rng(self.seed, "forest", bracket), self.space, ep.fusion)

    # --- main loop ---
    def run_bracket(self, g: int) -> bool:
        """Runs bracket g; returns False when the budget ran out inside it."""
        plan = self.schedule[g % len(self.schedule)]
        y_star = incumbent_value(self.store.group_list())
        configs = sample_batch(self.space, self.ensemble, self.sampler, y_star, make_rng(self.seed, "sample", g), plan.n1)
        self._record("bracket_start", {"bracket": g, "iteration": g // len(self.schedule), **plan.to_dict()})
        logger.info(f"Bracket {g} (s={plan.s}): {plan.n1} configurations at r={plan.r1:g}.")

        def on_rung(rung, requests, results, measurements):
            for req, res, m in zip(requests, results, measurements):
                if self.clock == "virtual":
                    m = Measurement(m.config, m.resource, m.loss, m.resource, m.bracket, m.rung)
                self.resource_used += m.resource
                self._record("measurement", measurement_payload(m, req.request_id, res.error))

        successive_halving(configs, plan, None, self.store, bracket=g, pool=self.pool,
                           on_rung=on_rung, should_stop=self.exhausted)
        self.brackets_run += 1
        self.next_bracket = g + 1
        if self.exhausted():
            return False
        self.ensemble = self._fit_ensemble(g)
        if self.ensemble is not None:
            summary = self.ensemble.summary()
            self.weight_history.append(summary["weights"])
            self._record("ensemble_build", {"bracket": g, "counts": self.store.counts(), **summary})
        return True

    def run(self, max_brackets: int | None = None) -> RunResult:
        """Brackets until the budget is spent (or max_brackets more have run, which leaves the run resumable)."""
        total = float(self.params.total_budget)
        unit = "res" if self.params.budget_kind == "resource" else "s"
        finished = self.exhausted()
        ran = 0
        with tqdm(total=total, unit=unit, desc="MFES-HB", disable=not self.show_progress, leave=False) as bar:
            while not finished:
                if max_brackets is not None and ran >= max_brackets:
                    break
                finished = not self.run_bracket(self.next_bracket)
                ran += 1
                bar.update(max(0.0, min(self.spent(), total) - bar.n))
                best = self.store.best()
                if best is not None:
                    bar.set_postfix(best=format_loss(best.loss))
        best = self.store.best()
        if finished:
            self._record("run_end", {
                "brackets": self.next_bracket, "resource_used": self.resource_used,
                "best_config_id": best.config.id if best else None,
                "best_loss": best.loss if best else None,
                "best_resource": best.resource if best else None,
            })
        if best is None:
            logger.warning("Run ended without a single successful measurement.")
        else:
            logger.info(f"Best configuration {best.config.id} with loss {format_loss(best.loss)} at r={best.resource:g}.")
        return RunResult(best, self.store, self.ensemble, self.brackets_run, self.resource_used,
                         self.elapsed(), finished, self.weight_history)


def run_mfes_hb(space: ConfigurationSpace, params: HBParams, sampler: SamplerParams, forest: ForestParams,
                evaluator: Evaluator, seed: int = 0, ensemble: EnsembleParams | None = None, **kwargs) -> RunResult:
    """Convenience wrapper: build the driver and run it to budget exhaustion."""
    max_brackets = kwargs.pop("max_brackets", None)
    return MFESHyperband(space, params, sampler, forest, ensemble, evaluator, seed, **kwargs).run(max_brackets)

# --- END OF FILE hyperband.py ---
