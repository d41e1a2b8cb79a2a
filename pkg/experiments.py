# --- START OF FILE experiments.py ---
"""
Comparison harness: MFES-HB against its ablations on a built-in benchmark.

Every run uses a resource budget and the virtual clock, so traces are
indexed by cumulative resource units and are reproducible per seed.
Regret is measured on the noise-free objective of the incumbent.
"""

import argparse
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import binomtest, spearmanr
from tqdm import tqdm

from acquisition import SamplerParams
from benchmarks import BenchmarkSpec, SyntheticEvaluator, simple_regret
from config_space import sample_uniform
from hyperband import HBParams, MFESHyperband, bracket_schedule
from mfes_ensemble import EnsembleParams
from surrogate_forest import ForestParams
from utils import SHOW_PROGRESS, make_rng, setup_logging

logger = logging.getLogger(__name__)

VARIANTS = {
    "mfes_hb": {},
    "hyperband": {"rho": 1.0},
    "equal_weight": {"fusion": "equal_weight"},
    "single_best": {"fusion": "single_best"},
    "top_only": {"fusion": "top_only"},
}


@dataclass(frozen=True)
class ExperimentSetup:
    benchmark: str = "hartmann6"
    noise_std: float = 0.01
    fidelity_bias: float = 0.5
    R: float = 27.0
    eta: float = 3.0
    iterations: int = 3
    rho: float = 0.2
    n_candidates: int = 1000
    forest: ForestParams = field(default_factory=ForestParams)
    ensemble: EnsembleParams = field(default_factory=EnsembleParams)

    @property
    def spec(self) -> BenchmarkSpec:
        return BenchmarkSpec(self.benchmark, self.noise_std, self.fidelity_bias, self.R)

    @property
    def budget(self) -> float:
        """Resource units of `iterations` complete Hyperband iterations."""
        plans = bracket_schedule(HBParams(self.R, self.eta, 1.0, "resource"))
        return self.iterations * sum(p.total_resource for p in plans)


@dataclass
class Trace:
    """Step function of regret over cumulative resource."""
    variant: str
    seed: int
    resources: list = field(default_factory=list)
    regrets: list = field(default_factory=list)

    @property
    def final_regret(self) -> float:
        return self.regrets[-1] if self.regrets else math.inf

    def regret_at(self, resource: float) -> float:
        i = int(np.searchsorted(self.resources, resource, side="right")) - 1
        return self.regrets[i] if i >= 0 else math.inf


class TraceRecorder:
    """Recorder that keeps the incumbent's true regret after every top-fidelity measurement."""

    def __init__(self, spec: BenchmarkSpec, space, trace: Trace):
        self.spec = spec
        self.space = space
        self.trace = trace
        self.best_loss = math.inf
        self.best_regret = math.inf

    def record(self, kind: str, payload: dict, t: float):
        if kind != "measurement" or payload.get("failed"):
            return
        if not math.isclose(float(payload["resource"]), float(self.spec.max_resource), rel_tol=1e-9):
            return
        if payload["loss"] < self.best_loss:
            self.best_loss = payload["loss"]
            config = self.space.make(payload["config"])
            self.best_regret = simple_regret(self.spec, self.spec.benchmark.f_true(config))
        self.trace.resources.append(float(t))
        self.trace.regrets.append(self.best_regret)


def run_variant(setup: ExperimentSetup, variant: str, seed: int) -> Trace:
    overrides = VARIANTS[variant]
    spec = setup.spec
    sampler = SamplerParams(overrides.get("rho", setup.rho), setup.n_candidates)
    ensemble = replace(setup.ensemble, fusion=overrides.get("fusion", setup.ensemble.fusion))
    trace = Trace(variant, seed)
    driver = MFESHyperband(spec.space, HBParams(setup.R, setup.eta, setup.budget, "resource"), sampler,
                           setup.forest, ensemble, SyntheticEvaluator(spec, seed), seed=seed,
                           clock="virtual", recorder=TraceRecorder(spec, spec.space, trace), show_progress=False)
    driver.run()
    return trace


def run_comparison(setup: ExperimentSetup, variants: list[str], seeds: list[int]) -> dict[str, list[Trace]]:
    results = {v: [] for v in variants}
    jobs = [(v, s) for s in seeds for v in variants]
    for variant, seed in tqdm(jobs, desc="runs", disable=not SHOW_PROGRESS):
        results[variant].append(run_variant(setup, variant, seed))
    return results


# --- Statistics ---
def median_final_regret(traces: list[Trace]) -> float:
    return float(np.median([t.final_regret for t in traces]))


def median_curve(traces: list[Trace], grid) -> np.ndarray:
    return np.asarray([np.median([t.regret_at(x) for t in traces]) for x in grid])


def resource_to_reach(traces: list[Trace], target: float, budget: float, points: int = 200) -> float | None:
    """Smallest resource at which the median regret curve is at or below target."""
    grid = np.linspace(budget / points, budget, points)
    curve = median_curve(traces, grid)
    hits = np.nonzero(curve <= target + 1e-12)[0]
    return float(grid[hits[0]]) if len(hits) else None


def sign_test(candidate: list[float], baseline: list[float]) -> dict:
    """
    Paired one-sided sign test on per-seed final regrets. `p_worse` is the
    p-value for "candidate is worse than baseline"; ties are dropped.
    """
    if len(candidate) != len(baseline):
        raise ValueError("sign test needs paired samples")
    diff = np.asarray(candidate) - np.asarray(baseline)
    worse, better = int(np.sum(diff > 0)), int(np.sum(diff < 0))
    n = worse + better
    if n == 0:
        return {"better": 0, "worse": 0, "ties": len(diff), "p_worse": 1.0, "p_better": 1.0}
    return {"better": better, "worse": worse, "ties": len(diff) - n,
            "p_worse": float(binomtest(worse, n, 0.5, alternative="greater").pvalue),
            "p_better": float(binomtest(better, n, 0.5, alternative="greater").pvalue)}


def summarize(results: dict[str, list[Trace]], budget: float, reference: str = "mfes_hb",
              baseline: str = "hyperband") -> dict:
    summary = {v: {"median_final_regret": median_final_regret(t)} for v, t in results.items()}
    if reference in results and baseline in results:
        target = summary[baseline]["median_final_regret"]
        ref_needed = resource_to_reach(results[reference], target, budget)
        summary[reference]["resource_to_baseline_regret"] = ref_needed
        summary[reference]["resource_fraction"] = ref_needed / budget if ref_needed is not None else None
    if reference in results:
        ref_final = [t.final_regret for t in results[reference]]
        for v, traces in results.items():
            if v != reference:
                summary[v]["sign_test_vs_" + reference] = sign_test(ref_final, [t.final_regret for t in traces])
    return summary


def fidelity_correlations(spec: BenchmarkSpec, levels: list[float], n_configs: int = 200, seed: int = 0) -> list[float]:
    """Spearman correlation between noise-free losses at each level and at max_resource."""
    spec = replace(spec, noise_std=0.0)
    evaluator = SyntheticEvaluator(spec, seed)
    rng = make_rng(seed, "misc")
    configs = [sample_uniform(spec.space, rng) for _ in range(n_configs)]
    full = [evaluator(c, spec.max_resource) for c in configs]
    out = []
    for r in levels:
        rho, _ = spearmanr([evaluator(c, r) for c in configs], full)
        out.append(float(rho))
    return out


def main(argv: list[str] | None = None):
    parser = argparse.ArgumentParser(description="Compare MFES-HB with its ablations on a built-in benchmark.")
    parser.add_argument("--benchmark", default="hartmann6")
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--iterations", type=int, default=3)
    parser.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    args = parser.parse_args(argv)
    setup_logging("WARNING")
    setup = ExperimentSetup(benchmark=args.benchmark, iterations=args.iterations)
    results = run_comparison(setup, args.variants, list(range(args.seeds)))
    summary = summarize(results, setup.budget)
    print(f"{setup.benchmark}: budget {setup.budget:g} resource units, {args.seeds} seeds")
    for variant, row in summary.items():
        line = f"  {variant:<13} median regret {row['median_final_regret']:.4g}"
        if "resource_fraction" in row and row["resource_fraction"] is not None:
            line += f", reaches Hyperband's final median at {row['resource_fraction']:.0%} of the budget"
        test = next((v for k, v in row.items() if k.startswith("sign_test")), None)
        if test:
            line += f", sign test p(MFES-HB worse)={test['p_worse']:.3f}"
        print(line)
    return summary


if __name__ == '__main__':
    main()

# --- END OF FILE experiments.py ---
