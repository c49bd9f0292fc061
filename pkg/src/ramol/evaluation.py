"""Prequential evaluation, seed aggregation, runtime factors and empirical regret."""

from __future__ import annotations

import csv
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .learner import Learner, LearnerConfig, StepOutcome
from .model import PROB_FLOOR
from .stream import Example, RegimeSpec, drift_budget, gen_piecewise_stream, regime_schedule

DEFAULT_WINDOW = 1000

# name -> LearnerConfig overrides, in table order
ABLATIONS: dict[str, dict] = {
    "Baseline": {"variant": "baseline"},
    "RAM-Naive": {"variant": "ram_naive"},
    "Gated-full": {"variant": "ram_gated"},
    "Gated-noTime": {"variant": "ram_gated", "no_time": True},
    "Gated-noSim": {"variant": "ram_gated", "no_sim": True},
    "Gated-noDecay": {"variant": "ram_gated", "no_decay": True},
}


def sliding_accuracy(correct: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean of ``correct`` over the last ``min(window, t)`` steps, for every t."""
    c = np.concatenate([[0], np.cumsum(correct, dtype=np.int64)])
    t = np.arange(1, len(correct) + 1)
    lo = np.maximum(t - window, 0)
    return (c[t] - c[lo]) / (t - lo)


@dataclass
class RunMetrics:
    config: dict
    per_step_correct: np.ndarray
    per_step_loss: np.ndarray
    window: int
    window_acc_curve: np.ndarray
    final_acc: float
    avg_acc: float
    coverage: float | None
    label_match: float | None
    label_match_pre_gate: float | None
    wall_clock_s: float
    dataset: str | None = None

    @property
    def variant(self) -> str:
        return self.config["variant"]

    @property
    def seed(self) -> int:
        return self.config["seed"]

    @property
    def n_steps(self) -> int:
        return len(self.per_step_correct)

    def summary(self) -> dict:
        return {
            "dataset": self.dataset,
            "variant": self.variant,
            "seed": self.seed,
            "n_steps": self.n_steps,
            "window": self.window,
            "final_acc": self.final_acc,
            "avg_acc": self.avg_acc,
            "coverage": self.coverage,
            "label_match": self.label_match,
            "label_match_pre_gate": self.label_match_pre_gate,
            "mean_loss": float(self.per_step_loss.mean()),
            "wall_clock_s": self.wall_clock_s,
            "config": self.config,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)

    def write_curve(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "correct", "window_acc"])
            for t, (a, acc) in enumerate(zip(self.per_step_correct, self.window_acc_curve)):
                w.writerow([t, int(a), repr(float(acc))])


def summarize(config: LearnerConfig, outcomes: Sequence[StepOutcome], window: int,
              wall_clock_s: float, dataset: str | None = None) -> RunMetrics:
    if not outcomes:
        raise ValueError("empty stream")
    correct = np.fromiter((o.correct for o in outcomes), dtype=np.uint8, count=len(outcomes))
    loss = np.fromiter((o.loss for o in outcomes), dtype=float, count=len(outcomes))
    curve = sliding_accuracy(correct, window)
    coverage = label_match = label_match_pre = None
    if config.variant != "baseline":
        attempted = [o for o in outcomes if o.retrieval_attempted]
        if attempted:
            coverage = sum(o.n_after_gates >= 1 for o in attempted) / len(attempted)
            kept = sum(o.n_after_gates for o in attempted)
            retrieved = sum(o.n_retrieved for o in attempted)
            if kept:
                label_match = sum(o.neighbour_label_matches for o in attempted) / kept
            if retrieved:
                label_match_pre = sum(o.pre_gate_label_matches for o in attempted) / retrieved
    return RunMetrics(
        config=config.to_dict(),
        per_step_correct=correct,
        per_step_loss=loss,
        window=window,
        window_acc_curve=curve,
        final_acc=float(curve[-1]),
        avg_acc=float(correct.sum() / len(correct)),
        coverage=coverage,
        label_match=label_match,
        label_match_pre_gate=label_match_pre,
        wall_clock_s=wall_clock_s,
        dataset=dataset,
    )


def prequential_run(config: LearnerConfig, stream: Iterable[Example], n_classes: int,
                    window: int = DEFAULT_WINDOW, timing_repeats: int = 1,
                    dataset: str | None = None) -> RunMetrics:
    """Test-then-train over the whole stream.

    The stream is materialised first so timing covers learning only.  With
    ``timing_repeats > 1`` the (deterministic) run is repeated and the median
    wall-clock time is reported.
    """
    if window < 1:
        raise ValueError("window must be positive")
    examples = stream if isinstance(stream, list) else list(stream)
    if not examples:
        raise ValueError("empty stream")
    d = examples[0].features.shape[0]
    times = []
    outcomes = None
    for _ in range(max(1, timing_repeats)):
        learner = Learner(config, d, n_classes)
        step = learner.step
        t0 = time.perf_counter()
        outcomes = [step(ex) for ex in examples]
        times.append(time.perf_counter() - t0)
    return summarize(config, outcomes, window, statistics.median(times), dataset)


def _run_job(args):
    config, examples, n_classes, window, repeats, dataset = args
    return prequential_run(config, examples, n_classes, window, repeats, dataset)


def run_seeds(config: LearnerConfig, examples: Sequence[Example], n_classes: int, seeds: Sequence[int],
              window: int = DEFAULT_WINDOW, workers: int = 1, timing_repeats: int = 1,
              dataset: str | None = None) -> list[RunMetrics]:
    """One prequential run per seed; independent runs may use a process pool."""
    examples = list(examples)
    jobs = [(config.replace(seed=s), examples, n_classes, window, timing_repeats, dataset) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------


@dataclass
class AggregateMetrics:
    runs: list[RunMetrics]
    final_mean: float
    final_std: float
    avg_mean: float
    avg_std: float
    wall_clock_mean: float
    runtime_factor: float | None
    single_seed: bool = False

    @property
    def variant(self) -> str:
        return self.runs[0].variant

    def summary(self) -> dict:
        return {
            "variant": self.variant,
            "seeds": [r.seed for r in self.runs],
            "final_mean": self.final_mean,
            "final_std": self.final_std,
            "avg_mean": self.avg_mean,
            "avg_std": self.avg_std,
            "wall_clock_mean": self.wall_clock_mean,
            "runtime_factor": self.runtime_factor,
            "single_seed": self.single_seed,
        }


def _sample_std(values: Sequence[float]) -> float:
    return statistics.stdev(values) if len(values) > 1 else 0.0


def aggregate(runs: Sequence[RunMetrics], baseline_wall_clock: float | None = None) -> AggregateMetrics:
    """Mean and sample std (n - 1) over seeds.

    The runtime factor is this group's mean wall clock over
    ``baseline_wall_clock``; a baseline group with no reference gets 1.0.
    """
    if not runs:
        raise ValueError("nothing to aggregate")
    ref = {k: v for k, v in runs[0].config.items() if k != "seed"}
    for r in runs[1:]:
        if {k: v for k, v in r.config.items() if k != "seed"} != ref:
            raise ValueError("runs differ in more than the seed")
    runs = sorted(runs, key=lambda r: r.seed)
    finals = [r.final_acc for r in runs]
    avgs = [r.avg_acc for r in runs]
    wall = statistics.fmean(r.wall_clock_s for r in runs)
    if baseline_wall_clock is not None:
        factor = wall / baseline_wall_clock
    elif runs[0].variant == "baseline":
        factor = 1.0
    else:
        factor = None
    return AggregateMetrics(
        runs=list(runs),
        final_mean=statistics.fmean(finals),
        final_std=_sample_std(finals),
        avg_mean=statistics.fmean(avgs),
        avg_std=_sample_std(avgs),
        wall_clock_mean=wall,
        runtime_factor=factor,
        single_seed=len(runs) == 1,
    )


# --------------------------------------------------------------------------
# Ablations and benchmarks
# --------------------------------------------------------------------------


def ablation_suite(examples: Sequence[Example], n_classes: int, seed: int,
                   base: LearnerConfig | None = None, window: int = DEFAULT_WINDOW,
                   workers: int = 1, dataset: str | None = None) -> dict[str, RunMetrics]:
    """Baseline, RAM-Naive and the four gated variants under one seed."""
    base = base or LearnerConfig()
    clean = base.replace(no_time=False, no_sim=False, no_decay=False, seed=seed)
    examples = list(examples)
    jobs = [(clean.replace(**over), examples, n_classes, window, 1, dataset) for over in ABLATIONS.values()]
    if workers > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    return dict(zip(ABLATIONS, results))


def bench(examples: Sequence[Example], n_classes: int, variants: Sequence[str], seeds: Sequence[int],
          base: LearnerConfig | None = None, window: int = DEFAULT_WINDOW,
          timing_repeats: int = 3, dataset: str | None = None) -> dict[str, AggregateMetrics]:
    """Seed variability and runtime factor relative to the baseline.

    Runs are sequential in one process so timings are not skewed by
    contention.  The baseline is always run, first, to provide the reference.
    """
    base = base or LearnerConfig()
    examples = list(examples)
    order = ["baseline"] + [v for v in variants if v != "baseline"]
    out: dict[str, AggregateMetrics] = {}
    ref = None
    for v in order:
        cfg = base.replace(variant=v, no_time=False, no_sim=False, no_decay=False)
        runs = run_seeds(cfg, examples, n_classes, seeds, window, 1, timing_repeats, dataset)
        agg = aggregate(runs, ref)
        if v == "baseline":
            ref = agg.wall_clock_mean
            agg.runtime_factor = 1.0
        out[v] = agg
    return {v: out[v] for v in order if v in variants or v == "baseline"}


def _fmt(v: float | None, digits: int = 4) -> str:
    return "--" if v is None else f"{v:.{digits}f}"


def write_ablation_csv(results: dict[str, RunMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "final_acc", "avg_acc", "coverage", "label_match", "label_match_pre_gate"])
        for name, r in results.items():
            w.writerow([name, _fmt(r.final_acc), _fmt(r.avg_acc), _fmt(r.coverage, 2),
                        _fmt(r.label_match, 2), _fmt(r.label_match_pre_gate, 2)])


def write_main_csv(dataset: str, results: dict[str, AggregateMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "method", "final_mean", "final_std", "avg_mean", "avg_std"])
        for name, a in results.items():
            w.writerow([dataset, name, _fmt(a.final_mean), _fmt(a.final_std), _fmt(a.avg_mean), _fmt(a.avg_std)])


def write_bench_csv(dataset: str, results: dict[str, AggregateMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "method", "final_std", "avg_std", "time_factor"])
        for name, a in results.items():
            w.writerow([dataset, name, _fmt(a.final_std), _fmt(a.avg_std), _fmt(a.runtime_factor, 2)])


# --------------------------------------------------------------------------
# Regret against the Bayes oracle
# --------------------------------------------------------------------------


@dataclass
class RegretRecord:
    learner_loss: np.ndarray
    oracle_loss: np.ndarray
    learner_errors: np.ndarray
    oracle_errors: np.ndarray
    drift_budget: float
    metrics: RunMetrics | None = field(default=None, repr=False)

    @property
    def cumulative_learner_loss(self) -> float:
        return float(self.learner_loss.sum())

    @property
    def cumulative_oracle_loss(self) -> float:
        return float(self.oracle_loss.sum())

    @property
    def regret(self) -> float:
        return self.cumulative_learner_loss - self.cumulative_oracle_loss

    @property
    def regret_01(self) -> int:
        return int(self.learner_errors.sum()) - int(self.oracle_errors.sum())

    def regret_curve(self) -> np.ndarray:
        return np.cumsum(self.learner_loss - self.oracle_loss)

    def summary(self) -> dict:
        return {
            "cumulative_learner_loss": self.cumulative_learner_loss,
            "cumulative_oracle_loss": self.cumulative_oracle_loss,
            "regret": self.regret,
            "learner_errors": int(self.learner_errors.sum()),
            "oracle_errors": int(self.oracle_errors.sum()),
            "regret_01": self.regret_01,
            "drift_budget": self.drift_budget,
            "n_steps": len(self.learner_loss),
        }


def regret_run(config: LearnerConfig, regimes: Sequence[RegimeSpec], seed: int,
               window: int = DEFAULT_WINDOW, drift_samples: int = 20000,
               examples: Sequence[Example] | None = None) -> RegretRecord:
    """Prequential run on a synthetic stream plus per-step Bayes-oracle losses.

    The oracle's loss is the cross-entropy of the active regime's posterior,
    its 0/1 loss that of the Bayes decision.  Pass ``examples`` to reuse an
    already generated stream (it must follow ``regimes`` step for step).
    """
    if examples is None:
        examples = list(gen_piecewise_stream(regimes, seed))
    schedule = regime_schedule(regimes)
    if len(examples) != len(schedule):
        raise ValueError(f"stream has {len(examples)} steps, regimes cover {len(schedule)}")
    n_classes = regimes[0].generator.n_classes
    metrics = prequential_run(config, examples, n_classes, window)

    X = np.stack([ex.features for ex in examples])
    y = np.array([ex.label for ex in examples])
    oracle_loss = np.empty(len(y))
    oracle_err = np.empty(len(y), dtype=np.int64)
    for i, r in enumerate(regimes):
        idx = np.flatnonzero(schedule == i)
        post = r.generator.posterior(X[idx])
        oracle_loss[idx] = -np.log(np.maximum(post[np.arange(len(idx)), y[idx]], PROB_FLOOR))
        oracle_err[idx] = np.argmax(post, axis=1) != y[idx]
    return RegretRecord(
        learner_loss=metrics.per_step_loss,
        oracle_loss=oracle_loss,
        learner_errors=1 - metrics.per_step_correct.astype(np.int64),
        oracle_errors=oracle_err,
        drift_budget=drift_budget(regimes, drift_samples, seed),
        metrics=metrics,
    )


def bayes_error_two_gaussians(distance: float, sigma: float) -> float:
    """Bayes error of two equiprobable isotropic Gaussians ``distance`` apart."""
    return 0.5 * math.erfc(distance / (2.0 * sigma) / math.sqrt(2.0))
