# evaluation.py
"""Imbalance-aware metrics and the sample-efficiency / runtime-reduction summaries."""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Protocol, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from config import DECISION_THRESHOLD
from errors import ContractError

logger = logging.getLogger(__name__)

BENCHMARK = 'benchmark'


class RecordLike(Protocol):
    iteration: int
    cumulative_samples: int
    f1: float
    t_contrastive_s: float
    t_proxy_s: float
    t_sampling_s: float


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ContractError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ReductionReport:
    target_f1: float
    reached: bool
    best_f1: float                    # closest F1 the strategy attained
    samples_needed: Optional[int]
    pool_size: int
    sample_reduction: Optional[float]
    time_needed_s: Optional[float]
    benchmark_time_s: float
    time_reduction: Optional[float]


def confusion(probabilities, labels, threshold: float = DECISION_THRESHOLD) -> Confusion:
    """Counts with prediction = probability >= threshold."""
    probs = np.asarray(probabilities, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if probs.shape != labels.shape:
        raise ContractError(f"{len(probs)} probabilities for {len(labels)} labels")
    if not set(np.unique(labels).tolist()) <= {0, 1}:
        raise ContractError("labels must be binary")
    if len(labels) == 0:
        return Confusion(0, 0, 0, 0)
    predicted = (probs >= threshold).astype(np.int64)
    tn, fp, fn, tp = confusion_matrix(labels.astype(np.int64), predicted, labels=[0, 1]).ravel()
    return Confusion(int(tp), int(fp), int(fn), int(tn))


def f1_score(c: Confusion) -> PRF:
    """
    Precision, recall and their harmonic mean.

    Zero denominators give zero: P = 0 when TP+FP = 0, R = 0 when TP+FN = 0,
    F1 = 0 when P+R = 0.
    """
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * recall * precision / (recall + precision) if recall + precision else 0.0
    return PRF(precision, recall, f1)


def wall_time(record: RecordLike) -> float:
    return record.t_contrastive_s + record.t_proxy_s + record.t_sampling_s


def samples_to_reach(records: Sequence[RecordLike], target_f1: float) -> Optional[int]:
    """Smallest cumulative sample count whose F1 reaches the target, or None if never reached."""
    if len(records) == 0:
        raise ContractError("samples_to_reach needs at least one record")
    hits = [r.cumulative_samples for r in records if r.f1 >= target_f1]
    return int(min(hits)) if hits else None


def reduction_report(benchmark: Sequence[RecordLike], strategy: Sequence[RecordLike]) -> ReductionReport:
    """
    Sample and time reduction of a strategy against the full-pool benchmark.

    The target F1* is the benchmark's best F1 and |U| its sample count. Wall-time
    fields are per-record increments: the benchmark costs the sum over all its
    records, a strategy the running sum up to its first record reaching F1*.
    """
    if len(benchmark) == 0 or len(strategy) == 0:
        raise ContractError("reduction_report needs benchmark and strategy records")
    target = max(r.f1 for r in benchmark)
    pool_size = int(max(r.cumulative_samples for r in benchmark))
    benchmark_time = float(sum(wall_time(r) for r in benchmark))
    ordered = sorted(strategy, key=lambda r: r.iteration)
    best = max(r.f1 for r in ordered)

    needed = samples_to_reach(ordered, target)
    if needed is None:
        logger.warning(f"Strategy never reached F1*={target:.4f}; closest F1 was {best:.4f}")
        return ReductionReport(target, False, best, None, pool_size, None, None, benchmark_time, None)

    elapsed = 0.0
    for r in ordered:
        elapsed += wall_time(r)
        if r.f1 >= target:
            break
    time_reduction = 1.0 - elapsed / benchmark_time if benchmark_time > 0 else None
    return ReductionReport(
        target_f1=target,
        reached=True,
        best_f1=best,
        samples_needed=needed,
        pool_size=pool_size,
        sample_reduction=1.0 - needed / pool_size,
        time_needed_s=elapsed,
        benchmark_time_s=benchmark_time,
        time_reduction=time_reduction,
    )


# --- Aggregation over experiment logs ---

def mean_curves(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean P/R/F1 and phase times over repetitions per (strategy, iteration)."""
    grouped = frame.groupby(['strategy', 'iteration'], sort=True)
    curves = grouped.agg(
        cumulative_samples=('cumulative_samples', 'mean'),
        precision=('precision', 'mean'),
        recall=('recall', 'mean'),
        f1=('f1', 'mean'),
        t_contrastive_s=('t_contrastive_s', 'mean'),
        t_proxy_s=('t_proxy_s', 'mean'),
        t_sampling_s=('t_sampling_s', 'mean'),
        repetitions=('run_id', 'nunique'),
    ).reset_index()
    return curves


def runtime_table(frame: pd.DataFrame) -> pd.DataFrame:
    """
    One row per method: average time to reach the benchmark's best mean F1,
    time reduction %, samples to reach and sample reduction %.
    """
    bench = frame[frame['strategy'] == BENCHMARK]
    if bench.empty:
        raise ContractError("runtime_table needs at least one benchmark log")
    bench_curve = mean_curves(bench)
    bench_records = list(bench_curve.itertuples())
    bench_time = float(sum(wall_time(r) for r in bench_records))
    bench_runs = bench['run_id'].nunique()

    rows: List[dict] = [{
        'method': BENCHMARK, 'avg_runtime_s': bench_time, 'time_reduction_pct': np.nan,
        'samples_to_reach': int(bench_curve['cumulative_samples'].max()),
        'sample_reduction_pct': np.nan, 'reached_runs': bench_runs, 'runs': bench_runs,
    }]
    for strategy, group in frame[frame['strategy'] != BENCHMARK].groupby('strategy', sort=True):
        reports = [reduction_report(bench_records, list(run.itertuples()))
                   for _, run in group.groupby('run_id', sort=True)]
        reached = [r for r in reports if r.reached]
        avg_time = float(np.mean([r.time_needed_s for r in reached])) if reached else np.nan
        avg_samples = float(np.mean([r.samples_needed for r in reached])) if reached else np.nan
        pool_size = reports[0].pool_size
        rows.append({
            'method': strategy,
            'avg_runtime_s': avg_time,
            'time_reduction_pct': 100.0 * (1.0 - avg_time / bench_time) if reached and bench_time > 0 else np.nan,
            'samples_to_reach': avg_samples,
            'sample_reduction_pct': 100.0 * (1.0 - avg_samples / pool_size) if reached else np.nan,
            'reached_runs': len(reached),
            'runs': len(reports),
        })
    return pd.DataFrame(rows)
