# active.py
"""
The active contrastive loop: train g∘f on the selected subset S^t, fit a fresh
proxy on S_L, evaluate it on S_test, then grow S^t with the configured sampler.
Also the full-pool benchmark run and the CSV writers for experiment logs.
"""

import os
import time
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import CANDIDATE_CAP, DECISION_THRESHOLD
from datagen import AugmentationConfig, Pools
from errors import ConfigError, ContractError, ShapeError
from evaluation import BENCHMARK, confusion, f1_score
from proxy import ProxyHyper, ProxyParams, entropy, extract_features, predict_proba, train_proxy
from sampler import (
    Candidates, SamplerKind, k_center_greedy, sample_random, sample_uncertainty, subsample_candidates,
)
from simclr import ContrastiveHyper, ContrastiveModel, EncoderConfig, init_model, save_checkpoint, train_contrastive
from utils import Stopwatch, derive_rng

logger = logging.getLogger(__name__)

LOG_COLUMNS = [
    'run_id', 'strategy', 'iteration', 'cumulative_samples', 'precision', 'recall', 'f1',
    't_contrastive_s', 't_proxy_s', 't_sampling_s',
]
TIMING_COLUMNS = ['t_contrastive_s', 't_proxy_s', 't_sampling_s']
LOSS_COLUMNS = ['run_id', 'strategy', 'iteration', 'epoch', 'loss']
SELECTION_COLUMNS = ['iteration', 'strategy', 'ids']
FLOAT_FORMAT = '%.10g'


# === CONFIGURATION ===

class BenchmarkConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    contrastive_epochs: int = Field(30, ge=0)
    proxy_epochs: int = Field(200, ge=1)
    eval_interval: int = Field(20, ge=1)

    @model_validator(mode='after')
    def _at_least_one_evaluation(self):
        if self.eval_interval > self.proxy_epochs:
            raise ValueError(
                f"eval_interval ({self.eval_interval}) exceeds proxy_epochs ({self.proxy_epochs}); "
                f"the benchmark would never be evaluated"
            )
        return self


class LoopConfig(BaseModel):
    """Everything one active run (or the benchmark) needs besides the data."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    budget: int = Field(100, ge=1)
    iterations: int = Field(10, ge=1)
    sampler: SamplerKind = SamplerKind.RANDOM
    candidate_cap: int = Field(CANDIDATE_CAP, ge=1)
    encoder: EncoderConfig = EncoderConfig()
    contrastive: ContrastiveHyper = ContrastiveHyper()
    proxy: ProxyHyper = ProxyHyper()
    augmentation: AugmentationConfig = AugmentationConfig()
    benchmark: BenchmarkConfig = BenchmarkConfig()
    threshold: float = Field(DECISION_THRESHOLD, ge=0.0, le=1.0)
    checkpoint_dir: Optional[str] = None
    seed: int = 0

    def check_pool(self, pool_size: int):
        """b·T must fit into the initial unlabeled pool."""
        if self.budget * self.iterations > pool_size:
            raise ConfigError(
                f"loop.budget * loop.iterations = {self.budget * self.iterations} exceeds "
                f"the unlabeled pool of {pool_size} patches"
            )


# === RESULTS ===

@dataclass
class ExperimentRecord:
    """One evaluation of the proxy. Wall times are the increment since the previous record."""
    run_id: str
    strategy: str
    iteration: int               # proxy epoch for benchmark records
    cumulative_samples: int
    precision: float
    recall: float
    f1: float
    t_contrastive_s: float
    t_proxy_s: float
    t_sampling_s: float
    loss_trace: List[float] = field(default_factory=list)


@dataclass
class LoopResult:
    run_id: str
    strategy: str
    records: List[ExperimentRecord]
    selections: List[np.ndarray]  # ids added at each iteration, in selection order
    truncated: bool = False

    @property
    def selected_ids(self) -> np.ndarray:
        if not self.selections:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self.selections)


# === HELPERS ===

def _check_encoder_input(config: LoopConfig, pools: Pools):
    side = pools.unlabeled.patch_side
    if config.encoder.input_dim != side * side:
        raise ShapeError(
            f"encoder.input_dim={config.encoder.input_dim} does not match patches of side {side}"
        )


def _evaluate(model: ContrastiveModel, proxy: ProxyParams, pools: Pools, threshold: float,
              test_features: np.ndarray = None):
    if test_features is None:
        test_features = extract_features(model, pools.test.pixels)
    probabilities = predict_proba(proxy, test_features)
    return f1_score(confusion(probabilities, pools.test.labels, threshold))


def _select_next(config: LoopConfig, model: ContrastiveModel, proxy: ProxyParams, pools: Pools,
                 remaining: np.ndarray, current: np.ndarray, rng: np.random.Generator,
                 show_progress: bool = None) -> np.ndarray:
    """Next b ids from the remaining pool, chosen by the configured sampler."""
    pool = pools.unlabeled
    candidate_ids = subsample_candidates(remaining, rng, config.candidate_cap)
    if config.sampler == SamplerKind.RANDOM:
        return sample_random(Candidates(candidate_ids), config.budget, rng)

    features = extract_features(model, pool.pixels_for(candidate_ids))
    if config.sampler == SamplerKind.UNCERTAINTY:
        scores = entropy(predict_proba(proxy, features))
        return sample_uncertainty(Candidates(candidate_ids, features, scores), config.budget)

    # coreset: the already selected subset is the initial center set
    selected_features = extract_features(model, pool.pixels_for(current))
    return k_center_greedy(Candidates(candidate_ids, features), selected_features, config.budget,
                           show_progress=show_progress)


def _check_bookkeeping(iteration: int, new_ids: np.ndarray, selected: set, available: set,
                       forbidden: set, pool_size: int, expected_size: Optional[int]):
    """Pool disjointness, no re-selection, label leakage and subset size after merging `new_ids`."""
    fresh = set(int(i) for i in new_ids)
    if len(fresh) != len(new_ids):
        raise ContractError(f"iteration {iteration}: the sampler returned duplicate ids")
    if fresh & selected:
        raise ContractError(f"iteration {iteration}: {len(fresh & selected)} id(s) selected twice")
    if not fresh <= available:
        raise ContractError(f"iteration {iteration}: selected ids outside the remaining pool")
    if fresh & forbidden:
        raise ContractError(f"iteration {iteration}: labeled or test ids entered the contrastive subset")
    selected |= fresh
    available -= fresh
    if selected & available or len(selected) + len(available) != pool_size:
        raise ContractError(f"iteration {iteration}: S^t and U^t no longer partition the pool")
    if expected_size is not None and len(selected) != expected_size:
        raise ContractError(f"iteration {iteration}: |S^t| = {len(selected)}, expected {expected_size}")


# === ACTIVE LOOP ===

def run_active_loop(config: LoopConfig, pools: Pools, run_id: str = 'run', rep: int = 0,
                    show_progress: bool = None) -> LoopResult:
    """
    Runs T iterations of contrastive training with active sampling.

    S^0 is a random draw. Each later S^{t+1} increment is chosen with the model
    and proxy of iteration t, right before iteration t+1 trains on it, so the
    selection after the final iteration is never computed. Sampling time is
    charged to the iteration that trains on the selection.
    """
    _check_encoder_input(config, pools)
    pool = pools.unlabeled
    pool_ids = pool.ids
    strategy = config.sampler.value
    seed = config.seed

    model = init_model(config.encoder, derive_rng(seed, 'init', rep), config.contrastive.learning_rate)
    shuffle_rng = derive_rng(seed, 'shuffle', rep)
    augment_rng = derive_rng(seed, 'augment', rep)
    sampling_rng = derive_rng(seed, 'sampling', rep)

    forbidden = set(pools.labeled.ids.tolist()) | set(pools.test.ids.tolist())
    available = set(pool_ids.tolist())
    selected: set = set()
    remaining_mask = np.ones(len(pool_ids), dtype=bool)
    current = np.empty(0, dtype=np.int64)

    if config.checkpoint_dir:
        os.makedirs(config.checkpoint_dir, exist_ok=True)

    sw = Stopwatch()
    records: List[ExperimentRecord] = []
    selections: List[np.ndarray] = []
    proxy = None
    truncated = False
    test_pixels = pools.test.pixels

    for t in range(config.iterations):
        with sw('sampling'):
            remaining = pool_ids[remaining_mask]
            if len(remaining) == 0:
                truncated = True
                logger.warning(f"[{run_id}] Pool exhausted before iteration {t}; stopping after {t} iteration(s)")
                break
            if t == 0:
                candidate_ids = subsample_candidates(remaining, sampling_rng, config.candidate_cap)
                new_ids = sample_random(Candidates(candidate_ids), config.budget, sampling_rng)
            else:
                new_ids = _select_next(config, model, proxy, pools, remaining, current, sampling_rng,
                                       show_progress)
            if len(new_ids) < config.budget:
                truncated = True
                logger.warning(f"[{run_id}] Only {len(new_ids)} of {config.budget} ids left at iteration {t}")
            _check_bookkeeping(t, new_ids, selected, available, forbidden, len(pool_ids),
                               None if truncated else config.budget * (t + 1))
            new_ids = np.asarray(new_ids, dtype=np.int64)
            remaining_mask[np.searchsorted(pool_ids, new_ids)] = False
            current = np.concatenate([current, new_ids])
            selections.append(new_ids)

        with sw('contrastive'):
            model, trace = train_contrastive(
                model, pool.pixels_for(current), config.contrastive, config.augmentation,
                pool.patch_side, shuffle_rng, augment_rng, show_progress=show_progress,
            )
            if config.checkpoint_dir:
                save_checkpoint(model, os.path.join(config.checkpoint_dir, f"{run_id}_iter{t:03d}.npz"))

        with sw('proxy'):
            proxy = train_proxy(extract_features(model, pools.labeled.pixels), pools.labeled.labels,
                                config.proxy, derive_rng(seed, 'proxy', rep, t))
            precision, recall, f1 = _evaluate(model, proxy, pools, config.threshold,
                                              extract_features(model, test_pixels))

        record = ExperimentRecord(
            run_id=run_id, strategy=strategy, iteration=t, cumulative_samples=len(current),
            precision=precision, recall=recall, f1=f1,
            t_contrastive_s=sw.take('contrastive'), t_proxy_s=sw.take('proxy'),
            t_sampling_s=sw.take('sampling'), loss_trace=trace,
        )
        records.append(record)
        logger.info(
            f"[{run_id}] iteration {t}: |S^t|={record.cumulative_samples} "
            f"P={precision:.4f} R={recall:.4f} F1={f1:.4f} "
            f"(contrastive {record.t_contrastive_s:.2f}s, proxy {record.t_proxy_s:.2f}s, "
            f"sampling {record.t_sampling_s:.2f}s)"
        )
    return LoopResult(run_id, strategy, records, selections, truncated)


# === BENCHMARK ===

def run_benchmark(config: LoopConfig, pools: Pools, run_id: str = BENCHMARK, rep: int = 0,
                  show_progress: bool = None) -> LoopResult:
    """
    Trains g∘f once on the whole pool U, then one proxy evaluated every
    `eval_interval` proxy epochs. Records use the proxy epoch as iteration.
    """
    _check_encoder_input(config, pools)
    pool = pools.unlabeled
    seed = config.seed
    bench = config.benchmark

    model = init_model(config.encoder, derive_rng(seed, 'init', rep), config.contrastive.learning_rate)
    hyper = config.contrastive.model_copy(update={'epochs': bench.contrastive_epochs})
    logger.info(f"[{run_id}] Contrastive training on the full pool ({len(pool)} patches, {bench.contrastive_epochs} epochs)")
    started = time.perf_counter()
    model, trace = train_contrastive(
        model, pool.pixels_for(pool.ids), hyper, config.augmentation, pool.patch_side,
        derive_rng(seed, 'shuffle', rep), derive_rng(seed, 'augment', rep), show_progress=show_progress,
    )
    t_contrastive = time.perf_counter() - started
    if config.checkpoint_dir:
        os.makedirs(config.checkpoint_dir, exist_ok=True)
        save_checkpoint(model, os.path.join(config.checkpoint_dir, f"{run_id}.npz"))

    records: List[ExperimentRecord] = []
    mark = time.perf_counter()
    labeled_features = extract_features(model, pools.labeled.pixels)
    test_features = extract_features(model, pools.test.pixels)

    def on_epoch_end(epoch: int, proxy: ProxyParams):
        nonlocal mark
        if epoch % bench.eval_interval:
            return
        precision, recall, f1 = _evaluate(model, proxy, pools, config.threshold, test_features)
        now = time.perf_counter()
        first = not records
        records.append(ExperimentRecord(
            run_id=run_id, strategy=BENCHMARK, iteration=epoch, cumulative_samples=len(pool),
            precision=precision, recall=recall, f1=f1,
            t_contrastive_s=t_contrastive if first else 0.0, t_proxy_s=now - mark, t_sampling_s=0.0,
            loss_trace=trace if first else [],
        ))
        mark = now
        logger.info(f"[{run_id}] proxy epoch {epoch}: P={precision:.4f} R={recall:.4f} F1={f1:.4f}")

    train_proxy(labeled_features, pools.labeled.labels,
                config.proxy.model_copy(update={'epochs': bench.proxy_epochs}),
                derive_rng(seed, 'proxy', rep, 0), on_epoch_end=on_epoch_end)
    return LoopResult(run_id, BENCHMARK, records, [], False)


# === CSV OUTPUT ===

def records_frame(records: List[ExperimentRecord]) -> pd.DataFrame:
    rows = [{c: getattr(r, c) for c in LOG_COLUMNS} for r in records]
    return pd.DataFrame(rows, columns=LOG_COLUMNS)


def write_log(result: LoopResult, path: str):
    records_frame(result.records).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_loss_trace(result: LoopResult, path: str):
    rows = [
        {'run_id': r.run_id, 'strategy': r.strategy, 'iteration': r.iteration, 'epoch': e + 1, 'loss': loss}
        for r in result.records for e, loss in enumerate(r.loss_trace)
    ]
    pd.DataFrame(rows, columns=LOSS_COLUMNS).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_selections(result: LoopResult, path: str):
    rows = [
        {'iteration': t, 'strategy': result.strategy, 'ids': ' '.join(str(int(i)) for i in ids)}
        for t, ids in enumerate(result.selections)
    ]
    pd.DataFrame(rows, columns=SELECTION_COLUMNS).to_csv(path, index=False)
