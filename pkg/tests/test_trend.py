"""
Desk-profile trend check. Slow (several minutes): run with `pytest -m slow`.
"""
import pandas as pd
import pytest

from active import records_frame, run_active_loop, run_benchmark
from datagen import generate_dataset, split_pools
from evaluation import mean_curves, samples_to_reach
from experiment_config import parse_config
from sampler import SamplerKind

SEEDS = (0, 1, 2)
UNLABELED = 1300  # 2000 - 200 labeled - 500 test


@pytest.fixture(scope='module')
def desk_curves():
    frames = []
    bench_f1 = []
    for seed in SEEDS:
        config = parse_config(overrides=[f'seed={seed}'])
        dataset = generate_dataset(config.dataset_spec())
        pools = split_pools(dataset, config.split.labeled_size, config.split.test_size,
                            config.split_seed(), stratify_labeled=config.split.stratify_labeled)
        for sampler in (SamplerKind.RANDOM, SamplerKind.UNCERTAINTY):
            result = run_active_loop(config.loop_config(sampler), pools, run_id=f"{sampler.value}_seed{seed}")
            frames.append(records_frame(result.records))
        benchmark = run_benchmark(config.loop_config(SamplerKind.RANDOM), pools)
        bench_f1.append(max(r.f1 for r in benchmark.records))
    return mean_curves(pd.concat(frames, ignore_index=True)), sum(bench_f1) / len(bench_f1)


@pytest.mark.slow
class TestDeskTrend:
    def test_benchmark_separates_the_classes(self, desk_curves):
        _, bench_f1 = desk_curves
        assert bench_f1 >= 0.85

    def test_uncertainty_catches_up_with_a_fraction_of_the_pool(self, desk_curves):
        curves, bench_f1 = desk_curves
        uncertainty = curves[curves['strategy'] == 'uncertainty']
        needed = samples_to_reach(list(uncertainty.itertuples()), bench_f1 - 0.02)
        assert needed is not None and needed <= 0.6 * UNLABELED

    def test_uncertainty_not_worse_than_random(self, desk_curves):
        curves, _ = desk_curves
        late = curves[curves['cumulative_samples'] >= 300].pivot(
            index='cumulative_samples', columns='strategy', values='f1')
        assert len(late) == 8
        shortfall = late['random'] - late['uncertainty']
        assert (shortfall <= 0.01).all(), shortfall[shortfall > 0.01].to_dict()
