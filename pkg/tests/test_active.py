import os
import time

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

import active
from active import (
    LOG_COLUMNS, LOSS_COLUMNS, SELECTION_COLUMNS, BenchmarkConfig, run_active_loop, run_benchmark,
    write_log, write_loss_trace, write_selections,
)
from errors import ConfigError, ShapeError
from evaluation import BENCHMARK, wall_time
from ndgrad import Dense
from proxy import ProxyHyper, train_proxy
from sampler import SamplerKind
from simclr import EncoderConfig, load_checkpoint
from utils import derive_rng


class TestLoopStructure:
    def test_single_iteration(self, make_loop_config, tiny_pools):
        result = run_active_loop(make_loop_config(iterations=1, sampler=SamplerKind.CORESET), tiny_pools)
        assert len(result.records) == 1
        assert result.records[0].cumulative_samples == 10
        assert len(result.selections) == 1 and len(result.selections[0]) == 10
        assert not result.truncated

    @pytest.mark.parametrize('sampler', list(SamplerKind))
    def test_cumulative_samples(self, make_loop_config, tiny_pools, sampler):
        result = run_active_loop(make_loop_config(sampler=sampler), tiny_pools, run_id=f"{sampler.value}_rep0")
        assert [r.cumulative_samples for r in result.records] == [10, 20, 30]
        assert [r.iteration for r in result.records] == [0, 1, 2]
        assert all(r.strategy == sampler.value for r in result.records)
        assert all(0.0 <= r.f1 <= 1.0 for r in result.records)
        assert all(len(r.loss_trace) == 2 for r in result.records)

    @pytest.mark.parametrize('sampler', list(SamplerKind))
    def test_bookkeeping(self, make_loop_config, tiny_pools, sampler):
        result = run_active_loop(make_loop_config(sampler=sampler), tiny_pools)
        chosen = result.selected_ids.tolist()
        assert len(chosen) == len(set(chosen))
        assert set(chosen) <= set(tiny_pools.unlabeled.ids.tolist())
        assert not set(chosen) & set(tiny_pools.labeled.ids.tolist())
        assert not set(chosen) & set(tiny_pools.test.ids.tolist())

    def test_uncertainty_runs_are_reproducible(self, make_loop_config, tiny_pools):
        config = make_loop_config(sampler=SamplerKind.UNCERTAINTY)
        a = run_active_loop(config, tiny_pools)
        b = run_active_loop(config, tiny_pools)
        for sel_a, sel_b in zip(a.selections, b.selections):
            np.testing.assert_array_equal(sel_a, sel_b)
        assert [r.f1 for r in a.records] == [r.f1 for r in b.records]
        assert [r.loss_trace for r in a.records] == [r.loss_trace for r in b.records]

    def test_repetitions_differ(self, make_loop_config, tiny_pools):
        config = make_loop_config()
        a = run_active_loop(config, tiny_pools, rep=0)
        b = run_active_loop(config, tiny_pools, rep=1)
        assert not np.array_equal(a.selections[0], b.selections[0])

    def test_strategies_share_the_first_draw(self, make_loop_config, tiny_pools):
        random_run = run_active_loop(make_loop_config(iterations=1), tiny_pools)
        coreset_run = run_active_loop(make_loop_config(iterations=1, sampler=SamplerKind.CORESET), tiny_pools)
        np.testing.assert_array_equal(random_run.selections[0], coreset_run.selections[0])

    def test_pool_exhaustion_truncates(self, make_loop_config, tiny_pools):
        # |U| = 120: 50 + 50 + 20, then nothing left
        result = run_active_loop(make_loop_config(budget=50, iterations=4), tiny_pools)
        assert result.truncated
        assert [r.cumulative_samples for r in result.records] == [50, 100, 120]

    def test_phase_times_cover_the_loop(self, make_loop_config, tiny_pools):
        config = make_loop_config(sampler=SamplerKind.UNCERTAINTY)
        started = time.perf_counter()
        result = run_active_loop(config, tiny_pools)
        total = time.perf_counter() - started
        recorded = sum(wall_time(r) for r in result.records)
        assert all(min(r.t_contrastive_s, r.t_proxy_s, r.t_sampling_s) >= 0.0 for r in result.records)
        assert 0.95 * total <= recorded <= total

    def test_encoder_input_must_match_patches(self, make_loop_config, tiny_pools):
        config = make_loop_config(encoder=EncoderConfig(input_dim=64, hidden_dims=[8], feature_dim=4,
                                                        head_dims=[4, 4, 4]))
        with pytest.raises(ShapeError):
            run_active_loop(config, tiny_pools)

    def test_budget_times_iterations_checked_against_pool(self, make_loop_config):
        with pytest.raises(ConfigError):
            make_loop_config(budget=50, iterations=4).check_pool(120)


class TestCheckpoints:
    def test_one_checkpoint_per_iteration(self, make_loop_config, tiny_pools, tmp_path):
        config = make_loop_config(checkpoint_dir=str(tmp_path))
        run_active_loop(config, tiny_pools, run_id='ckpt')
        files = sorted(os.listdir(tmp_path))
        assert files == ['ckpt_iter000.npz', 'ckpt_iter001.npz', 'ckpt_iter002.npz']
        first = load_checkpoint(str(tmp_path / files[0]))
        last = load_checkpoint(str(tmp_path / files[-1]))
        # encoder weights carry over and keep training
        assert first.encoder_digest() != last.encoder_digest()
        assert last.optimizer.step > first.optimizer.step

    def test_proxy_starts_fresh_while_encoder_carries_over(self, make_loop_config, tiny_pools,
                                                           tmp_path, monkeypatch):
        proxies = []

        def recording_train_proxy(*args, **kwargs):
            proxies.append(train_proxy(*args, **kwargs))
            return proxies[-1]

        monkeypatch.setattr(active, 'train_proxy', recording_train_proxy)
        # zero proxy epochs: every returned proxy still holds its initial weights
        config = make_loop_config(proxy=ProxyHyper(epochs=0), checkpoint_dir=str(tmp_path))
        run_active_loop(config, tiny_pools, run_id='fresh')

        assert len(proxies) == 3
        for t, proxy in enumerate(proxies):
            expected = Dense.init(8, 1, derive_rng(config.seed, 'proxy', 0, t))
            np.testing.assert_array_equal(proxy.weight.values, expected.weight.values)
        assert len({p.digest() for p in proxies}) == 3

        digests = [load_checkpoint(str(tmp_path / f"fresh_iter{t:03d}.npz")).encoder_digest() for t in range(3)]
        steps = [load_checkpoint(str(tmp_path / f"fresh_iter{t:03d}.npz")).optimizer.step for t in range(3)]
        assert len(set(digests)) == 3
        assert steps[0] < steps[1] < steps[2]


class TestBenchmark:
    def test_evaluation_grid(self, make_loop_config, tiny_pools):
        config = make_loop_config(benchmark=BenchmarkConfig(contrastive_epochs=1, proxy_epochs=200, eval_interval=20))
        result = run_benchmark(config, tiny_pools)
        assert len(result.records) == 10
        assert [r.iteration for r in result.records] == list(range(20, 201, 20))
        assert all(r.cumulative_samples == len(tiny_pools.unlabeled) for r in result.records)
        assert all(r.strategy == BENCHMARK for r in result.records)

    def test_contrastive_time_on_first_record_only(self, make_loop_config, tiny_pools):
        result = run_benchmark(make_loop_config(), tiny_pools)
        assert len(result.records) == 2
        assert result.records[0].t_contrastive_s > 0.0
        assert result.records[1].t_contrastive_s == 0.0
        assert len(result.records[0].loss_trace) == 2

    def test_deterministic(self, make_loop_config, tiny_pools):
        a = run_benchmark(make_loop_config(), tiny_pools)
        b = run_benchmark(make_loop_config(), tiny_pools)
        assert [r.f1 for r in a.records] == [r.f1 for r in b.records]

    def test_interval_beyond_epochs(self):
        with pytest.raises(ValidationError):
            BenchmarkConfig(proxy_epochs=10, eval_interval=20)


class TestLogFiles:
    def test_writers(self, make_loop_config, tiny_pools, tmp_path):
        result = run_active_loop(make_loop_config(sampler=SamplerKind.CORESET), tiny_pools, run_id='coreset_rep0')
        write_log(result, str(tmp_path / 'log.csv'))
        write_loss_trace(result, str(tmp_path / 'loss.csv'))
        write_selections(result, str(tmp_path / 'sel.csv'))

        log = pd.read_csv(tmp_path / 'log.csv')
        assert list(log.columns) == LOG_COLUMNS
        assert log['cumulative_samples'].tolist() == [10, 20, 30]
        assert (log['run_id'] == 'coreset_rep0').all()

        loss = pd.read_csv(tmp_path / 'loss.csv')
        assert list(loss.columns) == LOSS_COLUMNS
        assert len(loss) == 3 * 2

        selections = pd.read_csv(tmp_path / 'sel.csv')
        assert list(selections.columns) == SELECTION_COLUMNS
        ids = [int(i) for row in selections['ids'] for i in str(row).split()]
        assert ids == result.selected_ids.tolist()
