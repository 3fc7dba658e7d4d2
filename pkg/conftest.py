# conftest.py
"""Shared fixtures: a seeded generator, a tiny patch pool and a tiny loop config."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from active import BenchmarkConfig, LoopConfig  # noqa: E402
from datagen import AugmentationConfig, DatasetSpec, generate_dataset, split_pools  # noqa: E402
from proxy import ProxyHyper  # noqa: E402
from sampler import SamplerKind  # noqa: E402
from simclr import ContrastiveHyper, EncoderConfig  # noqa: E402

TINY_SIDE = 4

# Config file for end-to-end CLI runs; small enough for a few seconds per run.
TINY_CONFIG_TEXT = """\
# tiny end-to-end run
profile = desk
seed = 11
repetitions = 3
dataset.pool_size = 200
dataset.patch_side = 4
dataset.positive_fraction = 0.2
split.labeled_size = 30
split.test_size = 50
split.stratify_labeled = true
encoder.hidden_dims = [16]
encoder.feature_dim = 8
encoder.head_dims = [8, 8, 4]
contrastive.batch_size = 16
contrastive.epochs = 2
proxy.epochs = 5
proxy.batch_size = 16
loop.budget = 10
loop.iterations = 3
loop.candidate_cap = 50
benchmark.contrastive_epochs = 2
benchmark.proxy_epochs = 10
benchmark.eval_interval = 5
"""


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope='session')
def tiny_dataset():
    return generate_dataset(DatasetSpec(pool_size=200, positive_fraction=0.2, patch_side=TINY_SIDE, seed=3))


@pytest.fixture(scope='session')
def tiny_pools(tiny_dataset):
    # |U| = 120
    return split_pools(tiny_dataset, labeled_size=30, test_size=50, seed=5, stratify_labeled=True)


@pytest.fixture
def make_loop_config():
    def factory(**updates) -> LoopConfig:
        values = dict(
            budget=10,
            iterations=3,
            sampler=SamplerKind.RANDOM,
            candidate_cap=50,
            encoder=EncoderConfig(input_dim=TINY_SIDE * TINY_SIDE, hidden_dims=[16], feature_dim=8,
                                  head_dims=[8, 8, 4]),
            contrastive=ContrastiveHyper(batch_size=16, epochs=2, learning_rate=1e-3),
            proxy=ProxyHyper(learning_rate=1e-2, epochs=5, batch_size=16),
            augmentation=AugmentationConfig(),
            benchmark=BenchmarkConfig(contrastive_epochs=2, proxy_epochs=10, eval_interval=5),
            seed=21,
        )
        values.update(updates)
        return LoopConfig(**values)
    return factory


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / 'tiny.txt'
    path.write_text(TINY_CONFIG_TEXT, encoding='utf-8')
    return str(path)
