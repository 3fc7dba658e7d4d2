import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import f1_score

from datagen import (
    AugmentationConfig, Dataset, DatasetSpec, augment_batch, augment_pair, export_csv, generate_dataset,
    load_dataset, positive_count, save_dataset, split_pools,
)
from errors import DataValidationError


class TestGeneration:
    def test_positive_count_matches_fraction(self):
        dataset = generate_dataset(DatasetSpec(pool_size=1000, positive_fraction=0.14317, seed=0))
        assert dataset.positives == 143
        assert positive_count(1000, 0.14317) == 143

    def test_half_rounds_up(self):
        assert positive_count(10, 0.25) == 3

    def test_same_seed_same_pixels(self):
        a = generate_dataset(DatasetSpec(pool_size=300, seed=9))
        b = generate_dataset(DatasetSpec(pool_size=300, seed=9))
        np.testing.assert_array_equal(a.pixels, b.pixels)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_different_seed_differs(self):
        a = generate_dataset(DatasetSpec(pool_size=300, seed=1))
        b = generate_dataset(DatasetSpec(pool_size=300, seed=2))
        assert not np.array_equal(a.pixels, b.pixels)

    def test_values_and_ids(self):
        dataset = generate_dataset(DatasetSpec(pool_size=500, patch_side=6, seed=4))
        assert dataset.pixels.shape == (500, 36)
        assert dataset.pixels.min() >= 0.0 and dataset.pixels.max() <= 1.0
        assert len(np.unique(dataset.ids)) == 500
        assert dataset.patch(0).pixels.shape == (6, 6)

    def test_pool_too_small(self):
        with pytest.raises(ValidationError):
            DatasetSpec(pool_size=5)

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            DatasetSpec(pool_size=10, positive_fraction=0.01)

    def test_tum_patches_are_darker(self):
        dataset = generate_dataset(DatasetSpec(pool_size=1000, seed=6))
        brightness = dataset.pixels.mean(axis=1)
        assert brightness[dataset.labels == 1].mean() < brightness[dataset.labels == 0].mean() - 0.1

    def test_raw_pixels_separate_the_classes(self):
        dataset = generate_dataset(DatasetSpec(pool_size=2000, seed=0))
        pools = split_pools(dataset, labeled_size=200, test_size=500, seed=0)
        model = LogisticRegression(max_iter=2000).fit(pools.labeled.pixels, pools.labeled.labels)
        assert f1_score(pools.test.labels, model.predict(pools.test.pixels)) >= 0.9


class TestSplit:
    @pytest.fixture(scope='class')
    def dataset(self):
        return generate_dataset(DatasetSpec(pool_size=2000, seed=0))

    def test_sizes(self, dataset):
        pools = split_pools(dataset, labeled_size=200, test_size=500, seed=0)
        assert len(pools.unlabeled) == 1300
        assert len(pools.labeled) == 200
        assert len(pools.test) == 500

    def test_partition(self, dataset):
        pools = split_pools(dataset, labeled_size=200, test_size=500, seed=0)
        u, l, t = set(pools.unlabeled.ids), set(pools.labeled.ids), set(pools.test.ids)
        assert not (u & l) and not (u & t) and not (l & t)
        assert u | l | t == set(dataset.ids)

    def test_test_split_is_stratified(self, dataset):
        pools = split_pools(dataset, labeled_size=200, test_size=500, seed=0)
        overall = dataset.labels.mean()
        assert abs(pools.test.positive_fraction - overall) < 0.01

    def test_stratified_labeled_set(self, dataset):
        pools = split_pools(dataset, labeled_size=200, test_size=500, seed=0, stratify_labeled=True)
        assert abs(pools.labeled.positive_fraction - dataset.labels.mean()) < 0.01

    def test_deterministic(self, dataset):
        a = split_pools(dataset, labeled_size=200, test_size=500, seed=3)
        b = split_pools(dataset, labeled_size=200, test_size=500, seed=3)
        np.testing.assert_array_equal(a.labeled.ids, b.labeled.ids)
        np.testing.assert_array_equal(a.unlabeled.ids, b.unlabeled.ids)

    def test_unlabeled_pool_hides_labels(self, dataset):
        pools = split_pools(dataset, labeled_size=200, test_size=500, seed=0)
        assert not hasattr(pools.unlabeled, 'labels')
        some = pools.unlabeled.ids[:3]
        np.testing.assert_array_equal(pools.unlabeled.pixels_for(some), dataset.pixels[dataset.positions(some)])

    def test_no_pool_left(self, dataset):
        with pytest.raises(DataValidationError):
            split_pools(dataset, labeled_size=1000, test_size=1000, seed=0)

    def test_lone_positive_cannot_be_stratified(self):
        labels = np.zeros(40, dtype=np.uint8)
        labels[7] = 1
        dataset = Dataset(ids=np.arange(40, dtype=np.int64), labels=labels,
                          pixels=np.full((40, 4), 0.5), patch_side=2, seed=0)
        with pytest.raises(DataValidationError) as excinfo:
            split_pools(dataset, labeled_size=5, test_size=10, seed=0)
        assert 'label 1: 1' in str(excinfo.value)

    def test_test_draw_smaller_than_class_count(self, dataset):
        with pytest.raises(DataValidationError):
            split_pools(dataset, labeled_size=200, test_size=1, seed=0)

    def test_stratified_labeled_draw_smaller_than_class_count(self, dataset):
        with pytest.raises(DataValidationError):
            split_pools(dataset, labeled_size=1, test_size=500, seed=0, stratify_labeled=True)
        assert len(split_pools(dataset, labeled_size=1, test_size=500, seed=0).labeled) == 1


class TestAugmentation:
    def test_identity_config_returns_input(self, rng):
        patch = rng.uniform(size=(8, 8))
        view_i, view_j = augment_pair(patch, AugmentationConfig.identity(), rng)
        np.testing.assert_array_equal(view_i, patch)
        np.testing.assert_array_equal(view_j, patch)

    def test_views_stay_in_range_and_differ(self, rng):
        patch = rng.uniform(size=(8, 8))
        view_i, view_j = augment_pair(patch, AugmentationConfig(), rng)
        for view in (view_i, view_j):
            assert view.shape == (8, 8)
            assert view.min() >= 0.0 and view.max() <= 1.0
        assert not np.array_equal(view_i, view_j)

    def test_shift_must_fit_patch(self, rng):
        with pytest.raises(DataValidationError):
            augment_pair(np.zeros((4, 4)), AugmentationConfig(max_shift=4), rng)

    def test_batch_layout(self, rng):
        flat = rng.uniform(size=(5, 16))
        views = augment_batch(flat, 4, AugmentationConfig.identity(), rng)
        assert views.shape == (10, 16)
        np.testing.assert_array_equal(views[:5], flat)
        np.testing.assert_array_equal(views[5:], flat)

    def test_same_generator_state_same_views(self):
        flat = np.random.default_rng(0).uniform(size=(3, 16))
        a = augment_batch(flat, 4, AugmentationConfig(), np.random.default_rng(7))
        b = augment_batch(flat, 4, AugmentationConfig(), np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)


class TestSerialization:
    def test_save_and_load(self, tmp_path, tiny_dataset):
        path = tmp_path / 'pool.bin'
        save_dataset(tiny_dataset, str(path))
        loaded = load_dataset(str(path))
        np.testing.assert_array_equal(loaded.ids, tiny_dataset.ids)
        np.testing.assert_array_equal(loaded.labels, tiny_dataset.labels)
        np.testing.assert_array_equal(loaded.pixels, tiny_dataset.pixels)
        assert loaded.patch_side == tiny_dataset.patch_side

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'junk.bin'
        path.write_bytes(b"not a dataset\n{}\n")
        with pytest.raises(DataValidationError):
            load_dataset(str(path))

    def test_truncated_body(self, tmp_path, tiny_dataset):
        path = tmp_path / 'pool.bin'
        save_dataset(tiny_dataset, str(path))
        data = path.read_bytes()
        path.write_bytes(data[:-10])
        with pytest.raises(DataValidationError):
            load_dataset(str(path))

    def test_csv_export(self, tmp_path, tiny_dataset):
        path = tmp_path / 'pool.csv'
        export_csv(tiny_dataset, str(path))
        frame = pd.read_csv(path)
        assert list(frame.columns[:2]) == ['id', 'label']
        assert frame.shape == (len(tiny_dataset), 2 + tiny_dataset.patch_side ** 2)
        assert frame['label'].sum() == tiny_dataset.positives
