import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentdiff.data import (
    BinSpec,
    CsvFormatError,
    LabeledFeatureSet,
    Standardizer,
    TargetRangeError,
    bin_counts,
    bin_index,
    bin_indices,
    load_csv,
    make_imbalanced_synthetic,
    save_csv,
    shot_partition,
    standardize_fit_transform,
)


@pytest.fixture
def spec():
    return BinSpec.from_range(0.0, 100.0, 20)


class TestCsv:
    def test_three_row_round_trip(self, tmp_path):
        ds = LabeledFeatureSet(np.array([[1.0, 2.0], [3.0, 4.5], [-0.25, 0.125]]),
                               np.array([10.0, 20.0, 30.0]))
        path = tmp_path / "d.csv"
        save_csv(ds, path)
        back = load_csv(path)
        assert back.n == 3 and back.m == 2
        np.testing.assert_allclose(back.features, ds.features, atol=1e-12)
        np.testing.assert_allclose(back.targets, ds.targets, atol=1e-12)

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,f1,target\n1.0,abc,5.0\n")
        with pytest.raises(CsvFormatError, match=r"row 1.*f1"):
            load_csv(path)

    def test_missing_column_detected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,target\n1.0,5.0\n2.0\n")
        with pytest.raises(CsvFormatError, match="row 2"):
            load_csv(path)

    def test_wrong_header_detected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,target\n1.0,2.0,5.0\n")
        with pytest.raises(CsvFormatError, match="header"):
            load_csv(path)

    def test_empty_file_detected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(CsvFormatError, match="empty"):
            load_csv(path)

    def test_origin_column_tolerated(self, tmp_path):
        ds = LabeledFeatureSet(np.array([[1.0], [2.0]]), np.array([1.0, 2.0]))
        path = tmp_path / "s.csv"
        save_csv(ds, path, origin="synthetic")
        assert "origin" in path.read_text().splitlines()[0]
        back = load_csv(path)
        assert back.m == 1 and back.n == 2

    def test_out_of_range_target_is_hard_error(self, tmp_path):
        ds = LabeledFeatureSet(np.array([[1.0]]), np.array([150.0]))
        path = tmp_path / "d.csv"
        save_csv(ds, path)
        with pytest.raises(TargetRangeError):
            load_csv(path, y_min=0.0, y_max=100.0)


class TestBinIndex:
    def test_interior_value(self, spec):
        assert bin_index(spec, 7.0) == 1
        assert spec.centers[1] == 7.5

    def test_lower_edge(self, spec):
        assert bin_index(spec, 0.0) == 0
        assert spec.centers[0] == 2.5

    def test_upper_edge_clamped(self, spec):
        assert bin_index(spec, 100.0) == 19
        assert spec.centers[19] == 97.5

    def test_out_of_range_rejected(self, spec):
        with pytest.raises(TargetRangeError):
            bin_index(spec, 100.01)
        with pytest.raises(TargetRangeError):
            bin_indices(spec, np.array([50.0, -0.1]))

    @given(st.floats(min_value=0.0, max_value=100.0, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_binning_total_and_stable(self, y):
        spec = BinSpec.from_range(0.0, 100.0, 20)
        k = bin_index(spec, y)
        assert 0 <= k <= 19
        assert spec.edges[k] <= y <= spec.edges[k + 1]

    def test_counts_sum_to_n(self, spec):
        rng = np.random.default_rng(0)
        ys = rng.uniform(0, 100, size=500)
        assert bin_counts(spec, ys).sum() == 500


class TestShotPartition:
    def test_paper_thresholds(self):
        part = shot_partition([100, 50, 10])
        assert part.labels == ("many", "median", "few")

    def test_boundaries_are_median(self):
        part = shot_partition([70, 30, 71, 29])
        assert part.labels == ("median", "median", "many", "few")

    def test_all_zero_counts_are_few(self):
        assert shot_partition([0, 0, 0]).labels == ("few", "few", "few")

    def test_pure_function_of_counts(self, spec):
        rng = np.random.default_rng(1)
        ys = rng.uniform(0, 100, size=300)
        a = shot_partition(bin_counts(spec, ys))
        b = shot_partition(bin_counts(spec, rng.permutation(ys)))
        assert a == b


class TestStandardizer:
    def test_two_point_column(self):
        ds = LabeledFeatureSet(np.array([[0.0], [2.0]]), np.array([0.0, 1.0]))
        sc, out = standardize_fit_transform(ds)
        np.testing.assert_allclose(out.features[:, 0], [-1.0, 1.0])
        assert abs(out.features[:, 0].mean()) < 1e-8

    def test_inverse_recovers_input(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((50, 4)) * 3 + 7
        sc = Standardizer.fit(x)
        np.testing.assert_allclose(sc.inverse_transform(sc.transform(x)), x, atol=1e-10)
        z = sc.transform(x)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-8)
        np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-8)

    def test_constant_column_flagged(self):
        x = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
        with pytest.warns(UserWarning, match="constant"):
            sc = Standardizer.fit(x)
        assert sc.constant_dims[0] and not sc.constant_dims[1]
        np.testing.assert_array_equal(sc.transform(x)[:, 0], 0.0)


class TestSyntheticBenchmark:
    def test_uniform_when_no_decay(self):
        ds = make_imbalanced_synthetic(4000, 4, 20, decay=1.0, noise=0.0, seed=0)
        counts = bin_counts(BinSpec.from_range(0, 100, 20), ds.targets)
        # Multinomial noise around 200 per bin.
        assert counts.min() > 120 and counts.max() < 280

    def test_geometric_decay_head_dominates_tail(self):
        ds = make_imbalanced_synthetic(5000, 8, 20, decay=0.7, noise=0.05, seed=1)
        counts = bin_counts(BinSpec.from_range(0, 100, 20), ds.targets)
        assert counts[0] > 100 * counts[19] / 10  # head >> tail
        assert counts[0] > 1000
        assert np.all(counts >= 1)

    def test_deterministic_per_seed(self):
        a = make_imbalanced_synthetic(500, 6, 10, 0.8, 0.1, seed=3)
        b = make_imbalanced_synthetic(500, 6, 10, 0.8, 0.1, seed=3)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.targets, b.targets)

    def test_counts_sum_to_n(self):
        ds = make_imbalanced_synthetic(777, 5, 20, 0.7, 0.0, seed=4)
        assert bin_counts(BinSpec.from_range(0, 100, 20), ds.targets).sum() == 777

    def test_n_below_bins_rejected(self):
        with pytest.raises(ValueError):
            make_imbalanced_synthetic(5, 4, 10, 0.7, 0.0, seed=0)
