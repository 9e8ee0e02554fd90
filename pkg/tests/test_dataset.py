import numpy as np
import pytest

from condspec.dataset import (MultiSubjectSeries, OutcomeTransform, detrend,
                              from_arrays, load_dataset, save_dataset, scale_outcomes)
from condspec.errors import ValidationError


def write_dataset(tmp_path, data, outcomes, ids=None):
    """Write CSVs in the load_dataset layout from an (N, n, P) array."""
    n_sub, n, n_ch = data.shape
    ids = ids or [f"s{j}" for j in range(n_sub)]
    series = tmp_path / "series.csv"
    with open(series, "w") as fh:
        fh.write("subject_id,t," + ",".join(f"ch{p+1}" for p in range(n_ch)) + "\n")
        for j, sid in enumerate(ids):
            for t in range(n):
                cells = ",".join(repr(float(v)) for v in data[j, t])
                fh.write(f"{sid},{t+1},{cells}\n")
    out = tmp_path / "outcomes.csv"
    with open(out, "w") as fh:
        fh.write("subject_id,outcome\n")
        for j, sid in enumerate(ids):
            fh.write(f"{sid},{float(outcomes[j])!r}\n")
    return series, out


class TestScaleOutcomes:
    def test_two_values_figure_caption(self):
        unit, tr = scale_outcomes(np.array([357.67, 521.00]))
        assert np.allclose(unit, [0.0, 1.0])
        assert tr.offset == pytest.approx(357.67)
        assert tr.scale == pytest.approx(163.33)

    def test_already_unit_scaled_identity(self):
        unit, tr = scale_outcomes(np.array([0.0, 0.5, 1.0]))
        assert np.allclose(unit, [0.0, 0.5, 1.0])
        assert (tr.offset, tr.scale) == (0.0, 1.0)

    def test_constant_rejected(self):
        with pytest.raises(ValidationError):
            scale_outcomes(np.array([10.0, 10.0, 10.0]))

    def test_idempotent_on_unit_inputs(self):
        u = np.array([0.0, 0.25, 0.8, 1.0])
        once, _ = scale_outcomes(u)
        twice, _ = scale_outcomes(once)
        assert np.array_equal(once, twice)

    def test_transform_invertible(self):
        raw = np.array([12.0, 99.5, 47.25])
        unit, tr = scale_outcomes(raw)
        assert np.allclose(tr.invert(unit), raw, atol=1e-12)


class TestLoadDataset:
    def test_minimal_two_subjects(self, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.standard_normal((2, 16, 1))
        series, out = write_dataset(tmp_path, data, [100.0, 200.0])
        ds = load_dataset(series, out, detrend_mode="none")
        assert (ds.n_subjects, ds.n_time, ds.n_channels) == (2, 16, 1)
        assert np.allclose(ds.outcomes, [0.0, 1.0])
        assert np.allclose(ds.data, data)

    def test_agewise_shaped_input(self, tmp_path):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((108, 300, 3))
        series, out = write_dataset(tmp_path, data, list(rng.uniform(300, 600, 108)))
        ds = load_dataset(series, out, detrend_mode="none")
        assert (ds.n_subjects, ds.n_time, ds.n_channels) == (108, 300, 3)

    def test_length_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(2)
        data = rng.standard_normal((2, 16, 1))
        series, out = write_dataset(tmp_path, data, [1.0, 2.0])
        with open(series, "a") as fh:
            fh.write("s1,17,0.5\n")
        with pytest.raises(ValidationError, match="differing|17"):
            load_dataset(series, out)

    def test_non_numeric_cell_rejected(self, tmp_path):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((2, 16, 1))
        series, out = write_dataset(tmp_path, data, [1.0, 2.0])
        text = series.read_text().replace(repr(float(data[0, 3, 0])), "oops", 1)
        series.write_text(text)
        with pytest.raises(ValidationError, match="non-numeric"):
            load_dataset(series, out)

    def test_duplicate_outcome_subject_rejected(self, tmp_path):
        rng = np.random.default_rng(4)
        data = rng.standard_normal((2, 16, 1))
        series, out = write_dataset(tmp_path, data, [1.0, 2.0])
        with open(out, "a") as fh:
            fh.write("s0,3.0\n")
        with pytest.raises(ValidationError, match="duplicate"):
            load_dataset(series, out)

    def test_single_subject_rejected(self, tmp_path):
        rng = np.random.default_rng(5)
        data = rng.standard_normal((1, 16, 1))
        series, out = write_dataset(tmp_path, data, [1.0])
        with pytest.raises(ValidationError):
            load_dataset(series, out)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            load_dataset(tmp_path / "nope.csv", tmp_path / "nope2.csv")

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        ds = from_arrays(rng.standard_normal((3, 20, 2)), [5.0, -1.0, 2.5])
        save_dataset(ds, tmp_path / "s.csv", tmp_path / "o.csv")
        back = load_dataset(tmp_path / "s.csv", tmp_path / "o.csv", detrend_mode="none")
        assert np.array_equal(back.data, ds.data)
        assert np.array_equal(back.outcomes_raw, ds.outcomes_raw)
        assert np.array_equal(back.outcomes, ds.outcomes)


class TestInvariants:
    def test_short_series_rejected(self):
        with pytest.raises(ValidationError):
            from_arrays(np.zeros((2, 8, 1)) + np.arange(8)[None, :, None], [0.0, 1.0])

    def test_too_many_channels_rejected(self):
        with pytest.raises(ValidationError):
            from_arrays(np.random.default_rng(0).standard_normal((2, 16, 4)), [0.0, 1.0])

    def test_non_finite_rejected(self):
        data = np.random.default_rng(0).standard_normal((2, 16, 1))
        data[1, 3, 0] = np.nan
        with pytest.raises(ValidationError):
            from_arrays(data, [0.0, 1.0])

    def test_transform_consistency_enforced(self):
        data = np.random.default_rng(0).standard_normal((2, 16, 1))
        with pytest.raises(ValidationError):
            MultiSubjectSeries(data=data, outcomes_raw=np.array([3.0, 4.0]),
                               outcomes=np.array([0.0, 1.0]),
                               outcome_transform=OutcomeTransform(0.0, 1.0))


class TestDetrend:
    def _make(self, data):
        return from_arrays(data, list(range(data.shape[0])))

    def test_mean_constant_channel_zeroed(self):
        data = np.full((2, 16, 1), 7.5)
        data[1] = -2.0
        out = detrend(self._make(data), "mean")
        assert np.allclose(out.data, 0.0, atol=1e-12)

    def test_linear_removes_exact_line(self):
        t = np.arange(1, 21, dtype=float)
        data = np.stack([np.stack([2 * t], axis=1), np.stack([-3 * t + 4], axis=1)])
        out = detrend(self._make(data), "linear")
        assert np.max(np.abs(out.data)) < 1e-10

    def test_none_is_identity(self):
        rng = np.random.default_rng(8)
        ds = self._make(rng.standard_normal((3, 17, 2)))
        out = detrend(ds, "none")
        assert out.data is ds.data

    def test_mean_mode_property(self):
        rng = np.random.default_rng(9)
        ds = self._make(rng.standard_normal((4, 30, 3)) * 5 + 11)
        out = detrend(ds, "mean")
        means = np.abs(out.data.mean(axis=1))
        sds = out.data.std(axis=1)
        assert np.all(means < 1e-10 * np.maximum(sds, 1e-12))

    def test_unknown_mode(self):
        with pytest.raises(ValidationError):
            detrend(self._make(np.random.default_rng(1).standard_normal((2, 16, 1))), "boxcar")
