import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsanomaly.data import (
    CsvSchema,
    DegenerateChannelWarning,
    SeriesFrame,
    SyntheticSpec,
    attack_in_test_segment,
    generate_synthetic,
    load_csv,
    make_windows,
    split,
    split_sizes,
    standardize,
    write_csv,
)
from tsanomaly.errors import LabelError, OrderingError, SchemaError, SpecError, SplitError, WindowError

FIXTURE = """time,LIT301,AIT301,AIT302,label,FIT101
2019-07-20T04:30:00Z,800.5,8.5,250.1,Normal,1.0
2019-07-20T04:30:01Z,801.0,8.6,250.2,Normal,1.0
2019-07-20T04:30:02Z,801.5,8.7,"250.3",Attack,1.0
"""


def frame_of(values, labels=None):
    values = np.asarray(values, dtype=float).reshape(len(values), -1)
    names = tuple(f"c{i}" for i in range(values.shape[1]))
    stamps = np.datetime64("2020-01-01T00:00:00", "ns") + np.arange(len(values)) * np.timedelta64(1, "s")
    return SeriesFrame(stamps, names, values, labels)


@pytest.fixture
def fixture_csv(tmp_path):
    p = tmp_path / "swat.csv"
    p.write_text(FIXTURE)
    return p


class TestLoadCsv:
    def test_fixture(self, fixture_csv):
        fr = load_csv(fixture_csv)
        assert len(fr) == 3 and fr.values.shape == (3, 3)
        assert fr.channels == ("LIT301", "AIT301", "AIT302")
        np.testing.assert_array_equal(fr.column("AIT302"), [250.1, 250.2, 250.3])
        assert fr.labels.tolist() == [False, False, True]
        assert fr.timestamps[0] == np.datetime64("2019-07-20T04:30:00", "ns")

    def test_schema_order_respected(self, fixture_csv):
        fr = load_csv(fixture_csv, CsvSchema(channels=("AIT302", "LIT301")))
        np.testing.assert_array_equal(fr.values[0], [250.1, 800.5])

    def test_missing_column_named(self, fixture_csv):
        with pytest.raises(SchemaError, match="FIT401"):
            load_csv(fixture_csv, CsvSchema(channels=("LIT301", "FIT401")))

    def test_unknown_label_reports_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text(FIXTURE.replace("Attack", "attack"))
        with pytest.raises(LabelError) as info:
            load_csv(p)
        assert info.value.row == 2

    def test_non_monotone_timestamps(self, tmp_path):
        p = tmp_path / "order.csv"
        p.write_text(FIXTURE.replace("04:30:02", "04:30:00"))
        with pytest.raises(OrderingError):
            load_csv(p)

    def test_unparseable_rows_rejected(self, tmp_path, caplog):
        p = tmp_path / "junk.csv"
        p.write_text(FIXTURE.replace("801.0", "n/a").replace("801.5", "inf"))
        fr = load_csv(p)
        assert len(fr) == 1
        assert "rejecting" in caplog.text

    def test_without_labels(self, fixture_csv):
        fr = load_csv(fixture_csv, CsvSchema(label_column=None))
        assert fr.labels is None

    def test_round_trip(self, tmp_path):
        fr = generate_synthetic(SyntheticSpec(length=300, attack_start=100, attack_length=20, seed=4))
        write_csv(fr, tmp_path / "s.csv")
        back = load_csv(tmp_path / "s.csv")
        assert back.values.tobytes() == fr.values.tobytes()
        assert np.array_equal(back.labels, fr.labels)
        assert np.array_equal(back.timestamps, fr.timestamps)


class TestSeriesFrame:
    def test_label_length_checked(self):
        with pytest.raises(SchemaError):
            frame_of([1.0, 2.0], labels=[True])

    def test_channel_lookup(self):
        with pytest.raises(SchemaError):
            frame_of([[1.0, 2.0]]).column("zz")


class TestStandardize:
    def test_by_hand(self):
        fr, stats = standardize(frame_of([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(fr.values[:, 0], [-1.224745, 0.0, 1.224745], atol=1e-6)
        assert stats.mean[0] == 2.0
        assert abs(stats.std[0] - math.sqrt(2 / 3)) < 1e-15

    def test_round_trip(self):
        raw = np.random.default_rng(0).normal(100, 20, size=(50, 3))
        fr, stats = standardize(frame_of(raw))
        assert np.max(np.abs(stats.invert(fr.values) - raw)) < 1e-12

    def test_constant_channel(self):
        with pytest.warns(DegenerateChannelWarning):
            fr, stats = standardize(frame_of([5.0, 5.0, 5.0]))
        assert not fr.values.any()
        assert stats.std[0] == 1e-12

    def test_stats_not_refitted(self):
        train = frame_of([1.0, 2.0, 3.0])
        _, stats = standardize(train)
        a, s1 = standardize(frame_of([10.0, 20.0]), stats)
        b, s2 = standardize(frame_of([-7.0, 1e6]), stats)
        assert s1 is stats and s2 is stats
        np.testing.assert_array_equal(a.values[:, 0], (np.array([10.0, 20.0]) - 2.0) / math.sqrt(2 / 3))

    def test_no_warning_for_normal_data(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            standardize(frame_of([1.0, 2.0]))


class TestSplit:
    def test_reference_length(self):
        train, valid, test = split(frame_of(np.zeros(14996)))
        assert len(test) == 1889
        assert len(train) + len(valid) == 13107
        assert len(valid) == 1310

    def test_ten_rows_half(self):
        assert split_sizes(10, 0.5)[2] == 5
        assert sum(split_sizes(10, 0.5)[:2]) == 5
        train, valid, test = split(frame_of(np.arange(10.0)), 0.5, 0.2)
        assert (len(train) + len(valid), len(test)) == (5, 5)

    def test_empty_valid_rejected(self):
        with pytest.raises(SplitError):
            split(frame_of(np.arange(10.0)), 0.5)

    @pytest.mark.parametrize("fraction", [1.0, 0.0, -0.2, 1.5])
    def test_bad_fraction(self, fraction):
        with pytest.raises(SplitError):
            split(frame_of(np.arange(10.0)), fraction)

    @given(T=st.integers(20, 5000), tv=st.floats(0.5, 0.95), vf=st.floats(0.05, 0.5))
    @settings(max_examples=60, deadline=None)
    def test_contiguous_disjoint_cover(self, T, tv, vf):
        fr = frame_of(np.arange(float(T)))
        try:
            parts = split(fr, tv, vf)
        except SplitError:
            return
        joined = np.concatenate([p.values[:, 0] for p in parts])
        assert np.array_equal(joined, fr.values[:, 0])
        assert all(len(p) > 0 for p in parts)


class TestWindows:
    def test_by_hand(self):
        ds = make_windows(frame_of(np.arange(5.0)), 2, "c0")
        assert len(ds) == 3
        assert ds.targets.tolist() == [2.0, 3.0, 4.0]
        assert ds.target_rows.tolist() == [2, 3, 4]
        assert ds.inputs[0, :, 0].tolist() == [0.0, 1.0]

    @pytest.mark.parametrize("W", [5, 6, 0])
    def test_bad_length(self, W):
        with pytest.raises(WindowError):
            make_windows(frame_of(np.arange(5.0)), W, "c0")

    def test_target_channel_and_labels(self):
        vals = np.column_stack([np.arange(6.0), 100 + np.arange(6.0)])
        labels = [False, False, False, True, False, True]
        ds = make_windows(frame_of(vals, labels), 3, "c1")
        assert ds.targets.tolist() == [103.0, 104.0, 105.0]
        assert ds.target_labels.tolist() == [True, False, True]
        assert ds.inputs.shape == (3, 3, 2)

    def test_missing_target_channel(self):
        with pytest.raises(SchemaError):
            make_windows(frame_of(np.arange(5.0)), 2, "LIT301")

    @given(T=st.integers(2, 60), W=st.integers(1, 59))
    @settings(max_examples=50, deadline=None)
    def test_no_target_leakage(self, T, W):
        if W >= T:
            return
        ds = make_windows(frame_of(np.arange(float(T))), W, "c0")
        assert len(ds) == T - W
        # each window holds its own row indices, all strictly before the target row
        assert np.all(ds.inputs[:, :, 0].max(axis=1) < ds.target_rows)
        assert np.array_equal(ds.inputs[:, 0, 0], np.arange(T - W))


class TestSynthetic:
    def test_default_attack_rows(self):
        fr = generate_synthetic(SyntheticSpec())
        assert len(fr) == 14996 and fr.labels.sum() == 270
        assert fr.labels[9900:10170].all()
        assert not fr.labels[:9900].any() and not fr.labels[10170:].any()

    def test_deterministic(self):
        a, b = generate_synthetic(SyntheticSpec(length=500, attack_start=10, attack_length=5)), \
            generate_synthetic(SyntheticSpec(length=500, attack_start=10, attack_length=5))
        assert a.values.tobytes() == b.values.tobytes()
        assert np.array_equal(a.labels, b.labels) and np.array_equal(a.timestamps, b.timestamps)

    def test_zero_amplitude(self):
        base = SyntheticSpec(length=400, attack_start=100, attack_length=50, seed=3)
        plain = generate_synthetic(SyntheticSpec(length=400, attack_start=100, attack_length=0, seed=3))
        quiet = generate_synthetic(SyntheticSpec(**{**base.__dict__, "attack_magnitude": 0.0}))
        assert quiet.labels.sum() == 50
        assert quiet.values.tobytes() == plain.values.tobytes()

    def test_shift_and_ramp(self):
        kw = dict(length=400, attack_start=100, attack_length=50, seed=1, attack_magnitude=10.0)
        clean = generate_synthetic(SyntheticSpec(**{**kw, "attack_magnitude": 0.0}))
        shift = generate_synthetic(SyntheticSpec(**kw))
        ramp = generate_synthetic(SyntheticSpec(**kw, attack_kind="ramp"))
        np.testing.assert_allclose(shift.values[100:150, 0] - clean.values[100:150, 0], 10.0, rtol=0, atol=1e-9)
        np.testing.assert_allclose(ramp.values[100:150, 0] - clean.values[100:150, 0],
                                   10.0 * np.arange(1, 51) / 50, rtol=0, atol=1e-9)
        assert np.array_equal(shift.values[:, 1:], clean.values[:, 1:])

    @given(length=st.integers(100, 800), start=st.integers(0, 49), extent=st.integers(0, 50))
    @settings(max_examples=25, deadline=None)
    def test_label_fraction_exact(self, length, start, extent):
        fr = generate_synthetic(SyntheticSpec(length=length, attack_start=start, attack_length=extent, seed=0))
        assert fr.labels.mean() == extent / length

    @pytest.mark.parametrize("start,extent", [(-1, 5), (95, 10), (0, 101)])
    def test_attack_out_of_range(self, start, extent):
        with pytest.raises(SpecError):
            generate_synthetic(SyntheticSpec(length=100, attack_start=start, attack_length=extent))

    def test_channel_character(self):
        fr = generate_synthetic(SyntheticSpec(attack_magnitude=0.0))
        lit, ait1, ait2 = fr.values.T
        assert 790 < lit.min() and lit.max() < 1010
        assert abs(ait1.mean() - 8.5) < 0.1 and abs(ait2.mean() - 250.0) < 5
        # 1 Hz timestamps
        assert np.all(np.diff(fr.timestamps) == np.timedelta64(1, "s"))

    def test_attack_in_test_segment(self):
        start = attack_in_test_segment(4000, 270, 30)
        n_test = split_sizes(4000)[2]
        assert start >= 4000 - n_test + 30 and start + 270 <= 4000
        fr = generate_synthetic(SyntheticSpec(length=4000, attack_start=start))
        train, valid, test = split(fr)
        assert not train.labels.any() and not valid.labels.any() and test.labels.sum() == 270

    def test_attack_too_long_for_test_segment(self):
        with pytest.raises(SpecError):
            attack_in_test_segment(1000, 200, 30)
