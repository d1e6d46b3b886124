import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from watchcd.datamodel import (
    ScoreSeries,
    SiteLabel,
    SiteSeries,
    TimeAxis,
    load_dataset,
    load_scores,
    month_index,
    read_series,
    save_dataset,
    save_scores,
    write_series,
)
from watchcd.errors import DimensionMismatch, FormatError, OutOfRange, ValidationError

from conftest import make_dataset, write_manifest


def test_month_index_examples():
    ax = TimeAxis()
    assert (ax.origin_year, ax.origin_month, ax.length) == (2017, 1, 96)
    assert month_index(ax, 2017, 1) == 0
    assert month_index(ax, 2020, 12) == 47
    assert month_index(ax, 2024, 12) == 95


@pytest.mark.parametrize("ym", [(2016, 12), (2025, 1), (2018, 13), (2018, 0)])
def test_month_index_out_of_range(ym):
    with pytest.raises(OutOfRange):
        month_index(TimeAxis(), *ym)


@given(st.integers(1990, 2030), st.integers(1, 12), st.integers(1, 240))
def test_month_index_inverts_calendar(oy, om, T):
    ax = TimeAxis(oy, om, T)
    for t in range(T):
        assert ax.calendar_month(t) == ((om - 1 + t) % 12) + 1
        assert month_index(ax, ax.year_of(t), ax.calendar_month(t)) == t


def test_axis_rejects_empty():
    with pytest.raises(ValidationError):
        TimeAxis(2017, 1, 0)


def test_label_event_requires_looted():
    with pytest.raises(ValidationError):
        SiteLabel("a", looted=False, event_month=3)
    assert SiteLabel("a", True, None).event_month is None


def test_score_series_validation():
    with pytest.raises(ValidationError):
        ScoreSeries("a", np.array([0.0, np.inf]), np.array([0.0, 1.0]), "x")
    with pytest.raises(ValidationError):
        ScoreSeries("a", np.zeros(2), np.array([0.0, 1.5]), "x")


def test_series_rejects_nan_in_available_month():
    with pytest.raises(ValidationError):
        SiteSeries("a", np.full((3, 2), np.nan), np.ones(3, bool), TimeAxis(2017, 1, 3))


def test_load_minimal_manifest(tmp_path, rng):
    sites = [(sid, rng.normal(size=(96, 4)), np.ones(96, bool)) for sid in ("A", "B")]
    ds = load_dataset(write_manifest(tmp_path, sites))
    assert len(ds) == 2 and ds.d == 4 and ds.labels == {}


def test_load_dimension_mismatch(tmp_path, rng):
    sites = [("A", rng.normal(size=(96, 4)), np.ones(96, bool)), ("B", rng.normal(size=(96, 5)), np.ones(96, bool))]
    with pytest.raises(DimensionMismatch):
        load_dataset(write_manifest(tmp_path, sites))


def test_load_event_out_of_range(tmp_path, rng):
    sites = [("A", rng.normal(size=(96, 4)), np.ones(96, bool))]
    labels = [{"site_id": "A", "looted": True, "event_index": 96}]
    with pytest.raises(OutOfRange):
        load_dataset(write_manifest(tmp_path, sites, labels))


def test_load_event_year_month_and_unknown_site(tmp_path, rng):
    sites = [("A", rng.normal(size=(96, 4)), np.ones(96, bool))]
    ds = load_dataset(write_manifest(tmp_path, sites, [{"site_id": "A", "looted": True,
                                                         "event_year": 2018, "event_month": 3}]))
    assert ds.labels["A"].event_month == 14
    with pytest.raises(ValidationError):
        load_dataset(write_manifest(tmp_path, sites, [{"site_id": "Z", "looted": False}]))


def test_missing_manifest(tmp_path):
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "nope.json")


def test_series_round_trip_and_bad_magic(tmp_path, rng):
    vals = rng.normal(size=(12, 3)).astype(np.float32).astype(np.float64)
    avail = rng.random(12) > 0.3
    write_series(tmp_path / "a.wtch", vals, avail)
    v2, a2 = read_series(tmp_path / "a.wtch")
    assert np.array_equal(a2, avail)
    assert np.array_equal(v2[avail], vals[avail])
    assert np.isnan(v2[~avail]).all()
    raw = bytearray((tmp_path / "a.wtch").read_bytes())
    raw[:4] = b"XXXX"
    (tmp_path / "b.wtch").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_series(tmp_path / "b.wtch")
    (tmp_path / "c.wtch").write_bytes(bytes(raw[:10]))
    with pytest.raises(FormatError):
        read_series(tmp_path / "c.wtch")


def test_csv_fallback(tmp_path):
    (tmp_path / "a.csv").write_text("t,f0,f1\n0,1.5,2\n1,,\n2,3,4\n")
    vals, avail = read_series(tmp_path / "a.csv", T=4)
    assert avail.tolist() == [True, False, True, False]
    assert vals[0].tolist() == [1.5, 2.0] and vals[2].tolist() == [3.0, 4.0]


def test_dataset_save_load_bit_exact(tmp_path, rng):
    vals = rng.normal(size=(3, 24, 5)).astype(np.float32).astype(np.float64)
    avail = rng.random((3, 24)) > 0.2
    vals[~avail] = np.nan
    ds = make_dataset(vals, {"s1": SiteLabel("s1", True, 7), "s2": SiteLabel("s2", True)},
                      available=avail, splits={"s0": "train", "s1": "val", "s2": "test"})
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path / "manifest.json")
    assert back.site_ids == ds.site_ids and back.axis == ds.axis
    assert dict(back.split_assignment) == dict(ds.split_assignment)
    assert back.labels == ds.labels
    for sid in ds.site_ids:
        a, b = ds.series[sid], back.series[sid]
        assert np.array_equal(a.available, b.available)
        assert np.array_equal(a.values, b.values, equal_nan=True)


def test_scores_round_trip(tmp_path, rng):
    raw = rng.normal(size=10)
    s = ScoreSeries("x", raw, (raw - raw.min()) / np.ptp(raw), "ted-l2-r3")
    save_scores([s], tmp_path)
    back = load_scores(tmp_path)["x"]
    assert np.array_equal(back.raw, s.raw) and np.array_equal(back.probability, s.probability)
    assert back.scorer_tag == "ted-l2-r3"


def test_dataset_split_subset_and_missing(rng):
    avail = np.ones((2, 10), bool)
    avail[0, 3] = False
    vals = rng.normal(size=(2, 10, 2))
    ds = make_dataset(vals, available=avail, splits={"s0": "train", "s1": "test"})
    assert ds.split("test") == ["s1"]
    assert ds.subset(["s1"]).site_ids == ["s1"]
    assert ds.missing_fraction() == pytest.approx(1 / 20)
    with pytest.raises(ValidationError):
        make_dataset(vals, splits={"s0": "holdout"})


def test_manifest_extra_keys_kept(tmp_path, rng):
    sites = [("A", rng.normal(size=(96, 4)), np.ones(96, bool))]
    path = write_manifest(tmp_path, sites, extra={"note": "x"})
    assert load_dataset(path).meta["note"] == "x"
    doc = json.loads(path.read_text())
    assert doc["d"] == 4
