import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from watchcd.errors import DimensionMismatch, FormatError, ValidationError
from watchcd.normalize import (
    CalendarStats,
    apply_two_stage,
    cross_grid_normalize,
    fit_calendar_stats,
    impute_missing,
    imputed_fraction,
    normalize_dataset,
    pool_site,
)
from watchcd.synth import SynthSpec, generate_dataset

from conftest import make_dataset


def _pooled(ds):
    v, _ = ds.stack()
    return v.reshape(-1, v.shape[2])


def test_impute_hand_mean():
    # T=12 from January: index 2 is March
    vals = np.zeros((3, 12, 1))
    vals[0, 2, 0] = 2.0
    vals[1, 2, 0] = 4.0
    avail = np.ones((3, 12), bool)
    avail[2, 2] = False
    vals[2, 2, 0] = np.nan
    out = impute_missing(make_dataset(vals, available=avail))
    assert out.series["s2"].values[2, 0] == 3.0
    assert out.meta["imputed_cells"] == 1
    assert not out.series["s2"].available[2]


def test_impute_identity_when_complete(rng):
    ds = make_dataset(rng.normal(size=(2, 12, 2)))
    assert impute_missing(ds) is ds


def test_impute_all_march_missing():
    vals = np.ones((2, 24, 1))
    avail = np.ones((2, 24), bool)
    avail[:, [2, 14]] = False
    vals[~avail] = np.nan
    with pytest.raises(ValidationError):
        impute_missing(make_dataset(vals, available=avail))


def test_fit_hand_stats():
    vals = np.zeros((2, 12, 1))
    vals[0, 0, 0], vals[1, 0, 0] = 1.0, 3.0
    st_ = fit_calendar_stats(make_dataset(vals))
    assert st_.per_month_mean[0, 0] == 2.0
    assert st_.per_month_std[0, 0] == 1.0


def test_constant_dataset_maps_to_zero():
    ds = make_dataset(np.full((3, 24, 2), 7.0))
    stats = fit_calendar_stats(ds)
    assert (stats.per_month_std == 0).all()
    out, _ = normalize_dataset(ds)
    assert (_pooled(out) == 0).all()


def test_stage_one_month_means_vanish(rng):
    ds = make_dataset(rng.normal(3, 2, size=(4, 36, 3)))
    stats = fit_calendar_stats(ds)
    v, _ = ds.stack()
    m = ds.axis.calendar_months()
    tilde = (v - stats.per_month_mean[m]) / (stats.per_month_std[m] + stats.epsilon)
    for k in range(12):
        assert np.abs(tilde[:, m == k].reshape(-1, 3).mean(axis=0)).max() < 1e-9


def test_two_stage_identity_on_fit_set():
    ds = generate_dataset(SynthSpec(n_sites=30, d=6, seed=2))
    out, _ = normalize_dataset(ds)
    z = _pooled(out)
    assert np.abs(z.mean(axis=0)).max() < 1e-3
    assert np.all((z.std(axis=0) > 0.999) & (z.std(axis=0) < 1.001))


def test_held_out_uses_frozen_stats(rng):
    ds = make_dataset(rng.normal(size=(6, 24, 2)), splits={f"s{i}": "train" if i < 4 else "test" for i in range(6)})
    out, stats = normalize_dataset(ds, population="train")
    assert stats.population == "train"
    held = ds.subset(["s5"])
    again, same = normalize_dataset(held, stats)
    assert same is stats
    assert np.array_equal(again.series["s5"].values, out.series["s5"].values)
    assert np.isfinite(again.series["s5"].values).all()


def test_frozen_stats_not_idempotent(rng):
    ds = make_dataset(rng.normal(5, 3, size=(4, 24, 2)))
    once, stats = normalize_dataset(ds)
    twice = apply_two_stage(once, stats)
    assert not np.allclose(_pooled(once), _pooled(twice))
    refit, _ = normalize_dataset(once)
    # refitting on already-normalized data is not the identity either
    assert not np.array_equal(_pooled(once), _pooled(refit))


def test_dimension_mismatch(rng):
    _, stats = normalize_dataset(make_dataset(rng.normal(size=(2, 12, 2))))
    with pytest.raises(DimensionMismatch):
        apply_two_stage(make_dataset(rng.normal(size=(2, 12, 3))), stats)


def test_stats_round_trip_and_fingerprint(tmp_path, rng):
    _, stats = normalize_dataset(make_dataset(rng.normal(size=(3, 24, 4))))
    stats.save(tmp_path / "s.wcs")
    back = CalendarStats.load(tmp_path / "s.wcs")
    assert back.fingerprint() == stats.fingerprint()
    assert back.to_bytes() == stats.to_bytes()
    _, other = normalize_dataset(make_dataset(rng.normal(size=(3, 24, 4))))
    assert other.fingerprint() != stats.fingerprint()
    (tmp_path / "bad.wcs").write_bytes(b"nope" + stats.to_bytes()[4:])
    with pytest.raises(FormatError):
        CalendarStats.load(tmp_path / "bad.wcs")


def test_permutation_invariant_stats(rng):
    vals = rng.normal(size=(5, 24, 3))
    a = fit_calendar_stats(make_dataset(vals))
    b = fit_calendar_stats(make_dataset(vals[::-1]))
    for x, y in [(a.per_month_mean, b.per_month_mean), (a.per_month_std, b.per_month_std),
                 (a.global_mean, b.global_mean), (a.global_std, b.global_std)]:
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)


def test_imputed_fraction_matches_planted_gaps():
    ds = generate_dataset(SynthSpec(n_sites=50, d=3, missing_fraction=0.005, seed=4))
    planted = int(round(0.005 * 50 * 96))
    assert imputed_fraction(ds) == pytest.approx(planted / (50 * 96))
    assert impute_missing(ds).meta["imputed_cells"] == planted


def test_cross_grid_examples():
    out = cross_grid_normalize(np.array([[1.0], [3.0]]))
    np.testing.assert_allclose(out[:, 0], [-1.0, 1.0], atol=1e-5)
    assert (cross_grid_normalize(np.array([[0.3, 0.7, 0.1]])) == 0).all()
    G = np.tile(np.array([0.1, 0.2, 0.7, 0.3]), (5, 1))
    assert (cross_grid_normalize(G) == 0).all()


@settings(max_examples=60)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(1, 20)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_cross_grid_zero_mean(G):
    out = cross_grid_normalize(G)
    assert np.abs(out.mean(axis=0)).max() < 1e-9


def test_pool_site_examples():
    G = np.array([[0.2], [0.8]])
    assert pool_site(G, "max")[0] == 0.8
    assert pool_site(G, "mean")[0] == 0.5
    row = np.array([[0.1, 0.4, 0.3]])
    assert np.array_equal(pool_site(row, "max"), row[0])
    assert np.array_equal(pool_site(row, "mean"), row[0])
    with pytest.raises(ValidationError):
        pool_site(G, "median")


def test_normalize_500_sites_fast():
    import time

    ds = generate_dataset(SynthSpec(n_sites=500, d=64, seed=1))
    t0 = time.perf_counter()
    out, _ = normalize_dataset(ds)
    assert time.perf_counter() - t0 < 5.0
    z = _pooled(out)
    assert np.abs(z.mean(axis=0)).max() < 1e-3
