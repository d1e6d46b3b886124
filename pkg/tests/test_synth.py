import json
import warnings

import numpy as np
import pytest

from watchcd.datamodel import ScoreSeries
from watchcd.errors import ValidationError
from watchcd.eval import EvalConfig, recall_suite
from watchcd.normalize import normalize_dataset
from watchcd.synth import SynthSpec, change_profile, generate_dataset, oracle_recall
from watchcd.ted import ted_score


def test_deterministic_per_seed():
    a = generate_dataset(SynthSpec(n_sites=10, d=4, missing_fraction=0.01, seed=9))
    b = generate_dataset(SynthSpec(n_sites=10, d=4, missing_fraction=0.01, seed=9))
    c = generate_dataset(SynthSpec(n_sites=10, d=4, missing_fraction=0.01, seed=10))
    va, vb, vc = a.stack()[0], b.stack()[0], c.stack()[0]
    assert np.array_equal(va, vb, equal_nan=True)
    assert not np.array_equal(va, vc, equal_nan=True)
    assert a.labels == b.labels and dict(a.split_assignment) == dict(b.split_assignment)


def test_noise_moments_within_three_standard_errors():
    spec = SynthSpec(n_sites=40, d=8, seasonal_amplitude=0.0, looted_fraction=0.0, noise_sigma=2.0, seed=3)
    x = generate_dataset(spec).stack()[0].ravel()
    n = x.size
    assert abs(x.mean()) < 3 * 2.0 / np.sqrt(n)
    # std of the sample std of a Gaussian is about sigma / sqrt(2n)
    assert abs(x.std() - 2.0) < 3 * 2.0 / np.sqrt(2 * n)


def test_labels_and_fractions():
    ds = generate_dataset(SynthSpec(n_sites=100, d=4, looted_fraction=0.4, known_fraction=0.5,
                                    event_range=(12, 83), seed=1))
    looted = [l for l in ds.labels.values() if l.looted]
    known = [l for l in looted if l.event_month is not None]
    assert len(looted) == 40 and len(known) == 20
    assert all(12 <= l.event_month <= 83 for l in known)
    assert set(ds.meta["truth"]) == {l.site_id for l in looted}
    assert sorted(set(ds.split_assignment.values())) == ["test", "train", "val"]
    assert ds.split("train").__len__() == 60


def test_event_months_spread_uniformly():
    ds = generate_dataset(SynthSpec(n_sites=2000, d=1, event_range=(0, 95), seed=2))
    months = np.array(list(ds.meta["truth"].values()))
    counts = np.bincount(months // 24, minlength=4)
    # chi-square with 3 dof, 99.9% quantile 16.27
    expected = len(months) / 4
    assert ((counts - expected) ** 2 / expected).sum() < 16.27


def test_change_profiles():
    T = 12
    step = change_profile(SynthSpec(change_model="step"), 5, T)
    assert step.tolist() == [0] * 5 + [1] * 7
    ramp = change_profile(SynthSpec(change_model="ramp", ramp_length=4), 5, T)
    np.testing.assert_allclose(ramp[4:10], [0, 0.25, 0.5, 0.75, 1, 1])
    tr = change_profile(SynthSpec(change_model="transient", transient_length=2), 5, T)
    assert tr.tolist() == [0] * 5 + [1, 1] + [0] * 5


def test_precursor_lead_moves_onset():
    spec = SynthSpec(n_sites=6, d=4, noise_sigma=0.0, seasonal_amplitude=0.0, change_model="step",
                     precursor_lead=2, event_range=(10, 50), looted_fraction=1.0, seed=0)
    ds = generate_dataset(spec)
    for sid, c in ds.meta["truth"].items():
        raw = ted_score(ds.series[sid]).raw
        assert int(np.argmax(raw)) == c - 2


def test_magnitude_zero_is_chance():
    ds = generate_dataset(SynthSpec(n_sites=600, d=8, magnitude=0.0, seed=6))
    nd, _ = normalize_dataset(ds)
    rep = recall_suite([ted_score(s) for s in nd.series.values()], nd.labels, EvalConfig(12, (0,)))
    assert abs(rep.r_sym[0] - 12 / 96) < 0.05


def test_validation_and_warning(tmp_path):
    with pytest.raises(ValidationError):
        SynthSpec(looted_fraction=1.5)
    with pytest.raises(ValidationError):
        SynthSpec(event_range=(10, 96))
    with pytest.raises(ValidationError):
        SynthSpec(change_model="spike")
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        generate_dataset(SynthSpec(n_sites=2, T=6, d=2))
    assert any("seasonal" in str(x.message) for x in w)
    (tmp_path / "s.json").write_text(json.dumps({"n_sites": 3, "d": 2, "event_range": [5, 9]}))
    assert SynthSpec.from_file(tmp_path / "s.json").event_range == (5, 9)


def test_oracle_saturates_when_k_equals_t(rng):
    from watchcd.datamodel import SiteLabel

    p = rng.random(20)
    rep = oracle_recall([ScoreSeries("a", p, p, "x")], {"a": SiteLabel("a", True, 13)}, EvalConfig(20, (0,)))
    assert rep.r_sym[0] == 1.0


def test_values_are_float32_exact():
    v = generate_dataset(SynthSpec(n_sites=3, d=4, seed=1)).stack()[0]
    assert np.array_equal(v, v.astype(np.float32).astype(np.float64))
