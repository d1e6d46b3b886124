import json

import numpy as np
import pytest

from watchcd.datamodel import Dataset, SiteSeries, TimeAxis, write_series


def make_dataset(values, labels=None, axis=None, available=None, splits=None, meta=None):
    """Dataset from an ``(N, T, d)`` array; sites are named s0, s1, ..."""
    values = np.asarray(values, dtype=np.float64)
    N, T, _ = values.shape
    axis = axis or TimeAxis(2017, 1, T)
    if available is None:
        available = np.ones((N, T), dtype=bool)
    series = {f"s{i}": SiteSeries(f"s{i}", values[i], available[i], axis) for i in range(N)}
    labels = {k: v for k, v in (labels or {}).items()}
    return Dataset(series, labels, axis, splits or {}, meta or {})


def write_manifest(tmp_path, sites, labels=(), T=96, d=4, extra=None):
    """``sites``: list of (site_id, values (T, d), available (T,)) written as WTCH files."""
    entries = []
    for sid, vals, avail in sites:
        fn = f"{sid}.wtch"
        write_series(tmp_path / fn, vals, avail)
        entries.append({"site_id": sid, "series_file": fn, "split": "train"})
    doc = {"axis": {"origin_year": 2017, "origin_month": 1, "length": T}, "d": d,
           "sites": entries, "labels": list(labels)}
    doc.update(extra or {})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria: number -> (passed, detail), printed once per run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(n: int, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE[n] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
