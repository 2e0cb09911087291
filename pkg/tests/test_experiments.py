import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lerwgreen import experiments as ex


def test_exact_power_law():
    pts = [(x, x**-0.75) for x in (2, 3, 5, 8, 13)]
    fit = ex.fit_power_law(pts, -0.75, 1e-9)
    assert fit.slope == pytest.approx(-0.75, abs=1e-12)
    assert fit.passed


SIZES = np.array([8, 12, 16, 24, 32, 48, 64, 96, 128], dtype=float)


@given(st.integers(0, 2**31), st.floats(-1, 1), st.floats(0, 0.05))
def test_power_law_matches_polyfit(seed, expo, noise):
    rng = np.random.default_rng(seed)
    ys = SIZES**expo * np.exp(noise * rng.standard_normal(len(SIZES)))
    fit = ex.fit_power_law(list(zip(SIZES, ys)))
    (slope, icpt), cov = np.polyfit(np.log(SIZES), np.log(ys), 1, cov="unscaled")
    assert fit.slope == pytest.approx(slope, abs=1e-10)
    assert fit.intercept == pytest.approx(icpt, abs=1e-10)
    resid = np.log(ys) - (slope * np.log(SIZES) + icpt)
    s2 = resid @ resid / (len(SIZES) - 2)
    assert fit.stderr == pytest.approx(math.sqrt(s2 * cov[0, 0]), rel=1e-6, abs=1e-12)


def test_noisy_power_law_coverage():
    # with 7 degrees of freedom, |t| <= 2 holds with probability about 0.92
    hits = 0
    for seed in range(400):
        rng = np.random.default_rng(seed)
        ys = SIZES**0.25 * np.exp(0.01 * rng.standard_normal(len(SIZES)))
        fit = ex.fit_power_law(list(zip(SIZES, ys)))
        hits += abs(fit.slope - 0.25) <= 2 * fit.stderr
    assert 0.86 <= hits / 400 <= 0.97


def test_fit_errors():
    with pytest.raises(ex.InsufficientPoints):
        ex.fit_power_law([(1, 1), (2, 2)])
    with pytest.raises(ex.NonPositiveValue):
        ex.fit_power_law([(1, 1), (2, 0), (3, 1)])


def test_log_law_and_local_slopes():
    pts = [(n, 2 / math.pi * math.log(n) + 0.3) for n in (4, 8, 16, 32)]
    assert ex.fit_log_law(pts).slope == pytest.approx(2 / math.pi, rel=1e-12)
    assert ex.local_slopes(pts, log_y=False) == pytest.approx([2 / math.pi] * 3, rel=1e-12)


def test_unknown_study():
    with pytest.raises(ex.UnknownStudy):
        ex.run_study("nope", [4, 8, 16])
    with pytest.raises(ValueError):
        ex.run_study("loops", [8, 4, 16])


def test_small_loops_study_outputs():
    res = ex.run_study("loops", [4, 6, 8, 10])
    assert [n for n, _, _ in res.rows] == [4, 6, 8, 10]
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert rows[0] == ["study", "n", "observable", "value"]
    assert len(rows) == 5
    summary = json.loads(res.to_json())
    assert {"study", "slope", "stderr", "expect", "pass"} <= set(summary)
    assert len(summary["drift"]) == 3
    # deterministic
    assert ex.run_study("loops", [4, 6, 8, 10]).rows == res.rows


def test_small_studies_run():
    for name in ("spinor", "beurling", "qbar", "green00", "sin3"):
        res = ex.run_study(name, [4, 6, 8])
        assert res.rows
    res = ex.run_study("qbar", [4, 6, 8])
    assert len(res.extra["differences"]) == 2


def test_green34_precheck_runs_before_scaling():
    cfg = ex.StudyConfig(mc_samples=50_000, seed=3, precheck_max_n=4)
    res = ex.run_study("green34", [3, 4, 6], cfg)
    checks = res.extra["precheck"]
    assert [c["n"] for c in checks] == [3, 4]
    assert all(c["z"] <= 3 for c in checks)


def test_sin3_edges_distinct_and_on_boundary():
    from lerwgreen.domain import boundary_edges, square

    n = 12
    bs = ex.sin3_edges(n)
    assert len(set(bs)) == len(bs)
    assert set(bs) <= set(boundary_edges(square(n)))
