import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from capwiener.geometry import Lattice, SetDescriptor
from capwiener.verify import (FAIL, PASS, SKIPPED, CrossCheck, RatioStudy, Sample, StudyError,
                              bilateral_ratio_report, measure_data_probe, property_suite,
                              quasi_additivity, ray_samples, wiener_crosscheck)


@given(st.integers(0, 1000), st.floats(0.05, 0.4))
def test_ray_samples_hit_distance(seed, d):
    F = SetDescriptor.segment([-0.3, 0, 0], [0.3, 0, 0])
    pts = ray_samples(F, [d], 4, seed=seed, center=np.zeros(3))
    assert len(pts) == 4
    for x, dd in pts:
        assert dd == d
        assert F.distance(x[None, :])[0] == pytest.approx(d, abs=1e-9)
        assert np.all(x >= 0)


def test_ray_samples_deterministic_and_min_count():
    F = SetDescriptor.ball([0, 0, 0], 0.25)
    a = ray_samples(F, [0.25, 0.125], 5, seed=3, center=np.zeros(3), box_hi=0.45, min_count=12)
    b = ray_samples(F, [0.25, 0.125], 5, seed=3, center=np.zeros(3), box_hi=0.45, min_count=12)
    assert len(a) >= 12
    assert all(np.array_equal(x, y) for (x, _), (y, _) in zip(a, b))
    assert all(np.all(np.abs(x) <= 0.45) for x, _ in a)


def make_study(logs, spread_max=4.0):
    samples = [Sample(np.zeros(3), 0.1, U=np.exp(v), W=1.0) for v in logs]
    return RatioStudy("t", 4.0, 0.1, 0.125, samples, spread_max=spread_max)


def test_ratio_study_verdicts():
    s = make_study([0.0, 1.0, -0.5])
    assert s.spread == pytest.approx(1.5)
    assert s.verdict == PASS
    s.refined = make_study([0.0, 2.0])
    assert s.refinement_change == pytest.approx(0.5 / 1.5)
    assert s.verdict == FAIL
    s.refined = make_study([0.0, 1.6])
    assert s.verdict == PASS
    assert make_study([0.0, 5.0]).verdict == FAIL
    ex = make_study([0.0, 1.0])
    ex.samples.append(Sample(np.zeros(3), 0.01, excluded="dist < 4h"))
    assert ex.summary()["excluded"] == 1
    assert ex.rows()[-1]["log_ratio"] == ""


def test_crosscheck_ko_trend():
    c = CrossCheck("t", "diverges", "", [0.5, 0.25], [1.0, 2.0 ** (2 / 3)], PASS, True, q=4.0)
    assert c.ko_trend == pytest.approx(1.0)
    assert c.row()["growth"] == pytest.approx(2.0 ** (2 / 3))


class FakeReport:
    def __init__(self, f):
        self.f = f

    def sample(self, xs):
        return np.array([self.f(x) for x in xs])


def test_crosscheck_decision_logic():
    ball = SetDescriptor.ball([0, 0, 0], 0.5)
    lat = Lattice.centered([0, 0, 0], 1.0, 1 / 16)
    y, u = [0.5, 0, 0], [1, 0, 0]
    kw = dict(depth=5, unit_h=0.25, distances=[0.5, 0.25, 0.125, 0.0625])
    steep = FakeReport(lambda x: 1.0 / (np.linalg.norm(x) - 0.5) ** 2)
    flat = FakeReport(lambda x: 1.0)
    assert wiener_crosscheck(ball, y, 4.0, lat, u, report=steep, **kw).verdict == PASS
    assert wiener_crosscheck(ball, y, 4.0, lat, u, report=flat, **kw).verdict == FAIL
    pt = SetDescriptor.points([[0.0, 0, 0]])
    cc = wiener_crosscheck(pt, [0, 0, 0], 4.0, lat, u, report=flat, **kw)
    assert cc.classification == "converges" and cc.verdict == PASS
    spike = FakeReport(lambda x: 1.0 / np.linalg.norm(x) ** 2)
    cc = wiener_crosscheck(pt, [0, 0, 0], 4.0, lat, u, report=spike, **kw)
    assert cc.verdict == FAIL
    # default distances stop at 4h
    kw.pop("distances")
    cc = wiener_crosscheck(pt, [0, 0, 0], 4.0, lat, u, report=flat, **kw)
    assert min(cc.distances) >= 4 * lat.spacing


def test_bilateral_small_run():
    F = SetDescriptor.ball([0, 0, 0], 0.25)
    lat = Lattice((0, 0, 0), 1 / 16, (25, 25, 25))
    pts = ray_samples(F, [0.5, 0.25], 3, seed=1, center=np.zeros(3), box_hi=1.2)
    with pytest.raises(StudyError):
        bilateral_ratio_report(F, 4.0, lat, pts, mirror=[True] * 3, min_samples=100)
    st_ = bilateral_ratio_report(F, 4.0, lat, pts, mirror=[True] * 3, unit_h=0.25, refine=False)
    assert st_.stats["n"] == len(pts)
    assert np.all(np.isfinite(st_.log_ratios))
    assert st_.verdict in (PASS, FAIL)
    assert np.all(st_.star_ratios > 0.5)


def test_suites_small():
    r = property_suite("solver-comparison", n=3)
    assert r.passed and r.cases == 3
    r = property_suite("capacity-monotone", n=2)
    assert r.passed
    r = property_suite("dilation-covariance", unit_h=0.25)
    assert r.passed and r.stats["max_rel_error"] < 1e-6
    with pytest.raises(KeyError):
        property_suite("nope")


def test_quasi_additivity_small():
    out = quasi_additivity(radius=0.25, separations=(4.0,), h=1 / 8, tol=1e-2)
    assert 0 <= out[0]["delta"] < 0.2
    assert out[0]["uniform_lower"] <= out[0]["union"] * 1.02


def test_measure_probe_small():
    F = SetDescriptor.ball([0, 0, 0], 0.5)
    lat = Lattice((0, 0, 0), 1 / 8, (13, 13, 13))
    pr = measure_data_probe(F, lat, 4.0, mirror=[True] * 3, n_random=3,
                            ladder=[2.0 ** k for k in range(0, 9)])
    assert pr.violations == 0 and pr.max_excess <= 1e-6
    fr = [s[1] for s in pr.ladder]
    assert all(b >= a - 1e-9 for a, b in zip(fr, fr[1:]))


def test_skipped_constant():
    assert SKIPPED == "SKIPPED"
