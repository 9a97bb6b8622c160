import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capwiener.geometry import DegenerateRange, GeometryError, SetDescriptor
from capwiener.potential import (CONVERGES, DIVERGES, UNDECIDED, CapacitaryPotential,
                                 UnitShellCapacity, capacitary_potential, classify_terms,
                                 shell_weight, star_potential, wiener_classify)

UH = 1.0 / 4


@pytest.fixture(scope="module")
def engine():
    return UnitShellCapacity(4.0, 3, unit_h=UH, tol=1e-2)


def test_shell_weight():
    assert shell_weight(0, 4.0) == 1.0
    assert shell_weight(3, 4.0) == pytest.approx(4.0)
    assert shell_weight(-1, 3.0) == pytest.approx(0.5)


def test_empty_set_has_zero_potential(engine):
    rep = capacitary_potential(SetDescriptor.empty(3), [0, 0, 0], 4.0, engine=engine)
    assert rep.W == 0.0 and rep.terms == []


def test_x_on_set_needs_explicit_range(engine):
    F = SetDescriptor.ball([0, 0, 0], 0.5)
    with pytest.raises(DegenerateRange):
        capacitary_potential(F, [0.5, 0, 0], 4.0, engine=engine)
    rep = capacitary_potential(F, [0.5, 0, 0], 4.0, m_range=(0, 3), engine=engine)
    assert [t.m for t in rep.terms] == [0, 1, 2, 3]


def test_dimension_mismatch(engine):
    with pytest.raises(GeometryError):
        capacitary_potential(SetDescriptor.ball([0, 0], 0.5), [1, 0, 0], 4.0, engine=engine)


def test_ball_potential_grows_towards_set(engine):
    F = SetDescriptor.ball([0, 0, 0], 0.5)
    W = [capacitary_potential(F, [0.5 + d, 0, 0], 4.0, engine=engine).W for d in (0.25, 0.125, 1 / 16)]
    assert W[0] < W[1] < W[2]
    rep = capacitary_potential(F, [0.5 + 1 / 16, 0, 0], 4.0, engine=engine)
    assert rep.M == 4
    assert rep.divergence_diagnostic > 0
    assert np.all(np.diff(rep.partial_sums) >= 0)
    lo, hi = rep.W_bracket
    assert lo <= rep.W <= hi


def test_small_ball_meets_two_shells(engine):
    # distance 1/2 and reach 0.7: only shells 0 and 1 meet the ball
    F = SetDescriptor.ball([0, 0, 0], 0.1)
    rep = capacitary_potential(F, [0.6, 0, 0], 4.0, engine=engine)
    nonzero = [t.m for t in rep.terms if t.product > 0]
    assert nonzero == [0, 1] and rep.M == 1


def test_star_terms_dominate_shell_terms(engine):
    F = SetDescriptor.segment([-0.5, 0, 0], [0.5, 0, 0])
    x = [0.1, 0.2, 0]
    rep = capacitary_potential(F, x, 4.0, engine=engine, with_star=True)
    for t, s in zip(rep.terms, rep.star_terms):
        assert s.upper >= t.lower * (1 - 1e-9)
    assert rep.W_star >= rep.W_bracket[0]
    assert len(star_potential(F, x, 4.0, engine=engine)) == len(rep.terms)


def test_dilation_shifts_shells(engine):
    F = SetDescriptor.segment([-0.5, 0.0, 0.0], [0.5, 0.0, 0.0])
    x = np.array([0.05, 0.1, 0.0])
    G = F.dilate(0.5, x)
    a = {t.m: t.capacity for t in capacitary_potential(F, x, 4.0, engine=engine).terms}
    b = {t.m: t.capacity for t in capacitary_potential(G, x, 4.0, engine=engine).terms}
    for m, v in a.items():
        if m + 1 in b:
            assert b[m + 1] == pytest.approx(v, rel=1e-9, abs=1e-12)


def test_monotone_in_the_set(engine):
    x = [0.0, 0.3, 0.0]
    F1 = SetDescriptor.segment([-0.2, 0, 0], [0.2, 0, 0])
    F2 = SetDescriptor.union(F1, SetDescriptor.ball([0.4, -0.1, 0], 0.15))
    r1 = capacitary_potential(F1, x, 4.0, m_range=(-1, 3), engine=engine)
    r2 = capacitary_potential(F2, x, 4.0, m_range=(-1, 3), engine=engine)
    assert r1.W_bracket[0] <= r2.W_bracket[1]


def test_classify_terms_rules():
    assert classify_terms([1, 1, 1, 1], [1, 2, 4, 8])[0] == DIVERGES
    assert classify_terms([0, 0, 0, 0], [0, 0, 0, 0])[0] == CONVERGES
    assert classify_terms([1, 0.5, 0.1, 0.01], [1, 0.6, 0.3, 0.1])[0] == CONVERGES
    assert classify_terms([1, 0.3, 0.2, 0.001], [1, 0.3, 0.6, 0.5])[0] == UNDECIDED


def test_wiener_ball_diverges_point_converges(engine):
    ball = SetDescriptor.ball([0, 0, 0], 0.5)
    res = wiener_classify(ball, [0.5, 0, 0], 4.0, depth=6, engine=engine)
    assert res.classification == DIVERGES
    pt = SetDescriptor.points([[0.0, 0.0, 0.0]])
    assert wiener_classify(pt, [0, 0, 0], 4.0, depth=6, engine=engine).classification == CONVERGES
    with pytest.raises(GeometryError):
        wiener_classify(ball, [0.9, 0, 0], 4.0, engine=engine)


def test_estimator_and_parallel_agree():
    F = SetDescriptor.ball([0, 0, 0], 0.3)
    X = np.array([[0.5, 0, 0], [0, 0.45, 0.1]])
    a = CapacitaryPotential(q=4.0, unit_h=UH).fit(F).transform(X)
    b = CapacitaryPotential(q=4.0, unit_h=UH, n_jobs=2).fit(F).transform(X)
    assert a.shape == (2, 4)
    assert np.allclose(a[:, :3], b[:, :3])
    assert np.all(np.isnan(a[:, 3]))


@settings(max_examples=10)
@given(st.floats(0.05, 0.6), st.floats(0, 2 * np.pi))
def test_partial_sums_nondecreasing(d, theta):
    engine = UnitShellCapacity(4.0, 3, unit_h=UH, tol=1e-2)
    F = SetDescriptor.segment([-0.5, 0, 0], [0.5, 0, 0])
    x = [0.2, d * np.cos(theta), d * np.sin(theta)]
    rep = capacitary_potential(F, x, 4.0, engine=engine)
    assert np.all(np.diff(rep.partial_sums) >= 0)
    assert rep.W >= 0
