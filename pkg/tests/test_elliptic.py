import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import exact_interval_profile, radial_u0

from capwiener.elliptic import (BracketTooWide, FatteningUnresolved, MaximalSolution,
                                SolveError, ko_bound, ko_constant, maximal_solution,
                                outer_face_mask, radial_large_solution, solve_dirichlet,
                                solve_measure_data)
from capwiener.geometry import Lattice, SetDescriptor


def test_ko_constant():
    assert ko_constant(3.0) == pytest.approx(np.sqrt(2))
    assert ko_constant(4.0) == pytest.approx((10 / 9) ** (1 / 3))
    assert ko_bound(0.25, 3.0) == pytest.approx(4 * np.sqrt(2))


@pytest.mark.parametrize("R,q,N", [(0.5, 3.0, 1), (1.0, 4.0, 3), (0.5, 4.0, 3), (1.0, 3.0, 2)])
def test_radial_shoot_matches_oracle(R, q, N):
    prof = radial_large_solution(R, q, N)
    assert prof.u0 == pytest.approx(radial_u0(R, q, N), rel=1e-3)
    r = np.array([0.0, 0.5 * R, 0.9 * R])
    u = prof(r)
    assert np.all(np.diff(u) > 0)


def test_radial_one_dim_exact():
    prof = radial_large_solution(0.5, 3.0, 1)
    exact = exact_interval_profile([0.5, 0.25, 0.1])
    # radius r from the center corresponds to t = 0.5 - r
    assert prof(np.array([0.0, 0.25, 0.4])) == pytest.approx(exact, rel=1e-6)


def test_radial_near_boundary_follows_ko():
    prof = radial_large_solution(1.0, 4.0, 3)
    d = 1e-3
    assert prof(1 - d) / ko_bound(d, 4.0) == pytest.approx(1.0, rel=0.02)


@pytest.fixture(scope="module")
def interval_solution():
    F = SetDescriptor.points([[0.0], [1.0]])
    lat = Lattice.covering([0.0], [1.0], 1 / 400, margin=0.25)
    return maximal_solution(F, lat, 3.0, outer="zero")


def test_interval_maximal_solution(interval_solution):
    rep = interval_solution
    assert rep.converged
    t = np.array([0.5, 0.25, 0.1])
    got = rep.sample(t[:, None])
    assert got == pytest.approx(exact_interval_profile(t), rel=5e-3)


def test_interval_ko_ratio(interval_solution):
    rep = interval_solution
    r = rep.ko_ratio
    inside = np.isfinite(r) & (rep.lattice.points()[:, 0] > 0) & (rep.lattice.points()[:, 0] < 1)
    # both endpoints pull the middle up past the one-sided profile
    assert 1.0 < r[inside].max() < 2.0
    near = inside & (rep.dist > 8 * rep.h) & (rep.dist < 0.05)
    assert np.all(np.abs(r[near] - 1) < 0.05)


def test_ball_bracket_and_ko_envelope():
    F = SetDescriptor.ball([0, 0, 0], 0.25)
    lat = Lattice((0, 0, 0), 1 / 16, (17, 17, 17))
    rep = maximal_solution(F, lat, 4.0, mirror=[True] * 3, outer="bracket",
                           bracket_tol=1.0)
    assert rep.u_upper is not None
    dom = rep.probe
    assert np.all(rep.u_upper[dom] >= rep.u[dom] - 1e-9)
    k = rep.ko_ratio[np.isfinite(rep.ko_ratio)]
    assert k.max() <= 2.0
    with pytest.raises(BracketTooWide) as exc:
        maximal_solution(F, lat, 4.0, mirror=[True] * 3, outer="bracket", bracket_tol=1e-6)
    assert exc.value.report.bracket_width > 1e-6


def test_mirror_matches_full_box():
    F = SetDescriptor.ball([0, 0], 0.25)
    full = maximal_solution(F, Lattice.centered([0, 0], 1.0, 1 / 16), 3.0, outer="zero")
    half = maximal_solution(F, Lattice((0, 0), 1 / 16, (17, 17)), 3.0, mirror=[True, True],
                            outer="zero")
    pts = np.array([[0.5, 0.25], [-0.5, 0.25], [0.3, -0.6]])
    assert half.sample(pts) == pytest.approx(full.sample(pts), rel=1e-6)


def test_fattening_unresolved():
    F = SetDescriptor.cantor(1 / 3, 4, [0, 0, 0], [1, 0, 0])
    lat = Lattice.covering([0, 0, 0], [1, 0, 0], 1 / 8, margin=0.5)
    with pytest.raises(FatteningUnresolved):
        maximal_solution(F, lat, 4.0)


def test_bad_inputs():
    lat = Lattice.centered([0, 0], 1.0, 0.25)
    with pytest.raises(SolveError):
        maximal_solution(SetDescriptor.ball([0, 0], 0.3), lat, 3.0, outer="nope")
    with pytest.raises(SolveError):
        solve_measure_data(-np.ones(lat.shape), lat, 3.0)
    with pytest.raises(SolveError):
        solve_dirichlet(np.ones((4, 4), bool), -np.ones((4, 4)), 3.0, 0.25)


def test_measure_data_zero_and_positive():
    lat = Lattice.centered([0, 0, 0], 1.0, 1 / 8)
    zero = solve_measure_data(np.zeros(lat.shape), lat, 4.0)
    assert np.all(zero.u == 0)
    mu = np.zeros(lat.shape)
    mu[8, 8, 8] = 50.0
    rep = solve_measure_data(mu, lat, 4.0)
    assert rep.converged and rep.u[8, 8, 8] > 0
    assert np.all(rep.u >= -1e-12)
    assert np.all(rep.u[outer_face_mask(lat.shape)] == 0)


@given(st.floats(0.5, 20.0), st.floats(1.01, 3.0))
def test_comparison_principle(a, factor):
    dom = np.zeros((20,), bool)
    dom[1:-1] = True
    g = np.zeros(20)
    g[0] = a
    g[-1] = 0.5 * a
    u1 = solve_dirichlet(dom, g, 3.0, 0.05).u
    u2 = solve_dirichlet(dom, factor * g, 3.0, 0.05).u
    assert np.all(u2 >= u1 - 1e-10)
    assert np.all(u1[dom] <= a + 1e-10)


def test_estimator_predict():
    lat = Lattice((0, 0, 0), 1 / 8, (9, 9, 9))
    est = MaximalSolution(q=4.0, lattice=lat, mirror=[True] * 3).fit(SetDescriptor.ball([0, 0, 0], 0.25))
    v = est.predict([[0.6, 0.0, 0.0], [0.0, 0.8, 0.0]])
    assert np.all(v > 0) and v.shape == (2,)
