"""Acceptance criteria 1-12, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) and
then asserts the criterion. Heavy studies are shared through session fixtures.
"""
import numpy as np
import pytest
from oracles import bessel_closed_form, exact_interval_profile, radial_ball_capacity

from capwiener.capacity import capacity, conjugate_exponent
from capwiener.elliptic import (blowup_ladder, ko_constant, maximal_solution,
                                radial_large_solution)
from capwiener.geometry import Lattice, SetDescriptor as S, rasterize
from capwiener.kernel import kernel_table
from capwiener.verify import (PASS, SKIPPED, bilateral_ratio_report, measure_data_probe,
                              property_suite, quasi_additivity, ray_samples, solve_U,
                              wiener_crosscheck)

pytestmark = pytest.mark.slow

Q = 4.0
OCTANT = [(True, False)] * 3


def test_c01_kernel(verdict):
    r = np.geomspace(1e-2, 5, 2000)
    err = np.max(np.abs(kernel_table(3)(r) / (np.exp(-r) / (4 * np.pi * r)) - 1))
    err_cf = np.max(np.abs(kernel_table(3)(r) / bessel_closed_form(r, 3) - 1))
    ok = err <= 1e-6 and err_cf <= 1e-6
    verdict(1, ok, f"max rel error {err:.2e} on [1e-2, 5]")
    assert ok


def test_c02_capacity_scaling(verdict):
    radii = np.array([0.05, 0.1, 0.2, 0.4])
    vals = []
    for r in radii:
        h = r / 12
        lat = Lattice.centered([0, 0, 0], 4 * r, h)
        mask, _ = rasterize(S.ball([0, 0, 0], r), lat)
        est = capacity(mask, Q, h, tol=1e-3)
        vals.append(est.value)
    slope = np.polyfit(np.log(radii), np.log(vals), 1)[0]
    target = 3 - 2 * conjugate_exponent(Q)
    oracle = [radial_ball_capacity(r, Q)[0] for r in radii]
    oracle_slope = np.polyfit(np.log(radii), np.log(oracle), 1)[0]
    ok = abs(slope - target) <= 0.1 * target
    verdict(2, ok, f"fitted exponent {slope:.4f} vs {target:.4f} +-10% "
                   f"(radial Bessel oracle {oracle_slope:.4f} on the same radii)")
    assert ok


def test_c03_capacity_suite(verdict):
    mono = property_suite("capacity-monotone")
    sub = property_suite("capacity-subadd")
    qa = quasi_additivity(Q)
    delta = max(r["delta"] for r in qa)
    ok = mono.passed and sub.passed and delta <= 0.3
    verdict(3, ok, f"monotone {mono.violations}/{mono.cases}, subadd {sub.violations}/{sub.cases}"
                   f" violations, quasi-additivity max delta {delta:.3f}")
    assert ok


def test_c04_interval_profile(verdict):
    n = 4001
    t = np.linspace(0, 1, n)
    dom = np.ones(n, bool)
    dom[[0, -1]] = False

    def data(v):
        g = np.zeros(n)
        g[[0, -1]] = v
        return g

    rep = blowup_ladder(dom, data, 3.0, 1.0 / (n - 1), [2.0 ** k for k in range(4, 13)],
                        inc_tol=0.0)
    sel = (t >= 0.05) & (t <= 0.5)
    target = np.sqrt(2) / np.minimum(t, 1 - t)[sel]
    err = np.max(np.abs(rep.u[sel] / target - 1))
    exact_err = np.max(np.abs(rep.u[sel][::50] / exact_interval_profile(t[sel][::50]) - 1))
    ok = err <= 0.01
    verdict(4, ok, f"max rel error {err:.3g} vs sqrt2/min(t,1-t) "
                   f"(vs exact two-sided profile {exact_err:.2e})")
    assert ok


def test_c05_radial_oracle(verdict):
    n = 64
    h = 1.0 / n
    lat = Lattice((0, 0, 0), h, (n + 3,) * 3)
    F = S.complement(S.ball([0, 0, 0], 1.0), [-2] * 3, [2] * 3)
    rep = maximal_solution(F, lat, Q, mirror=OCTANT, outer="zero", check_resolution=False)
    prof = radial_large_solution(1.0, Q, 3)
    r = np.linalg.norm(lat.points(), axis=1).reshape(lat.shape)
    sel = rep.domain & (r <= 0.9)
    err = np.max(np.abs(rep.u[sel] / prof(r[sel]) - 1))
    ok = err <= 0.02
    verdict(5, ok, f"max rel error {err:.4f} for r <= 0.9 at h = 1/{n}")
    assert ok


def test_c06_flat_boundary(verdict):
    n = 128
    h = 1.0 / n
    lat = Lattice((-0.25, 0, 0), h, (int(round(1.25 / h)) + 1, 9, 9))
    F = S.box([-1, -5, -5], [0, 5, 5])
    rep = maximal_solution(F, lat, Q, mirror=[(False, False), (True, True), (True, True)],
                           outer="zero")
    d = rep.dist
    sel = rep.domain & (d >= 8 * h - 1e-12) & (d <= 0.25 + 1e-12)
    ratio = rep.u[sel] * d[sel] ** (2 / (Q - 1)) / ko_constant(Q)
    ok = ratio.min() >= 0.95 and ratio.max() <= 1.05
    verdict(6, ok, f"ratio range [{ratio.min():.4f}, {ratio.max():.4f}] on dist in [8h, 1/4]")
    assert ok


def test_c07_point_removability(verdict):
    F = S.points([[0, 0, 0]])
    sups = []
    for n in (32, 64, 128):
        lat = Lattice((0, 0, 0), 1.0 / n, (n + 1,) * 3)
        rep = solve_U(F, lat, Q, mirror=OCTANT, check_resolution=False)
        r = np.linalg.norm(lat.points(), axis=1).reshape(lat.shape)
        sups.append(float(rep.u[(r >= 0.25) & (r <= 0.5)].max()))
    decreasing = sups[0] > sups[1] > sups[2]
    ok = decreasing and sups[2] < 0.05 * sups[0]
    verdict(7, ok, "annulus sup " + ", ".join(f"{s:.4f}" for s in sups)
                   + f" (last/first {sups[2] / sups[0]:.3f}, need < 0.05)")
    assert ok


def bilateral_family():
    return {
        "ball": S.ball([0, 0, 0], 0.25),
        "segment": S.segment([-0.3, 0, 0], [0.3, 0, 0]),
        "two-balls": S.union(S.ball([-0.25, 0, 0], 0.12), S.ball([0.25, 0, 0], 0.12)),
        "cantor-segment": S.cantor(1 / 3, 3, [-0.45, -0.3, 0], [0.45, 0.3, 0], axes=(0,)),
    }


@pytest.fixture(scope="session")
def bilateral_studies():
    n = 64
    lat = Lattice((0, 0, 0), 1.0 / n, (n + 1,) * 3)
    out = {}
    for name, F in bilateral_family().items():
        pts = ray_samples(F, [0.25, 0.125, 0.0625], 17, seed=7, center=np.zeros(3),
                          min_count=51)
        out[name] = bilateral_ratio_report(F, Q, lat, pts, mirror=OCTANT, scenario=name,
                                           min_samples=50)
    return out


def test_c08_bilateral(verdict, bilateral_studies):
    parts, ok = [], True
    for name, st in bilateral_studies.items():
        good = st.verdict == PASS and st.stats["n"] >= 50
        ok &= good
        parts.append(f"{name} n={st.stats['n']} spread {st.spread:.3f} "
                     f"change {st.refinement_change:.3f}")
    verdict(8, ok, "; ".join(parts))
    assert ok


def test_c09_star_equivalence(verdict, bilateral_studies):
    below, c_coarse, c_fine = True, 0.0, 0.0
    for st in bilateral_studies.values():
        for study in (st, st.refined):
            for s in study.included:
                # certified: lower bound of W against upper bound of W*
                below &= s.W_lower <= s.W_star_upper * (1 + 1e-9)
        c_coarse = max(c_coarse, float(st.star_ratios.max()))
        c_fine = max(c_fine, float(st.refined.star_ratios.max()))
    stable = abs(c_fine - c_coarse) <= 0.2 * c_coarse
    ok = below and stable
    verdict(9, ok, f"W <= W* on all samples: {below}; C_emp {c_coarse:.3f} -> {c_fine:.3f}")
    assert ok


def wiener_panel():
    u3 = np.ones(3) / np.sqrt(3)
    return [
        ("ball", S.ball([0, 0, 0], 0.25), [0.25, 0, 0], [1, 0, 0], False),
        ("point", S.points([[0, 0, 0]]), [0, 0, 0], u3, False),
        ("segment", S.segment([-0.3, 0, 0], [0.3, 0, 0]), [0, 0, 0], [0, 1, 1], False),
        ("two-balls", S.union(S.ball([-0.25, 0, 0], 0.12), S.ball([0.25, 0, 0], 0.12)),
         [0.37, 0, 0], [1, 0, 0], False),
        ("cantor-segment", S.cantor(1 / 3, 3, [-0.45, -0.3, 0], [0.45, 0.3, 0], axes=(0,)),
         [0.45, 0.1, 0], [0, 0, 1], False),
        ("thin-cantor-0.1", S.cantor(0.1, 8, [-0.5, 0, 0], [0.5, 0, 0]), [0.5, 0, 0], u3, True),
    ]


def test_c10_wiener_crosscheck(verdict):
    n = 64
    lat = Lattice((0, 0, 0), 1.0 / n, (int(1.5 * n) + 1,) * 3)
    parts, ok = [], True
    for name, F, y, u, allow in wiener_panel():
        cc = wiener_crosscheck(F, y, Q, lat, u, mirror=OCTANT, depth=10, scenario=name,
                               allow_undecided=allow, check_resolution=not name.startswith("thin"))
        ok &= cc.verdict in ((PASS, SKIPPED) if allow else (PASS,))
        g = cc.U[-1] / cc.U[0] if cc.U[0] > 0 else float("nan")
        parts.append(f"{name} {cc.classification} growth {g:.2f} {cc.verdict}")
    verdict(10, ok, "; ".join(parts))
    assert ok


def test_c11_lsc(verdict):
    r = property_suite("lsc-W")
    s = r.stats
    verdict(11, r.passed, f"ball W(y) {s['ball_W_y']:.4g} vs min W(x_k) {s['ball_min_W_x']:.4g}; "
                          f"segment {s['segment_W_y']:.4g} vs {s['segment_min_W_x']:.4g}")
    assert r.passed


def test_c12_measure_probe(verdict):
    n = 32
    lat = Lattice((0, 0, 0), 1.0 / n, (n + 1,) * 3)
    pr = measure_data_probe(S.ball([0, 0, 0], 0.5), lat, Q, mirror=OCTANT, n_random=20, seed=7)
    verdict(12, pr.passed, f"max excess {pr.max_excess:.3g} over {pr.n_measures} densities, "
                           f"ladder reaches {pr.reached:.3f} of U_F at n = {pr.reached_at:g}")
    assert pr.passed
