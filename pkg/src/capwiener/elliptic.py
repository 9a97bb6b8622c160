"""Finite-difference solvers for -Δu + u^q = μ and maximal (large) solutions.

The discrete operator is the standard (2N+1)-point Laplacian, which is an
M-matrix, so the discrete comparison principle holds exactly. Nonlinear
solves use Newton's method; for the convex nonlinearity |u|^{q-1} u every
Newton iterate after the first is a supersolution and the iteration
decreases monotonically to the solution.

Mirror symmetry planes (Neumann reflection through a lattice face) are
supported per face; the system is symmetrized by half-weighting nodes that
lie on mirror planes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import Lattice, SetDescriptor

__all__ = [
    "SolveError",
    "NonConvergence",
    "BracketTooWide",
    "FatteningUnresolved",
    "SolveReport",
    "ko_constant",
    "ko_bound",
    "solve_dirichlet",
    "blowup_ladder",
    "maximal_solution",
    "solve_measure_data",
    "RadialProfile",
    "radial_large_solution",
    "MaximalSolution",
]

logger = logging.getLogger(__name__)

_DIRECT_LIMIT = 5_000


class SolveError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


class BracketTooWide(RuntimeError):
    pass


class FatteningUnresolved(SolveError):
    pass


def ko_constant(q):
    """c_q = [2(q+1)/(q-1)^2]^{1/(q-1)}."""
    return (2.0 * (q + 1.0) / (q - 1.0) ** 2) ** (1.0 / (q - 1.0))


def ko_bound(d, q):
    """Keller–Osserman profile c_q d^{-2/(q-1)}."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore"):
        out = ko_constant(q) * d ** (-2.0 / (q - 1.0))
    return float(out) if out.ndim == 0 else out


def _normalize_mirror(mirror, N):
    """Per-axis (low, high) mirror flags."""
    if mirror is None:
        return tuple((False, False) for _ in range(N))
    out = []
    for m in mirror:
        if isinstance(m, (bool, np.bool_)):
            out.append((bool(m), False))
        else:
            out.append((bool(m[0]), bool(m[1])))
    if len(out) != N:
        raise SolveError("mirror needs one entry per axis")
    return tuple(out)


def outer_face_mask(shape, mirror=None):
    """Nodes on lattice faces that are not mirror planes (outer Dirichlet boundary)."""
    N = len(shape)
    mirror = _normalize_mirror(mirror, N)
    mask = np.zeros(shape, dtype=bool)
    for ax in range(N):
        lo, hi = mirror[ax]
        sl = [slice(None)] * N
        if not lo:
            sl[ax] = 0
            mask[tuple(sl)] = True
        if not hi:
            sl[ax] = shape[ax] - 1
            mask[tuple(sl)] = True
    return mask


def _mirror_weights(shape, mirror):
    N = len(shape)
    w = np.ones(shape)
    for ax in range(N):
        lo, hi = mirror[ax]
        sl = [slice(None)] * N
        if lo:
            sl[ax] = 0
            w[tuple(sl)] *= 0.5
        if hi:
            sl[ax] = shape[ax] - 1
            w[tuple(sl)] *= 0.5
    return w


@dataclass
class _System:
    A: sp.csr_matrix          # weighted Laplacian on domain nodes
    rhs_bc: np.ndarray        # weighted boundary contribution
    weights: np.ndarray       # mirror weights on domain nodes
    dom_idx: np.ndarray       # flat indices of domain nodes


def _assemble(domain, g, h, mirror):
    shape = domain.shape
    N = len(shape)
    mirror = _normalize_mirror(mirror, N)
    flat_dom = np.flatnonzero(domain.ravel())
    n = flat_dom.size
    pos = -np.ones(domain.size, dtype=np.int64)
    pos[flat_dom] = np.arange(n)
    multi = np.unravel_index(flat_dom, shape)
    w = _mirror_weights(shape, mirror).ravel()[flat_dom]
    inv_h2 = 1.0 / (h * h)
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.full(n, 2.0 * N * inv_h2)]
    rhs = np.zeros(n)
    gflat = g.ravel()
    for ax in range(N):
        for step in (-1, 1):
            nb = [m.copy() for m in multi]
            j = nb[ax] + step
            lo, hi = mirror[ax]
            j = np.where((j < 0) & lo, 1, j)
            j = np.where((j >= shape[ax]) & hi, shape[ax] - 2, j)
            if np.any((j < 0) | (j >= shape[ax])):
                raise SolveError("domain touches a non-mirrored lattice face")
            nb[ax] = j
            nflat = np.ravel_multi_index(nb, shape)
            npos = pos[nflat]
            inside = npos >= 0
            rows.append(np.flatnonzero(inside))
            cols.append(npos[inside])
            vals.append(np.full(inside.sum(), -inv_h2))
            rhs[~inside] += gflat[nflat[~inside]] * inv_h2
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    W = sp.diags(w)
    return _System((W @ A).tocsr(), w * rhs, w, flat_dom)


def _linear_solve(J, b, x0=None, dim=3):
    n = J.shape[0]
    # sparse LU is fine for banded 1-D systems; multigrid wins elsewhere
    if dim == 1 or n <= _DIRECT_LIMIT:
        return spla.spsolve(J.tocsc(), b)
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(J, symmetry="symmetric", max_coarse=2000)
    x = ml.solve(b, x0=x0, tol=1e-11, accel="cg", maxiter=300)
    return x


@dataclass
class SolveReport:
    """Solution field and diagnostics of a nonlinear solve."""

    u: np.ndarray
    domain: np.ndarray
    q: float
    h: float
    residual: float
    converged: bool
    newton_steps: int = 0
    history: list = field(default_factory=list)
    ko_ratio: Optional[np.ndarray] = None
    u_upper: Optional[np.ndarray] = None
    bracket_width: Optional[float] = None
    lattice: Optional[Lattice] = None
    mirror: Optional[tuple] = None
    dist: Optional[np.ndarray] = None
    probe: Optional[np.ndarray] = None

    def sample(self, points, field_="u"):
        """Trilinear interpolation of a field at world points (mirror-aware)."""
        if self.lattice is None:
            raise SolveError("report carries no lattice")
        pts = np.atleast_2d(np.asarray(points, dtype=float)).copy()
        lat = self.lattice
        mirror = _normalize_mirror(self.mirror, lat.dim)
        o, up = np.asarray(lat.origin), lat.upper
        for ax, (lo, hi) in enumerate(mirror):
            if lo:
                pts[:, ax] = o[ax] + np.abs(pts[:, ax] - o[ax])
            if hi:
                pts[:, ax] = up[ax] - np.abs(up[ax] - pts[:, ax])
        data = getattr(self, field_)
        interp = RegularGridInterpolator(lat.axes(), data, bounds_error=True)
        return interp(pts)


def _newton(sys_, q, rhs_extra, u0, tol, max_iter, h, N):
    """Newton iteration on the domain unknowns. Returns (u, residual, steps, ok)."""
    A, b, w = sys_.A, sys_.rhs_bc + sys_.weights * rhs_extra, sys_.weights
    scale_h = 2.0 * N / (h * h)

    def F(u):
        return A @ u + w * np.abs(u) ** (q - 1) * u - b

    u = u0.copy()
    Fu = F(u)
    steps, res = 0, np.inf
    for steps in range(1, max_iter + 1):
        dJ = w * q * np.abs(u) ** (q - 1)
        J = (A + sp.diags(dJ)).tocsr()
        delta = _linear_solve(J, -Fu, dim=N)
        t, norm0 = 1.0, np.linalg.norm(Fu)
        for _ in range(12):
            cand = u + t * delta
            Fc = F(cand)
            if np.linalg.norm(Fc) < norm0 or t < 1e-3:
                break
            t *= 0.5
        u, Fu = cand, Fc
        diag = w * (scale_h + q * np.abs(u) ** (q - 1))
        res = np.max(np.abs(Fu) / diag) / max(1.0, np.max(np.abs(u)))
        step = np.max(np.abs(t * delta)) / max(1.0, np.max(np.abs(u)))
        if res <= tol or (step <= 1e-13 and res <= 1e3 * tol):
            return u, res, steps, True
    return u, res, steps, False


def solve_dirichlet(domain, g, q, h, mirror=None, rhs=None, u0=None, tol=1e-8, max_iter=200,
                    raise_on_failure=False):
    """Solve -Δ_h u + u^q = rhs on ``domain`` with u = g off the domain.

    ``domain`` is a boolean lattice mask of unknown nodes, ``g`` a full
    lattice field holding the Dirichlet data (only values on neighbours of
    the domain matter). Returns a :class:`SolveReport` whose ``u`` equals
    ``g`` off the domain.
    """
    domain = np.asarray(domain, dtype=bool)
    g = np.asarray(g, dtype=float)
    if g.shape != domain.shape:
        raise SolveError("boundary data shape does not match the domain")
    if np.any(g[~domain] < 0):
        raise SolveError("negative boundary data")
    N = domain.ndim
    sys_ = _assemble(domain, g, h, mirror)
    extra = np.zeros(sys_.dom_idx.size) if rhs is None else np.asarray(rhs, float).ravel()[sys_.dom_idx]
    if u0 is None:
        start = _linear_solve(sys_.A.tocsr(), sys_.rhs_bc + sys_.weights * extra)
    else:
        start = np.asarray(u0, dtype=float).ravel()[sys_.dom_idx]
    start = np.maximum(start, 0.0)
    if sys_.dom_idx.size == 0:
        sol, res, steps, ok = start, 0.0, 0, True
    else:
        sol, res, steps, ok = _newton(sys_, q, extra, start, tol, max_iter, h, N)
    if not ok:
        logger.warning("Newton stopped after %d steps with residual %.3g", steps, res)
        if raise_on_failure:
            raise NonConvergence(f"Newton did not converge (residual {res:.3g})")
    u = g.copy()
    u.ravel()[sys_.dom_idx] = sol
    return SolveReport(u, domain, q, h, float(res), ok, steps, mirror=mirror)


def blowup_ladder(domain, data_for, q, h, ns, probe=None, mirror=None, inc_tol=1e-3, tol=1e-8):
    """Solve along an increasing boundary-data ladder, warm-starting each rung.

    ``data_for(n)`` returns the Dirichlet field for ladder value ``n``.
    Stops when the sup-norm increment on ``probe`` (default: the domain)
    drops below ``inc_tol * max(1, sup u)``. The last report is returned
    with ``history`` holding (n, increment) pairs.
    """
    probe = domain if probe is None else probe
    prev, report, history = None, None, []
    for n in ns:
        g = data_for(n)
        u0 = None
        if prev is not None:
            u0 = np.where(domain, prev, g)
        report = solve_dirichlet(domain, g, q, h, mirror=mirror, u0=u0, tol=tol)
        if prev is not None:
            inc = float(np.max(np.abs(report.u[probe] - prev[probe])))
            history.append((float(n), inc))
            if inc <= inc_tol * max(1.0, float(np.max(report.u[probe]))):
                break
        else:
            history.append((float(n), np.inf))
        prev = report.u
    report.history = history
    return report


def maximal_solution(F, lattice, q, mirror=None, outer="bracket", probe=None, fatten=None,
                     ladder=(4, 60), inc_tol=1e-3, bracket_tol=0.05, check_resolution=True,
                     dist=None):
    """Maximal solution U_F of -Δu + u^q = 0 in the lattice box minus F.

    ``F`` is fattened by ``fatten`` (default 2h). Nodes of the fattening carry
    the blow-up data min(n, c_q dist^{-2/(q-1)}) for n = 2^k along the
    ladder. The outer lattice faces carry zero data (``outer="zero"``),
    Keller–Osserman data (``outer="ko"``) or both (``outer="bracket"``, the
    zero-data run is reported as ``u`` and the other as ``u_upper``).
    """
    h = lattice.spacing
    if check_resolution:
        feat = F.min_feature()
        if feat is not None and feat < 2 * h:
            raise FatteningUnresolved(f"feature size {feat:.3g} below 2h = {2 * h:.3g}")
    if outer not in ("zero", "ko", "bracket"):
        raise SolveError("outer must be 'zero', 'ko' or 'bracket'")
    fatten = 2.0 * h if fatten is None else float(fatten)
    if dist is None:
        dist = F.distance(lattice.points()).reshape(lattice.shape)
    Fh = dist <= fatten * (1 + 1e-12)
    faces = outer_face_mask(lattice.shape, mirror)
    domain = ~Fh & ~faces
    if not domain.any():
        raise SolveError("the domain is empty")
    if probe is None:
        probe = domain & (dist >= 4 * h) & (dist <= 8 * h)
        if not probe.any():
            probe = domain
    with np.errstate(divide="ignore"):
        ko = np.where(dist > 0, ko_bound(np.maximum(dist, 1e-300), q), np.inf)

    def data(n, outer_kind):
        g = np.zeros(lattice.shape)
        g[Fh] = np.minimum(n, ko[Fh])
        if outer_kind == "ko":
            sel = faces & ~Fh
            g[sel] = ko[sel]
        return g

    ns = [2.0 ** k for k in range(ladder[0], ladder[1] + 1)]
    kinds = ["zero", "ko"] if outer == "bracket" else [outer]
    runs = {}
    for kind in kinds:
        runs[kind] = blowup_ladder(domain, lambda n, k=kind: data(n, k), q, h, ns, probe=probe,
                                   mirror=mirror, inc_tol=inc_tol)
    rep = runs[kinds[0]]
    if outer == "bracket":
        up = runs["ko"].u
        lo = rep.u
        width = float(np.max((up[probe] - lo[probe]) / np.maximum(up[probe], 1e-300)))
        rep.u_upper = up
        rep.bracket_width = width
    rep.lattice = lattice
    rep.mirror = mirror
    rep.dist = dist
    rep.probe = probe
    with np.errstate(invalid="ignore", divide="ignore"):
        rep.ko_ratio = np.where(domain, rep.u * dist ** (2.0 / (q - 1)) / ko_constant(q), np.nan)
    if outer == "bracket" and rep.bracket_width > bracket_tol:
        err = BracketTooWide(f"outer bracket width {rep.bracket_width:.3g} exceeds {bracket_tol}")
        err.report = rep
        raise err
    return rep


def solve_measure_data(mu, lattice, q, mirror=None, tol=1e-8, u0=None):
    """Solve -Δ_h u + u^q = μ on the lattice with zero data on outer faces.

    ``mu`` is a nonnegative density (mass per unit volume) on lattice nodes.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != lattice.shape:
        raise SolveError("measure shape does not match the lattice")
    if np.any(mu < 0):
        raise SolveError("measure must be nonnegative")
    if not np.all(np.isfinite(mu)):
        raise SolveError("measure must be finite")
    faces = outer_face_mask(lattice.shape, mirror)
    if np.any(mu[faces] > 0):
        raise SolveError("measure touches the outer boundary")
    domain = ~faces
    rep = solve_dirichlet(domain, np.zeros(lattice.shape), q, lattice.spacing, mirror=mirror,
                          rhs=mu, tol=tol, u0=u0)
    rep.lattice = lattice
    rep.mirror = mirror
    return rep


@dataclass
class RadialProfile:
    """Radial large solution on [0, R): callable u(r)."""

    R: float
    q: float
    N: int
    u0: float
    solution: object
    blowup_radius: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or np.any(r >= self.R):
            raise ValueError("radial profile is defined on [0, R)")
        return self.solution.sol(r)[0]


def _shoot(a, q, N, r_stop, big=1e6):
    """Integrate u'' + (N-1)/r u' = u^q from u(0)=a; return (blowup radius, solution)."""

    def rhs(r, y):
        u, v = y
        drift = (N - 1) / r * v if r > 0 else 0.0
        return [v, np.abs(u) ** q - drift if r > 0 else np.abs(u) ** q / N]

    def hit(r, y):
        return y[0] - big

    hit.terminal = True
    hit.direction = 1
    # series start avoids the coordinate singularity at r = 0
    r0 = 1e-8
    y0 = [a + a ** q * r0 ** 2 / (2 * N), a ** q * r0 / N]
    sol = solve_ivp(rhs, (r0, r_stop), y0, events=hit, dense_output=True, rtol=1e-12,
                    atol=1e-14, method="DOP853")
    if sol.t_events[0].size:
        re = float(sol.t_events[0][0])
        # KO tail correction past the event: u ~ c_q (R - r)^{-2/(q-1)}
        return re + (ko_constant(q) / big) ** ((q - 1) / 2.0), sol
    return np.inf, sol


def radial_large_solution(R, q, N, tol=1e-6):
    """Radial large solution of u'' + (N-1)/r u' = u^q in the ball of radius R.

    Shooting on u(0) with bisection until the blow-up radius equals R.
    """
    if R <= 0 or q <= 1:
        raise SolveError("need R > 0 and q > 1")
    lo, hi = 0.0, max(1.0, ko_constant(q) * R ** (-2.0 / (q - 1)))
    while _shoot(hi, q, N, 2 * R)[0] > R:
        lo, hi = hi, hi * 4
        if hi > 1e12:
            raise SolveError(f"shooting bracket failure: u(0) in ({lo}, {hi})")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        rb, _ = _shoot(mid, q, N, 2 * R)
        if rb > R:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    a = hi
    rb, sol = _shoot(a, q, N, 2 * R)
    if abs(rb - R) > tol:
        # bisection on a saturates at double precision; report the achieved radius
        logger.info("shooting reached blow-up radius %.10g for target %.10g", rb, R)
    return RadialProfile(R, q, N, a, sol, rb)


class MaximalSolution(BaseEstimator):
    """Estimator for U_F: ``fit(F)`` solves on a lattice, ``predict(X)`` samples U_F."""

    def __init__(self, q=4.0, lattice=None, mirror=None, outer="zero", fatten=None,
                 ladder=(4, 60), check_resolution=True):
        self.q = q
        self.lattice = lattice
        self.mirror = mirror
        self.outer = outer
        self.fatten = fatten
        self.ladder = ladder
        self.check_resolution = check_resolution

    def fit(self, F, y=None):
        if not isinstance(F, SetDescriptor):
            raise SolveError("fit expects a SetDescriptor")
        if self.lattice is None:
            raise SolveError("MaximalSolution needs a lattice")
        self.report_ = maximal_solution(F, self.lattice, self.q, mirror=self.mirror,
                                        outer=self.outer, fatten=self.fatten, ladder=self.ladder,
                                        check_resolution=self.check_resolution)
        self.set_ = F
        return self

    def predict(self, X):
        check_is_fitted(self, "report_")
        X = check_array(X, ensure_min_features=self.lattice.dim)
        return self.report_.sample(X)
