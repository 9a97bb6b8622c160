"""Capacitary potentials W_F, W*_F and the Wiener-type divergence test.

Each shell piece F_m(x) is dilated by 2^m about x, which puts it in the
closed unit annulus, and its capacity is computed on one fixed unit-scale
lattice centered at x. Terms are therefore comparable across m.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .capacity import _check_q, capacity
from .geometry import (DegenerateRange, GeometryError, Lattice, SetDescriptor,
                       shell_decompose, unit_piece_mask)

__all__ = [
    "ShellTerm",
    "PotentialReport",
    "UnitShellCapacity",
    "capacitary_potential",
    "star_potential",
    "wiener_classify",
    "WienerResult",
    "CapacitaryPotential",
]

logger = logging.getLogger(__name__)

DIVERGES, CONVERGES, UNDECIDED = "diverges", "converges", "undecided"


def shell_weight(m, q):
    return 2.0 ** (2.0 * m / (q - 1.0))


@dataclass
class ShellTerm:
    m: int
    capacity: float
    lower: float
    upper: float
    weight: float
    nonempty: bool = True
    converged: bool = True
    cells: int = 0

    @property
    def product(self):
        return self.weight * self.capacity


class UnitShellCapacity:
    """Capacities of unit-rescaled shell pieces on a fixed unit lattice.

    Results are memoized by the bytes of the piece mask, so repeated pieces
    (self-similar sets, refinement reruns) cost nothing.
    """

    def __init__(self, q, dim=3, unit_h=1.0 / 8, tol=1e-2, max_iter=5000):
        self.q, self.dim, self.unit_h = float(q), int(dim), float(unit_h)
        self.tol, self.max_iter = tol, max_iter
        self._cache = {}
        self._unit_ball = None

    def lattice(self, x):
        return Lattice.centered(np.asarray(x, dtype=float), 1.0 + 3 * self.unit_h, self.unit_h)

    def _key(self, mask):
        return hashlib.sha1(np.packbits(mask).tobytes() + str(mask.shape).encode()).hexdigest()

    def of_mask(self, mask):
        key = self._key(mask)
        if key not in self._cache:
            est = capacity(mask, self.q, self.unit_h, tol=self.tol, max_iter=self.max_iter)
            self._cache[key] = (est.value, est.dual_lower, est.primal_upper, est.converged)
        return self._cache[key]

    def unit_ball(self):
        """Capacity of the closed unit ball (bounds every rescaled F*_m piece)."""
        if self._unit_ball is None:
            lat = self.lattice(np.zeros(self.dim))
            r = np.linalg.norm(lat.points(), axis=1).reshape(lat.shape)
            self._unit_ball = self.of_mask(r <= 1.0 + 0.5 * self.unit_h)[2]
        return self._unit_ball

    def term(self, F, x, m, nonempty=True, star=False):
        w = shell_weight(m, self.q)
        if not nonempty:
            return ShellTerm(m, 0.0, 0.0, 0.0, w, False)
        mask = unit_piece_mask(F, x, m, self.lattice(x), star=star)
        if not mask.any():
            # analytically nonempty but below the unit resolution
            return ShellTerm(m, 0.0, 0.0, 0.0, w, True, True, 0)
        val, lo, up, ok = self.of_mask(mask)
        return ShellTerm(m, val, lo, up, w, True, ok, int(mask.sum()))


@dataclass
class PotentialReport:
    """Per-shell terms and sums of W_F (and optionally W*_F) at a point."""

    x: np.ndarray
    q: float
    terms: list
    M: Optional[int]
    m_range: tuple
    tail: tuple = (0.0, 0.0)
    star_terms: list = field(default_factory=list)
    unit_h: float = 0.0

    @property
    def W(self):
        return float(sum(t.product for t in self.terms))

    @property
    def W_bracket(self):
        lo = sum(t.weight * t.lower for t in self.terms) + self.tail[0]
        hi = sum(t.weight * t.upper for t in self.terms) + self.tail[1]
        return float(lo), float(hi)

    @property
    def W_star(self):
        if not self.star_terms:
            return None
        return float(sum(t.product for t in self.star_terms))

    @property
    def partial_sums(self):
        return np.cumsum([t.product for t in self.terms])

    @property
    def flagged(self):
        return [t.m for t in self.terms if not t.converged]

    @property
    def divergence_diagnostic(self):
        """Least-squares slope of log2(term) against m over the positive terms."""
        pts = [(t.m, math.log2(t.product)) for t in self.terms if t.product > 0]
        if len(pts) < 2:
            return 0.0
        m, v = np.array(pts).T
        return float(np.polyfit(m, v, 1)[0])

    def rows(self, point_id=""):
        out = []
        star = {t.m: t for t in self.star_terms}
        for t in self.terms:
            s = star.get(t.m)
            out.append({"point": point_id, "m": t.m, "a_m": t.capacity, "weight": t.weight,
                        "product": t.product, "a_star_m": s.capacity if s else "",
                        "converged": int(t.converged)})
        return out

    def summary(self, point_id="", classification=""):
        lo, hi = self.W_bracket
        return {"point": point_id, "x": " ".join(f"{v:.10g}" for v in self.x), "q": self.q,
                "M": "" if self.M is None else self.M, "W": self.W, "W_lower": lo, "W_upper": hi,
                "W_star": "" if self.W_star is None else self.W_star,
                "classification": classification}


def _m_range(F, x, m_min, m_max):
    """Default shell range: from the shell that contains all of F to M(x)."""
    lo, hi = F.bounds()
    corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(F.dim, -1).T
    reach = float(np.max(np.linalg.norm(corners - x, axis=1)))
    m_all = int(math.floor(-math.log2(max(reach, 1e-300))))
    if m_min is None:
        m_min = m_all
    if m_max is None:
        d = float(F.distance(x[None, :])[0])
        if d <= 0:
            raise DegenerateRange("x lies on F; give m_max explicitly (W_F(x) is an infinite sum)")
        m_max = int(math.floor(-math.log2(d)))
    return m_all, int(m_min), int(m_max)


def _terms(F, x, ms, flags, engine, star, n_jobs):
    jobs = [(m, f) for m, f in zip(ms, flags)]
    if n_jobs == 1 or len(jobs) < 2:
        return [engine.term(F, x, m, f, star) for m, f in jobs]
    return Parallel(n_jobs=n_jobs)(delayed(engine.term)(F, x, m, f, star) for m, f in jobs)


def capacitary_potential(F, x, q, m_range=None, unit_h=1.0 / 8, tol=1e-2, engine=None,
                         with_star=False, n_jobs=1):
    """W_F(x) as a finite sum over dyadic shells.

    ``m_range`` = (m_min, m_max); either end may be None for the default
    (all of F at the low end, M(x) at the high end). Shells below m_min
    contribute an interval to ``tail``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if F.dim != x.size:
        raise GeometryError("point and set dimensions differ")
    _check_q(q, F.dim)
    engine = engine or UnitShellCapacity(q, F.dim, unit_h, tol)
    m_min, m_max = (None, None) if m_range is None else m_range
    if F.is_empty:
        return PotentialReport(x, q, [], None, (m_min, m_max), unit_h=engine.unit_h)
    m_all, m_min, m_max = _m_range(F, x, m_min, m_max)
    dec = shell_decompose(F, x, min(m_all, m_min), m_max)
    ms = [m for m in dec.ms if m >= m_min]
    flags = [dec.is_nonempty(m) for m in ms]
    terms = _terms(F, x, ms, flags, engine, False, n_jobs)
    tail_hi = 0.0
    for m in dec.ms:
        if m < m_min and dec.is_nonempty(m):
            tail_hi += shell_weight(m, q) * engine.unit_ball()
    M = dec.M
    rep = PotentialReport(x, q, terms, M, (m_min, m_max), (0.0, tail_hi), unit_h=engine.unit_h)
    if with_star:
        rep.star_terms = star_potential(F, x, q, (m_min, m_max), engine=engine, n_jobs=n_jobs)
    return rep


def star_potential(F, x, q, m_range=None, unit_h=1.0 / 8, tol=1e-2, engine=None, n_jobs=1):
    """Terms of W*_F(x): capacities of 2^m F*_m(x), with the same weights as W_F."""
    x = np.asarray(x, dtype=float).ravel()
    _check_q(q, F.dim)
    engine = engine or UnitShellCapacity(q, F.dim, unit_h, tol)
    if F.is_empty:
        return []
    m_lo, m_hi = (None, None) if m_range is None else m_range
    _, m_lo, m_hi = _m_range(F, x, m_lo, m_hi)
    ms = list(range(m_lo, m_hi + 1))
    d = float(F.distance(x[None, :])[0])
    flags = [d <= 2.0 ** (-m) for m in ms]
    return _terms(F, x, ms, flags, engine, True, n_jobs)


@dataclass
class WienerResult:
    classification: str
    report: PotentialReport
    last_half: list
    reason: str = ""

    @property
    def terms(self):
        return [t.product for t in self.report.terms]


def classify_terms(caps, products, decay=0.7, floor_frac=0.5):
    """Three-way growth heuristic on the last half of the shell range.

    Divergence: the unit capacities a_m stay bounded below (min >= floor_frac
    x median > 0); the weights 2^{2m/(q-1)} then force the series to diverge.
    Convergence: the weighted increments vanish or decay geometrically.
    """
    a = np.asarray(caps, dtype=float)
    v = np.asarray(products, dtype=float)
    k = math.ceil(v.size / 2)
    a_tail, tail = a[-k:], v[-k:]
    med = float(np.median(a_tail))
    if med > 0 and a_tail.min() >= floor_frac * med:
        return DIVERGES, f"last {k} unit capacities >= {floor_frac} x median {med:.3g}"
    if np.all(tail == 0):
        return CONVERGES, f"last {k} terms vanish"
    if np.all(tail[1:] <= decay * tail[:-1]):
        return CONVERGES, f"last {k} terms decay by <= {decay} per shell"
    return UNDECIDED, f"last {k} terms neither bounded below nor geometrically decaying"


def wiener_classify(F, y, q, depth=10, m_start=None, unit_h=1.0 / 8, tol=1e-2, engine=None,
                    n_jobs=1):
    """Classify divergence of W_F(y) for y on the boundary of the complement of F.

    Partial sums run over m_start..m_start+depth-1; m_start defaults to the
    shell containing all of F (or 0 if that is larger).
    """
    y = np.asarray(y, dtype=float).ravel()
    d = float(F.distance(y[None, :])[0])
    if d > 1e-9 * max(1.0, F.diameter()):
        raise GeometryError(f"y is at distance {d:.3g} from F; it must lie on F")
    if m_start is None:
        m_start = min(0, int(math.floor(-math.log2(max(F.diameter(), 1e-300)))))
    if depth < 2:
        raise DegenerateRange("depth must be at least 2")
    engine = engine or UnitShellCapacity(q, F.dim, unit_h, tol)
    rep = capacitary_potential(F, y, q, (m_start, m_start + depth - 1), engine=engine, n_jobs=n_jobs)
    vals = [t.product for t in rep.terms]
    label, reason = classify_terms([t.capacity for t in rep.terms], vals)
    k = math.ceil(len(vals) / 2)
    return WienerResult(label, rep, vals[-k:], reason)


class CapacitaryPotential(TransformerMixin, BaseEstimator):
    """Estimator form of W_F: ``fit(F)`` stores the set, ``transform(X)`` returns
    one row (W, W_lower, W_upper, W_star) per query point."""

    def __init__(self, q=4.0, unit_h=1.0 / 8, tol=1e-2, m_range=None, with_star=False, n_jobs=1):
        self.q = q
        self.unit_h = unit_h
        self.tol = tol
        self.m_range = m_range
        self.with_star = with_star
        self.n_jobs = n_jobs

    def fit(self, F, y=None):
        if not isinstance(F, SetDescriptor):
            raise TypeError("fit expects a SetDescriptor")
        _check_q(self.q, F.dim)
        self.set_ = F
        self.engine_ = UnitShellCapacity(self.q, F.dim, self.unit_h, self.tol)
        return self

    def transform(self, X):
        check_is_fitted(self, "set_")
        X = check_array(X, ensure_min_features=self.set_.dim)
        self.reports_ = [capacitary_potential(self.set_, x, self.q, self.m_range, engine=self.engine_,
                                              with_star=self.with_star, n_jobs=self.n_jobs)
                         for x in X]
        return np.array([[r.W, *r.W_bracket, np.nan if r.W_star is None else r.W_star]
                         for r in self.reports_])
