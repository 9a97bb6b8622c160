"""Bessel capacity C_{2,q'} of rasterized compact sets.

The capacity of K is

    inf { h^N sum g^{q'} : g >= 0 on the lattice, (G_2 * g) >= 1 on K }.

It is computed through the concave dual over nonnegative masses mu on K,

    sup_mu  mu(K)^{q'} / ||G_2 * mu||_q^{q'},

by minimizing ``(1/q) ||G_2 * mu||_q^q - mu(K)`` with L-BFGS-B. Every
iterate yields a certified bracket: the dual value above is a lower bound,
and ``g = (G_2 * mu)^{q-1}`` rescaled to be feasible is an upper bound.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator

from .geometry import Lattice, SetDescriptor, rasterize
from .kernel import convolver

__all__ = [
    "CapacityEstimate",
    "CapacityError",
    "capacity",
    "dual_lower_bound",
    "conjugate_exponent",
    "critical_exponent",
    "BesselCapacity",
]

logger = logging.getLogger(__name__)


class CapacityError(ValueError):
    pass


def conjugate_exponent(q):
    return q / (q - 1.0)


def critical_exponent(N):
    if N <= 2:
        return np.inf
    return N / (N - 2.0)


@dataclass
class CapacityEstimate:
    value: float
    primal_upper: float
    dual_lower: float
    iterations: int
    q: float
    converged: bool = True
    tolerance: float = 1e-3
    residuals: list = field(default_factory=list)
    mu: np.ndarray = field(default=None, repr=False)

    @property
    def exponent(self):
        """The capacity exponent q' = q / (q - 1)."""
        return conjugate_exponent(self.q)

    @property
    def gap(self):
        return (self.primal_upper - self.dual_lower) / max(self.primal_upper, 1e-300)

    def as_record(self, set_id=""):
        return {"set_id": set_id, "q": self.q, "value": self.value, "lower": self.dual_lower,
                "upper": self.primal_upper, "iterations": self.iterations,
                "converged": int(self.converged)}


def _check_q(q, N, supercritical=True):
    if not q > 1:
        raise CapacityError("q must exceed 1")
    if supercritical and N >= 3 and q < critical_exponent(N) - 1e-12:
        raise CapacityError(f"q = {q} is below the critical exponent N/(N-2) = {critical_exponent(N):.4g}")


def _bounds(mu, phi_q_sum, grad_plus_one, g_p_sum, q, hN):
    """(lower, upper) capacity bounds induced by the mass vector ``mu``."""
    p = conjugate_exponent(q)
    total = mu.sum()
    norm_q = (hN * phi_q_sum) ** (1.0 / q)
    lower = (total / norm_q) ** p if norm_q > 0 else 0.0
    s = grad_plus_one.min()
    upper = hN * g_p_sum / s ** p if s > 0 else np.inf
    return lower, upper


def dual_lower_bound(K, q, mu, h, conv=None):
    """Lower bound on the capacity of the mask ``K`` induced by masses ``mu``.

    ``mu`` is either a full lattice field (zero off K) or a vector of masses
    on the nodes of K in C order.
    """
    K = np.asarray(K, dtype=bool)
    mu = np.asarray(mu, dtype=float)
    if mu.shape == K.shape:
        if np.any(mu[~K] != 0):
            raise CapacityError("trial measure must be supported in K")
        mu = mu[K]
    if np.any(mu < 0):
        raise CapacityError("trial measure must be nonnegative")
    if mu.sum() <= 0:
        raise CapacityError("trial measure has zero mass")
    conv = conv or convolver(K.shape, float(h))
    field_ = np.zeros(K.shape)
    field_[K] = mu
    phi = conv.apply(field_ / h ** K.ndim)
    phi = np.maximum(phi, 0.0)
    norm_q = (h ** K.ndim * np.sum(phi ** q)) ** (1.0 / q)
    return float((mu.sum() / norm_q) ** conjugate_exponent(q))


def capacity(K, q, h, tol=1e-3, max_iter=5000, conv=None, supercritical=True, mu0=None):
    """Capacity C_{2,q'} of the boolean mask ``K`` on a lattice of spacing ``h``.

    Returns a :class:`CapacityEstimate` whose bracket [dual_lower,
    primal_upper] is certified for the lattice problem. ``value`` is the
    midpoint of the final bracket.
    """
    K = np.asarray(K, dtype=bool)
    N = K.ndim
    _check_q(q, N, supercritical)
    if not K.any():
        return CapacityEstimate(0.0, 0.0, 0.0, 0, q)
    conv = conv or convolver(K.shape, float(h))
    if conv.shape != K.shape:
        raise CapacityError("convolver shape does not match the set mask")
    hN = h ** N
    idx = np.flatnonzero(K.ravel())
    work = np.zeros(K.size)
    best = {"lower": 0.0, "upper": np.inf, "mu": None}
    history = []

    def fg(x):
        work[:] = 0.0
        work[idx] = x / hN
        phi = conv.apply(work.reshape(K.shape))
        np.maximum(phi, 0.0, out=phi)
        phi_q1 = phi ** (q - 1)
        phi_q = phi_q1 * phi
        phi_q_sum = phi_q.sum()
        pot = conv.apply(phi_q1).ravel()[idx]
        lo, up = _bounds(x, phi_q_sum, pot, phi_q_sum, q, hN)
        if lo > best["lower"]:
            best["lower"], best["mu"] = lo, x.copy()
        best["upper"] = min(best["upper"], up)
        f = hN * phi_q_sum / q - x.sum()
        return f, pot - 1.0

    if mu0 is None:
        x0 = np.ones(idx.size)
    else:
        x0 = np.asarray(mu0, dtype=float).ravel()
        x0 = x0[idx] if x0.size == K.size else x0
        x0 = np.maximum(x0, 0.0) + 1e-12
    # optimal scaling along the ray t * x0: f(t) = t^q A / q - t B
    f0, g0 = fg(x0)
    B = x0.sum()
    A = q * (f0 + B)
    x0 = x0 * (B / A) ** (1.0 / (q - 1)) if A > 0 else x0

    class _Done(Exception):
        pass

    n_eval = [0]

    def counted(x):
        n_eval[0] += 1
        out = fg(x)
        gap = (best["upper"] - best["lower"]) / max(best["upper"], 1e-300)
        history.append(gap)
        if gap <= tol:
            raise _Done
        return out

    converged = False
    x = x0
    for _ in range(20):
        try:
            res = minimize(counted, x, jac=True, method="L-BFGS-B",
                           bounds=[(0.0, None)] * idx.size,
                           options={"maxiter": max_iter, "maxfun": max(max_iter - n_eval[0], 1),
                                    "ftol": 0.0, "gtol": 0.0, "maxcor": 20})
        except _Done:
            converged = True
            break
        if n_eval[0] >= max_iter:
            break
        # line-search stalls are common near the optimum; restart from the
        # best certified iterate with a fresh curvature memory
        x = best["mu"] if best["mu"] is not None else res.x
    lower, upper = best["lower"], best["upper"]
    if not converged:
        converged = (upper - lower) / max(upper, 1e-300) <= tol
        if not converged:
            logger.warning("capacity optimizer stopped with gap %.3g > %.3g", (upper - lower) / upper, tol)
    mu = np.zeros(K.shape)
    if best["mu"] is not None:
        mu[K] = best["mu"]
    return CapacityEstimate(0.5 * (lower + upper), upper, lower, n_eval[0], q,
                            converged, tol, history, mu)


class BesselCapacity(BaseEstimator):
    """Estimator wrapper: ``fit(F)`` computes C_{2,q'} of a set on a lattice.

    ``F`` may be a :class:`SetDescriptor` (rasterized on ``lattice``) or a
    boolean mask already on ``lattice``.
    """

    def __init__(self, q=4.0, lattice=None, tol=1e-3, max_iter=5000):
        self.q = q
        self.lattice = lattice
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, F, y=None):
        if self.lattice is None:
            raise CapacityError("BesselCapacity needs a lattice")
        lat = self.lattice if isinstance(self.lattice, Lattice) else Lattice.from_dict(self.lattice)
        if isinstance(F, SetDescriptor):
            mask, _ = rasterize(F, lat)
        else:
            mask = np.asarray(F, dtype=bool)
            if mask.shape != lat.shape:
                raise CapacityError("mask shape does not match lattice")
        self.estimate_ = capacity(mask, self.q, lat.spacing, tol=self.tol, max_iter=self.max_iter)
        self.value_ = self.estimate_.value
        return self

    def transform(self, X=None):
        return np.array([[self.estimate_.dual_lower, self.value_, self.estimate_.primal_upper]])
