"""Bessel kernel G_2 of (I - Delta)^{-1} and FFT convolution on lattices."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.special import gamma

__all__ = ["KernelTable", "bessel_kernel", "kernel_table", "LatticeConvolver"]

_R_MIN = 1e-4
_R_MAX = 60.0


def _heat_integral(r, N):
    """(4 pi)^{-N/2} int_0^inf t^{-N/2} exp(-t - r^2/(4t)) dt, via t = exp(s)."""
    # integrand peaks near t = r/2; split the s-line there
    s0 = np.log(max(r / 2.0, 1e-300))

    def f(s):
        return np.exp(s * (1.0 - 0.5 * N) - np.exp(s) - 0.25 * r * r * np.exp(-s))

    lo, hi = s0 - 60.0, s0 + 60.0
    val = 0.0
    for a, b in ((lo, s0 - 5), (s0 - 5, s0), (s0, s0 + 5), (s0 + 5, hi)):
        v, _ = quad(f, a, b, epsabs=0.0, epsrel=1e-13, limit=200)
        val += v
    return val / (4.0 * np.pi) ** (0.5 * N)


def _near_scale(r, N):
    """Leading singular behaviour of G_2 at the origin (used to flatten the table)."""
    if N == 1:
        return np.ones_like(r)
    if N == 2:
        return np.log(1.0 + 1.0 / r)
    return r ** (2.0 - N)


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Tabulated G_2 in dimension N.

    The table stores log(G_2(r) e^r / s(r)) on a log-spaced radial grid, where
    s(r) is the near-origin singularity, and interpolates it with a cubic
    spline in log r. Outside [r_min, r_max] closed asymptotics are used.
    """

    dim: int
    r: np.ndarray
    values: np.ndarray
    spline: CubicSpline
    near_coef: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise ValueError("Bessel kernel is defined for r > 0")
        out = np.empty_like(r)
        mid = (r >= _R_MIN) & (r <= _R_MAX)
        rm = r[mid]
        out[mid] = np.exp(self.spline(np.log(rm)) - rm) * _near_scale(rm, self.dim)
        small = r < _R_MIN
        if np.any(small):
            rs = r[small]
            if self.dim == 1:
                out[small] = 0.5 * np.exp(-rs)
            elif self.dim == 2:
                out[small] = (np.log(2.0 / rs) - np.euler_gamma) / (2.0 * np.pi)
            else:
                out[small] = self.near_coef * rs ** (2.0 - self.dim)
        big = r > _R_MAX
        if np.any(big):
            rb = r[big]
            out[big] = ((2 * np.pi) ** (-0.5 * self.dim) * rb ** (1 - 0.5 * self.dim)
                        * np.sqrt(np.pi / (2 * rb)) * np.exp(-rb))
        return out

    def to_text(self):
        """Two-column plain text (r, G_2(r))."""
        lines = [f"# Bessel kernel G_2, N={self.dim}", "# r G2"]
        lines += [f"{a:.17g} {b:.17g}" for a, b in zip(self.r, self.values)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        rows, dim = [], None
        for line in text.splitlines():
            if line.startswith("#"):
                if "N=" in line:
                    dim = int(line.split("N=")[1].split()[0])
                continue
            if line.strip():
                rows.append([float(v) for v in line.split()])
        arr = np.array(rows)
        return _build_table(dim, arr[:, 0], arr[:, 1])


def _build_table(N, r, vals):
    flat = np.log(vals) + r - np.log(_near_scale(r, N))
    spline = CubicSpline(np.log(r), flat)
    near = gamma(0.5 * N - 1) / (4 * np.pi ** (0.5 * N)) if N >= 3 else np.nan
    return KernelTable(N, r, vals, spline, near)


@functools.lru_cache(maxsize=None)
def kernel_table(N, n_samples=700):
    """Build (and cache) the kernel table for dimension N by quadrature."""
    if N not in (1, 2, 3):
        raise ValueError("kernel tables are provided for N in {1, 2, 3}")
    r = np.geomspace(_R_MIN, _R_MAX, n_samples)
    vals = np.array([_heat_integral(ri, N) for ri in r])
    return _build_table(N, r, vals)


def bessel_kernel(r, N):
    """G_2(r) in dimension N (scalar or array), r > 0."""
    scalar = np.isscalar(r)
    out = kernel_table(int(N))(np.atleast_1d(r))
    return float(out[0]) if scalar else out


def _cell_average(table, offsets, h, n_sub=4, order=6):
    """Average of G_2 over the cells centered at ``offsets`` (shape (k, N))."""
    N = offsets.shape[1]
    x, w = np.polynomial.legendre.leggauss(order)
    sub = (np.arange(n_sub) + 0.5) / n_sub - 0.5
    pts1 = (sub[:, None] + x[None, :] / (2 * n_sub)).ravel()
    w1 = np.tile(w / (2 * n_sub), n_sub)
    grids = np.meshgrid(*([pts1] * N), indexing="ij")
    wts = functools.reduce(np.multiply.outer, [w1] * N).ravel()
    local = np.stack([g.ravel() for g in grids], axis=1)
    out = np.empty(len(offsets))
    for i, off in enumerate(offsets):
        r = np.linalg.norm((off + local) * h, axis=1)
        out[i] = np.sum(wts * table(r)) / np.sum(wts)
    return out


class LatticeConvolver:
    """Linear (non-periodic) convolution with G_2 on a fixed lattice shape.

    ``apply(f)`` returns ``h^N * sum_j G(x_i - x_j) f_j`` on the same lattice.
    Nodes within one cell of the origin use cell-averaged kernel values.
    """

    def __init__(self, shape, h, N=None):
        shape = tuple(int(s) for s in shape)
        N = len(shape) if N is None else N
        self.shape, self.h, self.dim = shape, float(h), N
        table = kernel_table(N)
        self.fshape = tuple(sfft.next_fast_len(2 * s - 1, real=True) for s in shape)
        ranges = [np.arange(-(s - 1), s) for s in shape]
        grids = np.meshgrid(*ranges, indexing="ij")
        r = np.sqrt(sum((g * self.h) ** 2 for g in grids))
        K = np.empty_like(r)
        near = np.all([np.abs(g) <= 1 for g in grids], axis=0)
        K[~near] = table(r[~near])
        offs = np.stack([g[near] for g in grids], axis=1).astype(float)
        K[near] = _cell_average(table, offs, self.h)
        self.center_value = float(K[tuple(s - 1 for s in shape)])
        # place offset 0 at index 0 with wrap-around for negative offsets
        Kp = np.zeros(self.fshape)
        for idx in np.ndindex(*([2] * N)):
            dst, s = [], []
            for ax, bit in enumerate(idx):
                n = shape[ax]
                if bit == 0:
                    dst.append(slice(0, n))
                    s.append(slice(n - 1, 2 * n - 1))
                else:
                    dst.append(slice(self.fshape[ax] - (n - 1), self.fshape[ax]))
                    s.append(slice(0, n - 1))
            Kp[tuple(dst)] = K[tuple(s)]
        self.kernel_hat = sfft.rfftn(Kp) * self.h ** N

    def apply(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ValueError(f"field shape {f.shape} does not match lattice {self.shape}")
        F = sfft.rfftn(f, s=self.fshape)
        out = sfft.irfftn(F * self.kernel_hat, s=self.fshape)
        return out[tuple(slice(0, s) for s in self.shape)]


@functools.lru_cache(maxsize=8)
def convolver(shape, h):
    return LatticeConvolver(shape, h)
