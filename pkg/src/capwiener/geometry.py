"""Compact sets, lattices, rasterization and dyadic shell decomposition.

Sets are described analytically by :class:`SetDescriptor` so they can be
re-rasterized at any resolution. Distances are exact for every supported
kind; Cantor-type sets use the product structure of their boxes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml
from scipy.spatial import cKDTree

__all__ = [
    "GeometryError",
    "LatticeTooCoarse",
    "EmptyResult",
    "DegenerateRange",
    "SetDescriptor",
    "Lattice",
    "ShellDecomposition",
    "rasterize",
    "shell_decompose",
    "rescale_to_unit",
    "default_m_range",
]

KINDS = ("empty", "points", "ball", "segment", "box", "cantor", "complement", "union")


class GeometryError(ValueError):
    pass


class LatticeTooCoarse(GeometryError):
    pass


class EmptyResult(GeometryError):
    pass


class DegenerateRange(GeometryError):
    pass


def _cantor_intervals(ratio, depth, lo, hi):
    """Endpoints of the 2**depth intervals of a Cantor construction on [lo, hi]."""
    a = np.array([0.0])
    side = 1.0
    for _ in range(depth):
        side_new = side * ratio
        a = np.concatenate([a, a + side - side_new])
        side = side_new
    a.sort()
    L = hi - lo
    return lo + L * a, lo + L * (a + side)


def _dist_to_intervals(t, starts, ends):
    """Distance from each value in ``t`` to a union of sorted disjoint intervals."""
    idx = np.searchsorted(starts, t, side="right") - 1
    d = np.full(t.shape, np.inf)
    left = idx >= 0
    # interval starting at or before t
    il = np.clip(idx, 0, len(starts) - 1)
    dl = np.where(t <= ends[il], 0.0, t - ends[il])
    d = np.where(left, dl, d)
    ir = np.clip(idx + 1, 0, len(starts) - 1)
    dr = np.where(idx + 1 < len(starts), np.maximum(starts[ir] - t, 0.0), np.inf)
    return np.minimum(d, dr)


@dataclass(frozen=True, eq=False)
class SetDescriptor:
    """Analytic description of a compact subset of R^N.

    Use the classmethod constructors rather than building instances by hand.
    ``params`` holds the constructor arguments; ``parts`` is used by
    ``union`` and ``complement``.
    """

    kind: str
    dim: int
    params: dict = field(default_factory=dict)
    parts: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeometryError(f"unknown set kind {self.kind!r}")
        if self.dim < 1:
            raise GeometryError("dim must be positive")

    # -- constructors -----------------------------------------------------
    @classmethod
    def empty(cls, dim):
        return cls("empty", dim)

    @classmethod
    def points(cls, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[0] == 0:
            return cls.empty(pts.shape[1])
        return cls("points", pts.shape[1], {"points": pts})

    @classmethod
    def ball(cls, center, radius):
        c = np.asarray(center, dtype=float).ravel()
        if radius < 0:
            raise GeometryError("radius must be nonnegative")
        return cls("ball", c.size, {"center": c, "radius": float(radius)})

    @classmethod
    def segment(cls, a, b):
        a = np.asarray(a, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        if a.shape != b.shape:
            raise GeometryError("segment endpoints differ in dimension")
        return cls("segment", a.size, {"a": a, "b": b})

    @classmethod
    def box(cls, lo, hi):
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(hi < lo):
            raise GeometryError("box needs lo <= hi componentwise")
        return cls("box", lo.size, {"lo": lo, "hi": hi})

    @classmethod
    def cantor(cls, ratio, depth, lo, hi, axes=(0,)):
        """Cantor construction along ``axes`` of the box [lo, hi].

        Along each fractal axis the interval [lo_i, hi_i] is replaced by the
        depth-``depth`` Cantor set with contraction ``ratio``; along the other
        axes the set spans [lo_i, hi_i] (a single value when lo_i == hi_i).
        """
        if not 0.0 < ratio < 0.5:
            raise GeometryError("cantor ratio must lie in (0, 1/2)")
        if depth < 0:
            raise GeometryError("cantor depth must be >= 0")
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        axes = tuple(sorted(int(a) for a in axes))
        if not axes or axes[-1] >= lo.size or axes[0] < 0:
            raise GeometryError("invalid fractal axes")
        if np.any(hi < lo) or np.any(hi[list(axes)] <= lo[list(axes)]):
            raise GeometryError("cantor box must have positive extent on fractal axes")
        return cls("cantor", lo.size, {"ratio": float(ratio), "depth": int(depth),
                                       "lo": lo, "hi": hi, "axes": axes})

    @classmethod
    def complement(cls, inner, lo, hi):
        """Closed set box[lo, hi] minus the interior of ``inner`` (ball or box)."""
        if inner.kind not in ("ball", "box"):
            raise GeometryError("complement supports ball or box interiors only")
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        return cls("complement", inner.dim, {"lo": lo, "hi": hi}, (inner,))

    @classmethod
    def union(cls, *parts):
        parts = tuple(p for p in parts if p.kind != "empty")
        if not parts:
            raise GeometryError("union needs at least one non-empty part")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise GeometryError("union parts differ in dimension")
        if len(parts) == 1:
            return parts[0]
        return cls("union", dims.pop(), {}, parts)

    # -- geometry ---------------------------------------------------------
    @property
    def is_empty(self):
        return self.kind == "empty"

    def cantor_boxes(self):
        """(lo, hi) arrays of shape (n_boxes, dim) for a cantor set."""
        p = self.params
        per_axis = []
        for i in range(self.dim):
            if i in p["axes"]:
                s, e = _cantor_intervals(p["ratio"], p["depth"], p["lo"][i], p["hi"][i])
            else:
                s, e = np.array([p["lo"][i]]), np.array([p["hi"][i]])
            per_axis.append((s, e))
        grids_s = np.meshgrid(*[s for s, _ in per_axis], indexing="ij")
        grids_e = np.meshgrid(*[e for _, e in per_axis], indexing="ij")
        lo = np.stack([g.ravel() for g in grids_s], axis=1)
        hi = np.stack([g.ravel() for g in grids_e], axis=1)
        return lo, hi

    def n_boxes(self):
        if self.kind != "cantor":
            raise GeometryError("n_boxes is defined for cantor sets")
        return 2 ** (self.params["depth"] * len(self.params["axes"]))

    def bounds(self):
        """Axis-aligned bounding box (lo, hi)."""
        k, p = self.kind, self.params
        if k == "empty":
            raise EmptyResult("empty set has no bounding box")
        if k == "points":
            return p["points"].min(axis=0), p["points"].max(axis=0)
        if k == "ball":
            return p["center"] - p["radius"], p["center"] + p["radius"]
        if k == "segment":
            return np.minimum(p["a"], p["b"]), np.maximum(p["a"], p["b"])
        if k in ("box", "cantor", "complement"):
            return p["lo"].copy(), p["hi"].copy()
        los, his = zip(*(q.bounds() for q in self.parts))
        return np.min(los, axis=0), np.max(his, axis=0)

    def diameter(self):
        lo, hi = self.bounds()
        if self.kind == "ball":
            return 2.0 * self.params["radius"]
        return float(np.linalg.norm(hi - lo))

    def min_feature(self):
        """Smallest resolvable feature size, or None for sets handled by thickening."""
        k, p = self.kind, self.params
        if k == "ball":
            return 2.0 * p["radius"]
        if k == "cantor":
            ax = list(p["axes"])
            return float(np.min(p["hi"][ax] - p["lo"][ax]) * p["ratio"] ** p["depth"])
        if k == "union":
            feats = [q.min_feature() for q in self.parts]
            feats = [f for f in feats if f is not None]
            return min(feats) if feats else None
        return None

    def distance(self, x):
        """Euclidean distance from each row of ``x`` (shape (M, dim)) to the set."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise GeometryError(f"points have dimension {x.shape[1]}, set has {self.dim}")
        k, p = self.kind, self.params
        if k == "empty":
            return np.full(x.shape[0], np.inf)
        if k == "points":
            d, _ = cKDTree(p["points"]).query(x)
            return np.asarray(d, dtype=float)
        if k == "ball":
            return np.maximum(np.linalg.norm(x - p["center"], axis=1) - p["radius"], 0.0)
        if k == "segment":
            a, b = p["a"], p["b"]
            ab = b - a
            L2 = float(ab @ ab)
            t = np.zeros(x.shape[0]) if L2 == 0 else np.clip((x - a) @ ab / L2, 0.0, 1.0)
            return np.linalg.norm(x - (a + t[:, None] * ab), axis=1)
        if k == "box":
            gap = np.maximum(np.maximum(p["lo"] - x, x - p["hi"]), 0.0)
            return np.linalg.norm(gap, axis=1)
        if k == "cantor":
            d2 = np.zeros(x.shape[0])
            for i in range(self.dim):
                if i in p["axes"]:
                    s, e = _cantor_intervals(p["ratio"], p["depth"], p["lo"][i], p["hi"][i])
                    di = _dist_to_intervals(x[:, i], s, e)
                else:
                    di = np.maximum(np.maximum(p["lo"][i] - x[:, i], x[:, i] - p["hi"][i]), 0.0)
                d2 += di * di
            return np.sqrt(d2)
        if k == "complement":
            outer = SetDescriptor.box(p["lo"], p["hi"]).distance(x)
            inner = self.parts[0]
            if inner.kind == "ball":
                depth = inner.params["radius"] - np.linalg.norm(x - inner.params["center"], axis=1)
            else:
                ip = inner.params
                depth = np.min(np.minimum(x - ip["lo"], ip["hi"] - x), axis=1)
            return np.where(outer > 0, outer, np.maximum(depth, 0.0))
        return np.min([q.distance(x) for q in self.parts], axis=0)

    def contains(self, x, tol=0.0):
        return self.distance(x) <= tol

    # -- transforms -------------------------------------------------------
    def dilate(self, factor, about):
        """Image of the set under y -> about + factor * (y - about)."""
        about = np.asarray(about, dtype=float).ravel()
        f = float(factor)
        if f <= 0:
            raise GeometryError("dilation factor must be positive")
        k, p = self.kind, self.params

        def tr(v):
            return about + f * (np.asarray(v) - about)

        if k == "empty":
            return self
        if k == "points":
            return SetDescriptor.points(tr(p["points"]))
        if k == "ball":
            return SetDescriptor.ball(tr(p["center"]), f * p["radius"])
        if k == "segment":
            return SetDescriptor.segment(tr(p["a"]), tr(p["b"]))
        if k == "box":
            return SetDescriptor.box(tr(p["lo"]), tr(p["hi"]))
        if k == "cantor":
            return SetDescriptor.cantor(p["ratio"], p["depth"], tr(p["lo"]), tr(p["hi"]), p["axes"])
        if k == "complement":
            return SetDescriptor.complement(self.parts[0].dilate(f, about), tr(p["lo"]), tr(p["hi"]))
        return SetDescriptor.union(*(q.dilate(f, about) for q in self.parts))

    # -- serialization ----------------------------------------------------
    def to_dict(self):
        out = {"kind": self.kind, "dim": self.dim}
        for key, val in self.params.items():
            out[key] = val.tolist() if isinstance(val, np.ndarray) else (
                list(val) if isinstance(val, tuple) else val)
        if self.parts:
            out["parts"] = [q.to_dict() for q in self.parts]
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind")
        dim = d.pop("dim", None)
        if kind == "empty":
            return cls.empty(int(dim))
        if kind == "points":
            return cls.points(d["points"])
        if kind == "ball":
            return cls.ball(d["center"], d["radius"])
        if kind == "segment":
            return cls.segment(d["a"], d["b"])
        if kind == "box":
            return cls.box(d["lo"], d["hi"])
        if kind == "cantor":
            return cls.cantor(d["ratio"], d["depth"], d["lo"], d["hi"], d.get("axes", (0,)))
        if kind == "complement":
            return cls.complement(cls.from_dict(d["parts"][0]), d["lo"], d["hi"])
        if kind == "union":
            return cls.union(*(cls.from_dict(q) for q in d["parts"]))
        raise GeometryError(f"unknown set kind {kind!r}")

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(yaml.safe_load(text))


@dataclass(frozen=True)
class Lattice:
    """Uniform grid of nodes ``origin + i * spacing``; nodes play the role of cells."""

    origin: tuple
    spacing: float
    extents: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(o) for o in np.ravel(self.origin)))
        object.__setattr__(self, "extents", tuple(int(e) for e in np.ravel(self.extents)))
        if len(self.origin) != len(self.extents):
            raise GeometryError("origin and extents differ in dimension")
        if self.dim not in (1, 2, 3):
            raise GeometryError("lattice dimension must be 1, 2 or 3")
        if not self.spacing > 0:
            raise GeometryError("spacing must be positive")
        if min(self.extents) < 8:
            raise GeometryError("lattice needs at least 8 cells per axis")

    @classmethod
    def covering(cls, lo, hi, spacing, margin=0.0):
        """Smallest lattice with the given spacing covering [lo - margin, hi + margin]."""
        lo = np.asarray(lo, dtype=float) - margin
        hi = np.asarray(hi, dtype=float) + margin
        n = np.maximum(np.ceil((hi - lo) / spacing - 1e-9).astype(int) + 1, 8)
        center = 0.5 * (lo + hi)
        origin = center - 0.5 * (n - 1) * spacing
        return cls(tuple(origin), float(spacing), tuple(n))

    @classmethod
    def centered(cls, center, half_width, spacing):
        """Symmetric lattice around ``center`` with a node exactly at the center."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        k = max(int(np.ceil(half_width / spacing - 1e-9)), 4)
        n = 2 * k + 1
        return cls(tuple(center - k * spacing), float(spacing), (n,) * center.size)

    @property
    def dim(self):
        return len(self.extents)

    @property
    def shape(self):
        return self.extents

    @property
    def size(self):
        return int(np.prod(self.extents))

    @property
    def h(self):
        return self.spacing

    @property
    def upper(self):
        return np.asarray(self.origin) + (np.asarray(self.extents) - 1) * self.spacing

    def axes(self):
        return [o + self.spacing * np.arange(n) for o, n in zip(self.origin, self.extents)]

    def points(self):
        """Node coordinates, shape (size, dim), C order."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def index_of(self, x):
        """Nearest node multi-index for each row of ``x``."""
        x = np.atleast_2d(x)
        idx = np.rint((x - np.asarray(self.origin)) / self.spacing).astype(int)
        return np.clip(idx, 0, np.asarray(self.extents) - 1)

    def covers(self, lo, hi, margin=0.0):
        return bool(np.all(np.asarray(self.origin) <= np.asarray(lo) - margin + 1e-12)
                    and np.all(self.upper >= np.asarray(hi) + margin - 1e-12))

    def refined(self, factor=2):
        """Same physical box with spacing divided by ``factor``."""
        n = tuple((e - 1) * factor + 1 for e in self.extents)
        return Lattice(self.origin, self.spacing / factor, n)

    def to_dict(self):
        return {"origin": list(self.origin), "spacing": self.spacing, "extents": list(self.extents)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["origin"]), float(d["spacing"]), tuple(d["extents"]))


def rasterize(descriptor, lattice, check_resolution=True, require_cover=True):
    """Rasterize ``descriptor`` on ``lattice``.

    Returns ``(mask, dist)`` arrays of the lattice shape. ``mask`` marks nodes
    within h/2 of the set and ``dist`` is the exact distance to the set.
    """
    if descriptor.dim != lattice.dim:
        raise GeometryError("descriptor and lattice dimensions differ")
    if descriptor.is_empty:
        raise EmptyResult("cannot rasterize the empty set")
    h = lattice.spacing
    if check_resolution:
        feat = descriptor.min_feature()
        if feat is not None and feat < 2 * h:
            raise LatticeTooCoarse(f"smallest feature {feat:.3g} is below 2h = {2 * h:.3g}")
    if require_cover:
        lo, hi = descriptor.bounds()
        if not lattice.covers(lo, hi, margin=2 * h):
            raise GeometryError("lattice does not cover the set with a 2h margin")
    dist = descriptor.distance(lattice.points()).reshape(lattice.shape)
    mask = dist <= 0.5 * h + 1e-12 * h
    return mask, dist


def default_m_range(F, x, h):
    """Default (m_min, m_max) for shells about ``x`` on a grid of spacing ``h``."""
    lo, hi = F.bounds()
    center = 0.5 * (lo + hi)
    reach = F.diameter() + float(np.linalg.norm(np.asarray(x, dtype=float) - center))
    m_min = int(np.floor(-np.log2(max(reach, 1e-300))))
    m_max = int(np.floor(-np.log2(2 * h))) + 1
    return m_min, m_max


@dataclass(frozen=True, eq=False)
class ShellDecomposition:
    """Dyadic shells F_m(x) = F ∩ {2^-(m+1) <= |y - x| <= 2^-m}."""

    F: SetDescriptor
    center: np.ndarray
    ms: tuple
    nonempty: tuple
    M: Optional[int]
    lattice: Optional[Lattice] = None
    mask: Optional[np.ndarray] = None
    dist_to_center: Optional[np.ndarray] = None

    def is_nonempty(self, m):
        return self.nonempty[self.ms.index(m)]

    def piece(self, m):
        """Boolean lattice mask of the rasterized piece F_m(x)."""
        r = self.dist_to_center
        tol = 0.5 * self.lattice.spacing
        return self.mask & (r >= 2.0 ** (-m - 1) - tol) & (r <= 2.0 ** (-m) + tol)

    def star_piece(self, m):
        """Boolean lattice mask of F*_m(x) = F ∩ closed ball of radius 2^-m."""
        return self.mask & (self.dist_to_center <= 2.0 ** (-m) + 0.5 * self.lattice.spacing)


def _annulus_hits(F, x, r_in, r_out, lattice=None):
    """Whether F meets the closed annulus r_in <= |y - x| <= r_out."""
    if F.is_empty:
        return False
    d = float(F.distance(x[None, :])[0])
    if d > r_out:
        return False
    if d >= r_in:
        return True
    # the set comes closer than r_in; it meets the annulus iff it has points
    # at distance >= r_in (connected pieces) or isolated far points
    return _max_reach_at_least(F, x, r_in, r_out)


def _max_reach_at_least(F, x, r_in, r_out):
    k, p = F.kind, F.params
    if k == "points":
        r = np.linalg.norm(p["points"] - x, axis=1)
        return bool(np.any((r >= r_in) & (r <= r_out)))
    if k == "union":
        return any(_annulus_hits(q, x, r_in, r_out) for q in F.parts)
    if k == "cantor":
        lo, hi = F.cantor_boxes()
        far = np.linalg.norm(np.maximum(np.abs(lo - x), np.abs(hi - x)), axis=1)
        near = np.linalg.norm(np.maximum(np.maximum(lo - x, x - hi), 0.0), axis=1)
        return bool(np.any((far >= r_in) & (near <= r_out)))
    if k == "ball":
        return np.linalg.norm(p["center"] - x) + p["radius"] >= r_in
    if k == "segment":
        return max(np.linalg.norm(p["a"] - x), np.linalg.norm(p["b"] - x)) >= r_in
    if k in ("box", "complement"):
        far = np.linalg.norm(np.maximum(np.abs(p["lo"] - x), np.abs(p["hi"] - x)))
        return far >= r_in
    return False


def shell_decompose(F, x, m_min, m_max, lattice=None):
    """Dyadic shell decomposition of ``F`` about ``x`` for m in [m_min, m_max].

    Emptiness of each F_m(x) is decided analytically. When ``lattice`` is
    given the set is rasterized on it and pieces are exposed as masks.
    ``M`` is the largest m in range with a nonempty shell (None if none).
    """
    x = np.asarray(x, dtype=float).ravel()
    if m_min > m_max:
        raise DegenerateRange("m_min must not exceed m_max")
    ms = tuple(range(int(m_min), int(m_max) + 1))
    flags = tuple(_annulus_hits(F, x, 2.0 ** (-m - 1), 2.0 ** (-m)) for m in ms)
    nonempty_ms = [m for m, f in zip(ms, flags) if f]
    M = max(nonempty_ms) if nonempty_ms else None
    mask = r = None
    if lattice is not None:
        if 2.0 ** (-m_max) < lattice.spacing and 2.0 ** (-m_min) < lattice.spacing:
            raise DegenerateRange("no shell is resolved by the lattice")
        mask, _ = rasterize(F, lattice, check_resolution=False, require_cover=False)
        r = np.linalg.norm(lattice.points() - x, axis=1).reshape(lattice.shape)
    return ShellDecomposition(F, x, ms, flags, M, lattice, mask, r)


def rescale_to_unit(F, x, m, star=False):
    """Descriptor of 2^m (F - x) + x; the shell F_m(x) lands in the unit annulus.

    The returned set is the dilation of the *whole* set; restricting to the
    unit annulus (or the unit ball when ``star``) is done at rasterization
    time by :func:`unit_piece_mask`.
    """
    if F.is_empty:
        return F
    return F.dilate(2.0 ** m, x)


def unit_piece_mask(F, x, m, lattice, star=False):
    """Mask of 2^m F_m(x) (or 2^m F*_m(x)) on a lattice centered at ``x``.

    Nodes are kept when within h/2 of the dilated set and inside the closed
    unit annulus (unit ball for ``star``), with an h/2 tolerance on radii.
    """
    G = rescale_to_unit(F, x, m)
    if G.is_empty:
        return np.zeros(lattice.shape, dtype=bool)
    h = lattice.spacing
    pts = lattice.points()
    r = np.linalg.norm(pts - np.asarray(x, dtype=float), axis=1)
    keep = r <= 1.0 + 0.5 * h
    if not star:
        keep &= r >= 0.5 - 0.5 * h
    mask = np.zeros(pts.shape[0], dtype=bool)
    if np.any(keep):
        mask[keep] = G.distance(pts[keep]) <= 0.5 * h * (1 + 1e-12)
    return mask.reshape(lattice.shape)
