"""Scenario configuration: YAML files validated into a ScenarioConfig."""
from __future__ import annotations

import copy
import hashlib
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .capacity import critical_exponent
from .geometry import GeometryError, Lattice, SetDescriptor

__all__ = ["ConfigError", "ScenarioConfig", "load_config", "parse_config", "expand_sweep",
           "set_path"]

COMMANDS = ("capacity", "potential", "solve", "wiener", "verify", "sweep")


class ConfigError(ValueError):
    pass


def _lattice_from(spec, F, N):
    """Lattice from an explicit spec, a centered box, or a covering of F."""
    if spec is None:
        raise ConfigError("a 'lattice' section is required")
    try:
        if "extents" in spec:
            return Lattice.from_dict(spec)
        h = float(spec["spacing"])
        if "half_width" in spec:
            center = spec.get("center", [0.0] * N)
            return Lattice.centered(center, float(spec["half_width"]), h)
        lo, hi = (np.asarray(spec["lo"], float), np.asarray(spec["hi"], float)) if "lo" in spec \
            else F.bounds()
        return Lattice.covering(lo, hi, h, margin=float(spec.get("margin", 0.0)))
    except (KeyError, TypeError, GeometryError) as exc:
        raise ConfigError(f"bad lattice spec: {exc}") from exc


def _mirror_from(spec, N):
    if spec is None:
        return None
    if spec == "octant":
        return [(True, False)] * N
    try:
        out = []
        for m in spec:
            out.append((bool(m), False) if isinstance(m, bool) else (bool(m[0]), bool(m[1])))
    except TypeError as exc:
        raise ConfigError("mirror must be 'octant' or a list of [low, high] flags") from exc
    if len(out) != N:
        raise ConfigError("mirror needs one entry per axis")
    return out


@dataclass
class ScenarioConfig:
    raw: dict
    name: str
    N: int
    q: float
    seed: int
    set: SetDescriptor = None
    lattice: Lattice = None
    mirror: list = None
    params: dict = field(default_factory=dict)
    workers: int = 1
    out: str = "out"
    text: str = ""

    @property
    def digest(self):
        return hashlib.sha256(self.text.encode()).hexdigest()

    def section(self, name):
        return dict(self.params.get(name) or {})


def _positive_thresholds(d, path=""):
    for k, v in (d or {}).items():
        key = f"{path}{k}"
        if isinstance(v, dict):
            _positive_thresholds(v, key + ".")
        elif any(t in k for t in ("tol", "spread_max", "threshold", "growth", "bound")):
            if isinstance(v, (int, float)) and not v > 0:
                raise ConfigError(f"threshold {key} must be positive")


def parse_config(raw, text=None, need_lattice=True):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    text = text if text is not None else yaml.safe_dump(raw, sort_keys=True)
    try:
        q = float(raw["q"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("'q' is required and must be a number") from exc
    N = int(raw.get("N", raw.get("set", {}).get("dim", 3)))
    if N not in (1, 2, 3):
        raise ConfigError("N must be 1, 2 or 3")
    if not q > 1:
        raise ConfigError("q must exceed 1")
    qc = critical_exponent(N)
    if N >= 3 and q < qc:
        raise ConfigError(f"q = {q} violates the supercritical assumption q >= N/(N-2) = {qc:.4g}")
    F = None
    if "set" in raw:
        try:
            F = SetDescriptor.from_dict(raw["set"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad set descriptor: {exc}") from exc
        if F.dim != N:
            raise ConfigError("set dimension differs from N")
    lat = None
    if raw.get("lattice") is not None:
        lat = _lattice_from(raw["lattice"], F, N)
    elif need_lattice and F is not None:
        raise ConfigError("a 'lattice' section is required")
    params = {k: v for k, v in raw.items() if k in COMMANDS}
    for sec in params.values():
        _positive_thresholds(sec)
    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    return ScenarioConfig(raw, str(raw.get("name", "scenario")), N, q, int(raw.get("seed", 0)), F,
                          lat, _mirror_from(raw.get("mirror"), N), params, workers,
                          str(raw.get("out", "out")), text)


def load_config(path, need_lattice=True):
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return parse_config(raw, text, need_lattice)


def set_path(d, dotted, value):
    """Assign ``value`` at a dotted key path (list indices allowed)."""
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur[int(k)] if isinstance(cur, list) else cur.setdefault(k, {})
    last = keys[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value


def expand_sweep(raw):
    """Expand the ``sweep`` section into (label, job-config) pairs.

    ``sweep.grid`` maps dotted paths to value lists; the cartesian product is
    taken in sorted-key order. ``sweep.command`` names the per-job command.
    """
    sw = raw.get("sweep") or {}
    grid = sw.get("grid") or {}
    if not grid:
        raise ConfigError("sweep needs a non-empty 'grid'")
    command = sw.get("command")
    if command not in COMMANDS or command == "sweep":
        raise ConfigError("sweep.command must name a non-sweep command")
    keys = sorted(grid)
    jobs = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        job = copy.deepcopy({k: v for k, v in raw.items() if k != "sweep"})
        for k, v in zip(keys, combo):
            set_path(job, k, v)
        label = "_".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, combo))
        jobs.append((label, command, job))
    return jobs
