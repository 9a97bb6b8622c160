"""Output helpers: CSV tables, field dumps, line cuts and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import platform
from pathlib import Path

import numpy as np
import yaml

__all__ = ["write_csv", "dump_field", "load_field", "line_cut", "write_cut", "Manifest"]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path, rows, fields=None):
    """Comma-separated, header row, '.' decimals, UTF-8."""
    rows = list(rows)
    if fields is None:
        fields = []
        for r in rows:
            fields += [k for k in r if k not in fields]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fields})
    return Path(path)


def dump_field(path, values, lattice, name="u"):
    """Raw little-endian float64 (C order) plus a plain-text ``.hdr`` file."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f8")
    arr.tofile(path)
    hdr = path.with_suffix(".hdr")
    lines = [f"name {name}", "dtype float64", "byteorder little", "order C",
             "dims " + " ".join(str(n) for n in arr.shape),
             f"spacing {lattice.spacing!r}",
             "origin " + " ".join(repr(float(o)) for o in lattice.origin)]
    hdr.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path, hdr


def load_field(path):
    path = Path(path)
    meta = {}
    for line in path.with_suffix(".hdr").read_text(encoding="utf-8").splitlines():
        key, _, val = line.partition(" ")
        meta[key] = val
    dims = tuple(int(v) for v in meta["dims"].split())
    data = np.fromfile(path, dtype="<f8").reshape(dims)
    meta["spacing"] = float(meta["spacing"])
    meta["origin"] = tuple(float(v) for v in meta["origin"].split())
    return data, meta


def line_cut(report, start, end, n=200, field_="u"):
    """(distance along the cut, value) samples of a solution field."""
    start, end = np.asarray(start, float), np.asarray(end, float)
    t = np.linspace(0.0, 1.0, n)
    pts = start + t[:, None] * (end - start)
    vals = report.sample(pts, field_)
    return t * np.linalg.norm(end - start), vals


def write_cut(path, s, vals, header=("distance", "value")):
    return write_csv(path, [dict(zip(header, (a, b))) for a, b in zip(s, vals)], list(header))


def _versions():
    import numpy
    import scipy
    import sklearn

    out = {"python": platform.python_version(), "numpy": numpy.__version__,
           "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}
    try:
        import pyamg
        out["pyamg"] = pyamg.__version__
    except ImportError:
        pass
    from . import __version__
    out["capwiener"] = __version__
    return out


class Manifest:
    """Run manifest: config hash, versions, wall time and every output file."""

    def __init__(self, out_dir, command, config_text):
        self.dir = Path(out_dir)
        self.command = command
        self.config_sha256 = hashlib.sha256(config_text.encode()).hexdigest()
        self.files = []

    def add(self, path):
        p = Path(path)
        rel = str(p.relative_to(self.dir)) if p.is_absolute() or str(p).startswith(str(self.dir)) \
            else str(p)
        if rel not in self.files:
            self.files.append(rel)
        return p

    def write(self, status, wall_time, started, extra=None):
        doc = {"command": self.command, "status": status, "config_sha256": self.config_sha256,
               "versions": _versions(), "started": started, "wall_time_s": round(wall_time, 3),
               "files": sorted(self.files)}
        if extra:
            doc.update(extra)
        path = self.dir / "manifest.yaml"
        path.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
        return path
