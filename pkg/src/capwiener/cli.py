"""Command line entry point: ``capwiener <command> --config file.yaml``.

Exit status: 0 on success, 1 on computational failure (outputs so far are
kept next to a FAILED marker), 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .capacity import CapacityError, capacity
from .config import COMMANDS, ConfigError, expand_sweep, load_config, parse_config
from .elliptic import (BracketTooWide, NonConvergence, SolveError, maximal_solution,
                       solve_measure_data)
from .geometry import GeometryError, rasterize
from .io import Manifest, dump_field, line_cut, write_csv, write_cut
from .kernel import kernel_table
from .potential import UnitShellCapacity, capacitary_potential, wiener_classify
from .verify import (FAIL, PASS, SUITES, StudyError, bilateral_ratio_report, measure_data_probe,
                     property_suite, quasi_additivity, ray_samples, wiener_crosscheck)

logger = logging.getLogger("capwiener")

ENV_WORKERS = "CAPWIENER_WORKERS"
ENV_OUT = "CAPWIENER_OUT"


class ComputationFailed(RuntimeError):
    pass


def _need(cfg, what):
    if what == "set" and cfg.set is None:
        raise ConfigError("this command needs a 'set' section")
    if what == "lattice" and cfg.lattice is None:
        raise ConfigError("this command needs a 'lattice' section")


# -- commands --------------------------------------------------------------

def cmd_capacity(cfg, out, man):
    _need(cfg, "set")
    _need(cfg, "lattice")
    p = cfg.section("capacity")
    mask, _ = rasterize(cfg.set, cfg.lattice, check_resolution=p.get("check_resolution", True))
    est = capacity(mask, cfg.q, cfg.lattice.spacing, tol=float(p.get("tol", 1e-3)),
                   max_iter=int(p.get("max_iter", 5000)))
    man.add(write_csv(out / "capacity.csv", [est.as_record(cfg.name)]))
    table = out / f"kernel_table_N{cfg.N}.txt"
    table.write_text(kernel_table(cfg.N).to_text(), encoding="utf-8")
    man.add(table)
    if not est.converged:
        raise ComputationFailed(f"capacity bracket gap {est.gap:.3g} above tolerance")
    return {"value": est.value, "lower": est.dual_lower, "upper": est.primal_upper}


def _points(cfg, p):
    if "points" in p:
        return [np.asarray(x, float) for x in p["points"]]
    s = p.get("samples")
    if not s:
        raise ConfigError("potential needs 'points' or 'samples'")
    return [x for x, _ in ray_samples(cfg.set, s["distances"], int(s.get("rays", 8)), cfg.seed,
                                      s.get("center"), bool(s.get("positive", False)),
                                      min_count=int(s.get("min_count", 0)))]


def cmd_potential(cfg, out, man):
    _need(cfg, "set")
    p = cfg.section("potential")
    eng = UnitShellCapacity(cfg.q, cfg.N, float(p.get("unit_h", 1 / 8)), float(p.get("tol", 1e-2)))
    m_range = tuple(p["m_range"]) if p.get("m_range") else None
    terms, summ = [], []
    for i, x in enumerate(_points(cfg, p)):
        r = capacitary_potential(cfg.set, x, cfg.q, m_range, engine=eng,
                                 with_star=bool(p.get("star", True)), n_jobs=cfg.workers)
        terms += r.rows(i)
        row = r.summary(i)
        row["growth"] = r.divergence_diagnostic
        summ.append(row)
    man.add(write_csv(out / "potential_terms.csv", terms))
    man.add(write_csv(out / "potential_summary.csv", summ))
    return {"points": len(summ)}


def cmd_solve(cfg, out, man):
    _need(cfg, "set")
    _need(cfg, "lattice")
    p = cfg.section("solve")
    mode = p.get("mode", "maximal")
    failure = None
    if mode == "maximal":
        try:
            rep = maximal_solution(cfg.set, cfg.lattice, cfg.q, mirror=cfg.mirror,
                                   outer=p.get("outer", "bracket"), fatten=p.get("fatten"),
                                   ladder=tuple(p.get("ladder", (4, 60))),
                                   inc_tol=float(p.get("inc_tol", 1e-3)),
                                   bracket_tol=float(p.get("bracket_tol", 0.05)))
        except BracketTooWide as exc:
            rep, failure = exc.report, str(exc)
        man.add(write_csv(out / "solve_history.csv",
                          [{"n": n, "increment": inc} for n, inc in rep.history]))
    elif mode == "measure":
        mask, _ = rasterize(cfg.set, cfg.lattice, check_resolution=False, require_cover=False)
        mu = float(p.get("density", 1.0)) * mask
        rep = solve_measure_data(mu, cfg.lattice, cfg.q, mirror=cfg.mirror)
    else:
        raise ConfigError("solve.mode must be 'maximal' or 'measure'")
    man.add(dump_field(out / "u.bin", rep.u, cfg.lattice)[0])
    man.add(out / "u.hdr")
    if rep.u_upper is not None:
        man.add(dump_field(out / "u_upper.bin", rep.u_upper, cfg.lattice, "u_upper")[0])
        man.add(out / "u_upper.hdr")
    for k, cut in enumerate(p.get("cuts", [])):
        s, v = line_cut(rep, cut["start"], cut["end"], int(cut.get("n", 200)))
        man.add(write_cut(out / f"cut_{k}.csv", s, v))
    kr = rep.ko_ratio
    summary = {"residual": rep.residual, "converged": int(rep.converged),
               "newton_steps": rep.newton_steps, "u_max": float(np.max(rep.u)),
               "ko_ratio_max": float(np.nanmax(kr)) if kr is not None else "",
               "bracket_width": "" if rep.bracket_width is None else rep.bracket_width}
    man.add(write_csv(out / "solve_summary.csv", [summary]))
    if failure:
        raise ComputationFailed(failure)
    if not rep.converged:
        raise ComputationFailed("Newton iteration did not converge")
    return summary


def cmd_wiener(cfg, out, man):
    _need(cfg, "set")
    p = cfg.section("wiener")
    if "point" not in p:
        raise ConfigError("wiener needs a 'point' on the set")
    y = np.asarray(p["point"], float)
    kw = dict(unit_h=float(p.get("unit_h", 1 / 8)), tol=float(p.get("tol", 1e-2)))
    if p.get("crosscheck"):
        _need(cfg, "lattice")
        cc = wiener_crosscheck(cfg.set, y, cfg.q, cfg.lattice, p["direction"],
                               distances=p.get("distances"), mirror=cfg.mirror,
                               depth=int(p.get("depth", 10)), scenario=cfg.name,
                               allow_undecided=bool(p.get("allow_undecided", False)), **kw)
        rows = [{"m": i, "term": t} for i, t in enumerate(cc.terms)]
        man.add(write_csv(out / "wiener_crosscheck.csv", [cc.row()]))
        man.add(write_csv(out / "wiener_approach.csv",
                          [{"distance": d, "U": u} for d, u in zip(cc.distances, cc.U)]))
        label = cc.classification
        _report(out, man, [f"{cc.verdict} wiener-crosscheck {cfg.name}: {cc.classification}"])
    else:
        wc = wiener_classify(cfg.set, y, cfg.q, depth=int(p.get("depth", 10)),
                             m_start=p.get("m_start"), **kw)
        rows = wc.report.rows()
        label = wc.classification
    man.add(write_csv(out / "wiener_terms.csv", rows))
    man.add(write_csv(out / "wiener_summary.csv", [{"scenario": cfg.name, "classification": label}]))
    return {"classification": label}


def _report(out, man, lines):
    path = out / "report.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    man.add(path)
    for line in lines:
        print(line)


def cmd_verify(cfg, out, man):
    p = cfg.section("verify")
    mode = p.get("mode", "bilateral")
    lines = []
    if mode == "bilateral":
        _need(cfg, "set")
        _need(cfg, "lattice")
        s = p.get("samples") or {}
        pts = ray_samples(cfg.set, s.get("distances", [0.25, 0.125, 0.0625]),
                          int(s.get("rays", 17)), cfg.seed, s.get("center"),
                          bool(s.get("positive", cfg.mirror is not None)),
                          min_count=int(s.get("min_count", 50)))
        st = bilateral_ratio_report(cfg.set, cfg.q, cfg.lattice, pts, mirror=cfg.mirror,
                                    unit_h=float(p.get("unit_h", 1 / 8)),
                                    tol=float(p.get("tol", 1e-2)),
                                    refine=bool(p.get("refine", True)),
                                    unit_refine=float(p.get("unit_refine", 1.5)),
                                    spread_max=float(p.get("spread_max", 4.0)),
                                    refine_tol=float(p.get("refine_tol", 0.2)),
                                    scenario=cfg.name, min_samples=int(p.get("min_samples", 1)))
        rows = st.rows() + (st.refined.rows() if st.refined else [])
        man.add(write_csv(out / "ratio_samples.csv", rows))
        man.add(write_csv(out / "ratio_summary.csv", [st.summary()]))
        lines.append(f"{st.verdict} bilateral {cfg.name}: spread {st.spread:.4g}"
                     + (f", refined {st.refined.spread:.4g}" if st.refined else ""))
        return_val = st.summary()
    elif mode == "suites":
        names = p.get("suites", sorted(SUITES))
        rows = []
        for name in names:
            r = property_suite(name, seed=cfg.seed)
            rows.append(r.row())
            lines.append(f"{PASS if r.passed else FAIL} suite {name}: {r.violations} violations"
                         f" in {r.cases} cases")
        man.add(write_csv(out / "suites.csv", rows))
        if p.get("quasi_additivity", True):
            qa = quasi_additivity(cfg.q)
            man.add(write_csv(out / "quasi_additivity.csv", qa))
            ok = all(r["delta"] <= 0.3 for r in qa)
            lines.append(f"{PASS if ok else FAIL} quasi-additivity: max delta "
                         f"{max(r['delta'] for r in qa):.3g}")
        return_val = {"suites": len(names)}
    elif mode == "measure":
        _need(cfg, "set")
        _need(cfg, "lattice")
        mp = measure_data_probe(cfg.set, cfg.lattice, cfg.q, mirror=cfg.mirror,
                                n_random=int(p.get("n_random", 20)), seed=cfg.seed)
        man.add(write_csv(out / "measure_ladder.csv",
                          [{"n": n, "min_fraction": f, "max_excess": e} for n, f, e in mp.ladder]))
        lines.append(f"{PASS if mp.passed else FAIL} measure-probe {cfg.name}: max excess "
                     f"{mp.max_excess:.3g}, ladder reaches {mp.reached:.3g} of U_F")
        return_val = {"max_excess": mp.max_excess, "reached": mp.reached}
    else:
        raise ConfigError("verify.mode must be 'bilateral', 'suites' or 'measure'")
    _report(out, man, lines)
    return return_val


def _sweep_job(args):
    label, command, raw, out, workers = args
    job_out = Path(out) / label
    code = run_config(command, parse_config(raw), job_out, workers=1)
    return label, code


def cmd_sweep(cfg, out, man):
    jobs = expand_sweep(cfg.raw)
    for _, command, raw in jobs:
        parse_config(raw)  # fail fast on bad expansions
    args = [(label, command, raw, str(out), 1) for label, command, raw in jobs]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_sweep_job, args))
    else:
        results = [_sweep_job(a) for a in args]
    rows = []
    for label, code in results:
        row = {"job": label, "exit": code}
        summ = Path(out) / label / SUMMARY_FILES[jobs[0][1]]
        if summ.exists() and summ.suffix == ".csv":
            with open(summ, encoding="utf-8") as fh:
                head, first = fh.readline().strip().split(","), fh.readline().strip().split(",")
            row.update(dict(zip(head, first)))
        rows.append(row)
        man.add(Path(out) / label / "manifest.yaml")
    man.add(write_csv(out / "sweep_summary.csv", rows))
    if any(code == 1 for _, code in results):
        raise ComputationFailed("at least one sweep job failed")
    return {"jobs": len(rows)}


SUMMARY_FILES = {"capacity": "capacity.csv", "potential": "potential_summary.csv",
                 "solve": "solve_summary.csv", "wiener": "wiener_summary.csv",
                 "verify": "report.txt", "sweep": "sweep_summary.csv"}

HANDLERS = {"capacity": cmd_capacity, "potential": cmd_potential, "solve": cmd_solve,
            "wiener": cmd_wiener, "verify": cmd_verify, "sweep": cmd_sweep}


# -- driver ----------------------------------------------------------------

def run_config(command, cfg, out, workers=None):
    """Execute ``command`` for a parsed config; returns the exit status."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if workers is not None:
        cfg.workers = workers
    man = Manifest(out, command, cfg.text)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()
    try:
        result = HANDLERS[command](cfg, out, man)
        man.write("ok", time.perf_counter() - t0, started, {"result": _plain(result)})
        return 0
    except (ConfigError, GeometryError, CapacityError) as exc:
        # invalid inputs discovered while building the scenario
        print(f"config error: {exc}", file=sys.stderr)
        man.write("config-error", time.perf_counter() - t0, started, {"error": str(exc)})
        return 2
    except (ComputationFailed, NonConvergence, SolveError, StudyError, RuntimeError) as exc:
        failed.write_text(f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}",
                          encoding="utf-8")
        man.add(failed)
        man.write("failed", time.perf_counter() - t0, started, {"error": str(exc)})
        print(f"failed: {exc}", file=sys.stderr)
        return 1


def _plain(d):
    out = {}
    for k, v in (d or {}).items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        out[k] = v
    return out


def build_parser():
    ap = argparse.ArgumentParser(prog="capwiener",
                                 description="Bessel capacities, capacitary potentials and "
                                             "maximal solutions of -Δu + u^q = 0.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="scenario YAML file")
        sp.add_argument("--workers", type=int, default=None, help="worker processes")
        sp.add_argument("--out", default=None, help="output directory")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, need_lattice=args.command in ("capacity", "solve"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    workers = args.workers or int(os.environ.get(ENV_WORKERS, 0)) or cfg.workers
    out = args.out or os.environ.get(ENV_OUT) or cfg.out
    return run_config(args.command, cfg, out, workers)


if __name__ == "__main__":
    sys.exit(main())
