"""Command-line runner.

    wiener4nls validate  [--criteria 1,2,3]
    wiener4nls simulate  [flags]            one randomized sample, z and v norms over the window
    wiener4nls ensemble  --study NAME       Monte Carlo study, CSV curve + JSON report
    wiener4nls norms     --schedule S0      exponent-schedule table of S(t) phi^omega
    wiener4nls scaling   --dim 4            dilation sweep

Exit codes: 0 success, 1 configuration error, 2 acceptance failure, 3 runtime failure.
Every run writes its result files and then manifest.json, each through a temporary
file and an atomic rename; a failed run removes what it wrote.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .config import COMMANDS, STUDIES, ConfigError, RunConfig, build_config, load_config_file
from .evolution import critical_index, dominant_frequency, no_wrap_ok, solve_perturbed
from .experiments import (EnsembleSpec, StrichartzEntry, contraction_study, dilation_study, good_set_probability,
                          hs_tail_study, khintchine_study, randomized_sample, scattering_study, smoothing_study,
                          strichartz_tail_study)
from .norms import LinearTrajectory, make_schedule, schedule_rows, sobolev_norm

log = logging.getLogger("wiener4nls")

EXIT_OK, EXIT_CONFIG, EXIT_ACCEPTANCE, EXIT_RUNTIME = 0, 1, 2, 3
MANIFEST = "manifest.json"


# ------------------------------------------------------------------ output


class OutputWriter:
    """Single writer for one run directory: atomic files, digests, cleanup on failure."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: List[dict] = []

    def _atomic(self, name: str, payload: bytes) -> Path:
        target = self.dir / name
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.dir)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return target

    def write(self, name: str, payload: bytes) -> None:
        self._atomic(name, payload)
        self.files.append({"path": name, "sha256": hashlib.sha256(payload).hexdigest(), "bytes": len(payload)})

    def write_json(self, name: str, obj) -> None:
        self.write(name, (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode())

    def write_csv(self, name: str, rows: Sequence[dict], columns: Sequence[str]) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])
        self.write(name, buf.getvalue().encode())

    def write_manifest(self, manifest: dict) -> None:
        manifest = dict(manifest, files=list(self.files))
        self._atomic(MANIFEST, (json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n").encode())

    def discard(self) -> None:
        for f in self.files:
            p = self.dir / f["path"]
            if p.exists():
                p.unlink()
        stale = self.dir / MANIFEST
        if stale.exists():
            stale.unlink()
        self.files = []


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, Fraction):
        return str(obj)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def result_digests(directory) -> Dict[str, str]:
    """{file: sha256} of the result files listed in a run manifest, re-hashed from disk."""
    d = Path(directory)
    manifest = json.loads((d / MANIFEST).read_text())
    return {f["path"]: hashlib.sha256((d / f["path"]).read_bytes()).hexdigest() for f in manifest["files"]}


def verify_manifest(directory) -> bool:
    d = Path(directory)
    manifest = json.loads((d / MANIFEST).read_text())
    return all((d / f["path"]).exists() and hashlib.sha256((d / f["path"]).read_bytes()).hexdigest() == f["sha256"]
               for f in manifest["files"])


# ------------------------------------------------------------------ commands


def _ensemble_spec(cfg: RunConfig) -> EnsembleSpec:
    return EnsembleSpec(samples=max(cfg.samples, 2), seed=cfg.seed, data=cfg.sobolev_spec(), d=cfg.dim, n=cfg.grid,
                        L=cfg.half_width, law=cfg.law(), evolution=cfg.evolution(), data_file=cfg.data_file)


def _fit_rows(fit) -> List[dict]:
    return fit.curve_rows()


def cmd_validate(cfg: RunConfig, out: OutputWriter) -> int:
    from .acceptance import run_acceptance

    results = run_acceptance(cfg.criteria, echo=print)
    rows = [{"criterion": r.number, "name": r.name, "passed": r.passed, "seconds": r.seconds} for r in results]
    out.write_csv("acceptance.csv", rows, ["criterion", "name", "passed", "seconds"])
    out.write_json("acceptance.json", {"results": [
        {"criterion": r.number, "name": r.name, "passed": r.passed, "detail": r.detail} for r in results]})
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


def cmd_simulate(cfg: RunConfig, out: OutputWriter) -> int:
    spec = _ensemble_spec(cfg)
    phi = randomized_sample(spec, cfg.sample)
    evo = cfg.evolution()
    sc = critical_index(cfg.dim)
    z = LinearTrajectory(phi.grid, evo.times(), phi.data, evo.phase_sign)
    rows = [{"t": float(t), "z_hs": sobolev_norm(z.field(m), cfg.s), "z_l2": z.field(m).l2_norm()}
            for m, t in enumerate(z.times)]
    columns = ["t", "z_hs", "z_l2"]
    report = {"sample": cfg.sample, "phi_hs": sobolev_norm(phi, cfg.s)}
    if cfg.nonlinear:
        v, diag, _ = solve_perturbed(phi, evo)
        for m, row in enumerate(rows):
            row["v_hsc"] = sobolev_norm(v.field(m), sc)
            row["u_l2"] = (z.field(m) + v.field(m)).l2_norm()
        columns += ["v_hsc", "u_l2"]
        report["diagnostics"] = diag.to_json()
    out.write_csv("trajectory.csv", rows, columns)
    out.write_json("simulate.json", report)
    return EXIT_OK


def cmd_ensemble(cfg: RunConfig, out: OutputWriter) -> int:
    spec = _ensemble_spec(cfg)
    study = cfg.study
    if study == "hs-tail":
        rep = hs_tail_study(spec, cfg.s, workers=cfg.workers)
        out.write_csv("tail.csv", _fit_rows(rep["fit"]), ["lambda", "p", "lo", "hi"])
        out.write_json("report.json", {"study": study, "fit": rep["fit"], "excluded": rep["excluded"],
                                       "homogeneity_error": rep["homogeneity_error"]})
    elif study == "strichartz-tail":
        entries = _strichartz_entries(cfg.dim)
        rep = strichartz_tail_study(spec, entries, s=0.0, workers=cfg.workers)
        rows = [dict(r, entry=k) for k, fit in rep["fits"].items() for r in fit.curve_rows()]
        out.write_csv("tail.csv", rows, ["entry", "lambda", "p", "lo", "hi"])
        out.write_json("report.json", {"study": study, "fits": rep["fits"], "no_wrap": rep["no_wrap"],
                                       "xi_dom": rep["xi_dom"], "excluded": rep["excluded"]})
    elif study == "good-set":
        rep = good_set_probability(spec, None, cfg.good_set, cfg.s, cfg.delta, workers=cfg.workers)
        rows = [{"R": r, "complement": c} for r, c in zip(rep["R"], rep["complement"])]
        out.write_csv("good_set.csv", rows, ["R", "complement"])
        out.write_json("report.json", {"study": study, "kind": cfg.good_set, "fit": rep["fit"],
                                       "excluded": rep["excluded"]})
    elif study == "khintchine":
        c = 1.0 / (1.0 + np.arange(16))
        rep = khintchine_study(c, (2, 4, 8, 16), cfg.samples, spec.law, cfg.seed)
        rows = [{"p": p, "ratio": r} for p, r in zip(rep["p"], rep["ratios"])]
        out.write_csv("khintchine.csv", rows, ["p", "ratio"])
        out.write_json("report.json", dict(rep, study=study))
    elif study == "contraction":
        rep = contraction_study(spec, cfg.s, calibration_samples=min(64, cfg.samples), workers=cfg.workers)
        rows = [{"index": r["index"], "statistic": r["statistic"], "max_ratio": max(r["ratios"], default=0.0),
                 "converged": r["converged"], "blowup": r["blowup"]} for r in rep.pop("records")]
        out.write_csv("samples.csv", rows, ["index", "statistic", "max_ratio", "converged", "blowup"])
        out.write_json("report.json", dict(rep, study=study))
    elif study == "scattering":
        rep = scattering_study(spec, workers=cfg.workers)
        rows = [{"index": r["index"], "converged": r["converged"],
                 "final_residual0": r.get("scattering_residuals", [float("nan")])[0]} for r in rep.pop("records")]
        out.write_csv("samples.csv", rows, ["index", "converged", "final_residual0"])
        out.write_json("report.json", dict(rep, study=study))
    elif study == "smoothing":
        rep = smoothing_study(spec, (cfg.grid, 2 * cfg.grid), workers=cfg.workers)
        out.write_csv("smoothing.csv", rep["resolutions"], ["n", "z_median", "v_median"])
        out.write_json("report.json", dict(rep, study=study))
    else:  # pragma: no cover - guarded by validation
        raise ConfigError([f"unknown study {study}"])
    return EXIT_OK


def _strichartz_entries(d: int) -> List[StrichartzEntry]:
    """One biharmonic and one Schrodinger base pair with q = 4 and rbar = 2d."""
    r_bi = Fraction(2 * d, d - 2) if d > 2 else Fraction(2 * d)
    r_sch = Fraction(2 * d, d - 1)
    return [StrichartzEntry(4, float(r_bi), float(max(r_bi, 2 * d)), "biharmonic"),
            StrichartzEntry(4, float(r_sch), float(2 * d), "schrodinger")]


def cmd_norms(cfg: RunConfig, out: OutputWriter) -> int:
    spec = _ensemble_spec(cfg)
    phi = randomized_sample(spec, cfg.sample)
    evo = cfg.evolution()
    z = LinearTrajectory(phi.grid, evo.times(), phi.data, evo.phase_sign)
    schedule = make_schedule(cfg.schedule, cfg.dim, cfg.delta)
    rows = schedule_rows(z, schedule, cfg.s)
    out.write_csv("norms.csv", rows, ["entry_q", "entry_r", "weight", "value"])
    out.write_json("norms.json", {"schedule": cfg.schedule, "delta": schedule.delta,
                                  "total": schedule.combine([r["value"] for r in rows]),
                                  "phi_hs": sobolev_norm(phi, cfg.s)})
    return EXIT_OK


def cmd_scaling(cfg: RunConfig, out: OutputWriter) -> int:
    spec = _ensemble_spec(cfg)
    rep = dilation_study(spec, cfg.mus, cfg.s, cfg.eps, delta=cfg.delta, workers=cfg.workers)
    out.write_csv("scaling.csv", rep["rows"], ["mu", "complement", "sigma", "median"])
    out.write_json("report.json", rep)
    return EXIT_OK


HANDLERS = {"validate": cmd_validate, "simulate": cmd_simulate, "ensemble": cmd_ensemble, "norms": cmd_norms,
            "scaling": cmd_scaling}


# ------------------------------------------------------------------ argument parsing


def _csv_list(kind):
    def parse(text):
        return [kind(x) for x in text.split(",") if x.strip()]
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON/YAML config file or a previous manifest.json")
    common.add_argument("--dim", type=int)
    common.add_argument("--grid", type=int, help="points per axis (power of two)")
    common.add_argument("--half-width", type=float, dest="half_width", help="box is [-L, L)^d")
    common.add_argument("--s", type=float, help="Sobolev index for the data norms")
    common.add_argument("--delta", type=float)
    common.add_argument("--alpha", type=float, help="profile decay: |phi^| = <xi>^-alpha")
    common.add_argument("--amplitude", type=float)
    common.add_argument("--band-limit", action="store_const", const=True, dest="band_limit")
    common.add_argument("--distribution", choices=["gaussian", "complex_gaussian", "bernoulli"])
    common.add_argument("--seed", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--sample", type=int, help="sample index for simulate / norms")
    common.add_argument("--window", type=float, help="time window T")
    common.add_argument("--dt", type=float)
    common.add_argument("--derivative", choices=["x1", "abs"])
    common.add_argument("--sign", choices=["plus", "minus"])
    common.add_argument("--phase-sign", type=int, choices=[-1, 1], dest="phase_sign")
    common.add_argument("--linear", action="store_const", const=False, dest="nonlinear",
                        help="switch the nonlinearity off")
    common.add_argument("--workers", type=int, help="process count (default: $WIENER4NLS_WORKERS or 1)")
    common.add_argument("--data-file", dest="data_file", help="snapshot file replacing the Sobolev profile")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="wiener4nls", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", parents=[common], help="run the acceptance suite")
    v.add_argument("--criteria", type=_csv_list(int), help="comma list, e.g. 1,2,3")
    sub.add_parser("simulate", parents=[common], help="single randomized solve")
    e = sub.add_parser("ensemble", parents=[common], help="Monte Carlo study")
    e.add_argument("--study", choices=STUDIES)
    e.add_argument("--good-set", dest="good_set")
    n = sub.add_parser("norms", parents=[common], help="exponent-schedule norm table")
    n.add_argument("--schedule", choices=["X", "S0", "S0prime"])
    sc = sub.add_parser("scaling", parents=[common], help="dilation study")
    sc.add_argument("--mus", type=_csv_list(float))
    sc.add_argument("--eps", type=float)
    return p


def parse_config(argv: Optional[Sequence[str]] = None):
    """(RunConfig, overrides, verbose) from argv; flags override the config file."""
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    file_values = load_config_file(args.config) if args.config else {}
    file_values["command"] = args.command
    cfg, overrides = build_config(file_values, flags)
    return cfg, overrides, args.verbose


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg, overrides, verbose = parse_config(argv)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    for k, v in overrides.items():
        log.info("flag overrides config file: %s = %r (file had %r)", k, v["flag"], v["file"])
    out = OutputWriter(cfg.output_dir)
    started = time.time()
    t0 = time.perf_counter()
    try:
        status = HANDLERS[cfg.command](cfg, out)
        out.write_manifest({
            "version": __version__, "command": cfg.command, "config": cfg.to_dict(), "overrides": overrides,
            "seed": cfg.seed, "status": status,
            "timing": {"started": started, "elapsed_seconds": time.perf_counter() - t0},
            "host": {"platform": platform.platform(), "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "cpus": os.cpu_count()},
        })
    except ConfigError as exc:
        out.discard()
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure: leave nothing behind that claims to be a result
        out.discard()
        log.error("run failed: %s", exc)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
