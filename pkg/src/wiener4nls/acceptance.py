"""Acceptance suite: twelve gates, each returning a pass flag with the measured numbers."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .evolution import (EvolutionConfig, propagate, solve_direct, solve_perturbed, step_direct)
from .experiments import (EnsembleSpec, StrichartzEntry, choose_half_width, contraction_study, cubic_exponent,
                          dilation_study, hs_tail_study, khintchine_study, scattering_study, smoothing_study,
                          strichartz_tail_study)
from .norms import sobolev_norm
from .randomization import SobolevSampleSpec, box_indices, dilate_field, dilated_grid, make_partition, randomize
from .spectral import Field, dealias_mask, dyadic_levels, dyadic_project, make_grid, physical_field, spectral_field


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: Dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {self.summary()}"

    def summary(self) -> str:
        keys = self.detail.get("_summary") or [k for k in self.detail if not k.startswith("_")][:4]
        parts = []
        for k in keys:
            v = self.detail.get(k)
            parts.append(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}")
        return ", ".join(parts) + f" ({self.seconds:.1f}s)"


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm((a - b).ravel()) / max(np.linalg.norm(b.ravel()), 1e-300))


def _random_field(grid, seed: int) -> Field:
    rng = np.random.default_rng(seed)
    return physical_field(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))


# ------------------------------------------------------------------ 1-3: deterministic


def linear_exactness(tol: float = 1e-12) -> dict:
    g = make_grid(3, 32, 8.0)
    f = _random_field(g, 1).spectral()
    t1, t2 = 0.37, 1.13
    unit = abs(propagate(f, t1).l2_norm() - f.l2_norm()) / f.l2_norm()
    group = _rel(propagate(propagate(f, t1), t2).data, propagate(f, t1 + t2).data)
    cfg = EvolutionConfig(nonlinear=False, dt=0.05, T=0.05)
    step = _rel(step_direct(f, 0.05, cfg).data, propagate(f, 0.05).data)
    worst = max(unit, group, step)
    return {"passed": worst <= tol, "unitarity": unit, "group_law": group, "step_vs_propagate": step,
            "tol": tol}


def partition_reconstruction(tol: float = 1e-10) -> dict:
    g = make_grid(3, 32, 6.0)
    part = make_partition(3, 3)
    psum = float(np.max(np.abs(part.partition_sum(g) - 1.0)))
    f = _random_field(g, 2).spectral()
    total = sum(dyadic_project(f, N).data for N in dyadic_levels(g))
    lp = _rel(total, f.data)
    lo, shape = part.cube_box(g)
    ones = {tuple(int(c) for c in n): 1.0 for n in box_indices(lo, shape)}
    ident = _rel(randomize(f, part, ones).data, f.data)
    worst = max(psum, lp, ident)
    return {"passed": worst <= tol, "partition_sum": psum, "littlewood_paley": lp, "unit_randomize": ident,
            "tol": tol}


def scaling_law(tol: float = 0.01) -> dict:
    d, n = 3, 128
    data = SobolevSampleSpec(alpha=2.0)
    g = make_grid(d, n, 16.0)
    phi = data.field(g)
    mus = [1.0, 0.5, 0.25]
    out = {"passed": True, "tol": tol}
    for s in (0.0, 0.5):
        vals = []
        for mu in mus:
            f = dilate_field(phi, mu)
            # the same object sampled directly from the profile on the nested box
            direct = data.field(dilated_grid(g, mu), mu)
            if _rel(f.data, direct.data) > 1e-12:
                out["passed"] = False
            vals.append(sobolev_norm(f, s, homogeneous=True))
        slope = float(np.polyfit(np.log(mus), np.log(vals), 1)[0])
        target = -s + (d - 3) / 2.0
        err = abs(slope - target) / max(abs(target), 1.0)
        out[f"slope_s{s:g}"] = slope
        out["passed"] = out["passed"] and err <= tol
    return out


# ------------------------------------------------------------------ 4-6: probabilistic bounds


def khintchine(samples: int = 100_000) -> dict:
    c = 1.0 / (1.0 + np.arange(16))
    rep = khintchine_study(c, (2, 4, 8, 16), samples, "complex_gaussian", seed=4, bootstrap=100)
    single = khintchine_study([0.7], (2, 4, 8, 16), 20_000, "bernoulli", seed=5, bootstrap=0)
    # |g| = sqrt(2) for the Bernoulli law, so the ratio is sqrt(2/p)
    bern = max(abs(r - math.sqrt(2.0 / p)) for r, p in zip(single["ratios"], single["p"]))
    ok = rep["bounded"] and rep["p2_rel_error"] <= 0.03 and rep["trend_violation_fraction"] < 0.05 and bern < 1e-12
    return {"passed": ok, "max_ratio": rep["max_ratio"], "p2_rel_error": rep["p2_rel_error"],
            "trend_violations": rep["trend_violation_fraction"], "bernoulli_single_error": bern,
            "ratios": rep["ratios"], "_summary": ["max_ratio", "p2_rel_error", "trend_violations"]}


def hs_tail(samples: int = 4096, workers: Optional[int] = None) -> dict:
    spec = EnsembleSpec(samples=samples, seed=5, data=SobolevSampleSpec(alpha=2.0), d=3, n=32, L=16.0)
    rep = hs_tail_study(spec, s=0.4, p_range=(0.01, 0.5), workers=workers)
    fit = rep["fit"]
    ok = fit.r2 >= 0.95 and rep["homogeneity_error"] <= 1e-12
    return {"passed": ok, "r2": fit.r2, "slope": fit.slope, "homogeneity_error": rep["homogeneity_error"],
            "points": len(fit.lambdas), "_summary": ["r2", "slope", "homogeneity_error"], "_fit": fit}


def strichartz_tail(samples: int = 2048, workers: Optional[int] = None) -> dict:
    data = SobolevSampleSpec(alpha=2.0)
    T = 1.0
    L = choose_half_width(data, 3, 32, T)
    spec = EnsembleSpec(samples=samples, seed=6, data=data, d=3, n=32, L=L,
                        evolution=EvolutionConfig(dt=1.0 / 32, T=T))
    entries = [StrichartzEntry(4, 6, 6, "biharmonic"), StrichartzEntry(4, 3, 6, "schrodinger")]
    rep = strichartz_tail_study(spec, entries, p_range=(0.01, 0.5), workers=workers)
    r2 = {k: f.r2 for k, f in rep["fits"].items()}
    ok = rep["no_wrap"] and all(v >= 0.9 for v in r2.values())
    out = {"passed": ok, "L": L, "no_wrap": rep["no_wrap"]}
    for i, (k, v) in enumerate(r2.items()):
        out[f"r2_{entries[i].kind}"] = v
    out["_summary"] = ["L", "no_wrap"] + [f"r2_{e.kind}" for e in entries]
    return out


# ------------------------------------------------------------------ 7-11: nonlinear flow


def solver_cross_validation(tol: float = 1e-6) -> dict:
    g = make_grid(3, 16, 8.0)
    phi = spectral_field(g, 0.2 * np.exp(-g.xi_sq) * dealias_mask(g))
    worst = 0.0
    cases = {}
    for deriv in ("x1", "abs"):
        for sign in (1, -1):
            cfg = EvolutionConfig(derivative=deriv, sign=sign, dt=1.0 / 128, T=1.0, tol=1e-12)
            v, diag, z = solve_perturbed(phi, cfg)
            last = len(v) - 1
            u_pic = z.snapshot(last) + v.snapshot(last)
            u_dir = solve_direct(phi, cfg, dt=1.0 / 512, T=1.0).data
            err = _rel(u_pic, u_dir)
            cases[f"{deriv},{'+' if sign > 0 else '-'}"] = err
            worst = max(worst, err)
    # Richardson self-convergence of the direct stepper
    psi = spectral_field(g, np.exp(-g.xi_sq) * dealias_mask(g))
    cfg = EvolutionConfig(dt=1.0 / 64, T=1.0)
    u = [solve_direct(psi, cfg, dt=1.0 / 64 / 2**k, T=1.0).data for k in range(3)]
    ratio = _rel(u[0], u[1]) / _rel(u[1], u[2])
    ok = worst <= tol and abs(ratio - 16.0) <= 0.3 * 16.0
    return {"passed": ok, "max_rel_error": worst, "halving_ratio": ratio, "cases": cases,
            "_summary": ["max_rel_error", "halving_ratio"]}


def _small_data_spec(samples: int, T: float, seed: int, amplitude: float = 1.0) -> EnsembleSpec:
    return EnsembleSpec(samples=samples, seed=seed, data=SobolevSampleSpec(1.4, amplitude, band_limit=True),
                        d=3, n=16, L=16.0, evolution=EvolutionConfig(dt=1.0 / 16, T=T))


def contraction(samples: int = 1024, workers: Optional[int] = None) -> dict:
    spec = _small_data_spec(samples, 1.0, seed=8)
    rep = contraction_study(spec, s=-0.2, calibration_samples=64, kind="Omega_phi", workers=workers)
    cub = cubic_exponent(spec, 0, (0.25, 0.5, 1.0, 2.0))
    ok = rep["fraction"] >= 0.95 and abs(cub["exponent"] - 3.0) <= 0.05
    cal = rep["calibration"]
    return {"passed": ok, "fraction": rep["fraction"], "good_set": rep["good_set_samples"],
            "eta": cal["eta"], "C1": cal["C1"], "C2": cal["C2"], "cubic_exponent": cub["exponent"],
            "blowup": rep["blowup"], "nonconverged": rep["nonconverged"],
            "_summary": ["fraction", "good_set", "eta", "cubic_exponent"]}


def smoothing(samples: int = 4, workers: Optional[int] = None) -> dict:
    spec = EnsembleSpec(samples=samples, seed=9, data=SobolevSampleSpec(2.3, band_limit=True), d=4, n=16,
                        L=2 * math.pi, evolution=EvolutionConfig(dt=1.0 / 1024, T=1.0 / 64))
    rep = smoothing_study(spec, (16, 32), workers=workers)
    st = rep["steps"][0]
    return {"passed": rep["ok"], "z_ratio": st["z_ratio"], "required_z": rep["required_z_growth"],
            "v_ratio": st["v_ratio"], "v_tolerance": rep["v_tolerance"], "excluded": rep["excluded"],
            "_summary": ["z_ratio", "required_z", "v_ratio", "v_tolerance"]}


def scattering(samples: int = 256, workers: Optional[int] = None) -> dict:
    spec = _small_data_spec(samples, 2.0, seed=10)
    rep = scattering_study(spec, workers=workers)
    ok = rep["no_wrap"] and rep["fraction"] >= 0.9
    return {"passed": ok, "fraction": rep["fraction"], "converged": rep["converged"],
            "excluded": rep["excluded"], "no_wrap": rep["no_wrap"]}


def dilation(samples: int = 128, workers: Optional[int] = None) -> dict:
    spec = EnsembleSpec(samples=samples, seed=11, data=SobolevSampleSpec(3.0), d=4, n=16, L=8 * math.pi,
                        evolution=EvolutionConfig(dt=1.0 / 16, T=2.0))
    rep = dilation_study(spec, (1.0, 0.5, 0.25), s=0.0, eps=0.1, delta=0.01, workers=workers)
    ok = rep["monotone"] and rep["slope_ok"]
    return {"passed": ok, "slope": rep["slope"], "target": rep["target_slope"], "monotone": rep["monotone"],
            "complements": [r["complement"] for r in rep["rows"]], "mu0": rep["mu0"],
            "_summary": ["slope", "target", "monotone", "complements"]}


# ------------------------------------------------------------------ 12: reproducibility


def reproducibility(workdir=None) -> dict:
    """Same manifest, worker counts 1 and 2: identical result digests."""
    import tempfile
    from pathlib import Path

    from . import cli

    base = Path(workdir or tempfile.mkdtemp(prefix="w4n-repro-"))
    args = ["ensemble", "--study", "hs-tail", "--dim", "3", "--grid", "16", "--half-width", "8",
            "--samples", "256", "--seed", "12", "--s", "0.2"]
    digests = []
    for workers, name in ((1, "w1"), (2, "w2")):
        code = cli.main(args + ["--workers", str(workers), "--output-dir", str(base / name)])
        if code != 0:
            return {"passed": False, "error": f"ensemble run exited with {code}"}
        digests.append(cli.result_digests(base / name))
    code = cli.main(["ensemble", "--config", str(base / "w1" / "manifest.json"), "--workers", "2",
                     "--output-dir", str(base / "rerun")])
    if code != 0:
        return {"passed": False, "error": f"manifest rerun exited with {code}"}
    digests.append(cli.result_digests(base / "rerun"))
    same = all(d == digests[0] for d in digests[1:]) and bool(digests[0])
    return {"passed": same, "files": len(digests[0]), "identical": same}


CRITERIA: List[tuple] = [
    (1, "linear exactness", linear_exactness),
    (2, "partition and reconstruction", partition_reconstruction),
    (3, "dilation scaling law", scaling_law),
    (4, "Khintchine moments", khintchine),
    (5, "H^s tail", hs_tail),
    (6, "randomized Strichartz tail", strichartz_tail),
    (7, "solver cross-validation", solver_cross_validation),
    (8, "Picard contraction", contraction),
    (9, "nonlinear smoothing", smoothing),
    (10, "scattering proxy", scattering),
    (11, "dilation study", dilation),
    (12, "reproducibility", reproducibility),
]


def run_criterion(number: int) -> CriterionResult:
    for num, name, fn in CRITERIA:
        if num == number:
            t0 = time.perf_counter()
            detail = fn()
            passed = bool(detail.pop("passed"))
            return CriterionResult(num, name, passed, detail, time.perf_counter() - t0)
    raise ValueError(f"no acceptance criterion {number}")


def run_acceptance(numbers: Optional[Sequence[int]] = None, echo: Optional[Callable[[str], None]] = print
                   ) -> List[CriterionResult]:
    numbers = [c[0] for c in CRITERIA] if numbers is None else list(numbers)
    out = []
    for num in numbers:
        res = run_criterion(num)
        if echo:
            echo(res.line())
        out.append(res)
    return out
