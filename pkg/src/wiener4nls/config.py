"""Run configuration: JSON/YAML file or a previous manifest, overridden by command-line flags."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Tuple

import yaml

from .evolution import EvolutionConfig, dominant_frequency, no_wrap_ok
from .norms import GOOD_SETS, make_schedule
from .randomization import LAWS, SobolevSampleSpec
from .spectral import MAX_DIM, make_grid

COMMANDS = ("validate", "simulate", "ensemble", "norms", "scaling")
STUDIES = ("hs-tail", "strichartz-tail", "good-set", "khintchine", "contraction", "scattering", "smoothing")
DISTRIBUTIONS = {"gaussian": "complex_gaussian", "complex_gaussian": "complex_gaussian", "bernoulli": "bernoulli"}
DEFAULT_SEED = 20240601


class ConfigError(ValueError):
    def __init__(self, violations: List[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


@dataclass
class RunConfig:
    command: str = "simulate"
    dim: int = 3
    grid: int = 32
    half_width: float = 16.0
    s: float = 0.0
    delta: Optional[float] = None
    alpha: float = 2.0
    amplitude: float = 1.0
    band_limit: bool = False
    distribution: str = "gaussian"
    seed: Optional[int] = None
    samples: int = 1024
    window: float = 1.0
    dt: float = 1.0 / 32
    derivative: str = "x1"
    sign: str = "plus"
    phase_sign: int = -1
    nonlinear: bool = True
    study: str = "hs-tail"
    schedule: str = "S0"
    good_set: str = "E_R"
    mus: List[float] = field(default_factory=lambda: [1.0, 0.5, 0.25])
    eps: float = 0.1
    criteria: Optional[List[int]] = None
    workers: Optional[int] = None
    sample: int = 0
    data_file: Optional[str] = None
    output_dir: str = "runs/latest"

    def law(self) -> str:
        return DISTRIBUTIONS[self.distribution]

    def sobolev_spec(self) -> SobolevSampleSpec:
        return SobolevSampleSpec(self.alpha, self.amplitude, self.band_limit)

    def evolution(self) -> EvolutionConfig:
        return EvolutionConfig(derivative=self.derivative, sign=1 if self.sign == "plus" else -1,
                               phase_sign=self.phase_sign, dt=self.dt, T=self.window, nonlinear=self.nonlinear,
                               delta=self.delta)

    def to_dict(self) -> dict:
        return asdict(self)


FIELD_NAMES = {f.name for f in fields(RunConfig)}


def load_config_file(path) -> dict:
    """Plain JSON/YAML mapping, or a manifest whose "config" echo is reused."""
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError([f"config file {path} must hold a mapping"])
    if "config" in data and "files" in data:
        data = data["config"]
    unknown = sorted(set(data) - FIELD_NAMES)
    if unknown:
        raise ConfigError([f"unknown config keys: {', '.join(unknown)}"])
    return dict(data)


def build_config(file_values: Optional[dict], flags: dict) -> Tuple[RunConfig, dict]:
    """Merge defaults < file < flags. Returns the config and the overrides that replaced file values."""
    merged = dict(file_values or {})
    overrides = {}
    for k, v in flags.items():
        if v is None:
            continue
        if k in merged and merged[k] != v:
            overrides[k] = {"file": merged[k], "flag": v}
        merged[k] = v
    cfg = RunConfig(**merged)
    if cfg.seed is None:
        cfg.seed = DEFAULT_SEED
    validate_config(cfg)
    return cfg, overrides


def validate_config(cfg: RunConfig) -> None:
    """Collect every violation; raise ConfigError listing all of them."""
    bad = []
    if cfg.command not in COMMANDS:
        bad.append(f"command must be one of {COMMANDS}")
    if not 1 <= cfg.dim <= MAX_DIM:
        bad.append(f"dim must lie in 1..{MAX_DIM}")
    if cfg.grid < 8 or cfg.grid & (cfg.grid - 1):
        bad.append("grid must be a power of two >= 8")
    if not cfg.half_width > 0:
        bad.append("half-width must be positive")
    if cfg.distribution not in DISTRIBUTIONS:
        bad.append(f"distribution must be one of {sorted(DISTRIBUTIONS)}")
    elif DISTRIBUTIONS[cfg.distribution] not in LAWS:
        bad.append("unsupported distribution")
    if cfg.derivative not in ("x1", "abs"):
        bad.append("derivative must be x1 or abs")
    if cfg.sign not in ("plus", "minus"):
        bad.append("sign must be plus or minus")
    if cfg.phase_sign not in (-1, 1):
        bad.append("phase-sign must be +1 or -1")
    if not cfg.alpha > 0:
        bad.append("alpha (profile decay) must be positive")
    if not cfg.dt > 0:
        bad.append("dt must be positive")
    elif cfg.window < 0 or abs(cfg.window / cfg.dt - round(cfg.window / cfg.dt)) > 1e-9 * max(1, cfg.window / cfg.dt):
        bad.append("window must be a non-negative multiple of dt")
    if cfg.command in ("ensemble", "scaling") and cfg.samples < 2:
        bad.append(f"samples must be >= 2 for an ensemble (got {cfg.samples})")
    if cfg.command == "ensemble" and cfg.study not in STUDIES:
        bad.append(f"study must be one of {STUDIES}")
    elif cfg.command == "ensemble" and cfg.study in ("hs-tail", "strichartz-tail", "good-set") and cfg.samples < 100:
        bad.append(f"tail fits need samples >= 100 (got {cfg.samples})")
    if cfg.good_set not in GOOD_SETS:
        bad.append(f"good set must be one of {sorted(GOOD_SETS)}")
    if cfg.schedule not in ("X", "S0", "S0prime"):
        bad.append("schedule must be X, S0 or S0prime")
    if cfg.workers is not None and cfg.workers < 1:
        bad.append("workers must be >= 1")
    if cfg.command == "scaling":
        if cfg.dim < 4:
            bad.append("scaling needs dim >= 4: in three dimensions the dilation cannot shrink the H^s norm")
        if not 0 < cfg.eps < 1:
            bad.append("eps must lie in (0, 1)")
        for mu in cfg.mus:
            if not 0 < mu <= 1:
                bad.append(f"dilation scale {mu} must lie in (0, 1]")
    if not bad:
        bad.extend(_schedule_violations(cfg))
        bad.extend(_no_wrap_violations(cfg))
    if bad:
        raise ConfigError(bad)


def _uses_schedule(cfg: RunConfig) -> Optional[str]:
    if cfg.command == "norms":
        return cfg.schedule
    if cfg.command == "ensemble" and cfg.study in ("good-set", "contraction"):
        return GOOD_SETS[cfg.good_set if cfg.study == "good-set" else "Omega_phi"][0]
    if cfg.command == "scaling":
        return "S0"
    return None


def _schedule_violations(cfg: RunConfig) -> List[str]:
    kind = _uses_schedule(cfg)
    if kind is None or cfg.dim < 3:
        return []
    try:
        make_schedule(kind, cfg.dim, None if cfg.delta is None else Fraction(cfg.delta).limit_denominator(10**6))
    except ValueError as exc:
        return [f"delta constraint from the {kind} exponent schedule: {exc}"]
    return []


def _no_wrap_violations(cfg: RunConfig) -> List[str]:
    runs_flow = cfg.command == "simulate" or (cfg.command == "ensemble" and cfg.study in (
        "strichartz-tail", "scattering"))
    if not runs_flow or cfg.data_file:
        return []
    g = make_grid(cfg.dim, cfg.grid, cfg.half_width)
    xi = dominant_frequency(g, cfg.sobolev_spec().spectrum(g))
    if not no_wrap_ok(g, cfg.window, xi):
        need = 4.0 * xi**3 * cfg.window
        return [f"no-wrap rule: 4 |xi_dom|^3 T = {need:.4g} must stay below the half-width L = {cfg.half_width:g} "
                f"(dispersive packets would re-enter the periodic box)"]
    return []
