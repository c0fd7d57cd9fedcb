"""Linear group, derivative cubic nonlinearity, direct stepper and the Picard/Duhamel iteration.

Equation: (i d_t + Delta^2) u = sign * D(|u|^2 u). With S(t) the group with symbol
exp(i * phase_sign * t |xi|^4), the nonlinear part v = u - S(t) phi of the solution
is the fixed point of

    Gamma v(t) = -i int_0^t S(t - t') sign * D(|v + z|^2 (v + z))(t') dt'.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

from . import norms
from .norms import LinearTrajectory, NormSchedule, ScheduleEntry, Trajectory, make_schedule, schedule_norm, sobolev_norm
from .spectral import (Field, Grid, dealias_mask, derivative_symbol, forward, inverse, phase_symbol)


class BlowUpError(FloatingPointError):
    """Non-finite values or norm explosion during an evolution."""


def critical_index(d: int) -> float:
    return (d - 3) / 2.0


@dataclass(frozen=True)
class EvolutionConfig:
    derivative: str = "x1"  # "x1".."x4" for d/dx_j, "abs" for |grad|
    sign: int = 1
    phase_sign: int = -1
    dt: float = 0.01
    T: float = 0.1
    nonlinear: bool = True
    max_iter: int = 40
    tol: float = 1e-10  # relative to the first Picard increment
    eta: Optional[float] = None
    delta: Optional[float] = None
    blowup_factor: float = 1e6

    def __post_init__(self):
        if self.sign not in (-1, 1) or self.phase_sign not in (-1, 1):
            raise ValueError("sign and phase_sign must be +1 or -1")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.T < 0:
            raise ValueError("window must be non-negative")
        if abs(self.T / self.dt - round(self.T / self.dt)) > 1e-9 * max(1.0, self.T / self.dt):
            raise ValueError(f"window T={self.T} is not a multiple of dt={self.dt}")
        if self.derivative != "abs" and not (self.derivative.startswith("x") and self.derivative[1:].isdigit()):
            raise ValueError(f"unknown derivative {self.derivative!r}")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def times(self, direction: int = 1) -> np.ndarray:
        return direction * self.dt * np.arange(self.steps + 1)

    def derivative_axis(self) -> Optional[int]:
        return None if self.derivative == "abs" else int(self.derivative[1:]) - 1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["delta"] = None if self.delta is None else float(self.delta)
        return out


# ------------------------------------------------------------------ operators


def propagate(f: Field, t: float, phase_sign: int = -1) -> Field:
    """S(t) f, exact on the lattice."""
    f = f.spectral()
    return Field(f.grid, f.data * phase_symbol(f.grid, t, phase_sign), "spectral")


class _Nonlinearity:
    """Cached symbols for sign * D(|u|^2 u) with output dealiasing."""

    def __init__(self, grid: Grid, cfg: EvolutionConfig):
        self.grid = grid
        self.enabled = cfg.nonlinear
        sym = derivative_symbol(grid, cfg.derivative_axis())
        self.symbol = np.where(dealias_mask(grid), sym * cfg.sign, 0.0)

    def __call__(self, u_hat: np.ndarray) -> np.ndarray:
        if not self.enabled:
            return np.zeros_like(u_hat)
        u = inverse(self.grid, u_hat)
        out = forward(self.grid, (u.real**2 + u.imag**2) * u)
        out *= self.symbol
        if not np.all(np.isfinite(out)):
            raise BlowUpError("non-finite nonlinearity")
        return out


def nonlinearity(u: Field, cfg: EvolutionConfig) -> Field:
    u = u.spectral()
    return Field(u.grid, _Nonlinearity(u.grid, cfg)(u.data), "spectral")


def _lawson_rk4(u, h, E_half, E_full, N):
    a = -1j * N(u)
    b = -1j * N(E_half * (u + 0.5 * h * a))
    c = -1j * N(E_half * u + 0.5 * h * b)
    d = -1j * N(E_full * u + h * E_half * c)
    return E_full * u + (h / 6.0) * (E_full * a + 2.0 * E_half * (b + c) + d)


def step_direct(u: Field, dt: float, cfg: EvolutionConfig) -> Field:
    """One integrating-factor (Lawson) RK4 step of size dt."""
    u = u.spectral()
    g = u.grid
    N = _Nonlinearity(g, cfg)
    E_half = phase_symbol(g, 0.5 * dt, cfg.phase_sign)
    E_full = phase_symbol(g, dt, cfg.phase_sign)
    return Field(g, _lawson_rk4(u.data, dt, E_half, E_full, N), "spectral")


def solve_direct(phi: Field, cfg: EvolutionConfig, dt: Optional[float] = None, T: Optional[float] = None,
                 direction: int = 1) -> Field:
    """u(T) from u(0) = phi by repeated Lawson RK4 steps (negative direction for t < 0)."""
    phi = phi.spectral()
    g = phi.grid
    dt = cfg.dt if dt is None else dt
    T = cfg.T if T is None else T
    steps = int(round(T / dt))
    h = direction * dt
    N = _Nonlinearity(g, cfg)
    E_half = phase_symbol(g, 0.5 * h, cfg.phase_sign)
    E_full = phase_symbol(g, h, cfg.phase_sign)
    u = phi.data.copy()
    start = max(phi.l2_norm(), 1e-300)
    for _ in range(steps):
        u = _lawson_rk4(u, h, E_half, E_full, N)
        with np.errstate(over="ignore", invalid="ignore"):
            size = math.sqrt(float(np.sum(np.abs(u) ** 2)) * g.spectral_cell)
        if not math.isfinite(size) or size > cfg.blowup_factor * start:
            raise BlowUpError("direct solve blew up")
    return Field(g, u, "spectral")


def linear_trajectory(phi: Field, T: float, dt: float, phase_sign: int = -1, lazy: bool = False,
                      direction: int = 1) -> Trajectory:
    """z(t) = S(t) phi on t = 0, dt, ..., T (or its mirror for direction = -1)."""
    phi = phi.spectral()
    steps = int(round(T / dt)) if dt > 0 else 0
    times = direction * dt * np.arange(steps + 1)
    z = LinearTrajectory(phi.grid, times, phi.data, phase_sign)
    return z if lazy else Trajectory(phi.grid, times, z.stack())


def zero_trajectory(grid: Grid, times) -> Trajectory:
    return Trajectory(grid, times, np.zeros((len(times),) + grid.shape, dtype=complex))


def picard_iterate(v: Trajectory, z: Trajectory, cfg: EvolutionConfig) -> Trajectory:
    """Gamma v on the time lattice via W_m = S(dt) W_(m-1) + trapezoid slice."""
    if v.grid != z.grid or len(v) != len(z) or not np.allclose(v.times, z.times):
        raise ValueError("v and z must share grid and time lattice")
    g = v.grid
    N = _Nonlinearity(g, cfg)
    out = np.zeros((len(v),) + g.shape, dtype=complex)
    if len(v) == 1 or not cfg.nonlinear:
        return Trajectory(g, v.times, out)
    h = v.dt
    E = phase_symbol(g, h, cfg.phase_sign)
    n_prev = N(v.snapshot(0) + z.snapshot(0))
    W = out[0]
    for m in range(1, len(v)):
        n_cur = N(v.snapshot(m) + z.snapshot(m))
        W = E * W + (-0.5j * h) * (E * n_prev + n_cur)
        out[m] = W
        n_prev = n_cur
    return Trajectory(g, v.times, out)


# ------------------------------------------------------------------ Picard


def diagnostic_schedule(d: int, delta=None) -> NormSchedule:
    """X schedule for d >= 3; L^inf_t L^2_x stand-in for the d = 1, 2 smoke grids."""
    if d >= 3:
        return make_schedule("X", d, delta)
    entry = ScheduleEntry(math.inf, Fraction(2), Fraction(0), 0, "(inf, 2), w=0")
    return NormSchedule("X", d, Fraction(0), (entry,))


@dataclass
class PicardDiagnostics:
    x_norms: List[float] = field(default_factory=list)  # ||v_k||, k = 1..K
    increments: List[float] = field(default_factory=list)  # ||v_k - v_(k-1)||
    ratios: List[float] = field(default_factory=list)
    converged: bool = False
    blowup: bool = False
    in_ball: Optional[bool] = None
    scattering_residuals: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.increments)

    @property
    def x_norm_final(self) -> float:
        return self.x_norms[-1] if self.x_norms else 0.0

    @property
    def first_iterate_norm(self) -> float:
        return self.x_norms[0] if self.x_norms else 0.0

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0

    def to_json(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "ratios": [float(r) for r in self.ratios],
            "x_norm_final": float(self.x_norm_final),
            "blowup": self.blowup,
            "scattering_residuals": [float(r) for r in self.scattering_residuals],
        }


def solve_perturbed(phi: Field, cfg: EvolutionConfig, direction: int = 1, schedule: Optional[NormSchedule] = None,
                    keep_iterates: bool = False):
    """Iterate v_(k+1) = Gamma v_k from v_0 = 0.

    Returns (v, diagnostics, z). Increments and norms are measured in X^(s_c) on the window.
    """
    phi = phi.spectral()
    g = phi.grid
    sc = critical_index(g.d)
    schedule = schedule or diagnostic_schedule(g.d, cfg.delta)
    times = cfg.times(direction)
    z = LinearTrajectory(g, times, phi.data, cfg.phase_sign)
    v = zero_trajectory(g, times)
    diag = PicardDiagnostics()
    scale = max(sobolev_norm(phi, sc), 1e-300)
    iterates = []
    for k in range(cfg.max_iter):
        try:
            v_new = picard_iterate(v, z, cfg)
        except BlowUpError:
            diag.blowup = True
            break
        inc = schedule_norm(v_new - v, schedule, sc)
        size = schedule_norm(v_new, schedule, sc)
        if not (math.isfinite(inc) and math.isfinite(size)) or size > cfg.blowup_factor * scale:
            diag.blowup = True
            break
        if diag.increments and diag.increments[-1] > 0:
            diag.ratios.append(inc / diag.increments[-1])
        diag.increments.append(inc)
        diag.x_norms.append(size)
        v = v_new
        if keep_iterates:
            iterates.append(v)
        first = diag.increments[0]
        if first == 0 or inc <= cfg.tol * first:
            diag.converged = True
            break
    if cfg.eta is not None and diag.x_norms:
        diag.in_ball = all(x <= cfg.eta for x in diag.x_norms)
    if keep_iterates:
        return v, diag, z, iterates
    return v, diag, z


def iteration_bound(first_increment: float, tol_abs: float, rho: float) -> float:
    """Iterations needed when every ratio is <= rho < 1.

    Increment k is at most rho^(k-1) times the first, so the count is an integer
    ceiling of log(tol/first)/log(rho), plus one for the first iterate.
    """
    if first_increment <= tol_abs:
        return 1.0
    return math.ceil(math.log(tol_abs / first_increment) / math.log(rho) - 1e-12) + 1.0


def local_time_horizon(R: float, eta: float, C1p: float, C2p: float, delta: float) -> float:
    """T = min(eta / (2 C1' R^3), 1 / (4 C2' R^2))^(4/delta)."""
    for name, val in (("R", R), ("eta", eta), ("C1p", C1p), ("C2p", C2p), ("delta", delta)):
        if not val > 0:
            raise ValueError(f"{name} must be positive")
    base = min(eta / (2.0 * C1p * R**3), 1.0 / (4.0 * C2p * R**2))
    return base ** (4.0 / delta)


def dilation_scale_threshold(eta: float, phi_norm: float, eps: float, s: float, d: int,
                             const: float = 1.0) -> float:
    """mu_0 = const * (eta / (||phi||_{H^s} (-log eps)^(1/2)))^(1/((d-3)/2 - s))."""
    if d < 4:
        raise ValueError("the dilation threshold needs d >= 4 (d = 3 is mass critical)")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    gap = critical_index(d) - s
    if gap <= 0:
        raise ValueError("s must be below the critical index (d-3)/2")
    return const * (eta / (phi_norm * math.sqrt(-math.log(eps)))) ** (1.0 / gap)


# -------------------------------------------------------------- scattering


def dominant_frequency(grid: Grid, phi_hat: np.ndarray, fraction: float = 0.9) -> float:
    """Radius |xi| below which ``fraction`` of the L^2 mass of phi^ lies."""
    r = grid.xi_abs.ravel()
    e = np.abs(np.asarray(phi_hat).ravel()) ** 2
    total = e.sum()
    if total == 0:
        return 0.0
    order = np.argsort(r, kind="stable")
    cum = np.cumsum(e[order]) / total
    return float(r[order][min(np.searchsorted(cum, fraction), r.size - 1)])


def no_wrap_ok(grid: Grid, T: float, xi_dom: float) -> bool:
    """Group speed 4|xi|^3 of the dominant band times |T| stays inside the half width."""
    return 4.0 * xi_dom**3 * abs(T) < grid.L


def scattering_state(v: Trajectory, phase_sign: int = -1, s: Optional[float] = None,
                     xi_dom: Optional[float] = None) -> Tuple[Field, np.ndarray]:
    """w(t) = S(-t) v(t); returns w at the window end and m(t1) = ||w(T) - w(t1)||_{H^s}."""
    g = v.grid
    s = critical_index(g.d) if s is None else s
    T = v.times[-1]
    if xi_dom is not None and not no_wrap_ok(g, T, xi_dom):
        warnings.warn("window exceeds the no-wrap horizon; scattering proxy is not meaningful", RuntimeWarning)
    w_end = v.snapshot(len(v) - 1) * phase_symbol(g, -T, phase_sign)
    curve = np.empty(len(v))
    for m in range(len(v)):
        w_m = v.snapshot(m) * phase_symbol(g, -v.times[m], phase_sign)
        curve[m] = sobolev_norm(Field(g, w_end - w_m, "spectral"), s)
    return Field(g, w_end, "spectral"), curve
