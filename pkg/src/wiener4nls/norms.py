"""Sobolev and mixed space-time norms, admissible pairs and the exponent schedules."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .spectral import Field, Grid, bessel_symbol, fractional_symbol, inverse, phase_symbol

INF = math.inf
Exponent = Union[Fraction, float]

GOOD_SETS = {
    # name: (schedule kind, apply <grad>^s to the linear part, strict inequality)
    "E_R": ("S0", True, False),
    "E_R_prime": ("S0prime", False, False),
    "Omega_T": ("S0prime", True, True),
    "Omega_phi": ("S0", True, True),
    "Omega_mu": ("S0", True, False),
}


def _frac(x) -> Exponent:
    if x is None or (isinstance(x, float) and math.isinf(x)):
        return INF
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return INF if x.lower() in ("inf", "infinity", "oo") else Fraction(x)
    return Fraction(x).limit_denominator(10**9)


def _inv(x: Exponent) -> Fraction:
    return Fraction(0) if x == INF else 1 / x


def is_admissible(q, r, d: int, kind: str = "biharmonic") -> bool:
    """Exact rational test of 2/q + d/r = d/2 (schrodinger) or 4/q + d/r = d/2 (biharmonic)."""
    q, r = _frac(q), _frac(r)
    if q < 2 or r < 2:
        return False
    if kind == "schrodinger":
        lhs, excluded = 2 * _inv(q), (2, INF, 2)
    elif kind == "biharmonic":
        lhs, excluded = 4 * _inv(q), (2, INF, 4)
    else:
        raise ValueError(f"unknown admissibility kind {kind!r}")
    if (q, r, d) == excluded:
        return False
    return lhs + d * _inv(r) == Fraction(d, 2)


@dataclass(frozen=True)
class AdmissiblePair:
    q: Exponent
    r: Exponent
    kind: str
    d: int

    def __post_init__(self):
        if not is_admissible(self.q, self.r, self.d, self.kind):
            raise ValueError(f"({self.q}, {self.r}) is not {self.kind} admissible in d={self.d}")


# ------------------------------------------------------------------ schedules


@dataclass(frozen=True)
class ScheduleEntry:
    q: Exponent
    r: Exponent
    weight: Exponent  # power of |grad| applied before the Lebesgue norm
    group: int = 0
    label: str = ""

    def as_floats(self) -> Tuple[float, float, float]:
        return float(self.q), float(self.r), float(self.weight)


@dataclass(frozen=True)
class NormSchedule:
    kind: str
    d: int
    delta: Fraction
    entries: Tuple[ScheduleEntry, ...]

    @property
    def aggregation(self) -> str:
        return "sum" if self.kind == "X" else "max+max"

    def combine(self, values: Sequence[float]) -> float:
        if self.kind == "X":
            return float(sum(values))
        groups: Dict[int, List[float]] = {}
        for e, v in zip(self.entries, values):
            groups.setdefault(e.group, []).append(v)
        return float(sum(max(g) for g in groups.values()))


def default_delta(d: int) -> Fraction:
    # d=3 admits S0 only for 1/16 < delta <= 3/16 (see make_schedule)
    return Fraction(1, 10) if d == 3 else Fraction(1, 100)


def _schedule_rows(kind: str, d: int, dl: Fraction):
    two, four = Fraction(2), Fraction(4)

    def div(a, b):
        return INF if b <= 0 else Fraction(a) / b

    if kind == "X":
        return [
            (INF, Fraction(2), Fraction(0), 0, "(inf, 2), w=0"),
            (two, div(2 * d, d - 2), Fraction(1), 0, "(2, 2d/(d-2)), w=1"),
            (four, div(2 * d, d - 1), Fraction(1, 2), 0, "(4, 2d/(d-1)), w=1/2"),
            (1 / dl, div(2 * d, d - 4 * dl), 2 * dl, 0, "(1/delta, 2d/(d-4delta)), w=2delta"),
        ]
    if kind == "S0":
        g1 = [
            (1 / dl, div(2 * d, d - 8 * dl), "(1/delta, 2d/(d-8delta))"),
            (1 / dl, Fraction(d), "(1/delta, d)"),
            (1 / dl, div(d, 1 - 2 * dl), "(1/delta, d/(1-2delta))"),
            (1 / dl, div(4 * d, d - 1 + 8 * dl), "(1/delta, 4d/(d-1+8delta))"),
        ]
        qa, qb, qc = four, div(2, 1 - 2 * dl), div(2, 1 - 4 * dl)
        g2 = [
            (qa, Fraction(2 * d), "(4, 2d)"),
            (qa, div(4 * d, 1 + 16 * dl), "(4, 4d/(1+16delta))"),
            (qb, div(d, 4 * dl), "(2/(1-2delta), d/(4delta))"),
            (qb, Fraction(4 * d), "(2/(1-2delta), 4d)"),
            (qb, div(4 * d, d - 3 + 16 * dl), "(2/(1-2delta), 4d/(d-3+16delta))"),
            (qc, div(2 * d, d - 2), "(2/(1-4delta), 2d/(d-2))"),
            (qc, div(d, 8 * dl), "(2/(1-4delta), d/(8delta))"),
            (qc, div(2 * d, d - 4 + 16 * dl), "(2/(1-4delta), 2d/(d-4+16delta))"),
            (qc, div(4 * d, d - 1 + 8 * dl), "(2/(1-4delta), 4d/(d-1+8delta))"),
        ]
    elif kind == "S0prime":
        g1 = [
            (1 / dl, div(2 * d, d - 8 * dl), "(1/delta, 2d/(d-8delta))"),
            (2 / dl, Fraction(d), "(2/delta, d)"),
            (2 / dl, div(d, 1 - 2 * dl), "(2/delta, d/(1-2delta))"),
            (2 / dl, div(4 * d, d - 1 + 8 * dl), "(2/delta, 4d/(d-1+8delta))"),
        ]
        qa, qb, qc = div(4, 1 - dl), div(2, 1 - 3 * dl), div(2, 1 - 5 * dl)
        g2 = [
            (qa, Fraction(2 * d), "(4/(1-delta), 2d)"),
            (qa, div(4 * d, 1 + 16 * dl), "(4/(1-delta), 4d/(1+16delta))"),
            (qb, div(d, 4 * dl), "(2/(1-3delta), d/(4delta))"),
            (qb, Fraction(4 * d), "(2/(1-3delta), 4d)"),
            (qb, div(4 * d, d - 3 + 16 * dl), "(2/(1-3delta), 4d/(d-3+16delta))"),
            (qc, div(2 * d, d - 2), "(2/(1-5delta), 2d/(d-2))"),
            (qc, div(d, 8 * dl), "(2/(1-5delta), d/(8delta))"),
            (qc, div(2 * d, d - 4 + 16 * dl), "(2/(1-5delta), 2d/(d-4+16delta))"),
            (qc, div(4 * d, d - 1 + 8 * dl), "(2/(1-5delta), 4d/(d-1+8delta))"),
        ]
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    rows = [(q, r, Fraction(0), 0, lab) for q, r, lab in g1]
    rows += [(q, r, (0 if q == INF else 2 / q), 1, lab + ", w=2/q") for q, r, lab in g2]
    return rows


def make_schedule(kind: str, d: int, delta=None) -> NormSchedule:
    """Exponent table of the X norm or of S0 / S0'; raises on the first invalid entry."""
    if kind in ("S0", "S0prime") and d < 3:
        raise ValueError(f"{kind} needs d >= 3, got d={d}")
    dl = default_delta(d) if delta is None else _frac(delta)
    if not 0 < dl < Fraction(1, 2):
        raise ValueError(f"delta must lie in (0, 1/2), got {dl}")
    entries = []
    for q, r, w, group, label in _schedule_rows(kind, d, dl):
        if q == INF and not label.startswith("(inf"):
            raise ValueError(f"{kind} entry {label}: time exponent is infinite for delta={dl}, d={d}")
        if q != INF and q < 2:
            raise ValueError(f"{kind} entry {label}: q = {q} < 2 for delta={dl}, d={d}")
        if r == INF or r < 2:
            shown = "inf or negative" if r == INF else str(r)
            raise ValueError(f"{kind} entry {label}: r = {shown} outside [2, inf) for delta={dl}, d={d}")
        entries.append(ScheduleEntry(q, r, w, group, label))
    return NormSchedule(kind, d, dl, tuple(entries))


# --------------------------------------------------------------- trajectories


class Trajectory:
    """Spectral snapshots on a uniform time lattice t_m = t0 + m dt, m = 0..M."""

    def __init__(self, grid: Grid, times, data: Optional[np.ndarray] = None):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        if self.times.ndim != 1 or self.times.size == 0:
            raise ValueError("trajectory needs at least one time point")
        if self.times.size > 1:
            steps = np.diff(self.times)
            if np.any(steps == 0) or np.max(np.abs(steps - steps[0])) > 1e-9 * abs(steps[0]):
                raise ValueError("trajectory times must be uniformly spaced")
        if data is not None:
            data = np.asarray(data)
            if data.shape != (self.times.size,) + grid.shape:
                raise ValueError("snapshot array does not match times x grid")
        self._data = data

    def __len__(self) -> int:
        return self.times.size

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self) > 1 else 0.0

    @property
    def window(self) -> Tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def snapshot(self, m: int) -> np.ndarray:
        return self._data[m]

    def field(self, m: int) -> Field:
        return Field(self.grid, self.snapshot(m), "spectral")

    def stack(self) -> np.ndarray:
        if self._data is not None:
            return self._data
        return np.stack([self.snapshot(m) for m in range(len(self))])

    def restrict(self, m0: int, m1: int) -> "Trajectory":
        """Snapshots m0..m1 inclusive."""
        return Trajectory(self.grid, self.times[m0:m1 + 1], self.stack()[m0:m1 + 1])

    def scaled(self, a: complex) -> "Trajectory":
        return Trajectory(self.grid, self.times, a * self.stack())

    def __add__(self, other: "Trajectory") -> "Trajectory":
        self._check(other)
        return Trajectory(self.grid, self.times, self.stack() + other.stack())

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        self._check(other)
        return Trajectory(self.grid, self.times, self.stack() - other.stack())

    def _check(self, other: "Trajectory") -> None:
        if other.grid != self.grid or len(other) != len(self) or not np.allclose(other.times, self.times):
            raise ValueError("trajectories do not share grid and time lattice")


class LinearTrajectory(Trajectory):
    """z(t) = S(t) phi, evaluated lazily snapshot by snapshot."""

    def __init__(self, grid: Grid, times, phi_hat: np.ndarray, phase_sign: int = -1):
        super().__init__(grid, times, None)
        self.phi_hat = np.asarray(phi_hat, dtype=complex)
        self.phase_sign = phase_sign

    def snapshot(self, m: int) -> np.ndarray:
        return self.phi_hat * phase_symbol(self.grid, self.times[m], self.phase_sign)

    def restrict(self, m0: int, m1: int) -> "LinearTrajectory":
        return LinearTrajectory(self.grid, self.times[m0:m1 + 1], self.phi_hat, self.phase_sign)

    def scaled(self, a: complex) -> "LinearTrajectory":
        return LinearTrajectory(self.grid, self.times, a * self.phi_hat, self.phase_sign)


# ---------------------------------------------------------------------- norms


def sobolev_norm(f: Field, s: float, homogeneous: bool = False) -> float:
    """(sum w(xi)^2 |f^|^2 (pi/L)^d)^(1/2) with w = |xi|^s or <xi>^s."""
    f = f.spectral()
    w = fractional_symbol(f.grid, s) if homogeneous else bessel_symbol(f.grid, s)
    return float(np.sqrt(np.sum((w * np.abs(f.data)) ** 2) * f.grid.spectral_cell))


def lebesgue_norm(values: np.ndarray, r: float, weight: float, axis=None) -> np.ndarray:
    """(sum |v|^r * weight)^(1/r), computed with max-scaling so large r cannot overflow."""
    a = np.abs(values)
    top = np.max(a, axis=axis, keepdims=True)
    if r == INF:
        return np.squeeze(top, axis=axis) if axis is not None else float(top.item())
    safe = np.where(top > 0, top, 1.0)
    total = np.sum((a / safe) ** r, axis=axis, keepdims=True) * weight
    out = np.where(top > 0, safe * total ** (1.0 / r), 0.0)
    return np.squeeze(out, axis=axis) if axis is not None else float(out.item())


def time_norm(values: Sequence[float], q: float, dt: float) -> float:
    """Trapezoid-weighted L^q over a uniform time lattice (max for q = inf)."""
    a = np.abs(np.asarray(values, dtype=float))
    if q == INF:
        return float(a.max())
    if a.size < 2:
        return 0.0
    w = np.full(a.size, abs(dt))
    w[0] *= 0.5
    w[-1] *= 0.5
    top = a.max()
    if top == 0:
        return 0.0
    return float(top * np.sum(w * (a / top) ** q) ** (1.0 / q))


@lru_cache(maxsize=64)
def _weight_symbol(grid: Grid, s: float, w: float) -> np.ndarray:
    out = bessel_symbol(grid, s) * fractional_symbol(grid, w)
    out.setflags(write=False)
    return out


def spatial_norm_table(traj: Trajectory, pairs: Sequence[Tuple[float, float]], s: float = 0.0) -> np.ndarray:
    """Array (len(pairs), M+1) of ||<grad>^s |grad|^w u(t_m)||_{L^r} for pairs (r, w)."""
    grid = traj.grid
    weights = sorted({float(w) for _, w in pairs})
    out = np.empty((len(pairs), len(traj)))
    for m in range(len(traj)):
        snap = traj.snapshot(m)
        for w in weights:
            spec = snap * _weight_symbol(grid, float(s), w)
            top = logs = None
            for i, (r, ww) in enumerate(pairs):
                if float(ww) != w:
                    continue
                r = float(r)
                if r == 2.0:
                    # Plancherel, no transform needed
                    out[i, m] = math.sqrt(float(np.sum(np.abs(spec) ** 2)) * grid.spectral_cell)
                    continue
                if top is None:
                    a = np.abs(inverse(grid, spec))
                    top = float(a.max())
                    with np.errstate(divide="ignore"):
                        logs = np.log(a / top) if top > 0 else None
                if top == 0:
                    out[i, m] = 0.0
                elif r == INF:
                    out[i, m] = top
                else:
                    # same max-scaled sum as lebesgue_norm, sharing |u| and log|u| across r
                    out[i, m] = top * (float(np.sum(np.exp(r * logs))) * grid.cell_volume) ** (1.0 / r)
    return out


def mixed_norm(traj: Trajectory, q, r, w=0.0, s: float = 0.0) -> float:
    """||<grad>^s |grad|^w u||_{L^q_t L^r_x} on the trajectory window."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    inner = spatial_norm_table(traj, [(float(r), float(w))], s)[0]
    return time_norm(inner, float(q), traj.dt)


def schedule_values(traj: Trajectory, schedule: NormSchedule, s: float = 0.0) -> List[float]:
    pairs = [(float(e.r), float(e.weight)) for e in schedule.entries]
    table = spatial_norm_table(traj, pairs, s)
    return [time_norm(table[i], float(e.q), traj.dt) for i, e in enumerate(schedule.entries)]


def schedule_norm(traj: Trajectory, schedule: NormSchedule, s: float = 0.0) -> float:
    """||<grad>^s u|| in the schedule's norm (sum for X, max+max for S0 / S0')."""
    if schedule.d != traj.grid.d:
        raise ValueError("schedule dimension does not match the trajectory grid")
    return schedule.combine(schedule_values(traj, schedule, s))


def schedule_rows(traj: Trajectory, schedule: NormSchedule, s: float = 0.0) -> List[dict]:
    vals = schedule_values(traj, schedule, s)
    return [{"entry_q": float(e.q), "entry_r": float(e.r), "weight": float(e.weight), "value": v}
            for e, v in zip(schedule.entries, vals)]


def write_norm_table(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["entry_q", "entry_r", "weight", "value"], lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(row[k])) for k in writer.fieldnames})


def good_set_statistic(phi: Field, z: Trajectory, s: float, kind: str = "E_R", delta=None) -> float:
    sched_kind, weighted, _ = GOOD_SETS[kind]
    schedule = make_schedule(sched_kind, phi.grid.d, delta)
    return sobolev_norm(phi, s) + schedule_norm(z, schedule, s if weighted else 0.0)


def good_set_member(phi: Field, z: Trajectory, s: float, R: float, kind: str = "E_R",
                    delta=None) -> Tuple[bool, float]:
    """Membership in E_R, E_R', Omega_T, Omega_phi or Omega_mu, with the statistic."""
    if kind not in GOOD_SETS:
        raise ValueError(f"unknown good set {kind!r}")
    stat = good_set_statistic(phi, z, s, kind, delta)
    strict = GOOD_SETS[kind][2]
    return (stat < R if strict else stat <= R), stat


def window_doubling(norm_of_window: Callable[[float], float], T0: float, levels: int = 3) -> dict:
    """Evaluate a window-dependent norm on T0, 2T0, ... and report relative increments."""
    windows = [T0 * 2**k for k in range(levels)]
    values = [norm_of_window(T) for T in windows]
    incs = [abs(b - a) / a if a else 0.0 for a, b in zip(values, values[1:])]
    return {"windows": windows, "values": values, "increments": incs}
