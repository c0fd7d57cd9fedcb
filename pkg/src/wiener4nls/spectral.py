"""Periodic-box discretization of R^d, the unitary DFT contract and Fourier multipliers.

Conventions
-----------
Physical samples live at ``x_j = -L + j h`` with ``h = 2L/n``. Spectral data
approximate the unitary continuum transform

    f^(xi) = (2 pi)^(-d/2) * integral f(x) exp(-i x.xi) dx,

so that ``sum |f^|^2 (pi/L)^d == sum |f|^2 h^d`` (discrete Plancherel) and
pointwise products in physical space are products of true function values.
Spectral arrays are stored in FFT index order (``k = 0..n/2-1, -n/2..-1``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.fft as sfft

MAX_DIM = 4
SNAPSHOT_MAGIC = b"DRL1"
_HEADER = struct.Struct("<4sIIdB11x")  # 32 bytes

_fft_workers = 1


def set_fft_workers(workers: int) -> None:
    """Threads used by every transform (pocketfft is bitwise thread-invariant)."""
    global _fft_workers
    _fft_workers = max(1, int(workers))


@dataclass(frozen=True)
class Grid:
    d: int
    n: int
    L: float

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d!r}")
        if self.d > MAX_DIM:
            raise ValueError(f"dimension {self.d} exceeds the supported maximum {MAX_DIM}")
        n = int(self.n)
        if n < 8 or n & (n - 1):
            raise ValueError(f"points per axis must be a power of two >= 8, got {self.n!r}")
        if not (self.L > 0 and np.isfinite(self.L)):
            raise ValueError(f"half width must be positive, got {self.L!r}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def dxi(self) -> float:
        """Frequency lattice spacing per axis."""
        return np.pi / self.L

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def spectral_cell(self) -> float:
        return self.dxi**self.d

    @property
    def k1d(self) -> np.ndarray:
        return _k1d(self.n)

    @property
    def xi1d(self) -> np.ndarray:
        return self.dxi * _k1d(self.n)

    @property
    def x1d(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    def xi_axis(self, j: int) -> np.ndarray:
        """Frequencies along axis ``j`` (0-based), shaped for broadcasting."""
        shape = [1] * self.d
        shape[j] = self.n
        return self.xi1d.reshape(shape)

    def x_axis(self, j: int) -> np.ndarray:
        shape = [1] * self.d
        shape[j] = self.n
        return self.x1d.reshape(shape)

    @property
    def xi_abs(self) -> np.ndarray:
        return np.sqrt(_xi_sq(self))

    @property
    def xi_sq(self) -> np.ndarray:
        return _xi_sq(self)

    @property
    def xi_max(self) -> float:
        """Largest |xi| present on the lattice (a corner of the frequency box)."""
        return float(self.dxi * (self.n // 2) * np.sqrt(self.d))

    def nyquist_mask(self, j: int) -> np.ndarray:
        """Boolean, True on the unpaired Nyquist plane of axis ``j``."""
        return self.k_axis(j) == -(self.n // 2)

    def k_axis(self, j: int) -> np.ndarray:
        shape = [1] * self.d
        shape[j] = self.n
        return _k1d(self.n).reshape(shape)


def make_grid(d: int, n: int, L: float) -> Grid:
    return Grid(int(d), int(n), float(L))


@lru_cache(maxsize=None)
def _k1d(n: int) -> np.ndarray:
    k = np.fft.fftfreq(n, 1.0 / n).astype(np.int64)
    k.setflags(write=False)
    return k


@lru_cache(maxsize=32)
def _xi_sq(grid: Grid) -> np.ndarray:
    out = np.zeros(grid.shape)
    for j in range(grid.d):
        out = out + grid.xi_axis(j) ** 2
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _parity(grid: Grid) -> np.ndarray:
    # exp(i xi_k L) = (-1)^k shifts the FFT origin to x = -L
    sign1 = np.where(_k1d(grid.n) % 2 == 0, 1.0, -1.0)
    out = np.ones(grid.shape)
    for j in range(grid.d):
        shape = [1] * grid.d
        shape[j] = grid.n
        out = out * sign1.reshape(shape)
    out.setflags(write=False)
    return out


def _norm_const(grid: Grid) -> float:
    return (grid.h / np.sqrt(2.0 * np.pi)) ** grid.d


def forward(grid: Grid, data: np.ndarray) -> np.ndarray:
    """Physical samples -> spectral coefficients over the trailing ``d`` axes."""
    axes = tuple(range(-grid.d, 0))
    out = sfft.fftn(data, axes=axes, workers=_fft_workers)
    out *= _norm_const(grid)
    out *= _parity(grid)
    return out


def inverse(grid: Grid, data: np.ndarray) -> np.ndarray:
    axes = tuple(range(-grid.d, 0))
    tmp = data * _parity(grid)
    out = sfft.ifftn(tmp, axes=axes, workers=_fft_workers, overwrite_x=True)
    out *= 1.0 / _norm_const(grid)
    return out


@dataclass(frozen=True, eq=False)
class Field:
    """Complex field on a grid, tagged with its representation."""

    grid: Grid
    data: np.ndarray
    representation: str = "spectral"

    def __post_init__(self):
        if self.representation not in ("spectral", "physical"):
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.data.shape != self.grid.shape:
            raise ValueError(f"data shape {self.data.shape} does not match grid {self.grid.shape}")

    @property
    def is_spectral(self) -> bool:
        return self.representation == "spectral"

    def spectral(self) -> "Field":
        if self.is_spectral:
            return self
        return Field(self.grid, forward(self.grid, self.data), "spectral")

    def physical(self) -> "Field":
        if not self.is_spectral:
            return self
        return Field(self.grid, inverse(self.grid, self.data), "physical")

    def l2_norm(self) -> float:
        if self.is_spectral:
            return float(np.sqrt(np.sum(np.abs(self.data) ** 2) * self.grid.spectral_cell))
        return float(np.sqrt(np.sum(np.abs(self.data) ** 2) * self.grid.cell_volume))

    def __add__(self, other: "Field") -> "Field":
        _check_same(self, other)
        return Field(self.grid, self.data + other.data, self.representation)

    def __sub__(self, other: "Field") -> "Field":
        _check_same(self, other)
        return Field(self.grid, self.data - other.data, self.representation)

    def __mul__(self, scalar) -> "Field":
        return Field(self.grid, self.data * scalar, self.representation)

    __rmul__ = __mul__


def _check_same(a: Field, b: Field) -> None:
    if a.grid != b.grid or a.representation != b.representation:
        raise ValueError("fields live on different grids or representations")


def spectral_field(grid: Grid, data) -> Field:
    return Field(grid, np.asarray(data, dtype=complex), "spectral")


def physical_field(grid: Grid, data) -> Field:
    return Field(grid, np.asarray(data, dtype=complex), "physical")


def plane_wave(grid: Grid, k) -> Field:
    """exp(i xi_k . x) for the integer lattice index vector ``k``."""
    k = np.asarray(k)
    phase = np.zeros(grid.shape)
    for j in range(grid.d):
        phase = phase + grid.dxi * k[j] * grid.x_axis(j)
    return physical_field(grid, np.exp(1j * phase))


# ---------------------------------------------------------------- multipliers

MULTIPLIER_KINDS = ("fractional", "bessel", "derivative", "phase", "indicator")


@dataclass(frozen=True, eq=False)
class MultiplierSpec:
    """A Fourier symbol.

    kind:
      fractional  |xi|^s (zero mode sent to 0 when s < 0)
      bessel      <xi>^s = (1 + |xi|^2)^(s/2)
      derivative  i xi_j for axis ``j`` (Nyquist plane zeroed), or |xi| when j is None
      phase       exp(i * phase_sign * t |xi|^4)
      indicator   boolean ``mask`` over the lattice
    """

    kind: str
    s: float = 0.0
    t: float = 0.0
    j: Optional[int] = None
    phase_sign: int = -1
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in MULTIPLIER_KINDS:
            raise ValueError(f"unknown multiplier kind {self.kind!r}")
        if self.kind == "phase" and self.phase_sign not in (-1, 1):
            raise ValueError("phase_sign must be +1 or -1")
        if self.kind == "indicator" and self.mask is None:
            raise ValueError("indicator multiplier needs a mask")

    def symbol(self, grid: Grid) -> np.ndarray:
        if self.kind == "fractional":
            return fractional_symbol(grid, self.s)
        if self.kind == "bessel":
            return bessel_symbol(grid, self.s)
        if self.kind == "derivative":
            return derivative_symbol(grid, self.j)
        if self.kind == "phase":
            return phase_symbol(grid, self.t, self.phase_sign)
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != grid.shape:
            raise ValueError("indicator mask shape does not match the grid")
        return mask.astype(float)


def fractional_symbol(grid: Grid, s: float) -> np.ndarray:
    if s == 0:
        return np.ones(grid.shape)
    r = grid.xi_abs
    if s > 0:
        return r**s
    out = np.zeros(grid.shape)
    nz = r > 0
    out[nz] = r[nz] ** s
    return out


def bessel_symbol(grid: Grid, s: float) -> np.ndarray:
    if s == 0:
        return np.ones(grid.shape)
    return (1.0 + grid.xi_sq) ** (0.5 * s)


def derivative_symbol(grid: Grid, j: Optional[int]) -> np.ndarray:
    if j is None:
        return grid.xi_abs.astype(complex)
    if not 0 <= j < grid.d:
        raise ValueError(f"derivative axis {j} out of range for d={grid.d}")
    sym = 1j * grid.xi_axis(j) * np.ones(grid.shape)
    sym[np.broadcast_to(grid.nyquist_mask(j), grid.shape)] = 0.0
    return sym


def phase_symbol(grid: Grid, t: float, phase_sign: int = -1) -> np.ndarray:
    return np.exp(1j * (phase_sign * t) * grid.xi_sq**2)


def apply_multiplier(f: Field, m: MultiplierSpec) -> Field:
    if not f.is_spectral:
        raise ValueError("apply_multiplier expects a spectral field")
    with np.errstate(over="ignore", invalid="ignore"):
        out = f.data * m.symbol(f.grid)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite values after applying {m.kind} multiplier")
    return Field(f.grid, out, "spectral")


# ------------------------------------------------------ frequency projections


def smoothstep(y, order: int = 3) -> np.ndarray:
    """Odd-symmetric ramp S on [0, 1] with S(y) + S(1 - y) = 1.

    ``order`` p gives a C^(p-1) ramp: p=1 is linear, p=3 the quintic 6y^5-15y^4+10y^3.
    """
    if order < 1:
        raise ValueError("smoothstep order must be >= 1")
    y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
    N = order - 1
    from math import comb

    acc = np.zeros_like(y)
    for k in range(N + 1):
        acc = acc + comb(N + k, k) * comb(2 * N + 1, N - k) * (-y) ** k
    return y ** (N + 1) * acc


def bump(x, order: int = 3) -> np.ndarray:
    """1-D partition generator: eta(x) = S(1 - |x|), zero for |x| >= 1."""
    x = np.asarray(x, dtype=float)
    return smoothstep(1.0 - np.abs(x), order)


def cube_weights(grid: Grid, nvec, order: int = 3, mu: float = 1.0) -> np.ndarray:
    """psi^mu(xi - mu n) on the lattice."""
    nvec = np.asarray(nvec)
    w = np.ones(grid.shape)
    for j in range(grid.d):
        w = w * bump(grid.xi_axis(j) / mu - nvec[j], order)
    return w


def cube_project(f: Field, nvec, order: int = 3, mu: float = 1.0) -> Field:
    """F^-1[psi(xi - n) F f] for the tensorized smoothstep partition."""
    if not f.is_spectral:
        raise ValueError("cube_project expects a spectral field")
    return Field(f.grid, f.data * cube_weights(f.grid, nvec, order, mu), "spectral")


def cube_range(grid: Grid, mu: float = 1.0) -> tuple:
    """Inclusive per-axis range of cube indices n with (n + [-1,1]) meeting the lattice box."""
    xi = grid.xi1d / mu
    lo = int(np.ceil(xi.min() - 1.0))
    hi = int(np.floor(xi.max() + 1.0))
    return lo, hi


def _dyadic_cutoff(r, order: int) -> np.ndarray:
    # 1 on [0,1], 0 on [2, inf), smooth ramp between
    return smoothstep(2.0 - np.asarray(r, dtype=float), order)


def dyadic_levels(grid: Grid) -> list:
    """Dyadic N = 1, 2, 4, ... up to the first N with 2N past the lattice corner."""
    levels = [1]
    while levels[-1] < grid.xi_max:
        levels.append(2 * levels[-1])
    return levels


def dyadic_symbol(grid: Grid, N: int, order: int = 3) -> np.ndarray:
    if N < 1 or (N & (N - 1)):
        raise ValueError(f"dyadic level must be a power of two >= 1, got {N}")
    r = grid.xi_abs
    if N == 1:
        return _dyadic_cutoff(r, order)
    return _dyadic_cutoff(r / N, order) - _dyadic_cutoff(2.0 * r / N, order)


def dyadic_project(f: Field, N: int, order: int = 3) -> Field:
    """Littlewood-Paley piece P_N f, supported in N/2 <= |xi| <= 2N (N >= 2)."""
    if not f.is_spectral:
        raise ValueError("dyadic_project expects a spectral field")
    return Field(f.grid, f.data * dyadic_symbol(f.grid, N, order), "spectral")


@lru_cache(maxsize=32)
def dealias_mask(grid: Grid) -> np.ndarray:
    keep = np.ones(grid.shape, dtype=bool)
    for j in range(grid.d):
        keep &= np.abs(grid.k_axis(j)) <= grid.n // 4
    keep.setflags(write=False)
    return keep


def dealias(f: Field) -> Field:
    """Zero every mode with some |k_j| > n/4 (exact for cubic products of such fields)."""
    if not f.is_spectral:
        raise ValueError("dealias expects a spectral field")
    return Field(f.grid, np.where(dealias_mask(f.grid), f.data, 0.0), "spectral")


# ------------------------------------------------------------------ snapshots


def write_snapshot(path, f: Field) -> None:
    """Binary snapshot: 32-byte header then little-endian (re, im) f64 pairs, x1 fastest."""
    g = f.grid
    header = _HEADER.pack(SNAPSHOT_MAGIC, g.d, g.n, g.L, 1 if f.is_spectral else 0)
    body = np.asarray(f.data, dtype="<c16").ravel(order="F").tobytes()
    Path(path).write_bytes(header + body)


def read_snapshot(path) -> Field:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("snapshot shorter than its header")
    magic, d, n, L, rep = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    grid = make_grid(d, n, L)
    body = raw[_HEADER.size:]
    if len(body) != 16 * grid.size:
        raise ValueError("snapshot payload size does not match its header")
    data = np.frombuffer(body, dtype="<c16").reshape(grid.shape, order="F").astype(complex)
    return Field(grid, data, "spectral" if rep == 1 else "physical")
