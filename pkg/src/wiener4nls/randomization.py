"""Wiener randomization of initial data on unit (or dilated) frequency cubes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtri

from .spectral import Field, Grid, bump, cube_range, make_grid

LAWS = ("complex_gaussian", "bernoulli", "custom")

# splitmix64 constants
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z ^ (z >> np.uint64(30))
        z = z * _MIX1
        z = z ^ (z >> np.uint64(27))
        z = z * _MIX2
        return z ^ (z >> np.uint64(31))


def _as_u64(x) -> np.ndarray:
    return np.asarray(np.asarray(x, dtype=np.int64).astype(np.uint64))


def derive_seed(base_seed: int, index: int) -> int:
    """Seed of ensemble member ``index``; a pure function of its inputs."""
    z = _mix(np.atleast_1d(np.uint64(int(base_seed) & _MASK64)))
    with np.errstate(over="ignore"):
        z = _mix(z ^ (_as_u64([index]) * _GOLDEN + np.uint64(0x632BE59BD9B4E019)))
    return int(z[0])


def cube_hash(base_seed: int, cubes: np.ndarray) -> np.ndarray:
    """Counter-based 64-bit key per cube index row (shape (m, d) -> (m,))."""
    cubes = np.atleast_2d(np.asarray(cubes, dtype=np.int64))
    z = np.full(cubes.shape[0], np.uint64(int(base_seed) & _MASK64))
    z = _mix(z)
    with np.errstate(over="ignore"):
        for j in range(cubes.shape[1]):
            z = _mix(z + _GOLDEN * np.uint64(j + 1) + _as_u64(cubes[:, j]))
    return z


def _unit_uniform(key: np.ndarray, stream: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = _mix(key + _GOLDEN * np.uint64(stream + 101))
    # 53 random bits, centred in their bin so the result lies in (0, 1)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


@dataclass(frozen=True)
class RandomCoefficientModel:
    """Law of g_n = X_n + i Y_n with independent components drawn per cube from a hash."""

    law: str = "complex_gaussian"
    seed: int = 0
    table: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"unknown coefficient law {self.law!r}")
        if self.law == "custom":
            if self.table is None:
                raise ValueError("custom law needs a (values, probabilities) table")
            vals, probs = self.table
            if len(vals) != len(probs) or not np.isclose(sum(probs), 1.0):
                raise ValueError("custom table probabilities must sum to one")

    def with_seed(self, seed: int) -> "RandomCoefficientModel":
        return RandomCoefficientModel(self.law, int(seed), self.table)

    def component(self, u: np.ndarray) -> np.ndarray:
        if self.law == "complex_gaussian":
            return ndtri(u)
        if self.law == "bernoulli":
            return np.where(u < 0.5, -1.0, 1.0)
        vals, probs = self.table
        idx = np.searchsorted(np.cumsum(probs), u, side="right")
        return np.asarray(vals, dtype=float)[np.minimum(idx, len(vals) - 1)]

    def draw(self, cubes) -> np.ndarray:
        """Coefficients for an (m, d) array of cube indices."""
        key = cube_hash(self.seed, cubes)
        return self.component(_unit_uniform(key, 0)) + 1j * self.component(_unit_uniform(key, 1))

    def second_moment(self) -> float:
        """E|g|^2 (2 for both built-in laws)."""
        if self.law in ("complex_gaussian", "bernoulli"):
            return 2.0
        vals, probs = map(np.asarray, self.table)
        return float(2.0 * np.sum(probs * vals**2))

    def mgf_constant(self) -> Optional[float]:
        return {"complex_gaussian": 0.5, "bernoulli": 1.0}.get(self.law)


@dataclass(frozen=True)
class PartitionFunction:
    """psi(xi) = prod_j eta(xi_j) from the order-p smoothstep, dilated: psi^mu(xi) = psi(xi/mu)."""

    order: int = 3
    d: int = 3
    mu: float = 1.0

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("partition smoothness order must be >= 1")
        if not self.mu > 0:
            raise ValueError("dilation scale must be positive")

    def dilated(self, mu: float) -> "PartitionFunction":
        return PartitionFunction(self.order, self.d, mu)

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.prod(bump(xi / self.mu, self.order), axis=-1)

    def axis_matrix(self, grid: Grid, lo: int, count: int) -> np.ndarray:
        """eta(xi_k/mu - n) for the lattice frequencies k and cubes n = lo..lo+count-1."""
        cubes = lo + np.arange(count)
        return bump(grid.xi1d[:, None] / self.mu - cubes[None, :], self.order)

    def cube_box(self, grid: Grid) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
        lo, hi = cube_range(grid, self.mu)
        return (lo,) * grid.d, (hi - lo + 1,) * grid.d

    def partition_sum(self, grid: Grid) -> np.ndarray:
        lo, shape = self.cube_box(grid)
        return assemble_multiplier(grid, self, lo, np.ones(shape))

    def energy_weight(self, grid: Grid) -> np.ndarray:
        """W(xi) = (sum_n psi(xi - n)^2)^(1/2)."""
        lo, shape = self.cube_box(grid)
        out = np.ones(grid.shape)
        for j in range(grid.d):
            A = self.axis_matrix(grid, lo[j], shape[j])
            col = np.sqrt(np.sum(A**2, axis=1))
            sh = [1] * grid.d
            sh[j] = grid.n
            out = out * col.reshape(sh)
        return out


def make_partition(p: int = 3, d: int = 3, mu: float = 1.0) -> PartitionFunction:
    return PartitionFunction(int(p), int(d), float(mu))


@dataclass
class CoefficientBox:
    """Coefficients on a rectangular box of cube indices starting at ``lo``."""

    lo: Tuple[int, ...]
    values: np.ndarray

    def as_dict(self) -> Dict[Tuple[int, ...], complex]:
        out = {}
        for idx in np.ndindex(self.values.shape):
            n = tuple(int(a + b) for a, b in zip(self.lo, idx))
            out[n] = complex(self.values[idx])
        return out


def box_indices(lo: Sequence[int], shape: Sequence[int]) -> np.ndarray:
    axes = [lo[j] + np.arange(shape[j]) for j in range(len(shape))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def sample_coefficients(model: RandomCoefficientModel, cubes: Iterable) -> Dict[Tuple[int, ...], complex]:
    cubes = [tuple(int(c) for c in n) for n in cubes]
    if not cubes:
        return {}
    vals = model.draw(np.array(cubes))
    return {n: complex(v) for n, v in zip(cubes, vals)}


def sample_box(model: RandomCoefficientModel, partition: PartitionFunction, grid: Grid) -> CoefficientBox:
    lo, shape = partition.cube_box(grid)
    vals = model.draw(box_indices(lo, shape)).reshape(shape)
    return CoefficientBox(lo, vals)


def coefficients_to_json(coeffs: Mapping) -> str:
    if isinstance(coeffs, CoefficientBox):
        coeffs = coeffs.as_dict()
    payload = {",".join(str(c) for c in n): [float(g.real), float(g.imag)] for n, g in sorted(coeffs.items())}
    return json.dumps(payload, sort_keys=True)


def coefficients_from_json(text: str) -> Dict[Tuple[int, ...], complex]:
    raw = json.loads(text)
    return {tuple(int(c) for c in k.split(",")): complex(v[0], v[1]) for k, v in raw.items()}


def assemble_multiplier(grid: Grid, partition: PartitionFunction, lo, values: np.ndarray) -> np.ndarray:
    """sum_n g_n psi(xi - n) over the lattice by per-axis contraction."""
    out = np.asarray(values)
    for j in range(grid.d):
        A = partition.axis_matrix(grid, lo[j], values.shape[j])
        out = np.tensordot(out, A, axes=([0], [1]))
    return out


def _needed_box(grid: Grid, partition: PartitionFunction, phi_hat: np.ndarray):
    """Cube box touching supp(phi_hat) with nonzero psi weight."""
    lo_all, shape_all = partition.cube_box(grid)
    lo, hi = [], []
    for j in range(grid.d):
        axes = tuple(a for a in range(grid.d) if a != j)
        support = np.any(phi_hat != 0, axis=axes) if axes else phi_hat != 0
        A = partition.axis_matrix(grid, lo_all[j], shape_all[j])
        used = np.nonzero(np.any(A[support] > 0, axis=0))[0]
        if used.size == 0:
            return None
        lo.append(lo_all[j] + int(used.min()))
        hi.append(lo_all[j] + int(used.max()))
    return tuple(lo), tuple(h - l + 1 for l, h in zip(lo, hi))


def randomize(phi: Field, partition: PartitionFunction, coeffs) -> Field:
    """phi^omega = sum_n g_n psi(D - n) phi, assembled in one pass on the lattice."""
    if not phi.is_spectral:
        raise ValueError("randomize expects a spectral field")
    grid = phi.grid
    if partition.d != grid.d:
        raise ValueError("partition dimension does not match the grid")
    if isinstance(coeffs, CoefficientBox):
        values, lo = coeffs.values, coeffs.lo
        need = _needed_box(grid, partition, phi.data)
        if need is not None:
            nlo, nshape = need
            for j in range(grid.d):
                if nlo[j] < lo[j] or nlo[j] + nshape[j] > lo[j] + values.shape[j]:
                    raise ValueError("coefficient box does not cover the support of phi")
    else:
        need = _needed_box(grid, partition, phi.data)
        if need is None:
            return Field(grid, np.zeros(grid.shape, dtype=complex), "spectral")
        lo, shape = need
        values = np.zeros(shape, dtype=complex)
        missing = []
        for row, n in enumerate(box_indices(lo, shape)):
            key = tuple(int(c) for c in n)
            if key in coeffs:
                values.flat[row] = coeffs[key]
            else:
                missing.append(key)
        if missing:
            # a missing cube is harmless only if psi(. - n) phi^ vanishes identically
            w = np.zeros(grid.shape)
            for key in missing:
                w += np.abs(np.prod([_axis(grid, partition, j, key[j]) for j in range(grid.d)], axis=0))
            if np.any((w > 0) & (phi.data != 0)):
                raise ValueError(f"coefficient map misses cubes meeting supp(phi^), e.g. {missing[0]}")
    W = assemble_multiplier(grid, partition, lo, values)
    return Field(grid, W * phi.data, "spectral")


def _axis(grid: Grid, partition: PartitionFunction, j: int, nj: int) -> np.ndarray:
    sh = [1] * grid.d
    sh[j] = grid.n
    return bump(grid.xi1d / partition.mu - nj, partition.order).reshape(sh)


def randomize_dilated(phi: Field, mu: float, partition: PartitionFunction, coeffs) -> Field:
    """sum_n g_n psi^mu(D - mu n) phi."""
    if not 0 < mu <= 1:
        raise ValueError("dilation scale must lie in (0, 1]")
    return randomize(phi, partition.dilated(mu), coeffs)


def _is_power_of_two(mu: float) -> bool:
    m = np.log2(mu)
    return bool(np.isfinite(m) and abs(m - round(m)) < 1e-12)


def dilated_grid(grid: Grid, mu: float) -> Grid:
    return make_grid(grid.d, grid.n, mu * grid.L)


def dilate_field(phi: Field, mu: float, target: Optional[Grid] = None) -> Field:
    """phi_mu(x) = mu^(-3/2) phi(x/mu), carried onto the nested box [-mu L, mu L)^d.

    The target lattice has spacing pi/(mu L) so xi -> mu xi maps it index-for-index
    onto the source lattice; a finer target (more points, same box) is zero-padded.
    """
    if not mu > 0 or not _is_power_of_two(mu):
        raise ValueError(f"dilation scale {mu} is not a power of two")
    src = phi.grid
    target = target or dilated_grid(src, mu)
    if target.d != src.d or abs(target.L - mu * src.L) > 1e-12 * src.L or target.n < src.n:
        raise ValueError("target grid is not compatible with the dilation")
    data = phi.spectral().data * mu ** (src.d - 1.5)
    if target.n > src.n:
        data = _zero_pad(data, src.n, target.n, src.d)
    return Field(target, data, "spectral")


def _zero_pad(data: np.ndarray, n: int, m: int, d: int) -> np.ndarray:
    out = np.zeros((m,) * d, dtype=complex)
    k = np.fft.fftfreq(n, 1.0 / n).astype(int)
    idx = np.where(k < 0, k + m, k)
    out[np.ix_(*([idx] * d))] = data
    return out


@dataclass(frozen=True)
class SobolevSampleSpec:
    """Deterministic test data with |phi^(xi)| = amplitude * <xi>^(-alpha), phase 0.

    phi lies in H^s exactly when s < alpha - d/2.
    """

    alpha: float = 2.0
    amplitude: float = 1.0
    band_limit: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("profile exponent alpha must be positive")

    def regularity_threshold(self, d: int) -> float:
        return self.alpha - d / 2.0

    def in_sobolev(self, s: float, d: int) -> bool:
        return s < self.regularity_threshold(d)

    def spectrum(self, grid: Grid, mu: float = 1.0) -> np.ndarray:
        """phi_mu^(xi) = mu^(d - 3/2) phi^(mu xi) evaluated on the lattice."""
        out = self.amplitude * mu ** (grid.d - 1.5) * (1.0 + mu**2 * grid.xi_sq) ** (-0.5 * self.alpha)
        if self.band_limit:
            from .spectral import dealias_mask

            out = np.where(dealias_mask(grid), out, 0.0)
        return out.astype(complex)

    def field(self, grid: Grid, mu: float = 1.0) -> Field:
        return Field(grid, self.spectrum(grid, mu), "spectral")

    def scaled(self, amplitude: float) -> "SobolevSampleSpec":
        return SobolevSampleSpec(self.alpha, amplitude, self.band_limit)

    def to_dict(self) -> dict:
        return asdict(self)


def mgf_bound_check(model: RandomCoefficientModel, kappas, c: float, samples: int = 100_000,
                    tolerance: float = 0.05, seed: Optional[int] = None) -> dict:
    """Compare the empirical component MGF E[e^(kappa X)] with e^(c kappa^2)."""
    kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
    m = model if seed is None else model.with_seed(seed)
    cubes = np.stack([np.arange(samples), np.zeros(samples, dtype=np.int64)], axis=1)
    g = m.draw(cubes)
    x = np.concatenate([g.real, g.imag])
    rows = []
    for kappa in kappas:
        emp = float(np.mean(np.exp(kappa * x)))
        bound = float(np.exp(c * kappa**2))
        rows.append({"kappa": float(kappa), "empirical": emp, "bound": bound,
                     "ok": bool(emp <= bound * (1.0 + tolerance))})
    return {"law": model.law, "c": c, "samples": 2 * samples, "rows": rows,
            "ok": all(r["ok"] for r in rows)}
