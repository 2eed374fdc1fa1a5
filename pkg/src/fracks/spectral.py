"""Periodic pseudo-spectral discretization of R^d.

The whole space is truncated to the torus [-L, L)^d sampled on n points per
axis. Fractional powers of the Laplacian, the fractional heat semigroup and
its gradient are all Fourier multipliers on the real-to-complex half spectrum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


class GridMismatchError(ValueError):
    """Raised when fields living on different grids are combined."""


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the coupled density/chemical system.

    Args:
        d: spatial dimension (1, 2 or 3).
        alpha: fractional order of the density diffusion, in (1, 2].
        beta: fractional order of the chemical diffusion, in (1, max(d, 2)].
        chi: chemotactic sensitivity, >= 0.
        gamma: chemical degradation rate, >= 0.
        tau: chemical time constant, > 0.
    """

    d: int
    alpha: float
    beta: float
    chi: float = 1.0
    gamma: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if not 1.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (1, 2], got {self.alpha}")
        if not 1.0 < self.beta <= max(self.d, 2):
            raise ValueError(
                f"beta must lie in (1, {max(self.d, 2)}] for d={self.d}, got {self.beta}"
            )
        if self.tau is None or not self.tau > 0.0:
            raise ValueError(
                "tau must be > 0: the parabolic-elliptic case tau = 0 is excluded "
                "because the mild formulation divides by tau"
            )
        if self.chi < 0.0:
            raise ValueError(f"chi must be >= 0, got {self.chi}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice on [-L, L)^d with n samples per axis."""

    d: int
    n: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @cached_property
    def spectral_shape(self) -> tuple[int, ...]:
        return (self.n,) * (self.d - 1) + (self.n // 2 + 1,)

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays, one per axis."""
        out = []
        for i in range(self.d):
            s = [1] * self.d
            s[i] = self.n
            out.append(self.axis.reshape(s))
        return tuple(out)

    @cached_property
    def radius(self) -> np.ndarray:
        r2 = sum(c**2 for c in self.coords)
        return np.sqrt(np.broadcast_to(r2, self.shape))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Broadcastable wavenumber arrays on the half spectrum, k = pi m / L."""
        m_full = np.fft.fftfreq(self.n, d=1.0 / self.n)
        m_half = np.fft.rfftfreq(self.n, d=1.0 / self.n)
        out = []
        for i in range(self.d):
            m = m_half if i == self.d - 1 else m_full
            s = [1] * self.d
            s[i] = m.size
            out.append((np.pi / self.L) * m.reshape(s))
        return tuple(out)

    @cached_property
    def wavenumbers_odd(self) -> tuple[np.ndarray, ...]:
        """Wavenumbers with the Nyquist mode zeroed, for odd-order derivatives."""
        out = []
        for i, k in enumerate(self.wavenumbers):
            k = k.copy()
            idx = [slice(None)] * self.d
            idx[i] = self.n // 2
            k[tuple(idx)] = 0.0
            out.append(k)
        return tuple(out)

    @cached_property
    def kabs(self) -> np.ndarray:
        k2 = sum(k**2 for k in self.wavenumbers)
        return np.sqrt(np.broadcast_to(k2, self.spectral_shape))

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule mask on the half spectrum."""
        kmax = np.pi * self.n / (2.0 * self.L)
        mask = np.ones(self.spectral_shape, dtype=bool)
        for k in self.wavenumbers:
            mask &= np.abs(k) <= (2.0 / 3.0) * kmax
        return mask

    def symbol(self, a: float) -> np.ndarray:
        """|k|^a on the half spectrum, 0 at the zero mode."""
        return self.kabs**a

    def field(self, values) -> "Field":
        return Field(self, values)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))


class Field:
    """Real scalar samples on a Grid; values are read-only after construction."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        v = np.array(values, dtype=float)
        if v.size == grid.n**grid.d and v.shape != grid.shape:
            v = v.reshape(grid.shape)
        if v.shape != grid.shape:
            raise ValueError(f"values of shape {v.shape} do not match grid {grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        self.grid = grid
        self.values = v

    def _check(self, other: "Field"):
        if self.grid != other.grid:
            raise GridMismatchError(f"{self.grid} != {other.grid}")

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values + other.values)
        return Field(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values - other.values)
        return Field(self.grid, self.values - other)

    def __mul__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values * other.values)
        return Field(self.grid, self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __repr__(self):
        return f"Field(grid={self.grid})"


class VectorField:
    """d component fields on a shared Grid, stored as one (d, n, ..., n) array."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        v = np.array(values, dtype=float)
        if v.shape != (grid.d,) + grid.shape:
            raise ValueError(f"vector values of shape {v.shape} do not match grid {grid}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vector field values must be finite")
        v.setflags(write=False)
        self.grid = grid
        self.values = v

    @classmethod
    def from_components(cls, comps) -> "VectorField":
        comps = list(comps)
        grid = comps[0].grid
        for c in comps[1:]:
            if c.grid != grid:
                raise GridMismatchError("components live on different grids")
        return cls(grid, np.stack([c.values for c in comps]))

    @property
    def components(self) -> list[Field]:
        return [Field(self.grid, c) for c in self.values]

    def magnitude(self) -> Field:
        return Field(self.grid, np.sqrt(np.sum(self.values**2, axis=0)))

    def __mul__(self, scalar):
        return VectorField(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __add__(self, other: "VectorField"):
        if self.grid != other.grid:
            raise GridMismatchError(f"{self.grid} != {other.grid}")
        return VectorField(self.grid, self.values + other.values)

    def __repr__(self):
        return f"VectorField(grid={self.grid})"


def zero_vector(grid: Grid) -> VectorField:
    return VectorField(grid, np.zeros((grid.d,) + grid.shape))


# transforms

def to_spectral(f: Field) -> np.ndarray:
    return np.fft.rfftn(f.values)


def from_spectral(grid: Grid, fhat: np.ndarray) -> Field:
    return Field(grid, _irfft(grid, fhat))


def _irfft(grid: Grid, fhat: np.ndarray) -> np.ndarray:
    return np.fft.irfftn(fhat, s=grid.shape, axes=tuple(range(-grid.d, 0)))


def _check_grids(*objs):
    g = objs[0].grid
    for o in objs[1:]:
        if o.grid != g:
            raise GridMismatchError(f"{g} != {o.grid}")
    return g


# operators

def fractional_laplacian(f: Field, a: float) -> Field:
    """Lambda^a f, the multiplier |k|^a; the zero mode is annihilated."""
    if not a > 0:
        raise ValueError(f"order a must be positive, got {a}")
    return from_spectral(f.grid, f.grid.symbol(a) * to_spectral(f))


def semigroup_multiplier(grid: Grid, a: float, t: float) -> np.ndarray:
    return np.exp(-t * grid.symbol(a))


def semigroup_apply(f: Field, a: float, t: float) -> Field:
    """exp(-t Lambda^a) f; the multiplier is 1 at k = 0, so the mean is kept."""
    if t < 0:
        raise ValueError(f"semigroup time must be >= 0, got {t}")
    if t == 0:
        return Field(f.grid, f.values)
    return from_spectral(f.grid, semigroup_multiplier(f.grid, a, t) * to_spectral(f))


def grad_semigroup_apply(f: Field, a: float, t: float) -> VectorField:
    """nabla exp(-t Lambda^a) f, multiplier i k exp(-t |k|^a) per component."""
    if not t > 0:
        raise ValueError(f"gradient of the kernel is unbounded at t = 0; need t > 0, got {t}")
    g = f.grid
    fhat = semigroup_multiplier(g, a, t) * to_spectral(f)
    return VectorField(g, np.stack([_irfft(g, 1j * k * fhat) for k in g.wavenumbers_odd]))


def gradient(f: Field) -> VectorField:
    g = f.grid
    fhat = to_spectral(f)
    return VectorField(g, np.stack([_irfft(g, 1j * k * fhat) for k in g.wavenumbers_odd]))


def divergence(v: VectorField) -> Field:
    g = v.grid
    out = np.zeros(g.spectral_shape, dtype=complex)
    for comp, k in zip(v.values, g.wavenumbers_odd):
        out += 1j * k * np.fft.rfftn(comp)
    return from_spectral(g, out)


def lp_norm(f: Field, p) -> float:
    """Lattice L^p norm (h^d sum |f|^p)^(1/p); p = inf gives the lattice max."""
    p = float(p)
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    a = np.abs(f.values)
    if math.isinf(p):
        return float(a.max())
    m = a.max()
    if m == 0:
        return 0.0
    # scale by the max to avoid overflow for large p
    return float(m * (f.grid.cell_volume * np.sum((a / m) ** p)) ** (1.0 / p))


def integrate(f: Field) -> float:
    return float(f.grid.cell_volume * np.sum(f.values))


# snapshots

def write_snapshot(f: Field, path, t: float, name: str) -> tuple[Path, Path]:
    """Raw little-endian float64 samples plus a JSON sidecar header."""
    path = Path(path)
    raw = path.with_suffix(".bin")
    meta = path.with_suffix(".json")
    raw.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(f.values, dtype="<f8").tofile(raw)
    header = {"d": f.grid.d, "n": f.grid.n, "L": f.grid.L, "t": float(t), "name": name}
    meta.write_text(json.dumps(header, sort_keys=True) + "\n")
    return raw, meta


def read_snapshot(path) -> tuple[Field, float, str]:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    grid = Grid(int(header["d"]), int(header["n"]), float(header["L"]))
    values = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    return Field(grid, values), float(header["t"]), str(header["name"])
