"""Periodic grids, spectral transforms, and dyadic band projections.

Conventions used throughout the package:

* the spatial domain is the n-torus ``[0, period)^n`` sampled on ``N`` points
  per axis, so fields are plain numpy arrays of shape ``(m, N, ..., N)``;
* the frequency lattice is the integer lattice returned by ``fftfreq(N) * N``,
  and the physical wavenumber of lattice point ``xi`` is ``2*pi*xi/period``
  (for the default period ``2*pi`` the two coincide);
* the forward transform carries ``1/N^n``, so the coefficient at ``xi = 0`` is
  the mean of the field.  Norms that must satisfy Parseval against the
  cell-volume-weighted discrete L^2 norm carry the torus volume explicitly
  (see :mod:`wavemap_lab.norms`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class GridSpec:
    """Uniform discretization of the n-torus with an integer frequency lattice.

    ``N`` must be even so the lattice is symmetric under negation up to the
    shared Nyquist index; powers of two are the usual choice but any even
    count supported by the FFT is accepted.
    """

    n: int
    N: int
    period: float = TWO_PI

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"spatial dimension must be >= 1, got {self.n}")
        if self.N < 4 or self.N % 2 != 0:
            raise ValueError(f"points per axis must be even and >= 4, got {self.N}")
        if not (self.period > 0.0 and math.isfinite(self.period)):
            raise ValueError(f"period must be positive and finite, got {self.period}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def num_points(self) -> int:
        return self.N**self.n

    @property
    def spacing(self) -> float:
        return self.period / self.N

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.n

    @property
    def volume(self) -> float:
        return self.period**self.n

    @property
    def freq_scale(self) -> float:
        """Physical wavenumber of the first lattice mode, ``2*pi/period``."""
        return TWO_PI / self.period

    @property
    def nyquist(self) -> float:
        """Largest per-axis physical wavenumber resolved by the grid."""
        return (self.N // 2) * self.freq_scale

    def axes(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays of the grid, one 1-d array per axis."""
        x = np.arange(self.N) * self.spacing
        return (x,) * self.n


@lru_cache(maxsize=None)
def _wavevectors(grid: GridSpec) -> tuple[np.ndarray, ...]:
    """Derivative wavevectors along each axis, broadcastable to ``grid.shape``.

    The shared Nyquist index (xi = -N/2 for even N) is zeroed: a one-sided
    ``i*kappa`` there breaks the skew-symmetry of spectral differentiation on
    real data, which shows up as a resolution-independent energy leak in the
    evolution.  Band-limited fields are differentiated exactly either way.
    """
    k1 = np.fft.fftfreq(grid.N, d=1.0 / grid.N) * grid.freq_scale
    k1[grid.N // 2] = 0.0
    out = []
    for j in range(grid.n):
        shape = [1] * grid.n
        shape[j] = grid.N
        arr = k1.reshape(shape)
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


@lru_cache(maxsize=None)
def _laplacian_multiplier(grid: GridSpec) -> np.ndarray:
    """Symbol of div(grad(.)) built from the derivative wavevectors, so the
    Laplacian is exactly the composition of the gradient with its adjoint."""
    mult = np.zeros(grid.shape)
    for kj in _wavevectors(grid):
        mult = mult - kj**2
    mult.setflags(write=False)
    return mult


@lru_cache(maxsize=None)
def _wavenumber_magnitude(grid: GridSpec) -> np.ndarray:
    """True radial wavenumber |kappa|, Nyquist included (multiplier symbols
    and norm weights want the honest magnitude, unlike the derivative
    wavevectors)."""
    k1 = np.fft.fftfreq(grid.N, d=1.0 / grid.N) * grid.freq_scale
    mag2 = np.zeros(grid.shape)
    for j in range(grid.n):
        shape = [1] * grid.n
        shape[j] = grid.N
        mag2 = mag2 + k1.reshape(shape) ** 2
    mag = np.sqrt(mag2)
    mag.setflags(write=False)
    return mag


@dataclass(frozen=True)
class DyadicRange:
    """Dyadic levels usable on a grid: band projections live at
    ``k_min < k <= k_max``, and ``P_{<=k_min}`` is the residual low piece
    (the zero mode, for the canonical ``k_min``)."""

    k_min: int
    k_max: int

    def __post_init__(self) -> None:
        if self.k_min >= self.k_max:
            raise ValueError(f"need k_min < k_max, got [{self.k_min}, {self.k_max}]")

    @classmethod
    def for_grid(cls, grid: GridSpec) -> "DyadicRange":
        """Widest range with every band annulus fully resolved.

        ``k_max`` is the largest level with ``2^(k_max+1) <= nyquist``;
        ``k_min`` is the largest level whose ball multiplier vanishes on all
        nonzero lattice points, so ``P_{<=k_min}`` is exactly the mean.
        """
        k_max = math.floor(math.log2(grid.nyquist)) - 1
        while 2.0 ** (k_max + 2) <= grid.nyquist:
            k_max += 1
        while 2.0 ** (k_max + 1) > grid.nyquist:
            k_max -= 1
        k_min = math.floor(math.log2(grid.freq_scale)) - 1
        while 2.0 ** (k_min + 1) <= grid.freq_scale / 2.0:
            k_min += 1
        while 2.0**k_min > grid.freq_scale / 2.0:
            k_min -= 1
        if k_min >= k_max:
            raise ValueError(
                f"grid {grid.n}x{grid.N} resolves no dyadic band "
                f"(k_min={k_min}, k_max={k_max}); increase N"
            )
        return cls(k_min, k_max)

    def bands(self) -> range:
        """Levels at which band projections are defined."""
        return range(self.k_min + 1, self.k_max + 1)

    def __contains__(self, k: int) -> bool:
        return self.k_min <= k <= self.k_max


def _as_field_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == grid.n:
        arr = arr[np.newaxis]
    if arr.ndim != grid.n + 1 or arr.shape[1:] != grid.shape:
        raise ValueError(
            f"expected component-major values of shape (m,) + {grid.shape}, got {arr.shape}"
        )
    return arr


@dataclass(frozen=True)
class Field:
    """Real m-component function sampled on a grid, immutable once built."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = _as_field_values(self.values, self.grid)
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @classmethod
    def constant(cls, grid: GridSpec, vec) -> "Field":
        vec = np.atleast_1d(np.asarray(vec, dtype=np.float64))
        vals = np.broadcast_to(vec.reshape(vec.shape + (1,) * grid.n), vec.shape + grid.shape)
        return cls(grid, vals.copy())

    @classmethod
    def zeros(cls, grid: GridSpec, m: int = 1) -> "Field":
        return cls(grid, np.zeros((m,) + grid.shape))


@dataclass(frozen=True)
class Spectrum:
    """Fourier coefficients of a Field; coefficient at 0 is the mean."""

    grid: GridSpec
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.coefficients, dtype=np.complex128)
        if arr.ndim == self.grid.n:
            arr = arr[np.newaxis]
        if arr.ndim != self.grid.n + 1 or arr.shape[1:] != self.grid.shape:
            raise ValueError(f"bad spectrum shape {arr.shape} for grid {self.grid.shape}")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.setflags(write=False)
        object.__setattr__(self, "coefficients", arr)

    @property
    def m(self) -> int:
        return self.coefficients.shape[0]


def transform(f: Field) -> Spectrum:
    axes = tuple(range(1, f.grid.n + 1))
    coeffs = np.fft.fftn(f.values, axes=axes) / f.grid.num_points
    return Spectrum(f.grid, coeffs)


def inverse_transform(sp: Spectrum) -> Field:
    axes = tuple(range(1, sp.grid.n + 1))
    vals = np.fft.ifftn(sp.coefficients * sp.grid.num_points, axes=axes)
    return Field(sp.grid, vals.real)


def bump_symbol(s):
    """Radial profile of the ball multiplier: 1 for ``s <= 1``, 0 for
    ``s >= 2``, and the smooth partition ``h(2 - s)`` in between, where
    ``h(t) = g(t) / (g(t) + g(1-t))`` with ``g(t) = exp(-1/t)`` for positive t.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < 0):
        raise ValueError("bump_symbol is defined for s >= 0")
    t = 2.0 - s_arr
    gt = _exp_neg_inv(t)
    g1t = _exp_neg_inv(1.0 - t)
    with np.errstate(invalid="ignore"):
        out = np.where(t >= 1.0, 1.0, np.where(t <= 0.0, 0.0, gt / (gt + g1t)))
    return float(out) if np.isscalar(s) or s_arr.ndim == 0 else out


def _exp_neg_inv(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    pos = t > 0.0
    with np.errstate(over="ignore", divide="ignore"):
        out[pos] = np.exp(-1.0 / t[pos])
    return out


@lru_cache(maxsize=None)
def _ball_multiplier(grid: GridSpec, k: int) -> np.ndarray:
    mult = bump_symbol(_wavenumber_magnitude(grid) * 2.0 ** (-k))
    mult.setflags(write=False)
    return mult


def _check_level(grid: GridSpec, k: int, lowest: int | None = None) -> None:
    rng = DyadicRange.for_grid(grid)
    if k > rng.k_max:
        raise ValueError(
            f"dyadic level {k} exceeds the Nyquist-supported maximum {rng.k_max} "
            f"for this grid"
        )
    if lowest is not None and lowest < rng.k_min:
        raise ValueError(
            f"dyadic level {lowest} is below the grid low cut {rng.k_min}"
        )


def _apply_multiplier(f: Field | Spectrum, mult: np.ndarray) -> Field:
    if isinstance(f, Field):
        sp = transform(f)
    else:
        sp = f
    return inverse_transform(Spectrum(sp.grid, sp.coefficients * mult))


def project_leq(f: Field | Spectrum, k: int) -> Field:
    """Low-pass projection to the frequency ball ``|xi| <~ 2^k``."""
    _check_level(f.grid, k)
    return _apply_multiplier(f, _ball_multiplier(f.grid, k))


def project_band(f: Field | Spectrum, k: int) -> Field:
    """Band projection to the annulus ``2^(k-1) <= |xi| <= 2^(k+1)``."""
    _check_level(f.grid, k, lowest=k - 1)
    mult = _ball_multiplier(f.grid, k) - _ball_multiplier(f.grid, k - 1)
    return _apply_multiplier(f, mult)


def project_range(f: Field | Spectrum, k1: int, k2: int) -> Field:
    """Projection ``P_{<=k2} - P_{<k1}`` onto levels ``k1 <= k <= k2``."""
    if k1 > k2:
        raise ValueError(f"need k1 <= k2, got [{k1}, {k2}]")
    _check_level(f.grid, k2, lowest=k1 - 1)
    mult = _ball_multiplier(f.grid, k2) - _ball_multiplier(f.grid, k1 - 1)
    return _apply_multiplier(f, mult)


def spatial_gradient(f: Field) -> list[Field]:
    """All n spatial derivatives by exact spectral differentiation."""
    sp = transform(f)
    out = []
    for kj in _wavevectors(f.grid):
        out.append(inverse_transform(Spectrum(f.grid, sp.coefficients * (1j * kj))))
    return out


def laplacian(f: Field) -> Field:
    sp = transform(f)
    return inverse_transform(Spectrum(f.grid, sp.coefficients * _laplacian_multiplier(f.grid)))


def mass_outside_ball(f: Field | Spectrum, radius: float) -> float:
    """Fraction of spectral l^2 mass at physical wavenumbers above ``radius``.

    Returns 0 for identically zero input.  Used to verify Fourier-support
    claims (band supports, gauge frame supports).
    """
    sp = transform(f) if isinstance(f, Field) else f
    power = np.abs(sp.coefficients) ** 2
    total = float(power.sum())
    if total == 0.0:
        return 0.0
    outside = float(power[:, _wavenumber_magnitude(sp.grid) > radius].sum())
    return outside / total
