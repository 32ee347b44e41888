"""Sobolev, mixed spacetime, and frequency-localized norms, plus frequency
envelopes and their validity checks.

The homogeneous Sobolev norm excludes the zero mode, so constants have zero
norm; the spectral sum carries the torus volume so that at ``s = 0`` it agrees
with the cell-volume-weighted discrete L^2 norm (Parseval).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import DyadicRange, Field, GridSpec, _wavenumber_magnitude, project_band, transform

INF = math.inf

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class SpacetimeTrace:
    """Ordered time samples (t_i, phi_i, dphi_i) on one grid.

    Samples are sorted by time at construction, so every derived quantity is
    independent of insertion order.
    """

    grid: GridSpec
    times: tuple[float, ...]
    positions: tuple[Field, ...]
    velocities: tuple[Field, ...]

    def __post_init__(self) -> None:
        if not (len(self.times) == len(self.positions) == len(self.velocities)):
            raise ValueError("times, positions, velocities must have equal length")
        if len(self.times) < 1:
            raise ValueError("a trace needs at least one sample")
        order = sorted(range(len(self.times)), key=lambda i: self.times[i])
        times = tuple(float(self.times[i]) for i in order)
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise ValueError("sample times must be strictly increasing")
        positions = tuple(self.positions[i] for i in order)
        velocities = tuple(self.velocities[i] for i in order)
        for f in positions + velocities:
            if f.grid != self.grid:
                raise ValueError("all trace fields must share the trace grid")
        m = positions[0].m
        if any(f.m != m for f in positions + velocities):
            raise ValueError("all trace fields must share one component count")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "velocities", velocities)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def m(self) -> int:
        return self.positions[0].m

    def sample(self, i: int) -> tuple[float, Field, Field]:
        return self.times[i], self.positions[i], self.velocities[i]


def is_admissible(q: float, r: float, n: int) -> bool:
    """Wave-equation Strichartz admissibility: 1/q + (n-1)/(2r) <= (n-1)/4.

    The inequality is closed, so exact-equality pairs are admissible.
    """
    if not (2.0 <= q <= INF and 2.0 <= r <= INF):
        return False
    lhs = (1.0 / q if q != INF else 0.0) + ((n - 1) / (2.0 * r) if r != INF else 0.0)
    return lhs <= (n - 1) / 4.0 + 1e-12


@dataclass(frozen=True)
class AdmissiblePair:
    q: float
    r: float

    def __post_init__(self) -> None:
        if not (2.0 <= self.q <= INF and 2.0 <= self.r <= INF):
            raise ValueError(f"exponents must lie in [2, inf], got ({self.q}, {self.r})")

    def check(self, n: int) -> None:
        if not is_admissible(self.q, self.r, n):
            raise ValueError(f"pair (q={self.q}, r={self.r}) is not admissible for n={n}")


def default_pairs(n: int) -> tuple[AdmissiblePair, ...]:
    """The exponent pairs the dyadic Strichartz norm actually consumes.

    For n >= 5 this is the full list of seven (with duplicates collapsed);
    in lower dimensions only the pairs that remain admissible survive.
    """
    candidates: list[tuple[float, float]] = []
    if n > 3:
        candidates.append((2.0, 2.0 * (n - 1) / (n - 3)))
    candidates += [(2.0, 4.0), (2.0, float(n - 1)), (2.0, INF), (4.0, 2.0 * (n - 1)), (INF, INF), (INF, 2.0)]
    out: list[AdmissiblePair] = []
    seen = set()
    for q, r in candidates:
        if not (2.0 <= r <= INF):
            continue
        if not is_admissible(q, r, n):
            continue
        if (q, r) in seen:
            continue
        seen.add((q, r))
        out.append(AdmissiblePair(q, r))
    return tuple(out)


def pointwise_magnitude(f: Field) -> np.ndarray:
    """Euclidean length over components at every grid point."""
    return np.sqrt(np.sum(f.values**2, axis=0))


def lebesgue_norm(f: Field, r: float) -> float:
    """Discrete L^r norm with cell-volume weight; r = inf gives the max."""
    if r < 1.0:
        raise ValueError(f"Lebesgue exponent must be >= 1, got {r}")
    mag = pointwise_magnitude(f)
    if r == INF:
        return float(np.max(mag))
    return float((np.sum(mag**r) * f.grid.cell_volume) ** (1.0 / r))


def sobolev_norm(f: Field, s: float) -> float:
    """Homogeneous Sobolev norm of order s; the zero mode is dropped, so
    constant fields (and in particular sphere-valued maps shifted by their
    mean) have zero norm."""
    sp = transform(f)
    kmag = _wavenumber_magnitude(f.grid)
    nonzero = kmag > 0.0
    weight = np.zeros_like(kmag)
    weight[nonzero] = kmag[nonzero] ** (2.0 * s)
    power = np.sum(np.abs(sp.coefficients) ** 2, axis=0)
    return float(math.sqrt(np.sum(weight * power) * f.grid.volume))


def mixed_norm(tr: SpacetimeTrace, q: float, r: float, use_velocity: bool = False) -> float:
    """L^q in time (trapezoid quadrature on the sample times) of the spatial
    L^r norms; q = inf takes the max over samples."""
    if q < 1.0:
        raise ValueError(f"time exponent must be >= 1, got {q}")
    fields = tr.velocities if use_velocity else tr.positions
    g = np.array([lebesgue_norm(f, r) for f in fields])
    if q == INF:
        return float(np.max(g))
    if len(tr) < 2:
        raise ValueError("time integration needs at least two samples")
    return float(_trapezoid(g**q, np.asarray(tr.times)) ** (1.0 / q))


def sk_norm(tr: SpacetimeTrace, k: int, pairs=None) -> float:
    """Frequency-2^k Strichartz norm: sup over exponent pairs of the weighted
    position + velocity mixed norms.  The caller is expected to pass a trace
    already localized to band k."""
    n = tr.grid.n
    if pairs is None:
        pairs = default_pairs(n)
    if not pairs:
        raise ValueError("empty exponent pair list")
    best = 0.0
    for pair in pairs:
        pair.check(n)
        weight = 2.0 ** (k / pair.q + k * n / pair.r)
        val = mixed_norm(tr, pair.q, pair.r) + 2.0 ** (-k) * mixed_norm(tr, pair.q, pair.r, use_velocity=True)
        best = max(best, weight * val)
    return best


# -- frequency envelopes ------------------------------------------------------

ENVELOPE_FLOOR = 1e-300


@dataclass(frozen=True)
class FrequencyEnvelope:
    """Positive, slowly-varying dyadic envelope c_k over a band range.

    ``epsilon`` is the smallness scale the envelope is measured against; for
    envelopes built from data it is the l^2 size of the per-band norms.
    ``degenerate`` marks all-zero data, whose values are floored for
    reporting only.
    """

    sigma: float
    levels: tuple[int, ...]
    values: tuple[float, ...]
    epsilon: float
    degenerate: bool = False

    def __post_init__(self) -> None:
        if not (0.0 < self.sigma < 0.5):
            raise ValueError(f"decay exponent must lie in (0, 1/2), got {self.sigma}")
        if len(self.levels) != len(self.values) or not self.levels:
            raise ValueError("levels and values must be nonempty and aligned")
        if any(v <= 0.0 for v in self.values):
            raise ValueError("envelope values must be positive (flag degenerate data instead)")

    def value_at(self, k: int) -> float:
        return self.values[self.levels.index(k)]


def band_pair_norm(f: Field, g: Field, k: int) -> float:
    """Critical per-band size ||P_k f||_{H^{n/2}} + ||P_k g||_{H^{n/2-1}}."""
    n = f.grid.n
    return sobolev_norm(project_band(f, k), n / 2.0) + sobolev_norm(project_band(g, k), n / 2.0 - 1.0)


def envelope_from_data(f: Field, g: Field, sigma: float, rng: DyadicRange) -> FrequencyEnvelope:
    """Smallest slowly-varying envelope dominating the data's band norms:
    c_k = sum_{k'} 2^{-sigma|k-k'|} (band norm at k')."""
    if not (0.0 < sigma < 0.5):
        raise ValueError(f"decay exponent must lie in (0, 1/2), got {sigma}")
    levels = tuple(rng.bands())
    b = np.array([band_pair_norm(f, g, k) for k in levels])
    ks = np.array(levels, dtype=float)
    weights = 2.0 ** (-sigma * np.abs(ks[:, None] - ks[None, :]))
    c = weights @ b
    degenerate = bool(np.all(b == 0.0))
    c = np.maximum(c, ENVELOPE_FLOOR)
    epsilon = float(np.sqrt(np.sum(b**2)))
    return FrequencyEnvelope(sigma, levels, tuple(float(v) for v in c), epsilon, degenerate)


def lies_underneath(f: Field, g: Field, env: FrequencyEnvelope) -> tuple[bool, dict[int, float]]:
    """Check the per-band domination b_k <= c_k; margins are c_k - b_k."""
    margins = {}
    ok = True
    for k in env.levels:
        margin = env.value_at(k) - band_pair_norm(f, g, k)
        margins[k] = margin
        if margin < 0.0:
            ok = False
    return ok, margins


@dataclass(frozen=True)
class EnvelopeReport:
    l2_value: float
    l2_bound: float
    l2_ok: bool
    local_ok: bool
    worst_pair: tuple[int, int] | None
    worst_excess: float
    valid: bool


def validate_envelope(env: FrequencyEnvelope, k_env: float = 4.0, k_loc: float = 1.01) -> EnvelopeReport:
    """Check the l^2 smallness bound and two-sided local constancy.

    Both implicit constants of the definition are realized explicitly:
    sum c_k^2 <= (k_env * epsilon)^2 and 2^{-sigma|k-k'|} c_{k'} <= k_loc c_k.
    """
    c = np.array(env.values)
    ks = np.array(env.levels, dtype=float)
    l2 = float(np.sqrt(np.sum(c**2)))
    bound = k_env * env.epsilon
    l2_ok = l2 <= bound
    ratios = 2.0 ** (-env.sigma * np.abs(ks[:, None] - ks[None, :])) * c[None, :] / c[:, None]
    worst_flat = int(np.argmax(ratios))
    i, j = divmod(worst_flat, len(c))
    worst = float(ratios[i, j])
    local_ok = worst <= k_loc
    return EnvelopeReport(
        l2_value=l2,
        l2_bound=bound,
        l2_ok=l2_ok,
        local_ok=local_ok,
        worst_pair=(env.levels[i], env.levels[j]),
        worst_excess=worst,
        valid=l2_ok and local_ok and not env.degenerate,
    )


# -- scalar report container ---------------------------------------------------


@dataclass
class NormReport:
    """Named scalar results with optional dyadic / exponent tags."""

    experiment_id: str
    entries: list[tuple] = field(default_factory=list)

    def add(self, quantity: str, value: float, k: int | None = None,
            q: float | None = None, r: float | None = None) -> None:
        value = float(value)
        if not (math.isfinite(value) and value >= 0.0):
            raise ValueError(f"report values must be finite and nonnegative, got {quantity}={value}")
        self.entries.append((quantity, k, q, r, value))

    def to_csv_rows(self) -> list[list[str]]:
        def fmt(x):
            return "" if x is None else repr(x) if isinstance(x, float) else str(x)

        rows = [["experiment_id", "quantity", "k", "q", "r", "value"]]
        for quantity, k, q, r, value in self.entries:
            rows.append([self.experiment_id, quantity, fmt(k), fmt(q), fmt(r), repr(value)])
        return rows
