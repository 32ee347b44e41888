"""Connection matrices and the recursive approximate-parallel-transport frame.

The frame is built per time slice by the ascending dyadic recursion

    U_k = (P_k phi P_{<k} phi^T - P_{<k} phi P_k phi^T) U_{<k},
    U_{<k} = I + sum of the lower components,

whose antisymmetric prefactor makes the telescoping identity

    U_{<K}^T U_{<K} - I = sum_{k<K} U_k^T U_k

hold pointwise as exact matrix algebra, independent of amplitude or grid.
Fourier-support bookkeeping (supp U_{<k} inside the ball 2^{k+5}) transfers
from the continuum argument only while the products stay alias-free, i.e.
19 * 2^k below the grid Nyquist; the builder records support leakage whenever
that headroom exists.

Pointwise matrix size is measured with the max-abs-entry norm throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .norms import SpacetimeTrace, _trapezoid
from .spectral import (
    DyadicRange,
    Field,
    GridSpec,
    _laplacian_multiplier,
    _wavenumber_magnitude,
    _wavevectors,
    project_leq,
    spatial_gradient,
)

DET_FLOOR = 1e-8


class DegenerateFrameError(RuntimeError):
    """Raised when the frame is numerically singular somewhere on the grid."""

    def __init__(self, worst_det: float, point: tuple[int, ...]):
        super().__init__(
            f"gauge frame degenerate: |det U| = {worst_det:.3e} < {DET_FLOOR} "
            f"at grid point {point} (amplitude far above the smallness regime?)"
        )
        self.worst_det = worst_det
        self.point = point


@dataclass(frozen=True)
class MatrixField:
    """Real m-by-m matrix attached to every grid point."""

    grid: GridSpec
    values: np.ndarray
    t: float | None = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != self.grid.n + 2 or arr.shape[: self.grid.n] != self.grid.shape or arr.shape[-1] != arr.shape[-2]:
            raise ValueError(f"expected shape {self.grid.shape} + (m, m), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("matrix field entries must be finite")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def identity(cls, grid: GridSpec, m: int, t: float | None = None) -> "MatrixField":
        vals = np.broadcast_to(np.eye(m), grid.shape + (m, m)).copy()
        return cls(grid, vals, t)


def matrix_max_entry(values: np.ndarray) -> np.ndarray:
    """Pointwise max-abs-entry over the trailing matrix axes."""
    return np.max(np.abs(values), axis=(-2, -1))


def _matrix_fft_apply(values: np.ndarray, grid: GridSpec, mult: np.ndarray) -> np.ndarray:
    axes = tuple(range(grid.n))
    spec = np.fft.fftn(values, axes=axes)
    shaped = mult.reshape(mult.shape + (1, 1))
    return np.fft.ifftn(spec * shaped, axes=axes).real


def matrix_spatial_gradient(M: MatrixField) -> list[MatrixField]:
    axes = tuple(range(M.grid.n))
    spec = np.fft.fftn(M.values, axes=axes)
    out = []
    for kj in _wavevectors(M.grid):
        mult = (1j * kj).reshape(kj.shape + (1, 1))
        out.append(MatrixField(M.grid, np.fft.ifftn(spec * mult, axes=axes).real, M.t))
    return out


def matrix_laplacian(M: MatrixField) -> MatrixField:
    return MatrixField(M.grid, _matrix_fft_apply(M.values, M.grid, _laplacian_multiplier(M.grid)), M.t)


def _outer_antisym(a: Field, b: Field) -> np.ndarray:
    """a b^T - b a^T pointwise; exactly antisymmetric in floating point."""
    ab = np.einsum("i...,j...->...ij", a.values, b.values)
    return ab - np.swapaxes(ab, -1, -2)


def connection(phi_smooth: Field, phidot_smooth: Field, alpha: int) -> MatrixField:
    """Antisymmetric connection A_alpha = (d_alpha phi~) phi~^T - phi~ (d_alpha phi~)^T
    of a smoothed pair; alpha = 0 is time."""
    if not (0 <= alpha <= phi_smooth.grid.n):
        raise ValueError(f"alpha must lie in 0..{phi_smooth.grid.n}, got {alpha}")
    if alpha == 0:
        d = phidot_smooth
    else:
        d = spatial_gradient(phi_smooth)[alpha - 1]
    return MatrixField(phi_smooth.grid, _outer_antisym(d, phi_smooth))


@dataclass(frozen=True)
class ConnectionField:
    """All n+1 antisymmetric connection components, alpha = 0 first."""

    components: tuple[MatrixField, ...]

    def __post_init__(self) -> None:
        grid = self.components[0].grid
        if len(self.components) != grid.n + 1:
            raise ValueError(f"expected {grid.n + 1} components, got {len(self.components)}")
        for a in self.components:
            vals = a.values
            if not np.array_equal(vals, -np.swapaxes(vals, -1, -2)):
                raise ValueError("connection components must be exactly antisymmetric")

    @property
    def grid(self) -> GridSpec:
        return self.components[0].grid

    def __getitem__(self, alpha: int) -> MatrixField:
        return self.components[alpha]


def build_connection(phi_smooth: Field, phidot_smooth: Field) -> ConnectionField:
    grads = spatial_gradient(phi_smooth)
    comps = [MatrixField(phi_smooth.grid, _outer_antisym(phidot_smooth, phi_smooth))]
    comps += [MatrixField(phi_smooth.grid, _outer_antisym(g, phi_smooth)) for g in grads]
    return ConnectionField(tuple(comps))


@dataclass(frozen=True)
class GaugeFrame:
    """The recursive frame at one time slice.

    ``partials[i]`` is U_{<k} for k = k_bot + 1 + i (so partials[0] is the
    identity and partials[-1] the full frame); components and partials may be
    dropped (None) for memory-lean trace processing, the total is always kept.
    """

    grid: GridSpec
    k_bot: int
    k_top: int
    total: MatrixField
    components: tuple[MatrixField, ...] | None = None
    partials: tuple[MatrixField, ...] | None = None
    t: float | None = None
    support_defects: dict | None = None

    @property
    def m(self) -> int:
        return self.total.m

    def levels(self) -> range:
        return range(self.k_bot + 1, self.k_top + 1)


def alias_free_k_top(grid: GridSpec) -> int:
    """Largest level whose recursion products fit under the Nyquist ball
    (support radius 19 * 2^k must stay representable)."""
    k = DyadicRange.for_grid(grid).k_max
    while k > -60 and 19.0 * 2.0**k > grid.nyquist:
        k -= 1
    return k


def _support_defect(values: np.ndarray, grid: GridSpec, radius: float) -> float:
    axes = tuple(range(grid.n))
    spec = np.fft.fftn(values, axes=axes)
    power = np.abs(spec) ** 2
    total = float(power.sum())
    if total == 0.0:
        return 0.0
    outside = float(power[_wavenumber_magnitude(grid) > radius].sum())
    return outside / total


def build_gauge(
    phi: Field,
    k_top: int,
    k_bot: int,
    t: float | None = None,
    keep_partials: bool = True,
    check_invertible: bool = True,
) -> GaugeFrame:
    """Run the dyadic recursion over k_bot < k <= k_top on one position slice.

    Raises DegenerateFrameError if |det U| dips below the floor anywhere, and
    records per-level Fourier-support leakage whenever the alias-free
    headroom exists.
    """
    grid = phi.grid
    rng = DyadicRange.for_grid(grid)
    if not (k_bot < k_top):
        raise ValueError(f"need k_bot < k_top, got [{k_bot}, {k_top}]")
    if k_top > rng.k_max or k_bot < rng.k_min:
        raise ValueError(
            f"levels ({k_bot}, {k_top}] outside the grid range [{rng.k_min}, {rng.k_max}]"
        )

    m = phi.m
    check_support = k_top <= alias_free_k_top(grid)
    identity = np.broadcast_to(np.eye(m), grid.shape + (m, m))

    low = project_leq(phi, k_bot)
    u_lt = identity.copy()
    components: list[MatrixField] = []
    partials: list[MatrixField] = [MatrixField(grid, identity.copy(), t)]
    support: dict[int, float] = {}
    for k in range(k_bot + 1, k_top + 1):
        here = project_leq(phi, k)
        band = Field(grid, here.values - low.values)
        u_k = _outer_antisym(band, low) @ u_lt
        u_lt = u_lt + u_k
        low = here
        if keep_partials:
            components.append(MatrixField(grid, u_k, t))
            partials.append(MatrixField(grid, u_lt, t))
        if check_support:
            support[k + 1] = _support_defect(u_lt, grid, 2.0 ** (k + 1 + 5))

    total = MatrixField(grid, u_lt, t)
    if check_invertible:
        ensure_invertible(total)
    return GaugeFrame(
        grid,
        k_bot,
        k_top,
        total,
        components=tuple(components) if keep_partials else None,
        partials=tuple(partials) if keep_partials else None,
        t=t,
        support_defects=support if check_support else None,
    )


def ensure_invertible(M: MatrixField) -> None:
    """Raise DegenerateFrameError where |det| dips below the floor.

    Frames built by the recursion satisfy U^T U = I + sum U_k^T U_k >= I in
    the semidefinite order, so |det U| >= 1 and this can only fire on frames
    assembled some other way; it is kept as a loud guard per the frame's
    sensitivity to its inputs.
    """
    dets = np.linalg.det(M.values)
    worst_flat = int(np.argmin(np.abs(dets)))
    worst = float(np.abs(dets.flat[worst_flat]))
    if worst < DET_FLOOR:
        raise DegenerateFrameError(worst, tuple(np.unravel_index(worst_flat, M.grid.shape)))


def determinant_margin(frame: GaugeFrame) -> float:
    """min over the grid of |det U|."""
    return float(np.min(np.abs(np.linalg.det(frame.total.values))))


@dataclass(frozen=True)
class OrthogonalityDefect:
    value: float
    time_derivative: float | None = None


def orthogonality_defect(gf: GaugeFrame, later: GaugeFrame | None = None) -> OrthogonalityDefect:
    """Max-entry size of U^T U - I; with a paired frame at a later time, also
    the finite-difference rate of change of that defect matrix."""

    def gram_defect(frame: GaugeFrame) -> np.ndarray:
        u = frame.total.values
        gram = np.swapaxes(u, -1, -2) @ u
        return gram - np.eye(frame.m)

    g0 = gram_defect(gf)
    value = float(np.max(np.abs(g0)))
    rate = None
    if later is not None:
        if later.t is None or gf.t is None or later.t <= gf.t:
            raise ValueError("paired frame must carry a strictly later time tag")
        g1 = gram_defect(later)
        rate = float(np.max(np.abs(g1 - g0)) / (later.t - gf.t))
    return OrthogonalityDefect(value, rate)


def _frame_stack(frames: Sequence[GaugeFrame]) -> np.ndarray:
    return np.stack([f.total.values for f in frames], axis=0)


def _time_derivative(stack: np.ndarray, times: np.ndarray) -> np.ndarray:
    return np.gradient(stack, times, axis=0)


@dataclass(frozen=True)
class TransportDefectReport:
    """Per-alpha transport diagnostics over a sampled time window.

    ``defect_l1_linf[alpha]`` is ||d_alpha U - A_alpha U|| in L^1_t L^inf_x;
    the companion A_alpha U norm quantifies what the cancellation saves, and
    the dU norms are the auxiliary bounds of the frame estimates.
    """

    defect_l1_linf: tuple[float, ...]
    a_u_l1_linf: tuple[float, ...]
    du_l2_linf: tuple[float, ...]
    du_linf_linf: tuple[float, ...]

    @property
    def n_alpha(self) -> int:
        return len(self.defect_l1_linf)


def transport_defect(
    frames: Sequence[GaugeFrame],
    connections: Sequence[ConnectionField],
    tr: SpacetimeTrace,
) -> TransportDefectReport:
    """Measure the approximate-parallel-transport property along a trace.

    Time derivatives of U use centered differences of the per-slice frames
    (second-order one-sided at the ends); spatial derivatives are spectral.
    """
    if not (len(frames) == len(connections) == len(tr)):
        raise ValueError(
            f"sampling mismatch: {len(frames)} frames, {len(connections)} connections, "
            f"{len(tr)} trace samples"
        )
    if len(frames) < 2:
        raise ValueError("transport diagnostics need at least two time samples")
    times = np.asarray(tr.times)
    stack = _frame_stack(frames)
    n = tr.grid.n

    du_time = _time_derivative(stack, times)
    defects, a_u_norms, du_l2, du_inf = [], [], [], []
    for alpha in range(n + 1):
        g_defect = np.empty(len(frames))
        g_au = np.empty(len(frames))
        g_du = np.empty(len(frames))
        for i, frame in enumerate(frames):
            if alpha == 0:
                du = du_time[i]
            else:
                du = matrix_spatial_gradient(frame.total)[alpha - 1].values
            au = connections[i][alpha].values @ stack[i]
            g_defect[i] = np.max(matrix_max_entry(du - au))
            g_au[i] = np.max(matrix_max_entry(au))
            g_du[i] = np.max(matrix_max_entry(du))
        defects.append(float(_trapezoid(g_defect, times)))
        a_u_norms.append(float(_trapezoid(g_au, times)))
        du_l2.append(float(math.sqrt(_trapezoid(g_du**2, times))))
        du_inf.append(float(np.max(g_du)))
    return TransportDefectReport(tuple(defects), tuple(a_u_norms), tuple(du_l2), tuple(du_inf))


@dataclass(frozen=True)
class BoxFrameReport:
    matrices: tuple[MatrixField, ...]
    interior_times: tuple[float, ...]
    l2_ln1_norm: float


def box_matrix(frames: Sequence[GaugeFrame], require_uniform: bool = True) -> BoxFrameReport:
    """D'Alembertian of the frame: spectral Laplacian minus second time
    differences on the interior samples; reports the L^2_t L^{n-1}_x size."""
    if len(frames) < 3:
        raise ValueError("box of a frame needs at least three time samples")
    times = np.array([f.t for f in frames], dtype=float)
    if any(f.t is None for f in frames):
        raise ValueError("frames must carry time tags")
    dts = np.diff(times)
    if require_uniform and not np.allclose(dts, dts[0], rtol=1e-8, atol=0.0):
        raise ValueError("box of a frame needs uniformly spaced samples")
    grid = frames[0].grid
    if grid.n < 2:
        raise ValueError("the L^{n-1} spatial norm needs n >= 2")
    dt = float(dts[0])
    stack = _frame_stack(frames)
    out = []
    g = np.empty(len(frames) - 2)
    for i in range(1, len(frames) - 1):
        dtt = (stack[i + 1] - 2.0 * stack[i] + stack[i - 1]) / dt**2
        box = _matrix_fft_apply(stack[i], grid, _laplacian_multiplier(grid)) - dtt
        out.append(MatrixField(grid, box, times[i]))
        mag = matrix_max_entry(box)
        g[i - 1] = (np.sum(mag ** (grid.n - 1)) * grid.cell_volume) ** (1.0 / (grid.n - 1))
    norm = float(math.sqrt(_trapezoid(g**2, times[1:-1]))) if len(g) > 1 else float(g[0] * math.sqrt(dt))
    return BoxFrameReport(tuple(out), tuple(times[1:-1]), norm)
