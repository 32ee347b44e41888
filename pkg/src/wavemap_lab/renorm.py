"""Nonlinearity decomposition, commutator and tangency diagnostics, and the
renormalization comparison between the raw band equation and its
frame-transformed counterpart.

All experiments analyze one dyadic band k_band of an evolved trace.  The
frequency thresholds of the splitting sit at k_band +- separation; the full
10-octave separation does not fit on desk grids, so smaller separations are
accepted with a loud warning (4 is the least for which the all-low piece
still projects to exactly zero at the analyzed band).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .gauge import (
    GaugeFrame,
    MatrixField,
    _matrix_fft_apply,
    build_connection,
    build_gauge,
    matrix_spatial_gradient,
)
from .norms import SpacetimeTrace, _trapezoid, band_pair_norm, envelope_from_data, lebesgue_norm
from .spectral import (
    DyadicRange,
    Field,
    GridSpec,
    _laplacian_multiplier,
    _wavevectors,
    project_band,
    project_leq,
    spatial_gradient,
)

DEFAULT_SEPARATION = 10
MATCH_WINDOW = 5


def _check_separation(grid: GridSpec, k_band: int, separation: int) -> DyadicRange:
    rng = DyadicRange.for_grid(grid)
    if k_band not in rng or k_band == rng.k_min:
        raise ValueError(f"band {k_band} not analyzable on range [{rng.k_min}, {rng.k_max}]")
    if separation < 1:
        raise ValueError("separation must be positive")
    if k_band - separation < rng.k_min:
        raise ValueError(
            f"insufficient dyadic headroom: band {k_band} minus separation {separation} "
            f"falls below the grid low cut {rng.k_min}; use a larger grid"
        )
    if separation < DEFAULT_SEPARATION:
        warnings.warn(
            f"dyadic separation reduced to {separation} octaves (the argument's "
            f"thresholds use {DEFAULT_SEPARATION}); the grid cannot host more",
            stacklevel=3,
        )
    return rng


def minkowski_contraction(a_t: Field, a_x: list[Field], b_t: Field, b_x: list[Field]) -> np.ndarray:
    """d_alpha a^dagger d^alpha b = -a_t.b_t + sum_j a_j.b_j, pointwise scalar."""
    out = -np.sum(a_t.values * b_t.values, axis=0)
    for aj, bj in zip(a_x, b_x):
        out = out + np.sum(aj.values * bj.values, axis=0)
    return out


def nonlinearity(tr: SpacetimeTrace) -> list[Field]:
    """phi (d_alpha phi^dagger d^alpha phi) = phi (|grad phi|^2 - |phi_t|^2)."""
    out = []
    for i in range(len(tr)):
        _, phi, vel = tr.sample(i)
        grads = spatial_gradient(phi)
        scalar = minkowski_contraction(vel, grads, vel, grads)
        out.append(Field(tr.grid, scalar * phi.values))
    return out


@dataclass(frozen=True)
class _SlicePieces:
    """LP groups of one slice: low = P_{<=kb-s}, mid = the annulus up to
    kb+s, and the individual bands above it."""

    low: tuple[Field, Field]
    mid: tuple[Field, Field]
    upto: tuple[Field, Field]
    full: tuple[Field, Field]
    high_bands: dict[int, tuple[Field, Field]]
    mid_low_bands: dict[int, tuple[Field, Field]]


def _slice_pieces(phi: Field, vel: Field, k_band: int, separation: int, rng: DyadicRange) -> _SlicePieces:
    lo_cut = k_band - separation
    hi_cut = min(k_band + separation, rng.k_max)

    def proj(k):
        return project_leq(phi, k), project_leq(vel, k)

    low = proj(lo_cut)
    upto = proj(hi_cut)
    full = proj(rng.k_max)
    mid = (
        Field(phi.grid, upto[0].values - low[0].values),
        Field(phi.grid, upto[1].values - low[1].values),
    )
    high_bands = {}
    prev = upto
    for k in range(hi_cut + 1, rng.k_max + 1):
        here = proj(k)
        high_bands[k] = (
            Field(phi.grid, here[0].values - prev[0].values),
            Field(phi.grid, here[1].values - prev[1].values),
        )
        prev = here
    # individual bands at and below hi_cut, needed for the matched/mismatched
    # split when one factor is high; the low lump counts as level lo_cut
    mid_low_bands = {}
    prev_vals = None
    for k in range(rng.k_min + 1, hi_cut + 1):
        here = proj(k)
        if k <= lo_cut:
            prev_vals = here
            continue
        base = prev_vals if prev_vals is not None else proj(k - 1)
        mid_low_bands[k] = (
            Field(phi.grid, here[0].values - base[0].values),
            Field(phi.grid, here[1].values - base[1].values),
        )
        prev_vals = here
    mid_low_bands[lo_cut] = low
    return _SlicePieces(low, mid, upto, full, high_bands, mid_low_bands)


def _pair_contraction(grid: GridSpec, a: tuple[Field, Field], b: tuple[Field, Field]) -> np.ndarray:
    ga = spatial_gradient(a[0])
    gb = spatial_gradient(b[0])
    return minkowski_contraction(a[1], ga, b[1], gb)


@dataclass
class NonlinearityDecomposition:
    """The seven-way split of phi d phi^dagger d phi around one band.

    Pieces, per time slice (field traces):
      high_matched     both-derivative factors high, close frequencies
      high_mismatched  both-derivative factors high, separated frequencies
      mid_first        first factor above the low cut, derivatives low/mid
      all_low          everything at or below the low cut
      mid_mid          both derivative factors in the middle annulus
      low_mid / mid_low  the main terms: one derivative on the smooth part,
                         one on the middle annulus
    """

    k_band: int
    separation: int
    pieces: dict[str, list[Field]]
    projected_l1l2: dict[str, float]

    ORDER = (
        "high_matched",
        "high_mismatched",
        "mid_first",
        "all_low",
        "mid_mid",
        "low_mid",
        "mid_low",
    )

    def total(self, i: int) -> np.ndarray:
        return sum(self.pieces[name][i].values for name in self.ORDER)


def decompose_nonlinearity(tr: SpacetimeTrace, k_band: int, separation: int = DEFAULT_SEPARATION) -> NonlinearityDecomposition:
    """Split each slice's nonlinearity into the seven frequency groups and
    record the L^1_t L^2_x size of each piece after projection to the band."""
    grid = tr.grid
    rng = _check_separation(grid, k_band, separation)
    pieces: dict[str, list[Field]] = {name: [] for name in NonlinearityDecomposition.ORDER}

    for i in range(len(tr)):
        _, phi, vel = tr.sample(i)
        ps = _slice_pieces(phi, vel, k_band, separation, rng)
        full_phi = ps.full[0].values

        # gradients of every individual band, shared across the pair loops
        band_grads = {
            k: (pair[1], spatial_gradient(pair[0])) for k, pair in ps.mid_low_bands.items()
        }
        high_grads = {
            k: (pair[1], spatial_gradient(pair[0])) for k, pair in ps.high_bands.items()
        }
        all_grads = {**band_grads, **high_grads}

        matched = np.zeros(grid.shape)
        mismatched = np.zeros(grid.shape)
        hi_levels = sorted(high_grads)
        all_levels = sorted(all_grads)
        for k2 in all_levels:
            for k3 in all_levels:
                if max(k2, k3) not in high_grads:
                    continue
                vt2, gx2 = all_grads[k2]
                vt3, gx3 = all_grads[k3]
                term = -np.sum(vt2.values * vt3.values, axis=0)
                for a2, a3 in zip(gx2, gx3):
                    term = term + np.sum(a2.values * a3.values, axis=0)
                if abs(k2 - k3) <= MATCH_WINDOW:
                    matched += term
                else:
                    mismatched += term
        pieces["high_matched"].append(Field(grid, matched * full_phi))
        pieces["high_mismatched"].append(Field(grid, mismatched * full_phi))

        upto_contr = _pair_contraction(grid, ps.upto, ps.upto)
        mid_first_phi = ps.full[0].values - ps.low[0].values
        pieces["mid_first"].append(Field(grid, upto_contr * mid_first_phi))

        low_phi = ps.low[0].values
        pieces["all_low"].append(Field(grid, _pair_contraction(grid, ps.low, ps.low) * low_phi))
        pieces["mid_mid"].append(Field(grid, _pair_contraction(grid, ps.mid, ps.mid) * low_phi))
        pieces["low_mid"].append(Field(grid, _pair_contraction(grid, ps.low, ps.mid) * low_phi))
        pieces["mid_low"].append(Field(grid, _pair_contraction(grid, ps.mid, ps.low) * low_phi))

    projected = {}
    times = np.asarray(tr.times)
    for name, fields in pieces.items():
        g = np.array([lebesgue_norm(project_band(f, k_band), 2.0) for f in fields])
        projected[name] = float(_trapezoid(g, times)) if len(tr) > 1 else float(g[0])
    return NonlinearityDecomposition(k_band, separation, pieces, projected)


def main_term(tr: SpacetimeTrace, k_band: int, separation: int = DEFAULT_SEPARATION) -> list[Field]:
    """The linearized-equation source 2 phi~ (d_alpha phi~)^dagger d^alpha psi
    with phi~ the low cut and psi the analyzed band (time term negative)."""
    grid = tr.grid
    _check_separation(grid, k_band, separation)
    lo_cut = k_band - separation
    out = []
    for i in range(len(tr)):
        _, phi, vel = tr.sample(i)
        smooth = project_leq(phi, lo_cut)
        smooth_t = project_leq(vel, lo_cut)
        psi = project_band(phi, k_band)
        psi_t = project_band(vel, k_band)
        scalar = minkowski_contraction(smooth_t, spatial_gradient(smooth), psi_t, spatial_gradient(psi))
        out.append(Field(grid, 2.0 * scalar * smooth.values))
    return out


def commutator_defect(f: Field, g: Field, k: int, p: float, q: float, r: float):
    """Realized constant of the commutator bound:
    ||P_k(fg) - f P_k(g)||_r / (||grad f||_p ||g||_q) for a Hoelder triple."""
    inv = lambda x: 0.0 if x == math.inf else 1.0 / x
    if abs(inv(p) + inv(q) - inv(r)) > 1e-12:
        raise ValueError(f"Hoelder mismatch: 1/{p} + 1/{q} != 1/{r}")
    if f.m != 1:
        raise ValueError("the smooth factor must be scalar")
    prod = Field(f.grid, f.values[0] * g.values)
    numer_field = Field(f.grid, project_band(prod, k).values - f.values[0] * project_band(g, k).values)
    numer = lebesgue_norm(numer_field, r)
    grad = spatial_gradient(f)
    grad_field = Field(f.grid, np.concatenate([d.values for d in grad], axis=0))
    denom = lebesgue_norm(grad_field, p) * lebesgue_norm(g, q)
    if denom == 0.0:
        # constant f or zero g: the numerator is zero up to transform roundoff
        scale = lebesgue_norm(prod, r) + lebesgue_norm(g, r)
        return 0.0 if numer <= 1e-12 * (scale + 1.0) else math.nan
    return numer / denom


@dataclass(frozen=True)
class TangencyReport:
    """L^2_t L^2_x sizes of phi~^dagger d_alpha psi (the tangency quantity)
    and of (d_alpha phi~)^dagger psi (the easy comparison), per alpha."""

    tangency: tuple[float, ...]
    comparison: tuple[float, ...]

    @property
    def worst(self) -> float:
        return max(self.tangency)


def tangent_orthogonality(tr: SpacetimeTrace, k_band: int, separation: int = DEFAULT_SEPARATION) -> TangencyReport:
    grid = tr.grid
    _check_separation(grid, k_band, separation)
    lo_cut = k_band - separation
    times = np.asarray(tr.times)
    n = grid.n
    tang = np.zeros((n + 1, len(tr)))
    comp = np.zeros((n + 1, len(tr)))
    for i in range(len(tr)):
        _, phi, vel = tr.sample(i)
        smooth = project_leq(phi, lo_cut)
        smooth_t = project_leq(vel, lo_cut)
        psi = project_band(phi, k_band)
        psi_t = project_band(vel, k_band)
        d_smooth = [smooth_t] + spatial_gradient(smooth)
        d_psi = [psi_t] + spatial_gradient(psi)
        for alpha in range(n + 1):
            tang[alpha, i] = lebesgue_norm(
                Field(grid, np.sum(smooth.values * d_psi[alpha].values, axis=0)[np.newaxis]), 2.0
            )
            comp[alpha, i] = lebesgue_norm(
                Field(grid, np.sum(d_smooth[alpha].values * psi.values, axis=0)[np.newaxis]), 2.0
            )

    def l2_t(rows):
        return tuple(float(math.sqrt(_trapezoid(row**2, times))) for row in rows)

    return TangencyReport(l2_t(tang), l2_t(comp))


# -- renormalization ------------------------------------------------------------


@dataclass(frozen=True)
class RenormReport:
    """Before/after comparison of the band equation under the frame change
    psi = U w, with the three error groups of the transformed equation."""

    k_band: int
    separation: int
    eps: float
    c0: float
    box_psi: float
    box_psi_main: float
    box_psi_residual: float
    box_w: float
    improvement_ratio: float
    roundtrip_max: float
    err_transport: float
    err_conn_du: float
    err_box_u: float

    def quantities(self) -> dict[str, float]:
        return {
            "box_psi_L1L2": self.box_psi,
            "box_psi_main_L1L2": self.box_psi_main,
            "box_psi_residual_L1L2": self.box_psi_residual,
            "box_w_L1L2": self.box_w,
            "improvement_ratio": self.improvement_ratio,
            "roundtrip_max": self.roundtrip_max,
            "err_transport_L1L2": self.err_transport,
            "err_conn_du_L1L2": self.err_conn_du,
            "err_box_u_L1L2": self.err_box_u,
        }


def _band_stack(tr: SpacetimeTrace, k_band: int, velocity: bool) -> np.ndarray:
    fields = tr.velocities if velocity else tr.positions
    return np.stack([project_band(f, k_band).values for f in fields], axis=0)


def _box_stack(stack: np.ndarray, grid: GridSpec, dt: float) -> np.ndarray:
    """Spectral Laplacian minus second time differences, on interior slices.

    ``stack`` is time-major: (time, m, spatial...).
    """
    axes = tuple(range(2, grid.n + 2))
    mult = _laplacian_multiplier(grid)
    lap = np.fft.ifftn(np.fft.fftn(stack[1:-1], axes=axes) * mult, axes=axes).real
    dtt = (stack[2:] - 2.0 * stack[1:-1] + stack[:-2]) / dt**2
    return lap - dtt


def _l1l2(stack: np.ndarray, grid: GridSpec, times: np.ndarray) -> float:
    mags = np.sqrt(np.sum(stack**2, axis=1))
    g = (np.sum(mags**2, axis=tuple(range(1, grid.n + 1))) * grid.cell_volume) ** 0.5
    return float(_trapezoid(g, times))


def renormalize_and_compare(
    tr: SpacetimeTrace,
    k_band: int,
    separation: int = DEFAULT_SEPARATION,
    k_bot: int | None = None,
    eps: float = math.nan,
    c0: float = math.nan,
) -> RenormReport:
    """Compare box(psi) against box(w) for w = U^{-1} psi slice by slice.

    The trace must be sampled uniformly (every solver step, per the design of
    the experiments) so the second time differences carry the integrator's
    own O(dt^2) accuracy.  The three error groups of the transformed equation
    are reported separately: the transport defect term, the connection times
    frame-derivative term, and the box-of-frame term.
    """
    grid = tr.grid
    rng = _check_separation(grid, k_band, separation)
    if len(tr) < 3:
        raise ValueError("second time differences need at least three samples")
    times = np.asarray(tr.times)
    dts = np.diff(times)
    if not np.allclose(dts, dts[0], rtol=1e-8, atol=0.0):
        raise ValueError("renormalization comparison needs uniform sampling")
    dt = float(dts[0])
    k_top = k_band - separation
    if k_bot is None:
        k_bot = rng.k_min

    frames: list[GaugeFrame] = []
    for i in range(len(tr)):
        t, phi, _ = tr.sample(i)
        frames.append(build_gauge(phi, k_top, k_bot, t=t, keep_partials=False))
    u_stack = np.stack([f.total.values for f in frames], axis=0)

    psi = _band_stack(tr, k_band, velocity=False)
    # w solves U w = psi pointwise; component axis moved last for the solver
    psi_last = np.moveaxis(psi, 1, -1)[..., np.newaxis]
    w_last = np.linalg.solve(u_stack, psi_last)
    roundtrip = float(np.max(np.abs(u_stack @ w_last - psi_last)))
    w = np.moveaxis(w_last[..., 0], -1, 1)

    interior = slice(1, -1)
    t_int = times[interior]
    box_psi = _box_stack(psi, grid, dt)
    box_w = _box_stack(w, grid, dt)

    main = np.stack(
        [f.values for f in main_term(tr, k_band, separation)], axis=0
    )
    box_psi_norm = _l1l2(box_psi, grid, t_int)
    main_norm = _l1l2(main[interior], grid, t_int)
    residual_norm = _l1l2(box_psi + main[interior], grid, t_int)
    box_w_norm = _l1l2(box_w, grid, t_int)

    # error groups of the transformed equation:
    #   box w = -2 U^{-1} (d_a U - A_a U) d^a w
    #           + 2 U^{-1} A_a (d^a U) w  -  U^{-1} (box U) w  +  small
    # (U^{-1} psi = w absorbs the trailing inverse of the written form)
    du_t = np.gradient(u_stack, times, axis=0)
    dw_t = np.gradient(w, times, axis=0)
    u_inv = np.linalg.inv(u_stack)
    conns = []
    for i in range(len(tr)):
        _, phi, vel = tr.sample(i)
        conns.append(build_connection(project_leq(phi, k_top), project_leq(vel, k_top)))

    def mat_vec(mat, vec):
        return np.einsum("...ij,j...->i...", mat, vec)

    sign = [-1.0] + [1.0] * grid.n  # Minkowski raise on the contraction index
    axes = tuple(range(1, grid.n + 1))
    err1 = np.zeros_like(w)
    err2 = np.zeros_like(w)
    for i in range(len(tr)):
        du_alpha = [du_t[i]] + [g.values for g in matrix_spatial_gradient(frames[i].total)]
        spec_w = np.fft.fftn(w[i], axes=axes)
        dw_alpha = [dw_t[i]] + [
            np.fft.ifftn(spec_w * (1j * kj), axes=axes).real for kj in _wavevectors(grid)
        ]
        acc1 = np.zeros(w.shape[1:])
        acc2 = np.zeros(w.shape[1:])
        for alpha in range(grid.n + 1):
            a_i = conns[i][alpha].values
            defect = du_alpha[alpha] - a_i @ u_stack[i]
            acc1 = acc1 + sign[alpha] * mat_vec(defect, dw_alpha[alpha])
            acc2 = acc2 + sign[alpha] * mat_vec(a_i @ du_alpha[alpha], w[i])
        err1[i] = -2.0 * mat_vec(u_inv[i], acc1)
        err2[i] = 2.0 * mat_vec(u_inv[i], acc2)

    dtt_u = (u_stack[2:] - 2.0 * u_stack[1:-1] + u_stack[:-2]) / dt**2
    err3 = np.zeros_like(w[interior])
    for j, i in enumerate(range(1, len(tr) - 1)):
        box_u = _matrix_fft_apply(u_stack[i], grid, _laplacian_multiplier(grid)) - dtt_u[j]
        err3[j] = -mat_vec(u_inv[i], mat_vec(box_u, w[i]))

    return RenormReport(
        k_band=k_band,
        separation=separation,
        eps=eps,
        c0=c0,
        box_psi=box_psi_norm,
        box_psi_main=main_norm,
        box_psi_residual=residual_norm,
        box_w=box_w_norm,
        improvement_ratio=box_w_norm / box_psi_norm if box_psi_norm > 0.0 else math.nan,
        roundtrip_max=roundtrip,
        err_transport=_l1l2(err1[interior], grid, t_int),
        err_conn_du=_l1l2(err2[interior], grid, t_int),
        err_box_u=_l1l2(err3, grid, t_int),
    )


@dataclass(frozen=True)
class EnvelopeStabilityReport:
    growth_factor: float
    degenerate: bool
    per_time_band_norms: dict[float, dict[int, float]]
    initial_envelope_values: dict[int, float]


def envelope_stability(tr: SpacetimeTrace, sigma: float = 0.25) -> EnvelopeStabilityReport:
    """Desk analogue of frequency-profile stability: the initial data's
    envelope is built once, and the worst ratio of later band norms to it is
    reported.  Spatially constant or zero data is flagged degenerate."""
    rng = DyadicRange.for_grid(tr.grid)
    env = envelope_from_data(tr.positions[0], tr.velocities[0], sigma, rng)
    per_time: dict[float, dict[int, float]] = {}
    growth = 0.0
    for i in range(len(tr)):
        t, phi, vel = tr.sample(i)
        row = {k: band_pair_norm(phi, vel, k) for k in env.levels}
        per_time[t] = row
        if not env.degenerate:
            growth = max(growth, max(row[k] / env.value_at(k) for k in env.levels))
    return EnvelopeStabilityReport(
        growth_factor=growth if not env.degenerate else 0.0,
        degenerate=env.degenerate,
        per_time_band_norms=per_time,
        initial_envelope_values={k: env.value_at(k) for k in env.levels},
    )
