"""The six named experiments behind the CLI.

Each experiment maps an ExperimentConfig to a deterministic list of report
rows; sweeps are expressed as a list of points so the runner can farm them
out to workers and still collect output in a fixed order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .evolution import (
    SolverConfig,
    SphereState,
    evolve,
    geodesic_state,
    make_initial_data,
    sphere_defect,
    tangency_defect,
    trace_energy,
)
from .gauge import (
    box_matrix,
    build_connection,
    build_gauge,
    determinant_margin,
    orthogonality_defect,
    transport_defect,
)
from .norms import SpacetimeTrace, lebesgue_norm
from .renorm import (
    commutator_defect,
    decompose_nonlinearity,
    envelope_stability,
    renormalize_and_compare,
    tangent_orthogonality,
)
from .reporting import ReportRow
from .spectral import (
    DyadicRange,
    Field,
    GridSpec,
    project_band,
    project_leq,
    spatial_gradient,
    transform,
)

EXPERIMENTS = (
    "lp_checks",
    "solver_convergence",
    "gauge_defects",
    "commutator_sweep",
    "envelope_stability",
    "renorm_compare",
)


# -- exact identity suite --------------------------------------------------------


def identity_suite(grid: GridSpec, m: int = 3, seed: int = 0) -> list[tuple[str, float]]:
    """Residuals of the identities that must hold to roundoff on any grid:
    dyadic reconstruction, band support, projection/derivative commutation,
    spectrum conjugate symmetry, connection antisymmetry, and the frame's
    telescoping orthogonality."""
    rng = DyadicRange.for_grid(grid)
    gen = np.random.default_rng(seed)
    f = Field(grid, gen.standard_normal((m,) + grid.shape))
    out: list[tuple[str, float]] = []

    acc = project_leq(f, rng.k_min).values.copy()
    for k in rng.bands():
        acc += project_band(f, k).values
    top = project_leq(f, rng.k_max).values
    out.append(("lp_reconstruction_residual", float(np.max(np.abs(acc - top)))))

    from .spectral import _wavenumber_magnitude

    kmag = _wavenumber_magnitude(grid)
    worst = 0.0
    for k in rng.bands():
        sp = transform(project_band(f, k))
        outside = (kmag < 2.0 ** (k - 1)) | (kmag > 2.0 ** (k + 1))
        worst = max(worst, float(np.max(np.abs(sp.coefficients[:, outside]))))
    out.append(("band_support_residual", worst))

    k_mid = rng.k_min + 1
    inner = project_leq(f, k_mid)
    out.append(
        ("idempotence_residual", float(np.max(np.abs(project_leq(inner, k_mid + 1).values - inner.values))))
    )

    worst = 0.0
    grads = spatial_gradient(f)
    band_of_grads = [project_band(g, k_mid + 1) for g in grads]
    grads_of_band = spatial_gradient(project_band(f, k_mid + 1))
    for a, b in zip(band_of_grads, grads_of_band):
        worst = max(worst, float(np.max(np.abs(a.values - b.values))))
    out.append(("gradient_commutation_residual", worst))

    sp = transform(project_band(f, k_mid + 1))
    c = sp.coefficients
    flip = tuple(slice(None, None, -1) for _ in range(grid.n))
    flipped = np.conj(np.roll(c[(slice(None),) + flip], shift=(1,) * grid.n, axis=tuple(range(1, grid.n + 1))))
    out.append(("conjugate_symmetry_residual", float(np.max(np.abs(c - flipped)))))

    cfg = SolverConfig(grid, m=m, eps=0.2, k0=rng.k_max - 1 if rng.k_max > rng.k_min + 1 else rng.k_max, seed=seed)
    state = make_initial_data(cfg)
    smooth = project_leq(state.phi, rng.k_max)
    smooth_t = project_leq(state.phidot, rng.k_max)
    conn = build_connection(smooth, smooth_t)
    worst = 0.0
    for alpha in range(grid.n + 1):
        vals = conn[alpha].values
        worst = max(worst, float(np.max(np.abs(vals + np.swapaxes(vals, -1, -2)))))
    out.append(("connection_antisymmetry_residual", worst))

    frame = build_gauge(state.phi, k_top=rng.k_max, k_bot=rng.k_min)
    worst = 0.0
    acc_m = np.zeros(grid.shape + (m, m))
    for u_lt, u_k in zip(frame.partials[1:], frame.components):
        uk = u_k.values
        acc_m = acc_m + np.swapaxes(uk, -1, -2) @ uk
        gram = np.swapaxes(u_lt.values, -1, -2) @ u_lt.values - np.eye(m)
        worst = max(worst, float(np.max(np.abs(gram - acc_m))))
    out.append(("gauge_telescoping_residual", worst))
    return out


# -- experiment drivers ----------------------------------------------------------


def _grid(cfg) -> GridSpec:
    return GridSpec(cfg.n, cfg.N, period=cfg.period)


def points_for(cfg) -> list[dict]:
    """Sweep points of an experiment, in deterministic order."""
    if cfg.experiment == "lp_checks":
        return [{"seed": s} for s in cfg.seeds]
    if cfg.experiment == "solver_convergence":
        return [{"dt": dt} for dt in cfg.dts] + [{"dt": None}]
    if cfg.experiment == "commutator_sweep":
        return [{"N": cfg.N}, {"N": 2 * cfg.N}]
    return [{"epsilon": eps, "seed": s} for eps in cfg.epsilons for s in cfg.seeds]


def run_point(cfg, point: dict) -> list[ReportRow]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return _DISPATCH[cfg.experiment](cfg, point)


def _row(cfg, quantity, value, **kw) -> ReportRow:
    return ReportRow(run_id="", experiment=cfg.experiment, quantity=quantity, value=value, **kw)


def _lp_checks(cfg, point) -> list[ReportRow]:
    seed = point["seed"]
    rows = []
    for name, residual in identity_suite(_grid(cfg), m=cfg.m, seed=seed):
        rows.append(_row(cfg, name, residual, seed=seed))
    return rows


def _solver_convergence(cfg, point) -> list[ReportRow]:
    grid = _grid(cfg)
    omega = 1.3
    rows = []
    if point["dt"] is not None:
        dt = point["dt"]
        solver = SolverConfig(grid, m=cfg.m, T=cfg.T, dt=dt, eps=0.0, k0=cfg.k0)
        tr = evolve(solver, sample_every=10**9, initial=geodesic_state(grid, omega, m=cfg.m))
        exact = geodesic_state(grid, omega, t=tr.times[-1], m=cfg.m)
        err = float(np.max(np.abs(tr.positions[-1].values - exact.phi.values)))
        rows.append(_row(cfg, "geodesic_max_err", err, dt=dt))
    else:
        # conservation & constraint block at the solver's own default step
        seed = cfg.seeds[0]
        eps = cfg.epsilons[0]
        solver = SolverConfig(grid, m=cfg.m, T=cfg.T, eps=eps, k0=cfg.k0, seed=seed)
        tr = evolve(solver, sample_every=cfg.sample_every)
        energies = np.array(trace_energy(tr))
        drift = float(np.max(np.abs(energies - energies[0])) / energies[0])
        rows.append(_row(cfg, "energy_rel_drift", drift, epsilon=eps, seed=seed, dt=solver.resolved_dt()))
        sph = max(sphere_defect(p.values) for p in tr.positions)
        tan = max(tangency_defect(p.values, v.values) for p, v in zip(tr.positions, tr.velocities))
        rows.append(_row(cfg, "sphere_defect_max", sph, epsilon=eps, seed=seed))
        rows.append(_row(cfg, "tangency_defect_max", tan, epsilon=eps, seed=seed))
    return rows


def _gauge_defects(cfg, point) -> list[ReportRow]:
    grid = _grid(cfg)
    eps, seed = point["epsilon"], point["seed"]
    solver = SolverConfig(grid, m=cfg.m, T=cfg.T, dt=cfg.dt, eps=eps, k0=cfg.k0, seed=seed)
    tr = evolve(solver, sample_every=cfg.sample_every)
    k_top = cfg.k_band if cfg.k_band is not None else cfg.k0 + 1
    k_bot = DyadicRange.for_grid(grid).k_min

    frames, conns = [], []
    for i in range(len(tr)):
        t, phi, vel = tr.sample(i)
        frames.append(build_gauge(phi, k_top, k_bot, t=t, keep_partials=False))
        conns.append(build_connection(project_leq(phi, k_top), project_leq(vel, k_top)))

    rows = []
    tag = dict(epsilon=eps, seed=seed)
    orth = max(orthogonality_defect(f).value for f in frames)
    rows.append(_row(cfg, "orth_defect", orth, **tag))
    rate = orthogonality_defect(frames[0], later=frames[1]).time_derivative
    rows.append(_row(cfg, "orth_defect_ddt", rate, **tag))
    rows.append(_row(cfg, "det_margin", min(determinant_margin(f) for f in frames), **tag))

    report = transport_defect(frames, conns, tr)
    for alpha in range(grid.n + 1):
        rows.append(_row(cfg, f"transport_defect_alpha{alpha}", report.defect_l1_linf[alpha], alpha=alpha, **tag))
        rows.append(_row(cfg, f"conn_u_l1_alpha{alpha}", report.a_u_l1_linf[alpha], alpha=alpha, **tag))
        rows.append(_row(cfg, "dU_L2Linf", report.du_l2_linf[alpha], alpha=alpha, **tag))
        rows.append(_row(cfg, "dU_LinfLinf", report.du_linf_linf[alpha], alpha=alpha, **tag))
    if grid.n >= 2:
        rows.append(_row(cfg, "boxU_L2Ln1", box_matrix(frames).l2_ln1_norm, **tag))
    return rows


def _commutator_sweep(cfg, point) -> list[ReportRow]:
    # (f, g) pairs are banded to levels the BASE grid resolves so that the
    # two resolutions sample the same function class
    N = point["N"]
    grid = GridSpec(cfg.n, N, period=cfg.period)
    base = DyadicRange.for_grid(GridSpec(cfg.n, cfg.N, period=cfg.period))
    k = min(cfg.k_band if cfg.k_band is not None else base.k_max, base.k_max)
    rows = []
    worst = 0.0
    for seed in range(cfg.comm_pairs):
        gen = np.random.default_rng(seed)
        f = project_band(Field(grid, gen.standard_normal((1,) + grid.shape)), cfg.k0)
        g_raw = Field(grid, gen.standard_normal((cfg.m,) + grid.shape))
        g = project_leq(g_raw, base.k_max)
        ratio = commutator_defect(f, g, k=k, p=cfg.comm_p, q=cfg.comm_q, r=cfg.comm_r)
        if not math.isfinite(ratio):
            raise RuntimeError(f"commutator ratio degenerate for seed {seed}")
        worst = max(worst, ratio)
        rows.append(
            _row(cfg, f"commutator_ratio@N={N}", ratio, k=k, q=cfg.comm_p, r=cfg.comm_q, seed=seed)
        )
    rows.append(_row(cfg, f"commutator_ratio_max@N={N}", worst, k=k, q=cfg.comm_p, r=cfg.comm_q))
    return rows


def _envelope_stability(cfg, point) -> list[ReportRow]:
    grid = _grid(cfg)
    eps, seed = point["epsilon"], point["seed"]
    solver = SolverConfig(grid, m=cfg.m, T=cfg.T, dt=cfg.dt, eps=eps, k0=cfg.k0, seed=seed)
    tr = evolve(solver, sample_every=cfg.sample_every)
    report = envelope_stability(tr, sigma=cfg.sigma)
    tag = dict(epsilon=eps, seed=seed)
    rows = [
        _row(cfg, "degenerate_flag", 1.0 if report.degenerate else 0.0, **tag),
        _row(cfg, "envelope_growth_max", report.growth_factor, **tag),
    ]
    for k, c in sorted(report.initial_envelope_values.items()):
        rows.append(_row(cfg, "envelope_initial", c, k=k, **tag))
    if not report.degenerate:
        for t, per_k in report.per_time_band_norms.items():
            for k, b in sorted(per_k.items()):
                ratio = b / report.initial_envelope_values[k]
                rows.append(_row(cfg, f"band_growth@t={t!r}", ratio, k=k, **tag))
    return rows


def _renorm_compare(cfg, point) -> list[ReportRow]:
    grid = _grid(cfg)
    eps, seed = point["epsilon"], point["seed"]
    c0 = eps * cfg.rough_ratio
    solver = SolverConfig(
        grid, m=cfg.m, T=cfg.T, dt=cfg.dt, eps=eps, k0=cfg.k0, seed=seed,
        rough_eps=c0, rough_k0=cfg.k_band,
    )
    tr = evolve(solver, sample_every=1)
    tag = dict(epsilon=eps, seed=seed)
    rows = []

    rep = renormalize_and_compare(tr, cfg.k_band, separation=cfg.separation, eps=eps, c0=c0)
    for name, value in rep.quantities().items():
        rows.append(_row(cfg, name, value, k=cfg.k_band, **tag))

    dec = decompose_nonlinearity(tr, cfg.k_band, separation=cfg.separation)
    for name in dec.ORDER:
        rows.append(_row(cfg, f"dec_{name}_L1L2", dec.projected_l1l2[name], k=cfg.k_band, **tag))
    main = dec.projected_l1l2["low_mid"] + dec.projected_l1l2["mid_low"]
    others = sum(v for nm, v in dec.projected_l1l2.items() if nm not in ("low_mid", "mid_low"))
    rows.append(_row(cfg, "dec_main_over_others", main / others if others > 0 else math.inf, k=cfg.k_band, **tag))

    tang = tangent_orthogonality(tr, cfg.k_band, separation=cfg.separation)
    for alpha in range(grid.n + 1):
        rows.append(_row(cfg, "tangency_L2L2", tang.tangency[alpha], alpha=alpha, k=cfg.k_band, **tag))
        rows.append(_row(cfg, "tangency_comparison_L2L2", tang.comparison[alpha], alpha=alpha, k=cfg.k_band, **tag))
    return rows


_DISPATCH = {
    "lp_checks": _lp_checks,
    "solver_convergence": _solver_convergence,
    "gauge_defects": _gauge_defects,
    "commutator_sweep": _commutator_sweep,
    "envelope_stability": _envelope_stability,
    "renorm_compare": _renorm_compare,
}


# -- post-sweep summary rows ------------------------------------------------------


def loglog_slope(xs: list[float], ys: list[float]) -> tuple[float, float]:
    """Least-squares slope of log y against log x, with rms residual."""
    lx, ly = np.log(np.asarray(xs)), np.log(np.asarray(ys))
    coeffs, residuals, *_ = np.polyfit(lx, ly, 1, full=True)
    rms = float(np.sqrt(residuals[0] / len(xs))) if len(residuals) else 0.0
    return float(coeffs[0]), rms


def derived_rows(cfg, rows: list[ReportRow]) -> list[ReportRow]:
    """Cross-point summaries appended after the sweep: convergence ratios,
    scaling slopes, resolution stability."""
    out: list[ReportRow] = []
    if cfg.experiment == "solver_convergence":
        errs = [(r.dt, r.value) for r in rows if r.quantity == "geodesic_max_err"]
        errs.sort(key=lambda p: -p[0])
        for (dt0, e0), (dt1, e1) in zip(errs, errs[1:]):
            if e1 > 0:
                out.append(_row(cfg, "convergence_ratio", e0 / e1, dt=dt1))
    if cfg.experiment == "gauge_defects":
        pts = sorted((r.epsilon, r.value) for r in rows if r.quantity == "orth_defect")
        if len(pts) >= 3:
            slope, rms = loglog_slope([p[0] for p in pts], [p[1] for p in pts])
            out.append(_row(cfg, "orth_defect_loglog_slope", slope))
            out.append(_row(cfg, "orth_defect_loglog_rms", rms))
    if cfg.experiment == "commutator_sweep":
        maxima = [r.value for r in rows if r.quantity.startswith("commutator_ratio_max@")]
        if len(maxima) == 2 and min(maxima) > 0:
            out.append(_row(cfg, "commutator_max_rel_change", max(maxima) / min(maxima)))
    return out
