"""Acceptance suite: every criterion at its stated tolerance, one printed
pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
complete; the whole module is sized to finish in a few minutes on a laptop.
"""

import math
import warnings

import numpy as np
import pytest

from wavemap_lab.cli import config_from_dict, run
from wavemap_lab.evolution import (
    SolverConfig,
    evolve,
    geodesic_state,
    sphere_defect,
    tangency_defect,
    trace_energy,
)
from wavemap_lab.experiments import derived_rows, identity_suite, loglog_slope, points_for, run_point
from wavemap_lab.renorm import envelope_stability, renormalize_and_compare
from wavemap_lab.reporting import ReportRow
from wavemap_lab.spectral import GridSpec

warnings.filterwarnings("ignore", category=UserWarning)


def report(criterion: str, detail: str, ok: bool) -> None:
    print(f"[acceptance] {criterion}: {detail} -> {'PASS' if ok else 'FAIL'}")
    assert ok, f"{criterion}: {detail}"


def sweep_rows(config_payload) -> list[ReportRow]:
    cfg = config_from_dict(config_payload)
    rows: list[ReportRow] = []
    for pt in points_for(cfg):
        rows.extend(run_point(cfg, pt))
    rows.extend(derived_rows(cfg, rows))
    return rows


# -- criterion 1: exact identities on 32^2 and 12^5 ------------------------------


def test_criterion_1_exact_identity_suite():
    worst = {}
    for n, N in ((2, 32), (5, 12)):
        for name, residual in identity_suite(GridSpec(n, N)):
            worst[name] = max(worst.get(name, 0.0), residual)
    core = (
        "lp_reconstruction_residual",
        "band_support_residual",
        "gradient_commutation_residual",
        "connection_antisymmetry_residual",
        "gauge_telescoping_residual",
    )
    detail = ", ".join(f"{k.replace('_residual', '')}={worst[k]:.2e}" for k in core)
    report("criterion 1 (exact identities <= 1e-12)", detail, all(worst[k] <= 1e-12 for k in core))


# -- criterion 2: geodesic oracle with second-order convergence -------------------


def test_criterion_2_geodesic_convergence():
    grid = GridSpec(1, 8)
    omega = 1.3
    errs = []
    for dt in (0.02, 0.01):
        cfg = SolverConfig(grid, m=3, T=1.0, dt=dt, eps=0.0)
        tr = evolve(cfg, sample_every=10**9, initial=geodesic_state(grid, omega))
        exact = geodesic_state(grid, omega, t=tr.times[-1])
        errs.append(float(np.max(np.abs(tr.positions[-1].values - exact.phi.values))))
    ratio = errs[0] / errs[1]
    report(
        "criterion 2 (geodesic error ratio in [3.5, 4.5])",
        f"errors {errs[0]:.3e} -> {errs[1]:.3e}, ratio {ratio:.3f}",
        3.5 <= ratio <= 4.5,
    )


# -- criterion 3: conservation and constraints ------------------------------------


def test_criterion_3_conservation_and_constraints():
    grid = GridSpec(2, 32)
    cfg = SolverConfig(grid, m=3, T=1.0, eps=0.1, k0=2, seed=8)  # default dt
    tr = evolve(cfg, sample_every=250)
    energies = np.array(trace_energy(tr))
    drift = float(np.max(np.abs(energies - energies[0])) / energies[0])
    sph = max(sphere_defect(p.values) for p in tr.positions)
    tan = max(tangency_defect(p.values, v.values) for p, v in zip(tr.positions, tr.velocities))
    report(
        "criterion 3 (energy drift <= 1e-6, constraints <= 1e-12)",
        f"drift={drift:.2e} at dt={cfg.resolved_dt():.2e}, sphere={sph:.1e}, tangency={tan:.1e}",
        drift <= 1e-6 and sph <= 1e-12 and tan <= 1e-12,
    )


# -- criteria 4 and 5: gauge defect sweep at n=2, N=128 ---------------------------


@pytest.fixture(scope="module")
def gauge_sweep():
    return sweep_rows(
        {
            "experiment": "gauge_defects",
            "n": 2,
            "N": 128,
            "T": 1.0,
            "epsilons": [0.4, 0.2, 0.1, 0.05],
        }
    )


def test_criterion_4_gauge_quadratic_smallness(gauge_sweep):
    slope = next(r.value for r in gauge_sweep if r.quantity == "orth_defect_loglog_slope")
    defects = sorted((r.epsilon, r.value) for r in gauge_sweep if r.quantity == "orth_defect")
    detail = "defects " + " ".join(f"{e}:{v:.2e}" for e, v in defects) + f"; slope {slope:.3f}"
    report("criterion 4 (orthogonality defect slope 2 +- 0.3)", detail, abs(slope - 2.0) <= 0.3)


def test_criterion_5_transport_cancellation(gauge_sweep):
    defect, au = {}, {}
    for r in gauge_sweep:
        if r.quantity.startswith("transport_defect_alpha"):
            defect[(r.epsilon, r.alpha)] = r.value
        if r.quantity.startswith("conn_u_l1_alpha"):
            au[(r.epsilon, r.alpha)] = r.value
    ratios = {key: defect[key] / au[key] for key in defect}
    worst_key = max(ratios, key=ratios.get)
    report(
        "criterion 5 (||dU - AU|| < ||AU|| per alpha on every run)",
        f"worst ratio {ratios[worst_key]:.3f} at (eps, alpha)={worst_key}",
        all(v < 1.0 for v in ratios.values()),
    )


# -- criterion 6: commutator ratio stability --------------------------------------


def test_criterion_6_commutator_stability():
    rows = sweep_rows({"experiment": "commutator_sweep", "n": 2, "N": 64, "comm_pairs": 100})
    maxima = {r.quantity: r.value for r in rows if r.quantity.startswith("commutator_ratio_max@")}
    change = next(r.value for r in rows if r.quantity == "commutator_max_rel_change")
    all_finite = all(math.isfinite(r.value) for r in rows if r.quantity.startswith("commutator_ratio@"))
    count = sum(1 for r in rows if r.quantity.startswith("commutator_ratio@"))
    report(
        "criterion 6 (commutator ratio finite, max change < 2x across N -> 2N)",
        f"{count} ratios, maxima {maxima}, rel change {change:.3f}",
        all_finite and change < 2.0 and count == 200,
    )


# -- criterion 7: renormalization benefit ------------------------------------------


def test_criterion_7_renormalization_benefit():
    grid = GridSpec(2, 64)
    ratios = []
    roundtrips = []
    for eps in (0.4, 0.2, 0.1, 0.05):
        cfg = SolverConfig(
            grid, m=3, T=0.25, dt=2.5e-3, eps=eps, k0=0, seed=7, rough_eps=eps / 32, rough_k0=4
        )
        tr = evolve(cfg, sample_every=1)
        rep = renormalize_and_compare(tr, k_band=4, separation=4, eps=eps, c0=eps / 32)
        ratios.append(rep.improvement_ratio)
        roundtrips.append(rep.roundtrip_max)
    monotone = all(b <= a for a, b in zip(ratios, ratios[1:]))
    detail = (
        "ratios " + " ".join(f"{r:.4f}" for r in ratios) + f", max roundtrip {max(roundtrips):.1e}"
    )
    report(
        "criterion 7 (||box w||/||box psi|| < 1, non-increasing; roundtrip <= 1e-12)",
        detail,
        all(r < 1.0 for r in ratios) and monotone and max(roundtrips) <= 1e-12,
    )


# -- criterion 8: envelope stability ------------------------------------------------


def test_criterion_8_envelope_stability():
    grid = GridSpec(2, 64)
    growths = []
    for eps in (0.05, 0.025):
        cfg = SolverConfig(grid, m=3, T=1.0, dt=2e-3, eps=eps, k0=2, seed=21)
        tr = evolve(cfg, sample_every=25)
        rep = envelope_stability(tr, sigma=0.25)
        assert not rep.degenerate
        growths.append(rep.growth_factor)
    report(
        "criterion 8 (band growth against initial envelope <= 4 for two smallest eps)",
        "growth factors " + " ".join(f"{g:.3f}" for g in growths),
        all(g <= 4.0 for g in growths),
    )


# -- criterion 9: determinism -------------------------------------------------------


def test_criterion_9_byte_identical_reruns(tmp_path):
    payloads = [
        {"experiment": "lp_checks", "n": 2, "N": 32},
        {
            "experiment": "envelope_stability",
            "n": 2,
            "N": 32,
            "T": 0.2,
            "epsilons": [0.1, 0.05],
            "seeds": [3],
        },
    ]
    identical = True
    for i, payload in enumerate(payloads):
        cfg = config_from_dict(payload)
        _, dir_a = run(cfg, out_dir=tmp_path / f"a{i}")
        _, dir_b = run(cfg, out_dir=tmp_path / f"b{i}")
        identical &= (dir_a / "results.csv").read_bytes() == (dir_b / "results.csv").read_bytes()
    report(
        "criterion 9 (same config + seed -> byte-identical CSV bodies)",
        f"{len(payloads)} experiment reruns compared",
        identical,
    )
