import math

import numpy as np
import pytest

from wavemap_lab.evolution import (
    DivergenceError,
    SolverConfig,
    SphereState,
    acceleration,
    energy,
    evolve,
    geodesic_state,
    load_trace,
    make_initial_data,
    rescale_trace,
    save_trace,
    sphere_defect,
    step,
    tangency_defect,
    trace_energy,
    _step_raw,
)
from wavemap_lab.norms import sobolev_norm
from wavemap_lab.spectral import Field, GridSpec, transform

from test_spectral import single_mode


GRID1 = GridSpec(1, 8)
GRID2 = GridSpec(2, 16)


class TestSphereState:
    def test_constraints_enforced(self):
        vals = np.zeros((2,) + GRID1.shape)
        vals[0] = 1.1
        with pytest.raises(ValueError):
            SphereState(0.0, Field(GRID1, vals), Field.zeros(GRID1, m=2))

    def test_projected_factory(self):
        rng = np.random.default_rng(0)
        phi = rng.standard_normal((3,) + GRID2.shape) + 2.0
        vel = rng.standard_normal((3,) + GRID2.shape)
        s = SphereState.projected(0.0, phi, vel, GRID2)
        assert sphere_defect(s.phi.values) <= 1e-12
        assert tangency_defect(s.phi.values, s.phidot.values) <= 1e-12


class TestInitialData:
    def test_eps_zero_is_constant_map(self):
        cfg = SolverConfig(GRID2, m=3, eps=0.0, k0=1, seed=0)
        s = make_initial_data(cfg)
        expected = np.zeros_like(s.phi.values)
        expected[0] = 1.0
        assert np.array_equal(s.phi.values, expected)
        assert np.all(s.phidot.values == 0.0)

    def test_constraints_hold(self):
        cfg = SolverConfig(GRID2, m=3, eps=0.3, k0=2, seed=5)
        s = make_initial_data(cfg)
        assert sphere_defect(s.phi.values) <= 1e-12
        assert tangency_defect(s.phi.values, s.phidot.values) <= 1e-12

    def test_bitwise_reproducible(self):
        cfg = SolverConfig(GRID2, m=3, eps=0.2, k0=2, seed=123)
        a = make_initial_data(cfg)
        b = make_initial_data(cfg)
        assert np.array_equal(a.phi.values, b.phi.values)
        assert np.array_equal(a.phidot.values, b.phidot.values)

    def test_amplitude_cap(self):
        with pytest.raises(ValueError):
            SolverConfig(GRID2, eps=0.5)

    def test_rough_band_superposed(self):
        grid = GridSpec(2, 32)
        cfg = SolverConfig(grid, m=3, eps=0.2, k0=1, seed=7, rough_eps=0.02, rough_k0=3)
        s = make_initial_data(cfg)
        sp = transform(s.phi)
        # some spectral mass must now sit in the high band annulus
        from wavemap_lab.spectral import _wavenumber_magnitude

        kmag = _wavenumber_magnitude(grid)
        high = np.sum(np.abs(sp.coefficients[:, kmag >= 6.0]) ** 2)
        assert high > 0.0


class TestAcceleration:
    def test_constant_state_is_static(self):
        s = geodesic_state(GRID2, omega=0.0)
        a = acceleration(s)
        assert np.max(np.abs(a.values)) < 1e-13

    def test_geodesic_closed_form(self):
        omega = 0.7
        s = geodesic_state(GRID2, omega, t=0.3)
        a = acceleration(s)
        assert np.allclose(a.values, -(omega**2) * s.phi.values, atol=1e-12)

    def test_normal_component_identity(self):
        # phi . a - phi . lap(phi) = |grad phi|^2 - |phi_t|^2 pointwise
        cfg = SolverConfig(GRID2, m=3, eps=0.3, k0=2, seed=9)
        s = make_initial_data(cfg)
        a = acceleration(s)
        from wavemap_lab.evolution import _laplacian_raw, _gradient_sq_raw

        lap = _laplacian_raw(s.phi.values, GRID2)
        lhs = np.sum(s.phi.values * a.values, axis=0) - np.sum(s.phi.values * lap, axis=0)
        rhs = _gradient_sq_grid = _gradient_sq_raw(s.phi.values, GRID2) - np.sum(
            s.phidot.values**2, axis=0
        )
        assert np.allclose(lhs, rhs, atol=1e-11)


class TestStep:
    def test_constant_state_fixed_point(self):
        s = geodesic_state(GRID2, omega=0.0)
        s2 = step(s, 1e-3)
        assert np.array_equal(s2.phi.values, s.phi.values)
        assert np.max(np.abs(s2.phidot.values)) < 1e-15

    def test_cfl_enforced(self):
        s = geodesic_state(GRID2, omega=1.0)
        with pytest.raises(ValueError):
            step(s, 10.0)

    def test_divergence_reported_with_time(self):
        vals = np.zeros((2,) + GRID1.shape)
        vals[0] = 1.0
        vel = np.zeros((2,) + GRID1.shape)
        vel[1] = 1e154  # finite but squares to overflow in the nonlinearity
        s = SphereState.projected(0.0, vals, vel, GRID1)
        with pytest.raises(DivergenceError) as exc:
            step(s, 1e-3)
        assert exc.value.t == pytest.approx(1e-3)

    def test_post_step_constraints(self):
        cfg = SolverConfig(GRID2, m=3, eps=0.3, k0=2, seed=2)
        s = make_initial_data(cfg)
        s2 = step(s, 1e-3)
        assert sphere_defect(s2.phi.values) <= 1e-12
        assert tangency_defect(s2.phi.values, s2.phidot.values) <= 1e-12

    def test_pre_projection_drift_is_second_order(self):
        cfg = SolverConfig(GRID2, m=3, eps=0.2, k0=2, seed=1)
        s = make_initial_data(cfg)
        defects = []
        for dt in (2e-3, 1e-3):
            phi1, _ = _step_raw(s.phi.values, s.phidot.values, dt, GRID2, "off")
            defects.append(sphere_defect(phi1))
        assert defects[0] / defects[1] == pytest.approx(4.0, abs=1.0)


class TestGeodesicOracle:
    def test_second_order_convergence(self):
        omega = 1.3
        errs = []
        for dt in (0.02, 0.01):
            cfg = SolverConfig(GRID1, m=3, T=1.0, dt=dt, eps=0.0)
            tr = evolve(cfg, sample_every=10**9, initial=geodesic_state(GRID1, omega))
            exact = geodesic_state(GRID1, omega, t=tr.times[-1])
            errs.append(np.max(np.abs(tr.positions[-1].values - exact.phi.values)))
        ratio = errs[0] / errs[1]
        assert 3.5 <= ratio <= 4.5

    def test_trace_follows_closed_form(self):
        omega = 0.9
        cfg = SolverConfig(GRID1, m=3, T=1.0, dt=0.005, eps=0.0)
        tr = evolve(cfg, sample_every=20, initial=geodesic_state(GRID1, omega))
        for i in range(len(tr)):
            t, phi, _ = tr.sample(i)
            exact = geodesic_state(GRID1, omega, t=t)
            assert np.max(np.abs(phi.values - exact.phi.values)) < 5e-5


class TestEvolve:
    def test_T_zero_returns_initial(self):
        cfg = SolverConfig(GRID2, m=3, T=0.0, eps=0.2, k0=2, seed=11)
        tr = evolve(cfg)
        s = make_initial_data(cfg)
        assert len(tr) == 1
        assert np.array_equal(tr.positions[0].values, s.phi.values)

    def test_deterministic(self):
        cfg = SolverConfig(GRID2, m=3, T=0.05, dt=2e-3, eps=0.2, k0=2, seed=11)
        a = evolve(cfg, sample_every=5)
        b = evolve(cfg, sample_every=5)
        for fa, fb in zip(a.positions, b.positions):
            assert np.array_equal(fa.values, fb.values)

    def test_constraints_on_every_sample(self):
        cfg = SolverConfig(GRID2, m=3, T=0.1, dt=2e-3, eps=0.3, k0=2, seed=4)
        tr = evolve(cfg, sample_every=7)
        for i in range(len(tr)):
            _, phi, vel = tr.sample(i)
            assert sphere_defect(phi.values) <= 1e-12
            assert tangency_defect(phi.values, vel.values) <= 1e-12

    def test_time_reversal_exact_without_projection(self):
        # the bare integrator is time-symmetric to roundoff
        cfg = SolverConfig(GRID2, m=3, T=0.25, dt=2e-3, eps=0.2, k0=2, seed=3, projection="off")
        tr = evolve(cfg, sample_every=10**9)
        end = object.__new__(SphereState)
        object.__setattr__(end, "t", 0.0)
        object.__setattr__(end, "phi", tr.positions[-1])
        object.__setattr__(end, "phidot", Field(GRID2, -tr.velocities[-1].values))
        back = evolve(cfg, sample_every=10**9, initial=end)
        err = np.max(np.abs(back.positions[-1].values - tr.positions[0].values))
        assert err < 1e-10

    def test_time_reversal_projection_effect_measured(self):
        # with the constraint projection on, the recovery error is exactly the
        # accumulated projection displacement: small, and shrinking with dt
        errs = []
        for dt in (2e-3, 1e-3):
            cfg = SolverConfig(GRID2, m=3, T=0.25, dt=dt, eps=0.2, k0=2, seed=3)
            tr = evolve(cfg, sample_every=10**9)
            end = SphereState(
                0.0, tr.positions[-1], Field(GRID2, -tr.velocities[-1].values)
            )
            back = evolve(cfg, sample_every=10**9, initial=end)
            errs.append(np.max(np.abs(back.positions[-1].values - tr.positions[0].values)))
        assert errs[0] < 1e-4
        assert errs[1] < errs[0]


class TestEnergy:
    def test_constant_state(self):
        assert energy(geodesic_state(GRID2, omega=0.0)) == 0.0

    def test_geodesic_closed_form(self):
        omega = 0.8
        e = energy(geodesic_state(GRID2, omega))
        assert e == pytest.approx(0.5 * omega**2 * GRID2.volume, rel=1e-12)

    def test_conserved_along_flow(self):
        cfg = SolverConfig(GRID2, m=3, T=1.0, eps=0.1, k0=2, seed=8)
        tr = evolve(cfg, sample_every=1000)
        E = np.array(trace_energy(tr))
        assert np.max(np.abs(E - E[0])) / E[0] <= 1e-6


class TestRescale:
    def make_trace(self, seed=0):
        cfg = SolverConfig(GRID2, m=3, T=0.02, dt=2e-3, eps=0.3, k0=2, seed=seed)
        return evolve(cfg, sample_every=5)

    def test_identity(self):
        tr = self.make_trace()
        out = rescale_trace(tr, 1.0)
        assert out.grid == tr.grid
        assert np.array_equal(out.positions[0].values, tr.positions[0].values)

    def test_rejects_non_power_of_two(self):
        tr = self.make_trace()
        with pytest.raises(ValueError):
            rescale_trace(tr, 3.0)

    def test_single_mode_halves_physical_frequency(self):
        f = single_mode(GRID2, (4, 0), m=2)
        zero = Field.zeros(GRID2, m=2)
        tr_in = __import__("wavemap_lab.norms", fromlist=["SpacetimeTrace"]).SpacetimeTrace(
            GRID2, (0.0,), (f,), (zero,)
        )
        out = rescale_trace(tr_in, 2.0)
        # same integer index, physical wavenumber 4 -> 2 on the dilated torus
        assert out.grid.period == pytest.approx(2.0 * GRID2.period)
        assert out.grid.freq_scale == pytest.approx(0.5 * GRID2.freq_scale)
        sp = transform(out.positions[0])
        idx = np.unravel_index(np.argmax(np.abs(sp.coefficients[0])), sp.coefficients[0].shape)
        assert idx == (4, 0)

    def test_critical_norm_preserved(self):
        tr = self.make_trace(seed=6)
        out = rescale_trace(tr, 2.0)
        n = GRID2.n
        a = sobolev_norm(tr.positions[0], n / 2.0)
        b = sobolev_norm(out.positions[0], n / 2.0)
        assert b == pytest.approx(a, rel=1e-10)
        # velocity pairs with one derivative less and the 1/lam amplitude
        va = sobolev_norm(tr.velocities[0], n / 2.0 - 1.0)
        vb = sobolev_norm(out.velocities[0], n / 2.0 - 1.0)
        assert vb == pytest.approx(va, rel=1e-10)

    def test_times_and_velocities_scaled(self):
        tr = self.make_trace()
        out = rescale_trace(tr, 2.0)
        assert out.times == tuple(2.0 * t for t in tr.times)
        assert np.allclose(out.velocities[0].values, 0.5 * tr.velocities[0].values)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        cfg = SolverConfig(GRID2, m=3, T=0.02, dt=2e-3, eps=0.2, k0=2, seed=13)
        tr = evolve(cfg, sample_every=3)
        path = tmp_path / "trace.wmap"
        save_trace(path, tr)
        back = load_trace(path)
        assert back.grid == tr.grid
        assert back.times == tr.times
        for a, b in zip(tr.positions + tr.velocities, back.positions + back.velocities):
            assert np.array_equal(a.values, b.values)

    def test_header_layout(self, tmp_path):
        cfg = SolverConfig(GRID1, m=2, T=0.0, eps=0.1, k0=1, seed=0)
        tr = evolve(cfg)
        path = tmp_path / "t.wmap"
        save_trace(path, tr)
        blob = path.read_bytes()
        assert blob[:4] == b"WMAP"
        import struct

        version, n, N, m = struct.unpack_from("<IIII", blob, 4)
        assert (version, n, N, m) == (1, 1, 8, 2)

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.wmap"
        path.write_bytes(b"JUNKxxxxxxxxxxxxxxxxxxxxxxxxx")
        with pytest.raises(ValueError):
            load_trace(path)
