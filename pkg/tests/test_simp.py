"""Sensitivities, filtering, volume-targeted updates and the full loop."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cantilever_scenario
from topoforge.fem import (
    DensityField,
    DesignDomain,
    LinearSystem,
    ParameterError,
    assemble_global,
    compliance,
    element_stiffness,
    solve_equilibrium,
)
from topoforge.scenarios import scenario_to_system
from topoforge.simp import (
    DensityBounds,
    OptimizationError,
    SimpConfig,
    filter_sensitivities,
    oc_step,
    oc_update,
    optimize,
    sensitivities,
)


def solve_scenario(domain, scenario, density, penal=3.0):
    k0 = element_stiffness()
    fixed, F = scenario_to_system(scenario, domain)
    K = assemble_global(domain, density, penal, k0)
    U = solve_equilibrium(LinearSystem(K, F, fixed))
    return k0, fixed, F, U


def brute_force_filter(x, raw, rmin):
    """Direct double-loop evaluation of the weighted sensitivity average."""
    ny, nx = x.shape
    out = np.zeros_like(raw)
    for i in range(nx):
        for j in range(ny):
            total = 0.0
            acc = 0.0
            for k in range(nx):
                for m in range(ny):
                    w = rmin - np.hypot(i - k, j - m)
                    if w > 0:
                        total += w
                        acc += w * x[m, k] * raw[m, k]
            out[j, i] = acc / (x[j, i] * total)
    return out


class TestSensitivities:
    def test_zero_displacement(self):
        domain = DesignDomain(3, 3)
        density = DensityField.uniform(domain, 0.5)
        s = sensitivities(density, np.zeros(domain.n_dofs), element_stiffness(), 3.0, domain)
        assert np.all(s == 0.0)

    def test_exponent_collapse_at_unit_density(self):
        domain = DesignDomain(2, 2)
        scenario = cantilever_scenario(2, 2, volfrac=0.5)
        density = DensityField.uniform(domain, 1.0)
        k0, _, _, U = solve_scenario(domain, scenario, density, penal=1.0)
        s = sensitivities(density, U, k0, 1.0, domain)
        edofs = domain.element_dofs()
        ue = U[edofs]
        expected = -np.einsum("ni,ij,nj->n", ue, k0.k0, ue).reshape(2, 2)
        assert np.abs(s - expected).max() < 1e-14

    def test_always_non_positive(self):
        domain = DesignDomain(4, 3)
        scenario = cantilever_scenario(4, 3, volfrac=0.5)
        density = DensityField(np.random.default_rng(0).uniform(0.2, 1.0, (3, 4)))
        k0, _, _, U = solve_scenario(domain, scenario, density)
        assert np.all(sensitivities(density, U, k0, 3.0, domain) <= 0.0)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_central_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        domain = DesignDomain(3, 3)
        scenario = cantilever_scenario(3, 3, volfrac=0.5)
        vals = rng.uniform(0.3, 0.9, (3, 3))
        density = DensityField(vals)
        k0, fixed, F, U = solve_scenario(domain, scenario, density)
        analytic = sensitivities(density, U, k0, 3.0, domain)

        h = 1e-6

        def c_of(v):
            K = assemble_global(domain, DensityField(v), 3.0, k0)
            return compliance(solve_equilibrium(LinearSystem(K, F, fixed)), F)

        for e in range(9):
            up = vals.copy()
            dn = vals.copy()
            up.flat[e] += h
            dn.flat[e] -= h
            fd = (c_of(up) - c_of(dn)) / (2 * h)
            assert analytic.flat[e] == pytest.approx(fd, rel=1e-4)


class TestFilter:
    def test_uniform_field_fixed_point(self):
        domain = DesignDomain(5, 4)
        density = DensityField.uniform(domain, 0.4)
        raw = np.full((4, 5), -2.7)
        out = filter_sensitivities(density, raw, rmin=2.5)
        assert np.abs(out - raw).max() <= 1e-12  # boundary elements included

    @pytest.mark.parametrize("rmin", [0.0, 0.5, 1.0])
    def test_identity_below_unit_radius(self, rmin):
        rng = np.random.default_rng(1)
        density = DensityField(rng.uniform(0.2, 1.0, (4, 5)))
        raw = -rng.uniform(0.0, 3.0, (4, 5))
        out = filter_sensitivities(density, raw, rmin=rmin)
        assert np.abs(out - raw).max() <= 1e-12

    def test_matches_brute_force_double_loop(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0.2, 1.0, (3, 3))
        raw = -rng.uniform(0.0, 5.0, (3, 3))
        out = filter_sensitivities(DensityField(x), raw, rmin=1.5)
        assert np.abs(out - brute_force_filter(x, raw, 1.5)).max() < 1e-12

    def test_weighted_average_bounds(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0.2, 1.0, (5, 6))
        raw = -rng.uniform(0.0, 5.0, (5, 6))
        out = filter_sensitivities(DensityField(x), raw, rmin=2.0)
        prod = x * raw
        for j in range(5):
            for i in range(6):
                lo = prod.min() / x[j, i]
                hi = prod.max() / x[j, i]
                assert lo - 1e-12 <= out[j, i] <= hi + 1e-12

    def test_rejects_density_below_minimum(self):
        density = DensityField(np.full((2, 2), 0.5), x_min=1e-3)
        object.__setattr__(density, "values", np.full((2, 2), 1e-6))
        with pytest.raises(ParameterError):
            filter_sensitivities(density, -np.ones((2, 2)), 1.5)


class TestOcUpdate:
    def config(self, **kw):
        defaults = dict(volfrac=0.5, move=0.2, x_min=1e-3)
        defaults.update(kw)
        return SimpConfig(**defaults)

    def test_fixed_point_when_volume_on_target(self):
        config = self.config()
        x = np.full((4, 4), 0.5)
        filtered = np.full((4, 4), -1.7)  # beta_e identical everywhere
        result = oc_update(DensityField(x), filtered, config)
        assert result.volume == pytest.approx(0.5, abs=1e-4)
        assert np.abs(result.density.values - x).max() < 1e-3

    def test_lower_branch_clamp(self):
        config = self.config()
        bounds = DensityBounds.free(DesignDomain(3, 3))
        x = np.full((3, 3), 0.5)
        # enormous lambda drives every candidate to the lower move limit
        out = oc_step(x, -np.ones((3, 3)), 1e12, config, bounds)
        assert np.all(out == np.maximum(config.x_min, x - config.move))

    def test_upper_branch_clamp(self):
        config = self.config()
        bounds = DensityBounds.free(DesignDomain(3, 3))
        x = np.full((3, 3), 0.9)
        out = oc_step(x, -np.ones((3, 3)), 1e-12, config, bounds)
        assert np.all(out == np.minimum(1.0, x + config.move))

    @pytest.mark.parametrize("seed", range(4))
    def test_volume_hits_target_and_matches_lambda_scan(self, seed):
        rng = np.random.default_rng(seed)
        config = self.config()
        x = rng.uniform(0.2, 0.9, (4, 4))
        filtered = -rng.uniform(0.1, 5.0, (4, 4))
        density = DensityField(x)
        result = oc_update(density, filtered, config)
        assert abs(result.volume - config.volfrac) <= 1e-4
        # oracle: coarse log scan, then a fine local scan of the multiplier
        bounds = DensityBounds.free(DesignDomain(4, 4))
        coarse = np.logspace(-9, 9, 2001)
        vols = np.array([oc_step(x, filtered, lam, config, bounds).mean() for lam in coarse])
        lam0 = coarse[np.argmin(np.abs(vols - config.volfrac))]
        fine = lam0 * np.linspace(0.97, 1.03, 4001)
        vols = np.array([oc_step(x, filtered, lam, config, bounds).mean() for lam in fine])
        assert np.abs(vols - config.volfrac).min() <= 1e-4
        best = fine[np.argmin(np.abs(vols - config.volfrac))]
        assert abs(np.log10(result.lagrange) - np.log10(best)) < 0.05

    def test_positive_sensitivities_clamped_and_counted(self):
        config = self.config()
        x = np.full((2, 2), 0.5)
        filtered = np.array([[-1.0, 0.5], [-2.0, -1.5]])
        result = oc_update(DensityField(x), filtered, config)
        assert result.clamped_positive == 1

    def test_degenerate_all_zero(self):
        config = self.config()
        x = np.full((2, 2), 0.5)
        result = oc_update(DensityField(x), np.zeros((2, 2)), config)
        assert result.degenerate
        assert np.array_equal(result.density.values, x)

    def test_bounds_pin_passive_and_active(self):
        config = self.config(volfrac=0.5)
        domain = DesignDomain(4, 4)
        bounds = DensityBounds.free(domain)
        lower = bounds.lower.copy()
        upper = bounds.upper.copy()
        lower[0, 0] = 1.0  # active element
        upper[3, 3] = 1e-3  # passive element
        bounds = DensityBounds(lower, upper)
        x = np.full((4, 4), 0.5)
        x[0, 0] = 1.0
        x[3, 3] = 1e-3
        result = oc_update(
            DensityField(x), -np.random.default_rng(5).uniform(0.1, 2.0, (4, 4)), config, bounds
        )
        assert result.density.values[0, 0] == 1.0
        assert result.density.values[3, 3] == 1e-3

    def test_unreachable_target_flagged_nearest(self):
        config = self.config(volfrac=0.9, move=0.05)
        x = np.full((3, 3), 0.3)  # can rise to at most 0.35 in one move
        result = oc_update(DensityField(x), -np.ones((3, 3)), config)
        assert not result.volume_feasible
        assert result.volume == pytest.approx(0.35, abs=1e-12)

    @given(
        x=st.floats(0.001, 1.0),
        beta=st.floats(0.0, 10.0),
        move=st.floats(0.01, 0.5),
    )
    @settings(max_examples=200, deadline=None)
    def test_branches_exhaustive_and_bounded(self, x, beta, move):
        # scalar case: the update always lands in the move interval and
        # exactly one branch of the piecewise rule applies
        x_min, eta = 1e-3, 0.5
        cand = x * beta**eta
        lo = max(x_min, x - move)
        hi = min(1.0, x + move)
        out = min(max(cand, lo), hi)
        branches = [cand <= lo, lo < cand < hi, hi <= cand]
        assert sum(branches) == 1
        assert lo <= out <= hi


class TestOptimize:
    def test_reference_cantilever_against_independent_oracle(self):
        from reference_simp import reference_optimize

        nx, ny, volfrac = 30, 10, 0.4
        domain = DesignDomain(nx, ny)
        scenario = cantilever_scenario(nx, ny, volfrac)
        trace = optimize(domain, scenario, SimpConfig(volfrac=volfrac, max_iters=200))
        assert trace.converged

        fixed, F = scenario_to_system(scenario, domain)
        loads = [(int(d), float(F[d])) for d in np.nonzero(F)[0]]
        _, c_ref, iters, conv = reference_optimize(nx, ny, volfrac, fixed, loads)
        assert conv
        assert trace.final_compliance == pytest.approx(c_ref, rel=0.02)

    def test_determinism_bit_identical(self):
        domain = DesignDomain(12, 8)
        scenario = cantilever_scenario(12, 8, 0.4)
        config = SimpConfig(volfrac=0.4, max_iters=40)
        t1 = optimize(domain, scenario, config)
        t2 = optimize(domain, scenario, config)
        assert t1.compliances == t2.compliances
        assert t1.volumes == t2.volumes
        assert t1.changes == t2.changes
        assert np.array_equal(t1.final_density.values, t2.final_density.values)
        assert t1.final_compliance == t2.final_compliance

    def test_volume_constraint_on_final_field(self):
        domain = DesignDomain(16, 10)
        scenario = cantilever_scenario(16, 10, 0.35)
        trace = optimize(domain, scenario, SimpConfig(volfrac=0.35, max_iters=120))
        assert trace.final_density.volume_fraction <= 0.35 + 1e-3

    def test_full_material_limit_matches_solid_solve(self):
        nx, ny = 8, 8
        domain = DesignDomain(nx, ny)
        f = 1.0 - 1e-9
        scenario = cantilever_scenario(nx, ny, f)
        trace = optimize(domain, scenario, SimpConfig(volfrac=f, max_iters=30))
        assert np.all(trace.final_density.values >= 1.0 - 1e-6)
        k0 = element_stiffness()
        fixed, F = scenario_to_system(scenario, domain)
        K = assemble_global(domain, DensityField.uniform(domain, 1.0), 3.0, k0)
        c_solid = compliance(solve_equilibrium(LinearSystem(K, F, fixed)), F)
        assert trace.final_compliance == pytest.approx(c_solid, rel=1e-6)

    def test_passive_disk_pinned_to_void(self):
        nx = ny = 100
        domain = DesignDomain(nx, ny)
        scenario = cantilever_scenario(nx, ny, 0.3)
        bounds = DensityBounds.free(domain).with_passive_disk(50.0, 50.0, 20.0)
        trace = optimize(
            domain, scenario, SimpConfig(volfrac=0.3, max_iters=25), bounds
        )
        ex, ey = np.meshgrid(np.arange(nx) + 0.5, np.arange(ny) + 0.5)
        inside = (ex - 50.0) ** 2 + (ey - 50.0) ** 2 <= 20.0**2
        assert np.all(trace.final_density.values[inside] == 1e-3)

    def test_active_disk_pinned_to_solid(self):
        domain = DesignDomain(30, 30)
        scenario = cantilever_scenario(30, 30, 0.3)
        bounds = DensityBounds.free(domain).with_active_disk(15.0, 15.0, 4.0)
        trace = optimize(domain, scenario, SimpConfig(volfrac=0.3, max_iters=25), bounds)
        ex, ey = np.meshgrid(np.arange(30) + 0.5, np.arange(30) + 0.5)
        inside = (ex - 15.0) ** 2 + (ey - 15.0) ** 2 <= 4.0**2
        assert np.all(trace.final_density.values[inside] == 1.0)

    def test_singular_scenario_reports_iteration(self):
        domain = DesignDomain(4, 4)
        scenario = cantilever_scenario(4, 4, 0.4)
        scenario = type(scenario)(
            nx=4,
            ny=4,
            fixed_nodes=((0, 0),),  # one encastre node leaves a rotation mode
            loads=scenario.loads,
            volfrac_field=scenario.volfrac_field,
            complexity=1,
            split="train",
            seed=0,
        )
        with pytest.raises(OptimizationError) as err:
            optimize(domain, scenario, SimpConfig(volfrac=0.4, max_iters=5))
        assert err.value.iteration == 1
        assert err.value.scenario is scenario

    def test_trace_lengths_consistent(self):
        domain = DesignDomain(10, 6)
        scenario = cantilever_scenario(10, 6, 0.4)
        trace = optimize(domain, scenario, SimpConfig(volfrac=0.4, max_iters=25))
        n = trace.iterations
        assert len(trace.compliances) == len(trace.volumes) == len(trace.changes) == n


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(penal=2.0),
            dict(move=0.0),
            dict(move=1.0),
            dict(rmin=-1.0),
            dict(volfrac=0.0),
            dict(volfrac=1.0),
            dict(x_min=0.0),
            dict(max_iters=0),
        ],
    )
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ParameterError):
            SimpConfig(**kw)
