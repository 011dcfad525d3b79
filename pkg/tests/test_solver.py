import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memlab.errors import Blowup, InvalidParameter, NegativeState
from memlab.problem import (BoundaryKernel, Domain1D, InitialData, ModelParams, Problem,
                            make_compatible_initial, make_params)
from memlab.solver import (MemoryState, SolverConfig, boundary_flux, memory_update, solve,
                           source_term, stability_dt)

# closed form for p=0, q=1, m=1, a=b=1, u0=1: roots (-1 +- sqrt 5)/2
R1, R2 = (-1 + math.sqrt(5)) / 2, (-1 - math.sqrt(5)) / 2
B_ODE = (-1 - R1) / (R2 - R1)
A_ODE = 1 - B_ODE


def ode_exact(t):
    return A_ODE * np.exp(R1 * t) + B_ODE * np.exp(R2 * t)


@pytest.fixture
def dom():
    return Domain1D(1.0, 51)


class TestMemory:
    @pytest.mark.parametrize("I0,up,un,q,dt,expected", [
        (0.0, 1.0, 1.0, 1.0, 0.1, 0.1),
        (0.0, 1.0, 3.0, 2.0, 0.5, 2.5),
        (5.0, 0.0, 0.0, 0.7, 1.0, 5.0),
    ])
    def test_trapezoid(self, I0, up, un, q, dt, expected):
        mem = MemoryState(np.full(4, I0), np.full(4, up ** q))
        out = memory_update(mem, np.full(4, up), np.full(4, un), q, dt)
        np.testing.assert_allclose(out.I, expected, rtol=1e-15)

    def test_zero_power_convention(self):
        mem = MemoryState.initial(np.zeros(3), 0.0)
        out = memory_update(mem, np.zeros(3), np.zeros(3), 0.0, 0.5)
        np.testing.assert_allclose(out.I, 0.5)

    def test_bad_dt(self):
        mem = MemoryState.initial(np.ones(3), 1.0)
        with pytest.raises(InvalidParameter):
            memory_update(mem, np.ones(3), np.ones(3), 1.0, 0.0)


class TestPieces:
    def test_boundary_flux(self, dom):
        prm = ModelParams(l=2)
        fl, fr = boundary_flux(np.full(dom.N, 3.0), BoundaryKernel.constant(2.0), 0.0, prm, dom)
        assert fl == pytest.approx(18.0) and fr == pytest.approx(18.0)

    def test_source_equilibrium(self):
        prm = make_params(a=0, b=1, m=1)
        s = source_term(np.full(3, 0.01), np.zeros(3), prm, eps=0.01)
        np.testing.assert_allclose(s, 0.0, atol=1e-18)

    def test_stability_guard(self):
        prm = ModelParams(1, 1, 1, 1, 1, 1)
        # 0.1 / (1 + 2 * 1 * (1 + 0))
        assert stability_dt(np.ones(3), np.zeros(3), prm) == pytest.approx(0.1 / 3)
        assert stability_dt(np.zeros(3), np.zeros(3), prm) == math.inf

    @pytest.mark.parametrize("kw", [dict(dt=0), dict(T_final=-1), dict(epsilon=1.0),
                                    dict(clamp_policy="nope"), dict(snapshot_stride=0)])
    def test_config_validation(self, kw):
        with pytest.raises(InvalidParameter):
            SolverConfig(**kw)


class TestSolve:
    def test_constant_is_fixed_point(self, dom):
        pr = Problem(make_params(a=0, b=0), dom, initial=InitialData.constant(0.7, dom))
        tr = solve(pr, SolverConfig(dt=1e-3, T_final=0.2))
        np.testing.assert_allclose(tr.values, 0.7, atol=1e-13)

    def test_heat_mode(self):
        dom = Domain1D(1.0, 201)
        u0 = InitialData.from_function(lambda x: 1 + 0.5 * np.cos(np.pi * x), dom)
        pr = Problem(make_params(a=0, b=0), dom, initial=u0)
        tr = solve(pr, SolverConfig(dt=1e-4, T_final=0.1, snapshot_stride=100))
        exact = 1 + 0.5 * np.exp(-np.pi ** 2 * 0.1) * np.cos(np.pi * dom.x)
        assert np.max(np.abs(tr.final - exact)) <= 2e-3
        assert tr.final[0] == pytest.approx(1.18636, abs=2e-3)

    @settings(max_examples=10, deadline=None)
    @given(coef=st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
    def test_mass_conserved(self, coef):
        dom = Domain1D(1.0, 41)
        u0 = InitialData.from_function(
            lambda x: 1 + coef[0] * np.cos(np.pi * x) ** 2 + coef[1] * x ** 2 * (1 - x) ** 2
            + coef[2] * np.cos(3 * np.pi * x), dom)
        pr = Problem(make_params(a=0, b=0), dom, initial=u0)
        tr = solve(pr, SolverConfig(dt=1e-3, T_final=0.5, snapshot_stride=50))
        mass = tr.mass()
        assert np.max(np.abs(mass - mass[0])) <= 1e-8 * 0.5

    def test_ode_reduction(self, dom):
        pr = Problem(ModelParams(1, 1, 0, 1, 1, 1), dom, initial=InitialData.constant(1.0, dom))
        tr = solve(pr, SolverConfig(dt=1e-4, T_final=1.0, snapshot_stride=1000))
        assert np.ptp(tr.final) < 1e-10
        assert tr.final[0] == pytest.approx(float(ode_exact(1.0)), rel=1e-3)
        assert tr.clamp_events == 0

    def test_regularized_equilibrium(self, dom):
        pr = Problem(make_params(a=0, b=1, m=1), dom, initial=InitialData.constant(0.01, dom))
        tr = solve(pr, SolverConfig(dt=1e-3, T_final=0.5, epsilon=0.01))
        np.testing.assert_allclose(tr.values, 0.01, rtol=1e-12)

    def test_zero_stays_zero(self, dom):
        pr = Problem(ModelParams(1, 1, 1, 2, 1, 1), dom)
        tr = solve(pr, SolverConfig(dt=1e-3, T_final=0.5))
        assert not np.any(tr.values)

    def test_epsilon_requires_lift(self, dom):
        pr = Problem(ModelParams(), dom, initial=InitialData.constant(0.001, dom))
        with pytest.raises(InvalidParameter):
            solve(pr, SolverConfig(epsilon=0.01))

    def test_blowup_carries_trajectory(self, dom):
        pr = Problem(ModelParams(5, 0.1, 2, 2, 1, 1), dom, initial=InitialData.constant(3.0, dom))
        with pytest.raises(Blowup) as info:
            solve(pr, SolverConfig(dt=1e-4, T_final=2.0, blowup_cap=1e3))
        tr = info.value.trajectory
        assert tr.status == "blowup"
        assert tr.final.max() > 1e3

    def test_error_on_negative(self, dom):
        # huge explicit loss overshoots below zero
        pr = Problem(ModelParams(1, 50, 1, 1, 1, 1), dom, initial=InitialData.constant(1.0, dom))
        with pytest.raises(NegativeState):
            solve(pr, SolverConfig(dt=0.1, T_final=0.2, clamp_policy="error_on_negative"))
        tr = solve(pr, SolverConfig(dt=0.1, T_final=0.2))
        assert tr.clamp_events > 0
        assert tr.values.min() >= 0

    def test_adaptive_avoids_clamping(self, dom):
        pr = Problem(ModelParams(1, 50, 1, 1, 1, 1), dom, initial=InitialData.constant(1.0, dom))
        tr = solve(pr, SolverConfig(dt=0.1, T_final=0.2, adaptive=True))
        assert tr.clamp_events == 0
        assert tr.dt_halvings > 0
        assert tr.values.min() >= 0

    def test_boundary_flux_raises_mass(self, dom):
        prm = ModelParams(1, 1, 1, 1, 1, 1)
        k = BoundaryKernel.constant(0.5)
        u0 = make_compatible_initial(1.0, k, prm, dom)
        tr = solve(Problem(prm, dom, k, u0), SolverConfig(dt=1e-3, T_final=0.2, snapshot_stride=10))
        ref = solve(Problem(prm, dom, initial=InitialData.constant(1.0, dom)),
                    SolverConfig(dt=1e-3, T_final=0.2, snapshot_stride=10))
        assert tr.mass()[-1] > ref.mass()[-1]

    def test_snapshot_times_pinned(self, dom):
        pr = Problem(ModelParams(), dom, initial=InitialData.constant(1.0, dom))
        tr = solve(pr, SolverConfig(dt=0.01, T_final=0.1, snapshot_stride=3))
        np.testing.assert_allclose(tr.times, [0, 0.03, 0.06, 0.09, 0.1], atol=1e-15)

    def test_csv_and_summary(self, dom, tmp_path):
        pr = Problem(ModelParams(), dom, initial=InitialData.constant(1.0, dom))
        tr = solve(pr, SolverConfig(dt=0.01, T_final=0.05))
        tr.write_csv(tmp_path / "u.csv")
        lines = (tmp_path / "u.csv").read_text().splitlines()
        assert lines[0] == "t,x,u,I"
        assert len(lines) == 1 + tr.times.size * dom.N
        s = tr.summary()
        assert s["schema_version"] == 1 and s["status"] == "completed"

    def test_trajectory_read_only(self, dom):
        pr = Problem(ModelParams(), dom, initial=InitialData.constant(1.0, dom))
        tr = solve(pr, SolverConfig(dt=0.01, T_final=0.02))
        with pytest.raises(ValueError):
            tr.values[0, 0] = 1.0
