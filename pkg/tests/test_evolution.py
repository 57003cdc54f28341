import io
import json
import math

import numpy as np
import pytest

from fracblow.errors import Diverged, StepUnderflow
from fracblow.evolution import (
    ConservationLedger,
    EvolutionOutcome,
    JsonlSink,
    ListSink,
    OutcomeKind,
    ScenarioTag,
    SimulationState,
    StepPolicy,
    TeeSink,
    Triggers,
    adaptive_dt,
    classify_initial_data,
    evolve,
    strang_step,
    zoom,
)
from fracblow.spectral import Field, ModelParams, energy, make_grid, mass, rescale

from conftest import smooth_random


def plane_wave_state(c=0.8, k=3, s=0.6, alpha=2.4, mu=-1):
    g = make_grid(1, 64, math.pi)
    p = ModelParams(1, s, alpha, mu)
    return SimulationState.initial(Field(g, c * np.exp(1j * k * g.axis)), p), g, p


def exact_plane_wave(g, c, k, s, alpha, mu, t):
    w = abs(k) ** (2 * s) + mu * abs(c) ** alpha
    return c * np.exp(1j * (k * g.axis - w * t))


class TestStrangStep:
    def test_plane_wave_one_step(self):
        st, g, p = plane_wave_state()
        out = strang_step(st, 0.01)
        np.testing.assert_allclose(out.field.values, exact_plane_wave(g, 0.8, 3, 0.6, 2.4, -1, 0.01), atol=1e-14)
        assert out.t == 0.01 and out.step_count == 1
        assert st.t == 0.0  # input untouched

    def test_zero_dt_is_identity(self, rng):
        g = make_grid(1, 32, 4.0)
        st = SimulationState.initial(smooth_random(g, rng), ModelParams.critical(1, 0.5))
        out = strang_step(st, 0.0)
        np.testing.assert_array_equal(out.field.values, st.field.values)

    def test_negative_dt(self, rng):
        st, _, _ = plane_wave_state()
        with pytest.raises(ValueError):
            strang_step(st, -0.1)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_raises(self):
        g = make_grid(1, 16, 4.0)
        st = SimulationState.initial(Field(g, np.full(16, 1e200)), ModelParams.critical(1, 0.6))
        with pytest.raises(Diverged):
            strang_step(st, 0.1)

    def test_time_reversal(self, rng):
        g = make_grid(1, 128, 8.0)
        p = ModelParams.critical(1, 0.6)
        u0 = Field(g, np.exp(-g.axis**2) * (1 + 0.2j * g.axis))
        st = SimulationState.initial(u0, p)
        for _ in range(200):
            st = strang_step(st, 1e-3)
        back = SimulationState.initial(st.field.conj(), p)
        for _ in range(200):
            back = strang_step(back, 1e-3)
        err = math.sqrt(mass(back.field.conj() - u0) / mass(u0))
        assert err < 1e-8


class TestAdaptiveDt:
    def test_zero_field(self):
        g = make_grid(1, 16, 4.0)
        st = SimulationState.initial(Field(g, np.zeros(16)), ModelParams.critical(1, 0.6))
        assert adaptive_dt(st, StepPolicy(dt_max=0.01)) == 0.01

    def test_amplitude_scaling(self):
        g = make_grid(1, 16, 4.0)
        p = ModelParams.critical(1, 0.6)
        pol = StepPolicy(dt_max=1.0, c_cfl=0.05)
        a = adaptive_dt(SimulationState.initial(Field(g, np.full(16, 10.0)), p), pol)
        b = adaptive_dt(SimulationState.initial(Field(g, np.full(16, 20.0)), p), pol)
        assert a / b == pytest.approx(2**p.alpha)

    def test_underflow(self):
        g = make_grid(1, 16, 4.0)
        st = SimulationState.initial(Field(g, np.full(16, 1e6)), ModelParams.critical(1, 0.6))
        with pytest.raises(StepUnderflow):
            adaptive_dt(st, StepPolicy(dt_min=1e-12))


class TestEvolve:
    def test_defocusing_gaussian_completes(self):
        g = make_grid(1, 256, 16.0)
        p = ModelParams(1, 0.6, 2.4, mu=+1)
        st = SimulationState.initial(Field(g, np.exp(-g.axis**2 / 2)), p)
        out = evolve(st, 1.0, sample_every=50, policy=StepPolicy(dt_max=1e-3))
        assert out.kind is OutcomeKind.COMPLETED
        assert st.t == pytest.approx(1.0)
        assert st.monitors.max_energy_drift < 1e-6
        assert st.monitors.max_mass_drift < 1e-12

    def test_hs_cap_trigger_reports_t_star(self, gs06):
        st = SimulationState.initial(gs06.q * 1.2, gs06.params)
        out = evolve(st, 5.0, sample_every=5, triggers=Triggers(hs_cap_factor=3.0, resolution=None))
        assert out.kind is OutcomeKind.BLOWUP
        assert "exceeded cap" in out.reason
        assert out.t_star_estimate is not None and out.t_star_estimate >= out.t_final

    def test_sinks(self):
        st, _, _ = plane_wave_state()
        buf = io.StringIO()
        ls = ListSink(keep_every=2)
        evolve(st, 0.05, sample_every=10, sink=TeeSink(ls, JsonlSink(buf)), policy=StepPolicy(dt_max=1e-3))
        lines = [json.loads(x) for x in buf.getvalue().splitlines()]
        assert len(lines) == len(ls.records) == 6
        assert set(lines[0]) == {"t", "mass", "energy", "hs", "linf", "dt"}
        assert [t for t, _ in ls.fields] == [ls.records[i]["t"] for i in (0, 2, 4)]
        ts = [r["t"] for r in lines]
        assert ts == sorted(ts)

    def test_t_end_must_exceed_t(self):
        st, _, _ = plane_wave_state()
        with pytest.raises(ValueError):
            evolve(st, 0.0)

    def test_blowup_needs_t_star(self):
        with pytest.raises(ValueError):
            EvolutionOutcome(OutcomeKind.BLOWUP, 1.0, None, "x")

    def test_ledger_relative_drift(self):
        g = make_grid(1, 16, 1.0)
        led = ConservationLedger.start(Field(g, np.zeros(16)), ModelParams.critical(1, 0.5))
        led.update(0.1, 1e-40, 0.0, 0.0, 0.0)
        assert led.mass_drift == pytest.approx(1e-10)


class TestCovariance:
    def test_scaling_covariance(self):
        s = 0.6
        p = ModelParams.critical(1, s)
        lam = 0.7
        g = make_grid(1, 256, 16.0)
        g2 = make_grid(1, 256, 16.0 / lam)
        u0 = Field(g, 1.1 * np.exp(-g.axis**2) * (1 + 0.3j * g.axis))
        v0 = rescale(u0, lam, g2)
        steps, dt = 300, 1e-3
        su = SimulationState.initial(u0, p)
        sv = SimulationState.initial(v0, p)
        for _ in range(steps):
            su = strang_step(su, dt * lam ** (2 * s))
            sv = strang_step(sv, dt)
        pred = rescale(su.field, lam, g2, tail_tol=1.0)
        assert math.sqrt(mass(pred - sv.field) / mass(sv.field)) < 1e-4


class TestClassify:
    def test_tags(self, gs06):
        p = gs06.params
        assert classify_initial_data(gs06.q * 0.5, p, gs06) is ScenarioTag.SUBCRITICAL_MASS
        assert classify_initial_data(gs06.q, p, gs06) is ScenarioTag.MINIMAL_MASS
        assert abs(energy(gs06.q, p)) < 1e-2 * 0.5 * gs06.hs_q**2
        assert classify_initial_data(gs06.q * 1.2, p, gs06) is ScenarioTag.NEGATIVE_ENERGY

    def test_indeterminate(self, gs06):
        p = gs06.params
        # mass above Q's but a large kinetic term keeps the energy positive
        g = gs06.grid
        u = Field(g, np.exp(-g.axis**2 / 2) * np.exp(4j * g.axis))
        u = u * math.sqrt(1.5 * gs06.mass_q / mass(u))
        assert energy(u, p) > 0
        assert classify_initial_data(u, p, gs06) is ScenarioTag.INDETERMINATE

    def test_requires_mass_critical(self, gs06):
        with pytest.raises(ValueError):
            classify_initial_data(gs06.q, ModelParams(1, 0.6, 2.0), gs06)


def test_zoom_keeps_compact_data():
    g = make_grid(1, 256, 16.0)
    p = ModelParams.critical(1, 0.6)
    st = SimulationState.initial(Field(g, np.exp(-g.axis**2)), p)
    z = zoom(st, 0.5)
    assert z.field.grid.half_length == 8.0
    assert mass(z.field) == pytest.approx(mass(st.field), rel=1e-10)


def test_dealias_removes_high_modes(gs06):
    st = SimulationState.initial(gs06.q * 1.2, gs06.params)
    out = strang_step(st, 1e-2, dealias=True)
    plain = strang_step(st, 1e-2)
    assert out.field.values.tobytes() != plain.field.values.tobytes()
    assert mass(out.field) <= mass(st.field) * (1 + 1e-14)
    # only the trailing nonlinear half-step can refill the band above 2/3 Nyquist
    twice = strang_step(out, 1e-2, dealias=True)
    assert math.sqrt(mass(twice.field - strang_step(out, 1e-2).field)) < 1e-6
