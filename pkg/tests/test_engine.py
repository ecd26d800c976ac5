"""Engine kernel tests: membrane dynamics, refractoriness, plasticity oracles."""

import math
from dataclasses import replace

import numpy as np
import pytest

from measim.config import SimParams
from measim.culture import from_synapses, generate
from measim.engine import (NetworkState, SimulationError, fresh_state, load_record,
                           run, save_record, step)
from measim.stimuli import empty_program, l_pattern, probe_program
from conftest import make_raster


def drive_raster(culture, params, raster: dict, duration: float):
    """Step the network while forcing spikes at the raster times via strong
    external drive; returns the realized (times, neurons) arrays."""
    n = culture.n_neurons
    n_steps = int(round(duration / params.dt))
    state = fresh_state(culture, params)
    state.plasticity = True
    out_t, out_n = [], []
    for k in range(n_steps):
        t = k * params.dt
        ext = np.zeros(n)
        for j, times in raster.items():
            if np.any(np.abs(times - t) < params.dt / 2):
                ext[j] = 1000.0
        spikes = step(culture, params, state, ext)
        out_t.extend([t] * spikes.size)
        out_n.extend(spikes.tolist())
    return np.array(out_t), np.array(out_n)


def pairwise_edge_delta(pre_times, post_times, params, pre_is_exc: bool) -> float:
    """All-pairs spike-pair rule: potentiation for strictly causal pairs,
    exponential depression otherwise; signs flipped on inhibitory edges."""
    delta = 0.0
    for t_in in pre_times:
        for t_out in post_times:
            if t_out > t_in:
                delta += params.a_plus * math.exp(-(t_out - t_in) / params.tau_plus)
            else:
                delta -= params.a_minus * math.exp((t_out - t_in) / params.tau_minus)
    return delta if pre_is_exc else -delta


def two_neuron_culture(params, pre_exc=True, w0=0.1):
    positions = [[1.0, 1.0], [1.0, 2.0]]
    return from_synapses(positions, [pre_exc, True], pre=[0], post=[1],
                         weights=[w0], params=params, w_max_exc=1e9, w_max_inh=1e9)


class TestMembrane:
    def test_zero_input_decay_matches_closed_form(self):
        for dt in (0.1, 1.0):
            params = SimParams(dt=dt, n_neurons=2, k_exc=0, k_inh=0)
            culture = two_neuron_culture(params)
            state = fresh_state(culture, params)
            v0 = -60.0
            state.v[:] = v0
            for k in range(1, 301):
                step(culture, params, state, np.zeros(2))
                expected = params.v_rest + (v0 - params.v_rest) * math.exp(
                    -k * dt / params.tau_m)
                assert state.v[0] == pytest.approx(expected, rel=1e-12)

    def test_single_step_decay_exact(self):
        # one step of dt = tau_m decays the gap by exactly e^-1
        params = SimParams(dt=50.0, t_refrac=50.0)
        culture = two_neuron_culture(params)
        state = fresh_state(culture, params)
        state.v[:] = -60.0
        step(culture, params, state, np.zeros(2))
        assert state.v[0] == pytest.approx(-70.0 + 10.0 * math.exp(-1.0), abs=1e-12)

    def test_threshold_reset_and_refractory_silence(self):
        params = SimParams()
        culture = two_neuron_culture(params)
        state = fresh_state(culture, params)
        # drive the membrane exactly to threshold
        gap = params.v_thresh - params.v_rest
        spikes = step(culture, params, state, np.array([gap, 0.0]))
        assert list(spikes) == [0]
        assert state.v[0] == params.v_reset
        # strong input during the next 4 steps is ignored
        for _ in range(4):
            ext = np.array([500.0, 0.0])
            spikes = step(culture, params, state, ext)
            assert spikes.size == 0
            assert state.v[0] == params.v_reset
        # refractory over: drive fires it again (ISI = 5 ms = t_refrac)
        spikes = step(culture, params, state, np.array([500.0, 0.0]))
        assert list(spikes) == [0]

    def test_rest_is_fixed_point(self):
        params = SimParams()
        culture = two_neuron_culture(params)
        state = fresh_state(culture, params)
        for _ in range(10):
            assert step(culture, params, state, np.zeros(2)).size == 0
        assert np.all(state.v == params.v_rest)

    def test_nonfinite_input_aborts(self):
        params = SimParams()
        culture = two_neuron_culture(params)
        state = fresh_state(culture, params)
        with pytest.raises(SimulationError):
            step(culture, params, state, np.array([math.nan, 0.0]))


class TestStdpClosedForm:
    @pytest.mark.parametrize("dt_pair", [1.0, 5.0, 20.0, 100.0])
    @pytest.mark.parametrize("pre_exc", [True, False])
    def test_causal_pair_potentiates(self, dt_pair, pre_exc):
        params = SimParams()
        culture = two_neuron_culture(params, pre_exc=pre_exc)
        w0 = culture.weights[0]
        raster = {0: np.array([10.0]), 1: np.array([10.0 + dt_pair])}
        drive_raster(culture, params, raster, duration=150.0)
        expected = params.a_plus * math.exp(-dt_pair / params.tau_plus)
        if not pre_exc:
            expected = -expected
        assert culture.weights[0] - w0 == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("dt_pair", [1.0, 5.0, 20.0, 100.0])
    @pytest.mark.parametrize("pre_exc", [True, False])
    def test_anticausal_pair_depresses(self, dt_pair, pre_exc):
        params = SimParams()
        culture = two_neuron_culture(params, pre_exc=pre_exc)
        w0 = culture.weights[0]
        raster = {0: np.array([10.0 + dt_pair]), 1: np.array([10.0])}
        drive_raster(culture, params, raster, duration=150.0)
        expected = -params.a_minus * math.exp(-dt_pair / params.tau_minus)
        if not pre_exc:
            expected = -expected
        assert culture.weights[0] - w0 == pytest.approx(expected, abs=1e-12)

    def test_simultaneous_pair_hits_depression_branch_only(self):
        params = SimParams()
        culture = two_neuron_culture(params, pre_exc=True)
        w0 = culture.weights[0]
        raster = {0: np.array([10.0]), 1: np.array([10.0])}
        drive_raster(culture, params, raster, duration=50.0)
        assert culture.weights[0] - w0 == pytest.approx(-params.a_minus, abs=1e-12)


class TestTraceVsPairwiseOracle:
    def test_three_neuron_random_instance(self):
        # mild learning rates keep synaptic input far from threshold so the
        # forced raster is exactly the realized raster
        params = SimParams(a_plus=2e-3, a_minus=1e-4)
        rng = np.random.default_rng(12345)
        raster = make_raster(rng, 3, duration=200.0, min_isi=6.0)
        edges = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
        is_exc = [True, True, False]
        positions = [[1.0, 1.0], [1.0, 2.0], [2.0, 1.5]]
        culture = from_synapses(positions, is_exc,
                                pre=[e[0] for e in edges],
                                post=[e[1] for e in edges],
                                weights=[0.1] * len(edges), params=params,
                                w_max_exc=1e9, w_max_inh=1e9)
        w0 = culture.weights.copy()
        times, neurons = drive_raster(culture, params, raster, duration=200.0)
        # the realized raster must be exactly the prescribed one
        for j in range(3):
            realized = np.sort(times[neurons == j])
            assert np.array_equal(realized, raster[j])
        post_of = np.repeat(np.arange(3), np.diff(culture.in_indptr))
        for s in range(culture.n_synapses):
            pre, post = culture.in_pre[s], post_of[s]
            expected = pairwise_edge_delta(raster[pre], raster[post], params,
                                           culture.is_excitatory[pre])
            assert culture.weights[s] - w0[s] == pytest.approx(expected, abs=1e-12)


class TestRunContract:
    def test_empty_program_empty_record(self, tiny_params):
        culture = generate(tiny_params)
        record = run(culture, empty_program(50.0))
        assert record.n_spikes == 0
        assert record.duration == 50.0

    def test_probe_run_rate_bounded_by_refractory(self, tiny_params):
        culture = generate(tiny_params)
        record = run(culture, probe_program(l_pattern("regL")))
        assert record.min_isi() >= tiny_params.t_refrac
        counts = np.bincount(record.neurons, minlength=culture.n_neurons)
        assert counts.max() <= record.duration / tiny_params.t_refrac

    def test_membrane_never_ends_step_above_threshold(self, tiny_params):
        culture = generate(tiny_params)
        state = fresh_state(culture, tiny_params)
        state.plasticity = True
        rng = np.random.default_rng(0)
        for _ in range(60):
            ext = rng.random(culture.n_neurons) * 40.0
            step(culture, tiny_params, state, ext)
            assert np.all(state.v < tiny_params.v_thresh)
            assert np.all(state.x >= 0) and np.all(state.y >= 0)

    def test_deterministic_rerun(self, tiny_params):
        culture = generate(tiny_params)
        a = run(culture, probe_program(l_pattern("regL")))
        b = run(culture, probe_program(l_pattern("regL")))
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.neurons, b.neurons)

    def test_plasticity_off_leaves_weights_bit_identical(self, tiny_params):
        culture = generate(tiny_params)
        before = culture.weights.copy()
        run(culture, probe_program(l_pattern("regL")), plasticity=False)
        assert np.array_equal(before, culture.weights)

    def test_plasticity_on_mutates_and_respects_bounds(self, tiny_params):
        culture = generate(tiny_params)
        before = culture.weights.copy()
        run(culture, probe_program(l_pattern("regL")), plasticity=True)
        assert not np.array_equal(before, culture.weights)
        pre_exc = culture.is_excitatory[culture.in_pre]
        assert culture.weights.min() >= 0.0
        assert np.all(culture.weights <= np.where(pre_exc, culture.w_max_exc,
                                                  culture.w_max_inh) + 1e-15)

    def test_rejects_events_beyond_duration(self, tiny_params):
        culture = generate(tiny_params)
        program = probe_program(l_pattern("regL"))
        with pytest.raises(ValueError):
            run(culture, program, duration=40.0)

    def test_record_roundtrip(self, tiny_params, tmp_path):
        culture = generate(tiny_params)
        record = run(culture, probe_program(l_pattern("regL")))
        path = tmp_path / "spikes.csv"
        save_record(record, path)
        loaded = load_record(path)
        assert np.array_equal(loaded.times, record.times)
        assert np.array_equal(loaded.neurons, record.neurons)
        assert loaded.duration == record.duration
        assert loaded.params_digest == record.params_digest
