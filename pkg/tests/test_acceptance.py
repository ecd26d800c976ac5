"""Acceptance suite: one test per shipping criterion, each printing a
PASS/FAIL line with the measured quantity at its stated tolerance.

Criteria involving replication-scale cultures (hours of runtime) carry the
``replication`` marker and are excluded from the default run; everything else
runs in the normal suite (`pytest -m "not replication"`). Digit-recognition
criteria use real MNIST IDX files when found (MEASIM_MNIST_DIR or ./data),
otherwise the bundled synthetic 0/1 corpus.
"""

import math
import os
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from measim import stimuli
from measim.config import SimParams, default_params, scaled, SearchSpace
from measim.culture import connection_probabilities, generate
from measim.engine import fresh_state, run, step
from measim.protocols import (aggregate, binned_response, evaluate,
                              repetition_seeds, response_scalar,
                              tetanization_experiment, train_digits)
from measim.search import CalibrationTarget, calibrate
from measim.datasets import (find_split_files, load_split, synthetic_digits,
                             to_digit_images)

from test_engine import drive_raster, pairwise_edge_delta, two_neuron_culture
from conftest import make_raster


def report(criterion: int, passed: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")


def digit_corpus(n_train: int, n_test: int | None):
    """Real MNIST when present, else the synthetic stand-in corpus."""
    directory = os.environ.get("MEASIM_MNIST_DIR", "data")
    if find_split_files(directory, "train") and find_split_files(directory, "test"):
        train = to_digit_images(load_split(directory, "train"))[:n_train]
        test = to_digit_images(load_split(directory, "test"))
        source = f"MNIST({directory})"
    else:
        train = to_digit_images(synthetic_digits(n_train, seed=100))
        test = to_digit_images(synthetic_digits(n_test or 2115, seed=200))
        source = "synthetic corpus"
    if n_test is not None:
        test = test[:n_test]
    return train, test, source


TUNED = dict(exc_strength=8.0, inh_strength=800.0)  # x8, two orders above exc


class TestCriterion1StdpClosedForm:
    def test_pair_rule_both_signs_both_types(self):
        params = SimParams()
        failures = []
        worst = 0.0
        for dt_pair in (1.0, 5.0, 20.0, 100.0):
            for pre_exc in (True, False):
                for causal in (True, False):
                    culture = two_neuron_culture(params, pre_exc=pre_exc)
                    w0 = culture.weights[0]
                    if causal:
                        raster = {0: np.array([10.0]), 1: np.array([10.0 + dt_pair])}
                        expected = params.a_plus * math.exp(-dt_pair / params.tau_plus)
                    else:
                        raster = {0: np.array([10.0 + dt_pair]), 1: np.array([10.0])}
                        expected = -params.a_minus * math.exp(-dt_pair / params.tau_minus)
                    if not pre_exc:
                        expected = -expected
                    drive_raster(culture, params, raster, duration=120.0 + dt_pair)
                    err = abs((culture.weights[0] - w0) - expected)
                    worst = max(worst, err)
                    if err > 1e-12:
                        failures.append((dt_pair, pre_exc, causal, err))
        report(1, not failures, f"max |engine - closed form| = {worst:.2e} "
                                f"(tolerance 1e-12)")
        assert not failures


class TestCriterion2TraceVsPairwise:
    def test_three_neuron_instance(self):
        params = SimParams(a_plus=2e-3, a_minus=1e-4)
        rng = np.random.default_rng(20240817)
        raster = make_raster(rng, 3, duration=200.0, min_isi=6.0)
        edges = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
        from measim.culture import from_synapses
        culture = from_synapses([[1.0, 1.0], [1.0, 2.0], [2.0, 1.5]],
                                [True, True, False],
                                pre=[e[0] for e in edges],
                                post=[e[1] for e in edges],
                                weights=[0.1] * 6, params=params,
                                w_max_exc=1e9, w_max_inh=1e9)
        w0 = culture.weights.copy()
        times, neurons = drive_raster(culture, params, raster, 200.0)
        for j in range(3):
            assert np.array_equal(np.sort(times[neurons == j]), raster[j])
        post_of = np.repeat(np.arange(3), np.diff(culture.in_indptr))
        worst = 0.0
        for s in range(culture.n_synapses):
            expected = pairwise_edge_delta(raster[culture.in_pre[s]],
                                           raster[post_of[s]], params,
                                           culture.is_excitatory[culture.in_pre[s]])
            worst = max(worst, abs((culture.weights[s] - w0[s]) - expected))
        report(2, worst <= 1e-12,
               f"max |trace engine - all-pairs oracle| = {worst:.2e} (tol 1e-12)")
        assert worst <= 1e-12


class TestCriterion3LifDecay:
    def test_closed_form_both_steps(self):
        worst = 0.0
        for dt in (0.1, 1.0):
            params = SimParams(dt=dt)
            culture = two_neuron_culture(params)
            state = fresh_state(culture, params)
            v0 = -60.0
            state.v[:] = v0
            for k in range(1, int(100 / dt) + 1):
                step(culture, params, state, np.zeros(2))
                expected = params.v_rest + (v0 - params.v_rest) * math.exp(
                    -k * dt / params.tau_m)
                worst = max(worst, abs(state.v[0] - expected) / abs(expected))
        report(3, worst <= 1e-12,
               f"max relative deviation from closed form = {worst:.2e}")
        assert worst <= 1e-12


class TestCriterion4ConnectivityStatistics:
    @pytest.mark.slow
    def test_in_degrees_and_profile_at_scale_02(self):
        params = scaled(default_params(), 0.2)
        culture = generate(params)
        n = culture.n_neurons
        post_of = np.repeat(np.arange(n), np.diff(culture.in_indptr))
        pre_exc = culture.is_excitatory[culture.in_pre]
        exc_deg = np.bincount(post_of[pre_exc], minlength=n).mean()
        inh_deg = np.bincount(post_of[~pre_exc], minlength=n).mean()
        deg_ok = (abs(exc_deg - 600) <= 0.05 * 600
                  and abs(inh_deg - 100) <= 0.05 * 100)

        rng = np.random.default_rng(0)
        post_idx = rng.choice(n, size=250, replace=False)
        probs = connection_probabilities(culture.positions, culture.is_excitatory,
                                         params, post_idx,
                                         culture.alpha_exc, culture.alpha_inh)
        connected = np.zeros((post_idx.size, n), dtype=bool)
        for row, j in enumerate(post_idx):
            lo, hi = culture.in_indptr[j], culture.in_indptr[j + 1]
            connected[row, culture.in_pre[lo:hi]] = True
        d = np.sqrt(((culture.positions[post_idx][:, None, :]
                      - culture.positions[None, :, :]) ** 2).sum(axis=2))
        self_mask = post_idx[:, None] == np.arange(n)[None, :]
        bad_bins = 0
        checked = 0
        for type_mask in (culture.is_excitatory, ~culture.is_excitatory):
            for lo in np.arange(0.0, 4.0, 0.25):
                m = ((d >= lo) & (d < lo + 0.25) & ~self_mask
                     & type_mask[None, :])
                if m.sum() < 100:
                    continue
                checked += 1
                expected = probs[m].sum()
                sd = math.sqrt((probs[m] * (1 - probs[m])).sum())
                if abs(connected[m].sum() - expected) > 3.0 * sd + 1e-9:
                    bad_bins += 1
        profile_ok = bad_bins == 0
        report(4, deg_ok and profile_ok,
               f"mean in-degree exc {exc_deg:.1f}/600, inh {inh_deg:.1f}/100; "
               f"{checked} distance bins checked, {bad_bins} outside 3 SD")
        assert deg_ok and profile_ok


class TestCriterion5WeightNormalization:
    def test_input_sums_at_scale_02(self):
        params = scaled(default_params(), 0.2)
        culture = generate(params)
        post_of = np.repeat(np.arange(culture.n_neurons),
                            np.diff(culture.in_indptr))
        pre_exc = culture.is_excitatory[culture.in_pre]
        worst = 0.0
        for mask, target in ((pre_exc, params.exc_strength),
                             (~pre_exc, params.inh_strength)):
            sums = np.bincount(post_of[mask], weights=culture.weights[mask],
                               minlength=culture.n_neurons)
            nz = sums > 0
            worst = max(worst, float(np.abs(sums[nz] - target).max() / target))
        report(5, worst <= 1e-9,
               f"max relative deviation of per-neuron input sums = {worst:.2e}")
        assert worst <= 1e-9


class TestCriterion6RefractoryAndDeterminism:
    def test_recorded_runs(self):
        params = scaled(default_params(), 0.1)
        culture = generate(params)
        # repetitive 250 Hz stimulation forces many spikes per neuron
        program = stimuli.tetanization_program(stimuli.l_pattern("regL"))
        rec_a = run(culture, program, plasticity=False)
        rec_b = run(culture, program, plasticity=False)
        assert rec_a.n_spikes > culture.n_neurons  # neurons fired repeatedly
        isi_ok = rec_a.min_isi() >= params.t_refrac
        det_ok = (np.array_equal(rec_a.times, rec_b.times)
                  and np.array_equal(rec_a.neurons, rec_b.neurons))
        # plastic run on a fresh identical culture is reproducible too
        w_a = generate(params)
        w_b = generate(params)
        run(w_a, stimuli.tetanization_program(stimuli.l_pattern("regL")),
            plasticity=True, record=False)
        run(w_b, stimuli.tetanization_program(stimuli.l_pattern("regL")),
            plasticity=True, record=False)
        det_ok = det_ok and np.array_equal(w_a.weights, w_b.weights)
        report(6, isi_ok and det_ok,
               f"min ISI {rec_a.min_isi():.1f} ms (>= {params.t_refrac}); "
               f"bit-identical reruns: {det_ok}")
        assert isi_ok and det_ok


class TestCriterion7TetanizationDirection:
    @pytest.mark.slow
    def test_selectivity_increases_at_scale_02(self):
        params = scaled(default_params(), 0.2)
        outcome = tetanization_experiment(params, n_reps=4)
        pre = np.array(outcome.pre_ratio.values)
        post = np.array(outcome.post_ratio.values)
        n_up = int((post > pre).sum())
        ok = n_up >= 3 and outcome.post_ratio.mean > outcome.pre_ratio.mean
        report(7, ok, f"selectivity ratio rose in {n_up}/4 repetitions; "
                      f"mean {outcome.pre_ratio.mean:.3f} -> "
                      f"{outcome.post_ratio.mean:.3f}")
        assert ok


class TestCriterion8CalibrationSelfConsistency:
    @pytest.mark.slow
    def test_grid_recovers_generating_point(self):
        base = scaled(default_params(), 0.2)
        seeds = repetition_seeds(base.seed, 4)
        outcome = tetanization_experiment(base, n_reps=4, seeds=seeds)
        target = CalibrationTarget(traces=outcome.mean_traces)
        space = SearchSpace(base=base, grids={
            "exc_strength": (0.5, 1.0, 1.5),
            "sigma_e": (0.6, 1.2, 1.8),
        })
        result = calibrate(space, target, n_reps=4, seeds=seeds)
        best = result.best.params
        ok = (best.exc_strength == base.exc_strength
              and best.sigma_e == base.sigma_e)
        report(8, ok, f"best candidate exc_strength={best.exc_strength}, "
                      f"sigma_e={best.sigma_e} with objective "
                      f"{result.best.objective:.3e} over {len(result.entries)} candidates")
        assert ok


class TestCriterion9DigitRecognitionDeskScale:
    @pytest.mark.slow
    def test_tuned_accuracy_desk_scale(self):
        train, test, source = digit_corpus(200, 200)
        params = replace(scaled(default_params(), 0.1), **TUNED)
        seeds = repetition_seeds(params.seed, 4)
        correct = total = 0
        accs = []
        for s in seeds:
            culture = generate(replace(params, seed=int(s)))
            train_digits(culture, culture.params, train)
            result = evaluate(culture, culture.params, test)
            accs.append(result.accuracy)
            correct += result.n_correct
            total += result.n_samples
        mean_acc = float(np.mean(accs))
        p_chance = stats.binomtest(correct, total, 0.5,
                                   alternative="greater").pvalue
        ok = mean_acc >= 0.75 and p_chance < 0.01
        report(9, ok, f"mean accuracy {mean_acc:.3f} over {len(seeds)} reps "
                      f"({source}); above-chance p = {p_chance:.2e} "
                      f"(need >= 0.75 and p < 0.01)")
        assert ok


class TestCriterion10DigitRecognitionReplication:
    @pytest.mark.replication
    def test_full_scale_targets(self):
        train, test, source = digit_corpus(2000, None)
        results = {}
        for name, extra in (("table1", {}), ("tuned", TUNED)):
            params = replace(default_params(), **extra)
            culture = generate(params)
            train_digits(culture, params, train)
            results[name] = evaluate(culture, params, test).accuracy
        ok = (abs(results["table1"] - 0.89) <= 0.05
              and abs(results["tuned"] - 0.95) <= 0.05
              and results["tuned"] >= results["table1"])
        report(10, ok, f"accuracy table1 {results['table1']:.3f} (target 0.89), "
                       f"tuned {results['tuned']:.3f} (target 0.95) on {source}")
        assert ok


class TestCriterion11Aggregation:
    def test_textbook_t_interval(self):
        agg = aggregate([1.0, 2.0, 3.0, 4.0])
        expected = stats.t.ppf(0.975, 3) * np.std([1, 2, 3, 4], ddof=1) / 2.0
        ok = (abs(agg.ci95 - 2.0542) <= 1e-3
              and abs(agg.ci95 - expected) <= 1e-12)
        report(11, ok, f"95% half-width on [1,2,3,4] = {agg.ci95:.4f} "
                       f"(textbook 2.0542 within 1e-3)")
        assert ok
