"""Experimental protocols: tetanization with response comparison, and
digit-recognition training/evaluation, plus response binning and aggregation.

Responses are summarized as population spike counts in fixed 10 ms bins over
a 150 ms window (mean count per neuron per bin). The scalar response of a
probe is the sum over the post-stimulus bins; the selectivity ratio divides
the tetanized-pattern response by the control-pattern response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import stimuli
from .config import SimParams, require_valid
from .culture import Culture, generate
from .engine import NetworkState, SpikeRecord, fresh_state, run
from .stimuli import DigitImage, StimulusProgram

BIN_MS = 10.0
WINDOW_MS = 150.0
RESPONSE_FROM_BIN = 5       # probe pulse lands at 50 ms = start of bin 5
N_TRAINS = 40
RELAX_MS = 50.0             # inter-sample gap during digit training
OUTPUT_GROUP_RADIUS = 0.25  # mm, half the electrode pitch


@dataclass(frozen=True)
class ResponseTrace:
    """Mean spike count per neuron in consecutive time bins."""

    values: np.ndarray
    bin_ms: float = BIN_MS
    window_ms: float = WINDOW_MS

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        n_bins = int(round(self.window_ms / self.bin_ms))
        if vals.shape != (n_bins,):
            raise ValueError(f"expected {n_bins} bins, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)


def binned_response(record: SpikeRecord, n_neurons: int | None = None,
                    bin_ms: float = BIN_MS, window_ms: float = WINDOW_MS) -> ResponseTrace:
    """Bin a spike record into the response window, normalized per neuron."""
    if record.duration < window_ms:
        raise ValueError(f"record duration {record.duration} ms shorter than "
                         f"window {window_ms} ms")
    n_neurons = n_neurons if n_neurons is not None else record.n_neurons
    n_bins = int(round(window_ms / bin_ms))
    values = np.zeros(n_bins)
    if record.n_spikes:
        inside = record.times < window_ms
        idx = np.floor(record.times[inside] / bin_ms).astype(np.int64)
        values = np.bincount(idx, minlength=n_bins).astype(np.float64)
    return ResponseTrace(values=values / n_neurons, bin_ms=bin_ms, window_ms=window_ms)


def mse(a: ResponseTrace, b: ResponseTrace) -> float:
    if a.bin_ms != b.bin_ms or a.window_ms != b.window_ms:
        raise ValueError("traces have mismatched binning")
    return float(np.mean((a.values - b.values) ** 2))


def response_scalar(trace: ResponseTrace, from_bin: int = RESPONSE_FROM_BIN) -> float:
    """Sum of the trace over the post-stimulus bins."""
    return float(trace.values[from_bin:].sum())


@dataclass(frozen=True)
class AggregateResult:
    """Per-repetition values with mean and Student-t 95% half-width."""

    values: tuple
    mean: float
    ci95: float | None  # None when undefined (single repetition)


def aggregate(values) -> AggregateResult:
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("aggregate requires at least one value")
    mean = float(np.mean(vals))
    if len(vals) == 1:
        return AggregateResult(values=tuple(vals), mean=mean, ci95=None)
    sd = float(np.std(vals, ddof=1))
    half = float(stats.t.ppf(0.975, len(vals) - 1) * sd / math.sqrt(len(vals)))
    return AggregateResult(values=tuple(vals), mean=mean, ci95=half)


# ---------------------------------------------------------------------------
# Stage one: tetanization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TetanizationReport:
    """Probe traces and selectivity for one culture repetition."""

    traces: dict       # (pattern, phase) -> ResponseTrace, e.g. ("regL", "pre")
    responses: dict    # (pattern, phase) -> float
    ratio_pre: float   # response(regL)/response(upsL) before tetanization
    ratio_post: float  # same after; nan when the denominator is zero


def _probe(culture: Culture, params: SimParams, pattern) -> ResponseTrace:
    record = run(culture, stimuli.probe_program(pattern), params=params,
                 plasticity=False, record=True)
    return binned_response(record, culture.n_neurons)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else math.nan


def tetanization_report(culture: Culture, params: SimParams,
                        n_trains: int = N_TRAINS) -> TetanizationReport:
    """Probe both patterns, tetanize with regL, probe again."""
    reg = stimuli.l_pattern("regL")
    ups = stimuli.l_pattern("upsL")
    traces = {("regL", "pre"): _probe(culture, params, reg),
              ("upsL", "pre"): _probe(culture, params, ups)}
    if n_trains > 0:
        session = stimuli.concat(*[stimuli.tetanization_program(reg)
                                   for _ in range(n_trains)])
        run(culture, session, params=params, plasticity=True, record=False)
    traces[("regL", "post")] = _probe(culture, params, reg)
    traces[("upsL", "post")] = _probe(culture, params, ups)
    responses = {key: response_scalar(tr) for key, tr in traces.items()}
    return TetanizationReport(
        traces=traces, responses=responses,
        ratio_pre=_ratio(responses[("regL", "pre")], responses[("upsL", "pre")]),
        ratio_post=_ratio(responses[("regL", "post")], responses[("upsL", "post")]))


@dataclass(frozen=True)
class TetanizationOutcome:
    reports: tuple                  # one TetanizationReport per repetition
    seeds: tuple
    pre_ratio: AggregateResult
    post_ratio: AggregateResult
    mean_traces: dict               # (pattern, phase) -> ResponseTrace, rep-averaged


def repetition_seeds(base_seed: int, n_reps: int) -> tuple[int, ...]:
    """Deterministic, well-spread per-repetition culture seeds."""
    return tuple(int(s) for s in np.random.SeedSequence(base_seed).generate_state(n_reps))


def tetanization_experiment(params: SimParams, n_reps: int = 4,
                            n_trains: int = N_TRAINS,
                            seeds=None) -> TetanizationOutcome:
    """Independent repetitions of the tetanization protocol on fresh cultures."""
    require_valid(params)
    if seeds is None:
        seeds = repetition_seeds(params.seed, n_reps)
    reports = []
    for seed in seeds:
        culture = generate(replace(params, seed=int(seed)))
        reports.append(tetanization_report(culture, culture.params, n_trains))
    mean_traces = {}
    for key in reports[0].traces:
        stacked = np.stack([r.traces[key].values for r in reports])
        mean_traces[key] = ResponseTrace(values=stacked.mean(axis=0))
    return TetanizationOutcome(
        reports=tuple(reports), seeds=tuple(int(s) for s in seeds),
        pre_ratio=aggregate([r.ratio_pre for r in reports]),
        post_ratio=aggregate([r.ratio_post for r in reports]),
        mean_traces=mean_traces)


# ---------------------------------------------------------------------------
# Stage two: digit recognition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierReadout:
    counts: tuple        # spikes of (class-0 group, class-1 group)
    predicted: int
    tie: bool


def output_groups(culture: Culture) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of the neurons read out for each class.

    A neuron belongs to a class group when strictly within 0.25 mm of one of
    that class's label electrodes; the half-pitch radius keeps the two groups
    disjoint.
    """
    centers = culture.grid.centers()
    masks = []
    for label in (0, 1):
        idx = [culture.grid.electrode_index(r, c)
               for r, c in stimuli.teacher_electrodes(label)]
        d2 = ((culture.positions[:, None, :] - centers[idx][None, :, :]) ** 2).sum(axis=2)
        masks.append((d2 < OUTPUT_GROUP_RADIUS ** 2).any(axis=1))
    return masks[0], masks[1]


def train_digits(culture: Culture, params: SimParams, trainset,
                 relax_ms: float = RELAX_MS) -> Culture:
    """Present labelled digits with simultaneous teacher stimulation.

    One continuous plastic session: each sample runs for 100 ms followed by a
    relaxation gap, with membrane/trace state carried across samples and
    weights persisting throughout.
    """
    trainset = list(trainset)
    if not trainset:
        raise ValueError("empty training set")
    state = fresh_state(culture, params)
    for img in trainset:
        program = stimuli.merge(stimuli.encode_digit(img, dt=params.dt),
                                stimuli.teacher_program(img.label, dt=params.dt))
        run(culture, program, params=params,
            duration=stimuli.DIGIT_WINDOW_MS + relax_ms,
            plasticity=True, record=False, state=state)
    return culture


def classify(culture: Culture, params: SimParams, img: DigitImage,
             groups: tuple[np.ndarray, np.ndarray] | None = None) -> ClassifierReadout:
    """Present a digit without the teacher and read out the group spike counts.

    Runs from a fresh state with plasticity off; ties predict class 0 with the
    tie flag set.
    """
    if groups is None:
        groups = output_groups(culture)
    record = run(culture, stimuli.encode_digit(img, dt=params.dt), params=params,
                 plasticity=False, record=True)
    counts = []
    for mask in groups:
        counts.append(int(mask[record.neurons].sum()) if record.n_spikes else 0)
    tie = counts[0] == counts[1]
    predicted = 0 if counts[0] >= counts[1] else 1
    return ClassifierReadout(counts=tuple(counts), predicted=predicted, tie=tie)


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    n_samples: int
    n_correct: int
    confusion: tuple     # ((true0-pred0, true0-pred1), (true1-pred0, true1-pred1))
    n_ties: int


def evaluate(culture: Culture, params: SimParams, testset) -> EvalResult:
    """Classify every test digit; ties count as class-0 predictions."""
    testset = list(testset)
    if not testset:
        raise ValueError("empty test set")
    groups = output_groups(culture)
    confusion = np.zeros((2, 2), dtype=np.int64)
    n_ties = 0
    for img in testset:
        readout = classify(culture, params, img, groups=groups)
        confusion[img.label, readout.predicted] += 1
        n_ties += int(readout.tie)
    n_correct = int(confusion[0, 0] + confusion[1, 1])
    return EvalResult(accuracy=n_correct / len(testset), n_samples=len(testset),
                      n_correct=n_correct,
                      confusion=tuple(map(tuple, confusion.tolist())),
                      n_ties=n_ties)


# ---------------------------------------------------------------------------
# Report files: key=value sections with embedded trace CSV
# ---------------------------------------------------------------------------

def save_trace_csv(trace: ResponseTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_start_ms,mean_spikes_per_neuron\n")
        for b, v in enumerate(trace.values):
            fh.write(f"{float(b * trace.bin_ms)!r},{float(v)!r}\n")


def load_trace_csv(path) -> ResponseTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    starts, values = data[:, 0], data[:, 1]
    bin_ms = float(starts[1] - starts[0]) if starts.size > 1 else BIN_MS
    return ResponseTrace(values=values, bin_ms=bin_ms,
                         window_ms=bin_ms * values.size)


def save_tetanization_outcome(outcome: TetanizationOutcome, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[aggregate]\n")
        fh.write(f"n_reps={len(outcome.reports)}\n")
        fh.write(f"seeds={','.join(str(s) for s in outcome.seeds)}\n")
        fh.write(f"pre_ratio_mean={outcome.pre_ratio.mean!r}\n")
        fh.write(f"pre_ratio_ci95={outcome.pre_ratio.ci95!r}\n")
        fh.write(f"post_ratio_mean={outcome.post_ratio.mean!r}\n")
        fh.write(f"post_ratio_ci95={outcome.post_ratio.ci95!r}\n")
        for i, report in enumerate(outcome.reports):
            fh.write(f"\n[repetition {i}]\n")
            fh.write(f"ratio_pre={report.ratio_pre!r}\n")
            fh.write(f"ratio_post={report.ratio_post!r}\n")
            for (pattern, phase), value in report.responses.items():
                fh.write(f"response_{pattern}_{phase}={value!r}\n")
        for (pattern, phase), trace in outcome.mean_traces.items():
            fh.write(f"\n[trace {pattern} {phase}]\n")
            fh.write("bin_start_ms,mean_spikes_per_neuron\n")
            for b, v in enumerate(trace.values):
                fh.write(f"{float(b * trace.bin_ms)!r},{float(v)!r}\n")


def save_eval_result(result: EvalResult, path, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[evaluation]\n")
        fh.write(f"accuracy={result.accuracy!r}\n")
        fh.write(f"n_samples={result.n_samples}\n")
        fh.write(f"n_correct={result.n_correct}\n")
        fh.write(f"n_ties={result.n_ties}\n")
        (a, b), (c, d) = result.confusion
        fh.write(f"confusion_true0=({a},{b})\n")
        fh.write(f"confusion_true1=({c},{d})\n")
        for key, value in (extra or {}).items():
            fh.write(f"{key}={value}\n")
