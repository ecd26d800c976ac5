"""Grid-search machinery: response-trace calibration and accuracy sweeps.

Candidates from a search space are each evaluated with a shared seed list
(common random numbers) so objective differences reflect parameters rather
than sampling noise; failing simulations are kept in the ranking with an
infinite objective instead of aborting the sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .config import ConfigError, SearchSpace, SimParams, enumerate_space
from .culture import CultureBuildError, generate
from .engine import SimulationError
from .protocols import (ResponseTrace, EvalResult, evaluate, mse,
                        repetition_seeds, tetanization_experiment, train_digits)

TRACE_KEYS = (("regL", "pre"), ("upsL", "pre"), ("regL", "post"), ("upsL", "post"))
_TRACE_COLUMNS = ("regL_pre", "upsL_pre", "regL_post", "upsL_post")


@dataclass(frozen=True)
class CalibrationTarget:
    """Reference probe traces for both patterns, before and after tetanization."""

    traces: dict  # (pattern, phase) -> ResponseTrace

    def __post_init__(self):
        missing = [k for k in TRACE_KEYS if k not in self.traces]
        if missing:
            raise ValueError(f"target missing traces: {missing}")
        shapes = {(t.bin_ms, t.window_ms) for t in self.traces.values()}
        if len(shapes) != 1:
            raise ValueError("target traces must share binning")


def save_target(target: CalibrationTarget, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(_TRACE_COLUMNS) + "\n")
        columns = [target.traces[k].values for k in TRACE_KEYS]
        for row in zip(*columns):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_target(path) -> CalibrationTarget:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != ",".join(_TRACE_COLUMNS):
            raise ValueError(f"unexpected reference-trace header {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != 4:
        raise ValueError("reference-trace file must have four columns")
    traces = {key: ResponseTrace(values=data[:, i],
                                 window_ms=data.shape[0] * 10.0)
              for i, key in enumerate(TRACE_KEYS)}
    return CalibrationTarget(traces=traces)


@dataclass(frozen=True)
class SweepEntry:
    params: SimParams
    objective: float
    n_reps: int
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class SweepResult:
    """All evaluated candidates, ranked best-first; nothing is dropped."""

    entries: tuple
    minimize: bool
    n_excluded: int = 0  # grid combinations rejected by parameter validation

    @property
    def best(self) -> SweepEntry:
        return self.entries[0]


def _rank(scored: list[SweepEntry], minimize: bool) -> tuple:
    finite = [e for e in scored if not e.failed]
    failed = [e for e in scored if e.failed]
    finite.sort(key=lambda e: e.objective, reverse=not minimize)
    return tuple(finite + failed)


def calibrate(space: SearchSpace, target: CalibrationTarget, n_reps: int = 4,
              n_trains: int = 40, seeds=None, progress=None) -> SweepResult:
    """Rank candidates by summed trace MSE against the reference."""
    candidates, n_excluded = enumerate_space(space)
    if not candidates:
        raise ConfigError("search space contains no valid candidates")
    if seeds is None:
        seeds = repetition_seeds(space.base.seed, n_reps)
    entries = []
    for i, params in enumerate(candidates):
        try:
            outcome = tetanization_experiment(params, n_reps=n_reps,
                                              n_trains=n_trains, seeds=seeds)
            objective = sum(mse(outcome.mean_traces[k], target.traces[k])
                            for k in TRACE_KEYS)
            entries.append(SweepEntry(params=params, objective=objective,
                                      n_reps=n_reps))
        except (SimulationError, CultureBuildError) as exc:
            entries.append(SweepEntry(params=params, objective=math.inf,
                                      n_reps=n_reps, failed=True, error=str(exc)))
        if progress is not None:
            progress(i + 1, len(candidates), entries[-1])
    return SweepResult(entries=_rank(entries, minimize=True), minimize=True,
                       n_excluded=n_excluded)


def accuracy_candidate(params: SimParams, trainset, testset, seeds) -> float:
    """Mean test accuracy of a candidate over per-seed fresh cultures."""
    accs = []
    for seed in seeds:
        culture = generate(replace(params, seed=int(seed)))
        train_digits(culture, culture.params, trainset)
        result: EvalResult = evaluate(culture, culture.params, testset)
        accs.append(result.accuracy)
    return float(np.mean(accs))


def accuracy_sweep(space: SearchSpace, trainset, testset, n_reps: int = 1,
                   seeds=None, progress=None) -> SweepResult:
    """Rank candidates by mean digit-recognition accuracy (descending)."""
    trainset, testset = list(trainset), list(testset)
    if not trainset or not testset:
        raise ValueError("train and test sets must be non-empty")
    candidates, n_excluded = enumerate_space(space)
    if not candidates:
        raise ConfigError("search space contains no valid candidates")
    if seeds is None:
        seeds = repetition_seeds(space.base.seed, n_reps)
    entries = []
    for i, params in enumerate(candidates):
        try:
            objective = accuracy_candidate(params, trainset, testset, seeds)
            entries.append(SweepEntry(params=params, objective=objective,
                                      n_reps=n_reps))
        except (SimulationError, CultureBuildError) as exc:
            entries.append(SweepEntry(params=params, objective=-math.inf,
                                      n_reps=n_reps, failed=True, error=str(exc)))
        if progress is not None:
            progress(i + 1, len(candidates), entries[-1])
    return SweepResult(entries=_rank(entries, minimize=False), minimize=False,
                       n_excluded=n_excluded)


def save_sweep(result: SweepResult, path) -> None:
    """Flattened parameter columns plus the objective, one row per candidate."""
    names = [f.name for f in fields(SimParams)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + ",objective,failed\n")
        for entry in result.entries:
            vals = []
            for name in names:
                v = getattr(entry.params, name)
                vals.append("auto" if v is None else repr(v) if isinstance(v, float)
                            else str(v))
            fh.write(",".join(vals) + f",{entry.objective!r},{int(entry.failed)}\n")
