"""Simulator of cultured neuronal networks on a 6x10 multi-electrode array.

Submodules:

- ``config``:    parameter sets, validation, files, grid enumeration
- ``culture``:   network generation (placement, connectivity, weights, coupling)
- ``engine``:    time-stepped LIF/STDP simulation kernel
- ``stimuli``:   electrode pulse programs (L patterns, digits, teacher)
- ``protocols``: tetanization and digit-recognition experiments
- ``search``:    calibration and accuracy grid sweeps
- ``datasets``:  IDX digit ingestion, resizing, synthetic corpus
- ``estimator``: scikit-learn fit/predict adapter for the digit classifier
"""

from .config import (SearchSpace, SimParams, default_params, default_search_space,
                     enumerate_space,
                     load_params, load_space, parse_params, save_params, scaled,
                     serialize_params, validate)
from .culture import Culture, MeaGrid, generate, load_culture, save_culture
from .engine import NetworkState, SpikeRecord, fresh_state, run, step
from .estimator import CultureDigitClassifier
from .protocols import (AggregateResult, ResponseTrace, aggregate, binned_response,
                        classify, evaluate, mse, tetanization_experiment,
                        train_digits)
from .search import CalibrationTarget, SweepResult, accuracy_sweep, calibrate
from .stimuli import (DigitImage, StimulusProgram, encode_digit, l_pattern, merge,
                      probe_program, teacher_program, tetanization_program)

__version__ = "0.1.0"

__all__ = [
    "AggregateResult", "CalibrationTarget", "Culture", "CultureDigitClassifier",
    "DigitImage", "MeaGrid", "NetworkState", "ResponseTrace", "SearchSpace",
    "SimParams", "SpikeRecord", "StimulusProgram", "SweepResult",
    "accuracy_sweep", "aggregate", "binned_response", "calibrate", "classify",
    "default_params", "default_search_space", "encode_digit", "enumerate_space",
    "evaluate",
    "fresh_state", "generate", "l_pattern", "load_culture", "load_params",
    "load_space", "merge", "mse", "parse_params", "probe_program", "run",
    "save_culture", "save_params", "scaled", "serialize_params", "step",
    "teacher_program", "tetanization_experiment", "tetanization_program",
    "train_digits", "validate",
]
