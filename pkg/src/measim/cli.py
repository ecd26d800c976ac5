"""Command-line interface: culture generation, experiments, sweeps, exports.

Every run writes a manifest (command line, resolved parameters, seeds, input
digests, output files, wall time) sufficient to reproduce its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import (ConfigError, SimParams, load_params, load_space, save_params,
                     scaled, serialize_params, validate)
from .culture import CultureBuildError, generate, load_culture, save_culture
from .datasets import (DatasetError, load_split, to_digit_images,
                       write_synthetic_corpus)
from .engine import SimulationError, load_record, run, save_record
from .protocols import (binned_response, evaluate, save_eval_result,
                        save_tetanization_outcome, save_trace_csv,
                        tetanization_experiment, train_digits)
from .search import (accuracy_sweep, calibrate, load_target, save_sweep,
                     save_target)
from .stimuli import l_pattern, load_program, probe_program

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SIMULATION = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, out_dir: Path, argv: list[str]):
        self.out_dir = out_dir
        self.argv = argv
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.fields: dict = {}
        self.t0 = time.monotonic()

    def write(self) -> None:
        path = self.out_dir / "manifest.txt"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"command={' '.join(self.argv)}\n")
            fh.write(f"version={__version__}\n")
            for key, value in self.fields.items():
                fh.write(f"{key}={value}\n")
            fh.write(f"wall_seconds={time.monotonic() - self.t0:.3f}\n")
            for p in self.inputs:
                fh.write(f"input={p} sha256={_sha256(p)}\n")
            for p in self.outputs:
                fh.write(f"output={p.name} sha256={_sha256(p)}\n")


def _resolve_params(args, manifest=None) -> SimParams:
    params = load_params(args.params) if args.params else SimParams()
    if getattr(args, "scale", 1.0) != 1.0:
        params = scaled(params, args.scale)
    if getattr(args, "seed", None) is not None:
        params = replace(params, seed=args.seed)
    violations = validate(params)
    if violations:
        raise UsageError("invalid parameters: " + "; ".join(violations))
    if manifest is not None:
        manifest.fields["resolved_params"] = serialize_params(params).strip().replace("\n", ";")
    return params


def _load_digits(args, split: str, limit: int | None):
    raw = load_split(args.mnist, split)
    digits = to_digit_images(raw)
    if limit is not None:
        digits = digits[:limit]
    if not digits:
        raise DatasetError(f"no {split} digits available")
    return digits


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _common_flags(sub, scale=True, seed=True, params=True, out=True):
    if params:
        sub.add_argument("--params", help="parameter file (key=value lines)")
    if seed:
        sub.add_argument("--seed", type=int, help="override the culture seed")
    if scale:
        sub.add_argument("--scale", type=float, default=1.0,
                         help="scale factor on n_neurons/k_exc/k_inh")
    if out:
        sub.add_argument("--out", required=True, help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="measim",
                     description="Simulated neuronal culture on a 6x10 electrode grid")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("generate", help="build a culture snapshot")
    _common_flags(p)

    p = subs.add_parser("tetanize", help="run the tetanization experiment")
    _common_flags(p)
    p.add_argument("--reps", type=int, default=4)
    p.add_argument("--trains", type=int, default=40)

    p = subs.add_parser("calibrate", help="grid-search parameters against reference traces")
    _common_flags(p)
    p.add_argument("--space", required=True, help="search-space file")
    p.add_argument("--target", required=True, help="reference-trace CSV")
    p.add_argument("--reps", type=int, default=4)
    p.add_argument("--trains", type=int, default=40)

    p = subs.add_parser("train", help="train a culture on digit images")
    _common_flags(p)
    p.add_argument("--mnist", required=True, help="directory with IDX files")
    p.add_argument("--culture", help="existing culture snapshot to train")
    p.add_argument("--limit-train", type=int, default=None)

    p = subs.add_parser("eval", help="evaluate a trained culture snapshot")
    p.add_argument("--culture", required=True, help="trained culture snapshot")
    p.add_argument("--mnist", required=True)
    p.add_argument("--limit-test", type=int, default=None)
    p.add_argument("--out", required=True)

    p = subs.add_parser("sweep", help="accuracy sweep over a parameter grid")
    _common_flags(p)
    p.add_argument("--space", required=True)
    p.add_argument("--mnist", required=True)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--limit-train", type=int, default=None)
    p.add_argument("--limit-test", type=int, default=None)

    p = subs.add_parser("traces", help="re-bin a spike record into a response trace")
    p.add_argument("--record", required=True, help="spike record CSV (with .meta sidecar)")
    p.add_argument("--out", required=True)

    p = subs.add_parser("probe", help="probe a culture snapshot with an L pattern or program")
    p.add_argument("--culture", required=True)
    p.add_argument("--pattern", choices=["regL", "upsL"], default="regL")
    p.add_argument("--program", help="stimulus program CSV instead of a pattern")
    p.add_argument("--out", required=True)

    p = subs.add_parser("synth-digits", help="write a synthetic 0/1 IDX corpus")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _cmd_generate(args, manifest):
    params = _resolve_params(args, manifest)
    culture = generate(params)
    out = manifest.out_dir / "culture.bin"
    save_culture(culture, out)
    manifest.outputs.append(out)
    manifest.fields["seed"] = params.seed
    manifest.fields["n_synapses"] = culture.n_synapses


def _cmd_tetanize(args, manifest):
    params = _resolve_params(args, manifest)
    outcome = tetanization_experiment(params, n_reps=args.reps, n_trains=args.trains)
    report = manifest.out_dir / "tetanization_report.txt"
    save_tetanization_outcome(outcome, report)
    manifest.outputs.append(report)
    for i, rep in enumerate(outcome.reports):
        for (pattern, phase), trace in rep.traces.items():
            path = manifest.out_dir / f"trace_rep{i}_{pattern}_{phase}.csv"
            save_trace_csv(trace, path)
            manifest.outputs.append(path)
    manifest.fields["seeds"] = ",".join(str(s) for s in outcome.seeds)
    manifest.fields["pre_ratio_mean"] = outcome.pre_ratio.mean
    manifest.fields["post_ratio_mean"] = outcome.post_ratio.mean


def _cmd_calibrate(args, manifest):
    params = _resolve_params(args, manifest)
    space = load_space(args.space, base=params)
    manifest.inputs.append(Path(args.space))
    target = load_target(args.target)
    manifest.inputs.append(Path(args.target))
    result = calibrate(space, target, n_reps=args.reps, n_trains=args.trains)
    out = manifest.out_dir / "calibration_sweep.csv"
    save_sweep(result, out)
    manifest.outputs.append(out)
    best = manifest.out_dir / "best_params.cfg"
    save_params(result.best.params, best)
    manifest.outputs.append(best)
    manifest.fields["best_objective"] = result.best.objective
    manifest.fields["n_candidates"] = len(result.entries)
    manifest.fields["n_excluded"] = result.n_excluded


def _cmd_train(args, manifest):
    params = _resolve_params(args, manifest)
    trainset = _load_digits(args, "train", args.limit_train)
    if args.culture:
        culture = load_culture(args.culture)
        manifest.inputs.append(Path(args.culture))
        params = culture.params
    else:
        culture = generate(params)
    train_digits(culture, params, trainset)
    out = manifest.out_dir / "trained_culture.bin"
    save_culture(culture, out)
    manifest.outputs.append(out)
    manifest.fields["n_train"] = len(trainset)
    manifest.fields["seed"] = params.seed


def _cmd_eval(args, manifest):
    culture = load_culture(args.culture)
    manifest.inputs.append(Path(args.culture))
    testset = _load_digits(args, "test", args.limit_test)
    result = evaluate(culture, culture.params, testset)
    out = manifest.out_dir / "evaluation.txt"
    save_eval_result(result, out, extra={"n_test": len(testset)})
    manifest.outputs.append(out)
    manifest.fields["accuracy"] = result.accuracy
    manifest.fields["n_test"] = result.n_samples


def _cmd_sweep(args, manifest):
    params = _resolve_params(args, manifest)
    space = load_space(args.space, base=params)
    manifest.inputs.append(Path(args.space))
    trainset = _load_digits(args, "train", args.limit_train)
    testset = _load_digits(args, "test", args.limit_test)
    result = accuracy_sweep(space, trainset, testset, n_reps=args.reps)
    out = manifest.out_dir / "accuracy_sweep.csv"
    save_sweep(result, out)
    manifest.outputs.append(out)
    manifest.fields["best_accuracy"] = result.best.objective
    manifest.fields["n_candidates"] = len(result.entries)


def _cmd_traces(args, manifest):
    record = load_record(args.record)
    manifest.inputs.append(Path(args.record))
    trace = binned_response(record)
    out = manifest.out_dir / "trace.csv"
    save_trace_csv(trace, out)
    manifest.outputs.append(out)


def _cmd_probe(args, manifest):
    culture = load_culture(args.culture)
    manifest.inputs.append(Path(args.culture))
    if args.program:
        program = load_program(args.program)
        manifest.inputs.append(Path(args.program))
    else:
        program = probe_program(l_pattern(args.pattern))
    record = run(culture, program, plasticity=False, record=True)
    rec_path = manifest.out_dir / "spikes.csv"
    save_record(record, rec_path)
    manifest.outputs.append(rec_path)
    manifest.outputs.append(Path(str(rec_path) + ".meta"))
    if record.duration >= 150.0:
        trace_path = manifest.out_dir / "trace.csv"
        save_trace_csv(binned_response(record), trace_path)
        manifest.outputs.append(trace_path)


def _cmd_synth(args, manifest):
    write_synthetic_corpus(manifest.out_dir, args.n_train, args.n_test, seed=args.seed)
    for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                 "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
        manifest.outputs.append(manifest.out_dir / name)
    manifest.fields["n_train"] = args.n_train
    manifest.fields["n_test"] = args.n_test
    manifest.fields["seed"] = args.seed


_COMMANDS = {
    "generate": _cmd_generate,
    "tetanize": _cmd_tetanize,
    "calibrate": _cmd_calibrate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "traces": _cmd_traces,
    "probe": _cmd_probe,
    "synth-digits": _cmd_synth,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        manifest = Manifest(_out_dir(args), ["measim"] + argv)
        if getattr(args, "params", None):
            manifest.inputs.append(Path(args.params))
            manifest.fields["params"] = args.params
        _COMMANDS[args.command](args, manifest)
        manifest.write()
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SimulationError, CultureBuildError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
