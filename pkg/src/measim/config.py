"""Simulation parameter sets: defaults, validation, file round-trip, grid enumeration.

All simulation knobs live in a single immutable :class:`SimParams` so that a
parameter set is the unit of calibration and sweeping. Parameter files are
flat ``key=value`` text; search-space files use the same keys with
comma-separated candidate lists.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field, fields, replace
from typing import Iterator, Optional

ENUMERATION_CAP = 10**6

# Fields parsed as integers; everything else numeric is float.
_INT_FIELDS = {"n_neurons", "k_exc", "k_inh", "seed"}
# w_max accepts the literal 'auto' (cap resolved per culture, 10x mean weight).
_OPTIONAL_FIELDS = {"w_max"}


class ConfigError(ValueError):
    """Malformed parameter or search-space input."""


@dataclass(frozen=True)
class SimParams:
    """One complete simulation configuration.

    Membrane potentials are in mV, times in ms, distances in mm; synaptic
    weights are dimensionless (1.0 of weight delivers the full rest-to-threshold
    gap as an instantaneous membrane increment).
    """

    v_rest: float = -70.0       # resting membrane potential
    v_thresh: float = -50.0     # spike threshold
    v_reset: float = -70.0      # post-spike reset potential
    t_refrac: float = 5.0       # refractory period
    tau_m: float = 50.0         # membrane decay time constant
    tau_plus: float = 20.0      # plasticity trace decay, potentiation side
    tau_minus: float = 20.0     # plasticity trace decay, depression side
    a_plus: float = 1e-2        # potentiation learning rate
    a_minus: float = 1e-4       # depression learning rate (magnitude)
    exc_strength: float = 1.0   # expected per-neuron sum of excitatory in-weights
    inh_strength: float = 10.0  # expected per-neuron sum of inhibitory in-weight magnitudes
    sigma_e: float = 1.2        # excitatory connectivity range
    sigma_i: float = 0.15       # inhibitory connectivity range
    n_neurons: int = 10000
    k_exc: int = 3000           # target excitatory in-degree
    k_inh: int = 500            # target inhibitory in-degree
    dt: float = 1.0             # simulation time step
    sigma_stim: float = 0.15    # electrode stimulation range
    stim_amplitude: float = 30.0  # membrane increment at zero electrode distance
    w_max: Optional[float] = None  # per-synapse cap; None = 10x post-scaling mean weight per type
    exc_frac: float = 0.8       # fraction of excitatory neurons
    seed: int = 0

    def digest(self) -> str:
        """Short stable hash of the full parameter set."""
        return hashlib.sha256(serialize_params(self).encode()).hexdigest()[:16]


def default_params() -> SimParams:
    return SimParams()


def scaled(params: SimParams, scale: float) -> SimParams:
    """Scale the culture size (neuron count and in-degree targets) by a factor."""
    if scale <= 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    return replace(
        params,
        n_neurons=max(1, round(params.n_neurons * scale)),
        k_exc=max(1, round(params.k_exc * scale)),
        k_inh=max(1, round(params.k_inh * scale)),
    )


def validate(params: SimParams) -> list[str]:
    """Return the list of invariant violations (empty means valid)."""
    v: list[str] = []
    if not params.v_reset <= params.v_rest:
        v.append(f"v_reset <= v_rest violated ({params.v_reset} > {params.v_rest})")
    if not params.v_rest < params.v_thresh:
        v.append(f"v_rest < v_thresh violated ({params.v_rest} >= {params.v_thresh})")
    for name in ("t_refrac", "tau_m", "tau_plus", "tau_minus", "a_plus", "a_minus",
                 "exc_strength", "inh_strength", "sigma_e", "sigma_i", "dt",
                 "sigma_stim", "stim_amplitude"):
        if not getattr(params, name) > 0:
            v.append(f"{name} must be strictly positive (got {getattr(params, name)})")
    for name in ("n_neurons", "k_exc", "k_inh"):
        if not getattr(params, name) >= 1:
            v.append(f"{name} must be a positive count (got {getattr(params, name)})")
    if not params.dt <= params.t_refrac:
        v.append(f"dt <= t_refrac violated ({params.dt} > {params.t_refrac})")
    if not 0.0 < params.exc_frac < 1.0:
        v.append(f"exc_frac must be in (0,1) (got {params.exc_frac})")
    else:
        if not params.k_exc < params.exc_frac * params.n_neurons:
            v.append(f"k_exc < exc_frac*n_neurons violated "
                     f"({params.k_exc} >= {params.exc_frac * params.n_neurons:g})")
        if not params.k_inh < (1.0 - params.exc_frac) * params.n_neurons:
            v.append(f"k_inh < (1-exc_frac)*n_neurons violated "
                     f"({params.k_inh} >= {(1.0 - params.exc_frac) * params.n_neurons:g})")
    if params.w_max is not None and not params.w_max > 0:
        v.append(f"w_max must be strictly positive or auto (got {params.w_max})")
    if params.seed < 0:
        v.append(f"seed must be non-negative (got {params.seed})")
    return v


def require_valid(params: SimParams) -> SimParams:
    violations = validate(params)
    if violations:
        raise ConfigError("invalid parameters: " + "; ".join(violations))
    return params


# ---------------------------------------------------------------------------
# key=value serialization
# ---------------------------------------------------------------------------

def _format_value(name: str, value) -> str:
    if value is None:
        return "auto"
    if name in _INT_FIELDS:
        return str(int(value))
    return repr(float(value))


def _parse_value(name: str, text: str):
    text = text.strip()
    if name in _OPTIONAL_FIELDS and text.lower() == "auto":
        return None
    try:
        if name in _INT_FIELDS:
            return int(text)
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse value for {name!r}: {text!r}") from exc


def serialize_params(params: SimParams) -> str:
    lines = [f"{f.name}={_format_value(f.name, getattr(params, f.name))}"
             for f in fields(SimParams)]
    return "\n".join(lines) + "\n"


def _parse_kv_lines(text: str) -> Iterator[tuple[str, str]]:
    known = {f.name for f in fields(SimParams)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown parameter {key!r}")
        yield key, value


def parse_params(text: str, base: SimParams | None = None) -> SimParams:
    """Parse key=value text into a SimParams, starting from defaults (or ``base``)."""
    params = base if base is not None else SimParams()
    updates = {}
    for key, value in _parse_kv_lines(text):
        updates[key] = _parse_value(key, value)
    return replace(params, **updates)


def load_params(path) -> SimParams:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_params(fh.read())


def save_params(params: SimParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_params(params))


# ---------------------------------------------------------------------------
# Search spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    """Finite per-parameter candidate grids over a base parameter set.

    Fields not present in ``grids`` stay fixed at their ``base`` value. A
    single-valued grid is equivalent to fixing that field.
    """

    base: SimParams = field(default_factory=SimParams)
    grids: dict[str, tuple] = field(default_factory=dict)

    def size(self) -> int:
        total = 1
        for values in self.grids.values():
            total *= len(values)
        return total


def parse_space(text: str, base: SimParams | None = None) -> SearchSpace:
    base = base if base is not None else SimParams()
    grids: dict[str, tuple] = {}
    for key, value in _parse_kv_lines(text):
        values = tuple(_parse_value(key, item) for item in value.split(","))
        if not values:
            raise ConfigError(f"empty grid for {key!r}")
        grids[key] = values
    return SearchSpace(base=base, grids=grids)


def load_space(path, base: SimParams | None = None) -> SearchSpace:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_space(fh.read(), base=base)


def serialize_space(space: SearchSpace) -> str:
    lines = [f"{name}={','.join(_format_value(name, v) for v in values)}"
             for name, values in sorted(space.grids.items())]
    return "\n".join(lines) + "\n"


def default_search_space(base: SimParams | None = None) -> SearchSpace:
    """Default calibration grids around the shipped parameter values.

    Strengths and learning rates sweep one order of magnitude in both
    directions; time constants and spatial ranges sweep +-50%. The full
    product is large; calibration runs typically restrict to a subset of
    these grids.
    """
    base = base if base is not None else SimParams()
    grids: dict[str, tuple] = {}
    for name in ("exc_strength", "inh_strength", "a_plus", "a_minus"):
        center = getattr(base, name)
        grids[name] = (center / 10.0, center, center * 10.0)
    for name in ("tau_m", "tau_plus", "tau_minus", "sigma_e", "sigma_i",
                 "sigma_stim"):
        center = getattr(base, name)
        grids[name] = (center * 0.5, center, center * 1.5)
    return SearchSpace(base=base, grids=grids)


def enumerate_space(space: SearchSpace,
                    cap: int = ENUMERATION_CAP) -> tuple[list[SimParams], int]:
    """Expand a search space into the full Cartesian product of candidates.

    Candidates are ordered lexicographically by swept field name, then by each
    grid's listed order. Combinations that violate parameter invariants are
    skipped; the second return value counts them.
    """
    for name, values in space.grids.items():
        if len(values) == 0:
            raise ConfigError(f"empty grid for {name!r}")
    total = space.size()
    if total > cap:
        raise ConfigError(f"search space size {total} exceeds cap {cap}")
    names = sorted(space.grids.keys())
    candidates: list[SimParams] = []
    excluded = 0
    for combo in itertools.product(*(space.grids[name] for name in names)):
        params = replace(space.base, **dict(zip(names, combo)))
        if validate(params):
            excluded += 1
        else:
            candidates.append(params)
    return candidates, excluded
