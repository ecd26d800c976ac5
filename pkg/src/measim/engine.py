"""Time-stepped network simulation kernel.

Leaky integrate-and-fire membranes with exponential-factor decay (exact at
step boundaries for piecewise-constant input), one-step synaptic propagation
delay, refractory clamping, and online trace-based plasticity. Each neuron
carries two exponentially decaying spike traces; weight updates read them so
that the accumulated change over a run equals the all-to-all sum over
pre/post spike pairs of the pair rule: potentiation for strictly causal
pairs, depression (sign-flipped on inhibitory synapses) otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SimParams
from .culture import Culture
from .stimuli import StimulusProgram


class SimulationError(RuntimeError):
    """Numerical failure inside a run (e.g. non-finite membrane potential)."""


@dataclass
class SpikeRecord:
    """Time-sorted spike events of one run plus reproduction metadata."""

    times: np.ndarray    # float64 ms, relative to run start
    neurons: np.ndarray  # int32
    duration: float
    dt: float
    n_neurons: int
    seed: int
    params_digest: str

    @property
    def n_spikes(self) -> int:
        return self.times.shape[0]

    def min_isi(self) -> float:
        """Smallest per-neuron inter-spike interval (inf when none exists)."""
        if self.n_spikes < 2:
            return math.inf
        order = np.lexsort((self.times, self.neurons))
        t = self.times[order]
        nrn = self.neurons[order]
        same = nrn[1:] == nrn[:-1]
        if not same.any():
            return math.inf
        return float(np.min(np.diff(t)[same]))


@dataclass
class NetworkState:
    """Mutable per-run dynamical state (membranes, traces, refractoriness)."""

    v: np.ndarray            # membrane potential, mV
    refrac_free: np.ndarray  # first step index at which the neuron may spike
    x: np.ndarray            # presynaptic-role trace (tau_plus)
    y: np.ndarray            # postsynaptic-role trace (tau_minus)
    k: int                   # global step counter
    plasticity: bool = False
    prev_spikes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    # out-synapse gather of prev_spikes: (weight slots, postsynaptic ids, pre-is-exc)
    prev_out: tuple = (None, None, None)


def fresh_state(culture: Culture, params: SimParams | None = None) -> NetworkState:
    params = params or culture.params
    n = culture.n_neurons
    return NetworkState(v=np.full(n, params.v_rest, dtype=np.float64),
                        refrac_free=np.zeros(n, dtype=np.int64),
                        x=np.zeros(n), y=np.zeros(n), k=0)


def _take_slices(indptr: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Concatenated positions of the CSR ranges [indptr[i], indptr[i+1]) for ids."""
    starts = indptr[ids]
    lens = indptr[ids + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    keep = lens > 0
    starts, lens = starts[keep], lens[keep]
    out = np.ones(total, dtype=np.int64)
    out[0] = starts[0]
    ends = np.cumsum(lens)
    out[ends[:-1]] = starts[1:] - starts[:-1] - lens[:-1] + 1
    np.cumsum(out, out=out)
    return out


def _gather_out(culture: Culture, spikes: np.ndarray) -> tuple:
    out_indptr, out_slot, out_post = culture.out_view()
    idx = _take_slices(out_indptr, spikes)
    lens = out_indptr[spikes + 1] - out_indptr[spikes]
    pre_exc = np.repeat(culture.is_excitatory[spikes], lens)
    return out_slot[idx], out_post[idx], pre_exc


def apply_stdp(culture: Culture, params: SimParams, state: NetworkState,
               spikes: np.ndarray) -> None:
    """Apply the plasticity updates triggered by this step's spikes.

    Also advances the spike traces of the firing neurons: the postsynaptic
    trace is incremented between the potentiation and depression reads, the
    presynaptic trace after both, so a simultaneous pre/post pair lands in the
    depression branch only (the causal branch requires strict precedence).
    Weight magnitudes are clamped to [0, w_max] per synapse type at the end.
    """
    w = culture.weights
    pos = _take_slices(culture.in_indptr, spikes)
    pre_exc_in = None
    if pos.size:
        pre = culture.in_pre[pos]
        pre_exc_in = culture.is_excitatory[pre]
        sgn = np.where(pre_exc_in, 1.0, -1.0)
        w[pos] += sgn * (params.a_plus * state.x[pre])

    state.y[spikes] += 1.0

    slots, posts, pre_exc_out = _gather_out(culture, spikes)
    if slots.size:
        sgn = np.where(pre_exc_out, 1.0, -1.0)
        w[slots] -= sgn * (params.a_minus * state.y[posts])

    state.x[spikes] += 1.0

    if pos.size:
        w[pos] = np.clip(w[pos], 0.0, culture.cap_for(pre_exc_in))
    if slots.size:
        w[slots] = np.clip(w[slots], 0.0, culture.cap_for(pre_exc_out))
    state.prev_out = (slots, posts, pre_exc_out)


def step(culture: Culture, params: SimParams, state: NetworkState,
         external_input: np.ndarray) -> np.ndarray:
    """Advance the network one time step; returns the spiking neuron indices.

    Order: membrane decay; input delivery (external plus spikes of the
    previous step); threshold/reset/refractory bookkeeping; refractory clamp;
    trace decay; plasticity (when enabled).
    """
    n = culture.n_neurons
    v = state.v
    unit = params.v_thresh - params.v_rest  # mV delivered per unit weight

    v -= params.v_rest
    v *= math.exp(-params.dt / params.tau_m)
    v += params.v_rest

    v += external_input
    prev = state.prev_spikes
    if prev.size:
        slots, posts, pre_exc = state.prev_out
        contrib = np.where(pre_exc, unit, -unit) * culture.weights[slots]
        v += np.bincount(posts, weights=contrib, minlength=n)
        # Inhibition is shunting-like: hyperpolarization is bounded at two
        # threshold gaps below rest (reversal floor), so strong inhibitory
        # volleys veto the current input without paralyzing the neuron for
        # hundreds of milliseconds.
        np.maximum(v, params.v_rest - 2.0 * unit, out=v)

    if not np.isfinite(v).all():
        raise SimulationError(
            f"non-finite membrane potential at t={state.k * params.dt:g} ms")

    refr = state.refrac_free > state.k
    fired = (~refr) & (v >= params.v_thresh)
    spikes = np.flatnonzero(fired)
    if spikes.size:
        v[spikes] = params.v_reset
        refrac_steps = int(math.ceil(params.t_refrac / params.dt - 1e-9))
        state.refrac_free[spikes] = state.k + refrac_steps
    v[refr] = params.v_reset

    state.x *= math.exp(-params.dt / params.tau_plus)
    state.y *= math.exp(-params.dt / params.tau_minus)

    if state.plasticity and spikes.size:
        apply_stdp(culture, params, state, spikes)
    else:
        state.y[spikes] += 1.0
        state.x[spikes] += 1.0
        state.prev_out = _gather_out(culture, spikes) if spikes.size else (None, None, None)

    state.prev_spikes = spikes
    state.k += 1
    return spikes


def run(culture: Culture, program: StimulusProgram,
        params: SimParams | None = None, duration: float | None = None,
        plasticity: bool = False, record: bool = True,
        state: NetworkState | None = None) -> SpikeRecord:
    """Run a stimulus program against the culture.

    Starts from a fresh resting state unless ``state`` is given, in which case
    dynamics continue from it (the program clock is relative to entry). Pulse
    events convert to per-neuron membrane increments through the electrode
    coupling. Weight mutation happens only with ``plasticity=True``.
    """
    params = params or culture.params
    if duration is None:
        duration = program.duration
    if program.times.size and (program.times.min() < 0
                               or program.times.max() >= duration):
        raise ValueError("program events must lie within [0, duration)")
    grid = culture.grid
    if program.times.size:
        if (program.rows.min() < 1 or program.rows.max() > grid.rows
                or program.cols.min() < 1 or program.cols.max() > grid.cols):
            raise ValueError("program references electrodes outside the grid")

    if state is None:
        state = fresh_state(culture, params)
    state.plasticity = plasticity

    n_steps = int(round(duration / params.dt))
    k0 = state.k
    # Pulse schedule: step index -> flat electrode ids
    schedule: dict[int, list[int]] = {}
    if program.times.size:
        ev_steps = np.round(program.times / params.dt).astype(np.int64)
        flat = (program.rows - 1) * grid.cols + (program.cols - 1)
        for s, e in zip(ev_steps, flat):
            schedule.setdefault(int(s), []).append(int(e))

    ext = np.zeros(culture.n_neurons)
    rec_times: list[np.ndarray] = []
    rec_neurons: list[np.ndarray] = []
    for local_k in range(n_steps):
        ext.fill(0.0)
        for e in schedule.get(local_k, ()):
            lo, hi = culture.coup_indptr[e], culture.coup_indptr[e + 1]
            ext[culture.coup_neuron[lo:hi]] += (culture.coup_value[lo:hi]
                                                * params.stim_amplitude)
        spikes = step(culture, params, state, ext)
        if record and spikes.size:
            rec_times.append(np.full(spikes.size, local_k * params.dt))
            rec_neurons.append(spikes.astype(np.int32))

    times = np.concatenate(rec_times) if rec_times else np.empty(0)
    neurons = (np.concatenate(rec_neurons) if rec_neurons
               else np.empty(0, dtype=np.int32))
    return SpikeRecord(times=times, neurons=neurons, duration=float(duration),
                       dt=params.dt, n_neurons=culture.n_neurons,
                       seed=params.seed, params_digest=params.digest())


# ---------------------------------------------------------------------------
# Spike record files: CSV plus key=value metadata sidecar
# ---------------------------------------------------------------------------

def save_record(record: SpikeRecord, path) -> None:
    path = str(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time_ms,neuron\n")
        for t, j in zip(record.times, record.neurons):
            fh.write(f"{float(t)!r},{int(j)}\n")
    with open(path + ".meta", "w", encoding="utf-8") as fh:
        fh.write(f"duration_ms={record.duration!r}\n"
                 f"dt_ms={record.dt!r}\n"
                 f"n_neurons={record.n_neurons}\n"
                 f"seed={record.seed}\n"
                 f"params_digest={record.params_digest}\n")


def load_record(path) -> SpikeRecord:
    path = str(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = data[:, 0] if data.size else np.empty(0)
    neurons = data[:, 1].astype(np.int32) if data.size else np.empty(0, dtype=np.int32)
    meta = {}
    with open(path + ".meta", "r", encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                key, value = line.strip().split("=", 1)
                meta[key] = value
    return SpikeRecord(times=times, neurons=neurons,
                       duration=float(meta["duration_ms"]),
                       dt=float(meta["dt_ms"]),
                       n_neurons=int(meta["n_neurons"]),
                       seed=int(meta["seed"]),
                       params_digest=meta.get("params_digest", ""))
