"""Generation of the simulated culture on the electrode grid.

Neurons are placed uniformly on the 3 mm x 5 mm substrate. Directed synapses
are drawn independently per ordered pair with probability
``min(1, alpha * exp(-d^2 / (2 sigma^2)))`` where sigma depends on the
presynaptic type and ``alpha`` is solved per postsynaptic neuron so that the
expected in-degree from each type matches the configured target, accounting
for probability clamping at 1. Weights start uniform(0,1) and are rescaled so
per-neuron excitatory and inhibitory input sums hit their configured totals.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import SimParams, parse_params, require_valid, serialize_params

COUPLING_CUTOFF = 1e-4

_SNAPSHOT_MAGIC = b"MEACULTR"
_SNAPSHOT_VERSION = 1


class CultureBuildError(RuntimeError):
    """Requested connectivity targets are unreachable for this geometry."""


@dataclass(frozen=True)
class MeaGrid:
    """6x10 electrode grid over the 3 mm x 5 mm substrate, 0.5 mm pitch."""

    rows: int = 6
    cols: int = 10
    pitch: float = 0.5

    @property
    def n_electrodes(self) -> int:
        return self.rows * self.cols

    @property
    def extent(self) -> tuple[float, float]:
        return (self.rows * self.pitch, self.cols * self.pitch)

    def electrode_index(self, row: int, col: int) -> int:
        """Flat index for 1-based (row, col)."""
        if not (1 <= row <= self.rows and 1 <= col <= self.cols):
            raise ValueError(f"electrode ({row},{col}) outside {self.rows}x{self.cols} grid")
        return (row - 1) * self.cols + (col - 1)

    def centers(self) -> np.ndarray:
        """Electrode centers, shape (60, 2), ordered row-major by (row, col)."""
        r = np.arange(1, self.rows + 1, dtype=np.float64)
        c = np.arange(1, self.cols + 1, dtype=np.float64)
        x = (r - 0.5) * self.pitch
        y = (c - 0.5) * self.pitch
        xx, yy = np.meshgrid(x, y, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass
class Culture:
    """A generated network: geometry, synapses (weights mutable), couplings.

    The synapse table is CSR-like, grouped by postsynaptic neuron:
    in-synapses of neuron j occupy ``weights[in_indptr[j]:in_indptr[j+1]]``
    with presynaptic indices ``in_pre`` in the same slots. Weights are stored
    as magnitudes; the sign follows the presynaptic type (Dale's principle).
    """

    params: SimParams
    positions: np.ndarray       # (n, 2) float64, mm
    is_excitatory: np.ndarray   # (n,) bool
    in_indptr: np.ndarray       # (n+1,) int64
    in_pre: np.ndarray          # (nnz,) int32
    weights: np.ndarray         # (nnz,) float64, magnitudes in [0, w_max]
    coup_indptr: np.ndarray     # (n_electrodes+1,) int64
    coup_neuron: np.ndarray     # int32
    coup_value: np.ndarray      # float64
    w_max_exc: float
    w_max_inh: float
    alpha_exc: np.ndarray       # (n,) per-neuron connection amplitude used
    alpha_inh: np.ndarray
    grid: MeaGrid = field(default_factory=MeaGrid)
    _out_view: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_neurons(self) -> int:
        return self.positions.shape[0]

    @property
    def n_synapses(self) -> int:
        return self.in_pre.shape[0]

    def cap_for(self, pre_is_exc: np.ndarray) -> np.ndarray:
        return np.where(pre_is_exc, self.w_max_exc, self.w_max_inh)

    def out_view(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Out-synapse view: (out_indptr, out_slot, out_post).

        ``out_slot`` holds positions into ``weights`` of the out-synapses of
        each presynaptic neuron (contiguous per ``out_indptr``); ``out_post``
        the matching postsynaptic indices.
        """
        if self._out_view is None:
            n = self.n_neurons
            post_of = np.repeat(np.arange(n, dtype=np.int32),
                                np.diff(self.in_indptr))
            order = np.argsort(self.in_pre, kind="stable")
            out_slot = order.astype(np.int64)
            out_post = post_of[order]
            counts = np.bincount(self.in_pre, minlength=n)
            out_indptr = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(counts, out=out_indptr[1:])
            self._out_view = (out_indptr, out_slot, out_post)
        return self._out_view

    def invalidate_out_view(self) -> None:
        self._out_view = None


# ---------------------------------------------------------------------------
# Construction steps
# ---------------------------------------------------------------------------

def place_neurons(params: SimParams,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform i.i.d. placement plus seeded-shuffle type assignment."""
    grid = MeaGrid()
    n = params.n_neurons
    positions = rng.random((n, 2)) * np.array(grid.extent)
    n_exc = int(np.floor(params.exc_frac * n))
    flags = np.zeros(n, dtype=bool)
    flags[:n_exc] = True
    rng.shuffle(flags)
    return positions, flags


def _bisect_amplitude(kernels: np.ndarray, target: int) -> float:
    """Scalar fallback: bisection on alpha for sum(min(1, alpha*k)) == target."""
    S = kernels.sum()
    lo = target / S                      # clamping only reduces the sum
    hi = 2.0 * lo
    while np.minimum(1.0, hi * kernels).sum() < target:
        hi *= 2.0
        if not np.isfinite(hi):
            return np.inf
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        if np.minimum(1.0, mid * kernels).sum() < target:
            lo = mid
        else:
            hi = mid
    return hi


def _solve_block_amplitudes(kernels: np.ndarray, target: int) -> np.ndarray:
    """Per-row amplitude alpha so that sum(min(1, alpha*k)) == target.

    ``kernels`` is (rows, candidates) with zeros for non-candidates. Returns
    alpha per row (np.inf when the target needs p=1 on every positive-kernel
    candidate). Raises CultureBuildError when the target exceeds the number
    of positive-kernel candidates of a row.
    """
    nrow = kernels.shape[0]
    S = kernels.sum(axis=1)
    kmax = kernels.max(axis=1, initial=0.0)
    alpha = np.full(nrow, np.nan)

    with np.errstate(divide="ignore", invalid="ignore"):
        plain = target / S
    easy = (S > 0) & (plain * kmax <= 1.0)
    alpha[easy] = plain[easy]
    hard = np.flatnonzero(~easy)
    if hard.size == 0:
        return alpha

    ks = -np.sort(-kernels[hard], axis=1)          # descending
    npos = np.count_nonzero(ks, axis=1)
    if np.any(npos < target):
        bad = int(np.sum(npos < target))
        raise CultureBuildError(
            f"target in-degree {target} unreachable for {bad} neuron(s): "
            f"fewer reachable candidates than the target")
    exact = npos == target
    alpha[hard[exact]] = np.inf
    todo = np.flatnonzero(~exact)
    if todo.size == 0:
        return alpha

    # Clamping the m largest kernels leaves sum m + alpha*suffix[m]; suffix
    # sums accumulate small-to-large to stay accurate when kernel magnitudes
    # span hundreds of decades (tiny connectivity ranges).
    ksub = ks[todo]
    suffix = np.cumsum(ksub[:, ::-1], axis=1)[:, ::-1]
    suffix = np.concatenate([suffix[:, 1:], np.zeros((ksub.shape[0], 1))], axis=1)
    m = np.arange(1, ksub.shape[1] + 1, dtype=np.float64)  # clamped count per column
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        cand = (target - m) / suffix
        k_next = np.concatenate([ksub[:, 1:], np.zeros((ksub.shape[0], 1))], axis=1)
        valid = ((m < target)
                 & np.isfinite(cand) & (cand > 0)
                 & (cand * ksub >= 1.0)
                 & (cand * k_next < 1.0))
    has = valid.any(axis=1)
    first = np.argmax(valid, axis=1)
    alpha[hard[todo[has]]] = cand[np.flatnonzero(has), first[has]]

    # Verify every solved row; ties or rounding at segment boundaries fall
    # back to bisection on the same equation.
    achieved = np.where(ksub > 0,
                        np.minimum(1.0, alpha[hard[todo], None] * ksub), 0.0).sum(axis=1)
    ok = has & (np.abs(achieved - target) <= 1e-6 * target)
    for row in np.flatnonzero(~ok):
        alpha[hard[todo[row]]] = _bisect_amplitude(ksub[row], target)
    return alpha


def _pair_probabilities(alpha: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """min(1, alpha*k) with zero-kernel pairs pinned to zero (handles inf alpha)."""
    with np.errstate(invalid="ignore"):
        p = np.minimum(1.0, alpha[:, None] * kernels)
    return np.where(kernels > 0, p, 0.0)


def connection_probabilities(positions: np.ndarray, flags: np.ndarray,
                             params: SimParams, post_idx: np.ndarray,
                             alpha_exc: np.ndarray, alpha_inh: np.ndarray) -> np.ndarray:
    """Model connection probability rows for the given postsynaptic neurons.

    Pure function of geometry and the per-neuron amplitudes; used by the
    statistical connectivity checks.
    """
    d2 = ((positions[post_idx][:, None, :] - positions[None, :, :]) ** 2).sum(axis=2)
    ker_e = np.exp(-d2 / (2.0 * params.sigma_e ** 2))
    ker_i = np.exp(-d2 / (2.0 * params.sigma_i ** 2))
    ker_e[:, ~flags] = 0.0
    ker_i[:, flags] = 0.0
    cols = np.arange(positions.shape[0])
    self_mask = post_idx[:, None] == cols[None, :]
    ker_e[self_mask] = 0.0
    ker_i[self_mask] = 0.0
    p = _pair_probabilities(alpha_exc[post_idx], ker_e)
    p += _pair_probabilities(alpha_inh[post_idx], ker_i)
    return p


def build_connectivity(positions: np.ndarray, flags: np.ndarray, params: SimParams,
                       rng: np.random.Generator,
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Draw the synapse table. Returns (in_indptr, in_pre, alpha_exc, alpha_inh)."""
    n = positions.shape[0]
    sig_e2 = 2.0 * params.sigma_e ** 2
    sig_i2 = 2.0 * params.sigma_i ** 2
    alpha_exc = np.zeros(n)
    alpha_inh = np.zeros(n)
    rows: list[np.ndarray] = []
    counts = np.zeros(n, dtype=np.int64)

    # Block size is a function of n only, so the uniform-draw stream (and
    # hence the sampled graph) is independent of memory tuning.
    block = max(1, (1 << 21) // max(n, 1))
    for start in range(0, n, block):
        stop = min(start + block, n)
        idx = np.arange(start, stop)
        d2 = ((positions[idx][:, None, :] - positions[None, :, :]) ** 2).sum(axis=2)
        ker_e = np.exp(-d2 / sig_e2)
        ker_i = np.exp(-d2 / sig_i2)
        ker_e[:, ~flags] = 0.0
        ker_i[:, flags] = 0.0
        cols = np.arange(n)
        self_mask = idx[:, None] == cols[None, :]
        ker_e[self_mask] = 0.0
        ker_i[self_mask] = 0.0

        a_e = _solve_block_amplitudes(ker_e, params.k_exc)
        a_i = _solve_block_amplitudes(ker_i, params.k_inh)
        alpha_exc[idx] = a_e
        alpha_inh[idx] = a_i

        p = _pair_probabilities(a_e, ker_e) + _pair_probabilities(a_i, ker_i)
        u = rng.random((stop - start, n))
        hit = u < p
        for r in range(stop - start):
            pre = np.flatnonzero(hit[r]).astype(np.int32)
            rows.append(pre)
            counts[start + r] = pre.size

    in_indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=in_indptr[1:])
    in_pre = (np.concatenate(rows) if rows else np.empty(0)).astype(np.int32)
    return in_indptr, in_pre, alpha_exc, alpha_inh


def init_weights(in_indptr: np.ndarray, in_pre: np.ndarray, flags: np.ndarray,
                 params: SimParams, rng: np.random.Generator,
                 ) -> tuple[np.ndarray, float, float]:
    """Uniform(0,1) draws rescaled to the per-neuron input-sum targets.

    Returns (weights, w_max_exc, w_max_inh); the caps resolve ``w_max=None``
    to 10x the post-scaling mean weight of each synapse type.
    """
    n = in_indptr.shape[0] - 1
    nnz = in_pre.shape[0]
    w = rng.random(nnz)
    post_of = np.repeat(np.arange(n), np.diff(in_indptr))
    pre_exc = flags[in_pre] if nnz else np.zeros(0, dtype=bool)

    for mask, strength in ((pre_exc, params.exc_strength),
                           (~pre_exc, params.inh_strength)):
        if not mask.any():
            continue
        sums = np.bincount(post_of[mask], weights=w[mask], minlength=n)
        scale = np.ones(n)
        nz = sums > 0
        scale[nz] = strength / sums[nz]
        w[mask] *= scale[post_of[mask]]

    if params.w_max is not None:
        return w, float(params.w_max), float(params.w_max)
    w_max_exc = 10.0 * float(w[pre_exc].mean()) if pre_exc.any() else np.inf
    w_max_inh = 10.0 * float(w[~pre_exc].mean()) if (~pre_exc).any() else np.inf
    return w, w_max_exc, w_max_inh


def electrode_coupling(positions: np.ndarray, grid: MeaGrid, params: SimParams,
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaussian electrode-to-neuron coupling, sparsified below the cutoff."""
    centers = grid.centers()
    neuron_rows: list[np.ndarray] = []
    value_rows: list[np.ndarray] = []
    counts = np.zeros(grid.n_electrodes, dtype=np.int64)
    for e in range(grid.n_electrodes):
        d2 = ((positions - centers[e]) ** 2).sum(axis=1)
        c = np.exp(-d2 / (2.0 * params.sigma_stim ** 2))
        keep = np.flatnonzero(c >= COUPLING_CUTOFF)
        neuron_rows.append(keep.astype(np.int32))
        value_rows.append(c[keep])
        counts[e] = keep.size
    coup_indptr = np.zeros(grid.n_electrodes + 1, dtype=np.int64)
    np.cumsum(counts, out=coup_indptr[1:])
    coup_neuron = (np.concatenate(neuron_rows) if neuron_rows
                   else np.empty(0)).astype(np.int32)
    coup_value = (np.concatenate(value_rows) if value_rows
                  else np.empty(0)).astype(np.float64)
    return coup_indptr, coup_neuron, coup_value


def generate(params: SimParams) -> Culture:
    """Build a full culture from a validated parameter set (seeded, deterministic)."""
    require_valid(params)
    rng = np.random.default_rng(params.seed)
    grid = MeaGrid()
    positions, flags = place_neurons(params, rng)
    in_indptr, in_pre, alpha_exc, alpha_inh = build_connectivity(
        positions, flags, params, rng)
    weights, w_max_exc, w_max_inh = init_weights(in_indptr, in_pre, flags, params, rng)
    coup_indptr, coup_neuron, coup_value = electrode_coupling(positions, grid, params)
    return Culture(params=params, positions=positions, is_excitatory=flags,
                   in_indptr=in_indptr, in_pre=in_pre, weights=weights,
                   coup_indptr=coup_indptr, coup_neuron=coup_neuron,
                   coup_value=coup_value, w_max_exc=w_max_exc, w_max_inh=w_max_inh,
                   alpha_exc=alpha_exc, alpha_inh=alpha_inh, grid=grid)


def from_synapses(positions, is_excitatory, pre, post, weights, params: SimParams,
                  w_max_exc: float | None = None,
                  w_max_inh: float | None = None) -> Culture:
    """Assemble a culture from an explicit synapse list (testing and tooling).

    Synapses are given as parallel (pre, post, weight-magnitude) sequences and
    re-sorted into the canonical by-postsynaptic layout.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    flags = np.asarray(is_excitatory, dtype=bool)
    n = positions.shape[0]
    pre = np.asarray(pre, dtype=np.int32)
    post = np.asarray(post, dtype=np.int32)
    weights = np.asarray(weights, dtype=np.float64).copy()
    if np.any(pre == post):
        raise ValueError("self-connections are not allowed")
    order = np.lexsort((pre, post))
    pre, post, weights = pre[order], post[order], weights[order]
    in_indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(post, minlength=n), out=in_indptr[1:])
    grid = MeaGrid()
    coup_indptr, coup_neuron, coup_value = electrode_coupling(positions, grid, params)
    cap_e = w_max_exc if w_max_exc is not None else (params.w_max or np.inf)
    cap_i = w_max_inh if w_max_inh is not None else (params.w_max or np.inf)
    return Culture(params=params, positions=positions, is_excitatory=flags,
                   in_indptr=in_indptr, in_pre=pre, weights=weights,
                   coup_indptr=coup_indptr, coup_neuron=coup_neuron,
                   coup_value=coup_value, w_max_exc=float(cap_e),
                   w_max_inh=float(cap_i), alpha_exc=np.zeros(n),
                   alpha_inh=np.zeros(n), grid=grid)


# ---------------------------------------------------------------------------
# Snapshot file format (binary, versioned, little-endian)
# ---------------------------------------------------------------------------
#
#   magic   8 bytes  b"MEACULTR"
#   version u32
#   n       u64      neuron count
#   nnz     u64      synapse count
#   ncoup   u64      coupling triplet count
#   w_max_exc f64, w_max_inh f64
#   params  u32 byte-length + utf-8 key=value text
#   arrays, raw little-endian, in this order:
#     positions f64 (n*2), is_excitatory u8 (n), in_indptr i64 (n+1),
#     in_pre i32 (nnz), weights f64 (nnz), alpha_exc f64 (n), alpha_inh f64 (n),
#     coup_indptr i64 (61), coup_neuron i32 (ncoup), coup_value f64 (ncoup)

def save_culture(culture: Culture, path) -> None:
    buf = io.BytesIO()
    buf.write(_SNAPSHOT_MAGIC)
    params_text = serialize_params(culture.params).encode("utf-8")
    buf.write(struct.pack("<IQQQdd", _SNAPSHOT_VERSION, culture.n_neurons,
                          culture.n_synapses, culture.coup_neuron.shape[0],
                          culture.w_max_exc, culture.w_max_inh))
    buf.write(struct.pack("<I", len(params_text)))
    buf.write(params_text)
    for arr, dtype in ((culture.positions, "<f8"),
                       (culture.is_excitatory, "u1"),
                       (culture.in_indptr, "<i8"),
                       (culture.in_pre, "<i4"),
                       (culture.weights, "<f8"),
                       (culture.alpha_exc, "<f8"),
                       (culture.alpha_inh, "<f8"),
                       (culture.coup_indptr, "<i8"),
                       (culture.coup_neuron, "<i4"),
                       (culture.coup_value, "<f8")):
        buf.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_array(fh, dtype: str, count: int) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    raw = fh.read(itemsize * count)
    if len(raw) != itemsize * count:
        raise ValueError("truncated culture snapshot")
    return np.frombuffer(raw, dtype=dtype).copy()


def load_culture(path) -> Culture:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _SNAPSHOT_MAGIC:
            raise ValueError(f"not a culture snapshot (magic {magic!r})")
        version, n, nnz, ncoup, w_max_exc, w_max_inh = struct.unpack(
            "<IQQQdd", fh.read(4 + 8 * 3 + 8 * 2))
        if version != _SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        (plen,) = struct.unpack("<I", fh.read(4))
        params = parse_params(fh.read(plen).decode("utf-8"))
        grid = MeaGrid()
        positions = _read_array(fh, "<f8", n * 2).reshape(n, 2)
        flags = _read_array(fh, "u1", n).astype(bool)
        in_indptr = _read_array(fh, "<i8", n + 1)
        in_pre = _read_array(fh, "<i4", nnz)
        weights = _read_array(fh, "<f8", nnz)
        alpha_exc = _read_array(fh, "<f8", n)
        alpha_inh = _read_array(fh, "<f8", n)
        coup_indptr = _read_array(fh, "<i8", grid.n_electrodes + 1)
        coup_neuron = _read_array(fh, "<i4", ncoup)
        coup_value = _read_array(fh, "<f8", ncoup)
    return Culture(params=params, positions=positions, is_excitatory=flags,
                   in_indptr=in_indptr, in_pre=in_pre, weights=weights,
                   coup_indptr=coup_indptr, coup_neuron=coup_neuron,
                   coup_value=coup_value, w_max_exc=w_max_exc, w_max_inh=w_max_inh,
                   alpha_exc=alpha_exc, alpha_inh=alpha_inh, grid=grid)
