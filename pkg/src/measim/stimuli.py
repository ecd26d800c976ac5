"""Stimulus construction: electrode pulse programs for every experiment.

A program is an immutable, time-sorted schedule of (time, electrode row,
electrode col) pulse events with a total duration. Rows/cols are 1-based on
the 6x10 grid. Builders cover the L-shaped tetanization patterns, single-pulse
probes, rate-coded digit images, and the class-label teacher stimulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GRID_ROWS = 6
GRID_COLS = 10
IMAGE_COLS = 6          # digit pixels map to columns 1..6
TEACHER_COL = 10
PROBE_AT_MS = 50.0
PROBE_WINDOW_MS = 150.0
DIGIT_WINDOW_MS = 100.0
DIGIT_MAX_RATE_HZ = 200.0
TEACHER_RATE_HZ = 200.0
TETANUS_RATE_HZ = 250.0
TETANUS_PULSES = 100


@dataclass(frozen=True)
class StimulusProgram:
    """Sorted schedule of electrode pulses driving one simulation run."""

    times: np.ndarray  # float64 ms
    rows: np.ndarray   # int32, 1-based
    cols: np.ndarray   # int32, 1-based
    duration: float

    @property
    def n_events(self) -> int:
        return self.times.shape[0]

    def shifted(self, offset: float) -> "StimulusProgram":
        return StimulusProgram(times=self.times + offset, rows=self.rows,
                               cols=self.cols, duration=self.duration + offset)

    def with_duration(self, duration: float) -> "StimulusProgram":
        if self.times.size and duration <= self.times.max():
            raise ValueError("duration must exceed the last event time")
        return StimulusProgram(times=self.times, rows=self.rows,
                               cols=self.cols, duration=float(duration))


def make_program(times, rows, cols, duration: float) -> StimulusProgram:
    """Validate, sort, and freeze a pulse schedule."""
    times = np.asarray(times, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int32)
    cols = np.asarray(cols, dtype=np.int32)
    if not (times.shape == rows.shape == cols.shape):
        raise ValueError("times/rows/cols must have equal length")
    if times.size:
        if times.min() < 0 or times.max() >= duration:
            raise ValueError("event times must lie in [0, duration)")
        if rows.min() < 1 or rows.max() > GRID_ROWS:
            raise ValueError(f"electrode rows must be in 1..{GRID_ROWS}")
        if cols.min() < 1 or cols.max() > GRID_COLS:
            raise ValueError(f"electrode cols must be in 1..{GRID_COLS}")
        order = np.lexsort((cols, rows, times))
        times, rows, cols = times[order], rows[order], cols[order]
    return StimulusProgram(times=times, rows=rows, cols=cols, duration=float(duration))


def empty_program(duration: float = 0.0) -> StimulusProgram:
    return make_program(np.empty(0), np.empty(0, dtype=np.int32),
                        np.empty(0, dtype=np.int32), duration)


@dataclass(frozen=True)
class DigitImage:
    """A 6x6 intensity image in [0,1] with its digit label (0 or 1)."""

    pixels: np.ndarray
    label: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.shape != (6, 6):
            raise ValueError(f"expected 6x6 pixels, got {px.shape}")
        if px.min() < 0 or px.max() > 1:
            raise ValueError("pixel intensities must lie in [0,1]")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        object.__setattr__(self, "pixels", px)


# ---------------------------------------------------------------------------
# Pattern geometry
# ---------------------------------------------------------------------------

def l_pattern(kind: str) -> tuple[tuple[int, int], ...]:
    """Electrodes of the L-shaped pattern: a full row plus the left column.

    ``regL`` uses the bottom row, ``upsL`` the top row (the vertical flip of
    regL; a literal transpose does not fit the 6x10 grid).
    """
    if kind == "regL":
        bar_row = GRID_ROWS
    elif kind == "upsL":
        bar_row = 1
    else:
        raise ValueError(f"unknown pattern kind {kind!r} (expected regL or upsL)")
    electrodes = {(bar_row, c) for c in range(1, GRID_COLS + 1)}
    electrodes |= {(r, 1) for r in range(1, GRID_ROWS + 1)}
    return tuple(sorted(electrodes))


def flip_pattern(pattern) -> tuple[tuple[int, int], ...]:
    """Vertical flip (row r -> 7-r); an involution mapping regL to upsL."""
    return tuple(sorted((GRID_ROWS + 1 - r, c) for r, c in pattern))


def _pattern_pulses(pattern, pulse_times: np.ndarray, duration: float) -> StimulusProgram:
    pattern = list(pattern)
    n_p = len(pattern)
    times = np.repeat(pulse_times, n_p)
    rows = np.tile(np.array([r for r, _ in pattern], dtype=np.int32), pulse_times.size)
    cols = np.tile(np.array([c for _, c in pattern], dtype=np.int32), pulse_times.size)
    return make_program(times, rows, cols, duration)


def tetanization_program(pattern) -> StimulusProgram:
    """One tetanization train: simultaneous pulses on all pattern electrodes.

    100 pulses at 250 Hz (4 ms spacing) spanning 400 ms.
    """
    if not pattern:
        raise ValueError("pattern must be non-empty")
    period = 1000.0 / TETANUS_RATE_HZ
    pulse_times = np.arange(TETANUS_PULSES) * period
    return _pattern_pulses(pattern, pulse_times, TETANUS_PULSES * period)


def probe_program(pattern) -> StimulusProgram:
    """Response probe: one simultaneous pulse at 50 ms in a 150 ms window."""
    if not pattern:
        raise ValueError("pattern must be non-empty")
    return _pattern_pulses(pattern, np.array([PROBE_AT_MS]), PROBE_WINDOW_MS)


def encode_digit(img: DigitImage, dt: float = 1.0) -> StimulusProgram:
    """Rate-code a digit image onto the left 6x6 electrode subgrid.

    Pixel (r, c) drives electrode (r+1, c+1) with a periodic pulse train at
    rate intensity*200 Hz for 100 ms, first pulse at t=0; the period is
    rounded to the nearest time step. Zero pixels emit nothing.
    """
    n_steps = int(round(DIGIT_WINDOW_MS / dt))
    times, rows, cols = [], [], []
    for r in range(6):
        for c in range(6):
            p = img.pixels[r, c]
            if p <= 0.0:
                continue
            period_steps = max(1, int(round(1000.0 / (p * DIGIT_MAX_RATE_HZ) / dt)))
            pulse_steps = np.arange(0, n_steps, period_steps)
            times.append(pulse_steps * dt)
            rows.append(np.full(pulse_steps.size, r + 1, dtype=np.int32))
            cols.append(np.full(pulse_steps.size, c + 1, dtype=np.int32))
    if not times:
        return empty_program(DIGIT_WINDOW_MS)
    return make_program(np.concatenate(times), np.concatenate(rows),
                        np.concatenate(cols), DIGIT_WINDOW_MS)


def teacher_electrodes(label: int) -> tuple[tuple[int, int], ...]:
    if label == 0:
        return tuple((r, TEACHER_COL) for r in (1, 2, 3))
    if label == 1:
        return tuple((r, TEACHER_COL) for r in (4, 5, 6))
    raise ValueError(f"label must be 0 or 1, got {label}")


def teacher_program(label: int, dt: float = 1.0) -> StimulusProgram:
    """Class-label stimulation: 200 Hz pulses on the label electrodes for 100 ms."""
    n_steps = int(round(DIGIT_WINDOW_MS / dt))
    period_steps = max(1, int(round(1000.0 / TEACHER_RATE_HZ / dt)))
    pulse_times = np.arange(0, n_steps, period_steps) * dt
    return _pattern_pulses(teacher_electrodes(label), pulse_times, DIGIT_WINDOW_MS)


def merge(*programs: StimulusProgram) -> StimulusProgram:
    """Time-sorted union of programs; coincident pulses on one electrode collapse."""
    if not programs:
        return empty_program()
    times = np.concatenate([p.times for p in programs])
    rows = np.concatenate([p.rows for p in programs])
    cols = np.concatenate([p.cols for p in programs])
    duration = max(p.duration for p in programs)
    if times.size:
        order = np.lexsort((cols, rows, times))
        times, rows, cols = times[order], rows[order], cols[order]
        keep = np.ones(times.size, dtype=bool)
        dup = ((times[1:] == times[:-1]) & (rows[1:] == rows[:-1])
               & (cols[1:] == cols[:-1]))
        keep[1:] = ~dup
        times, rows, cols = times[keep], rows[keep], cols[keep]
    return make_program(times, rows, cols, duration)


def concat(*programs: StimulusProgram) -> StimulusProgram:
    """Back-to-back concatenation: each program starts when the previous ends."""
    parts = []
    offset = 0.0
    for p in programs:
        parts.append(p.shifted(offset))
        offset += p.duration
    times = np.concatenate([p.times for p in parts]) if parts else np.empty(0)
    rows = np.concatenate([p.rows for p in parts]) if parts else np.empty(0, dtype=np.int32)
    cols = np.concatenate([p.cols for p in parts]) if parts else np.empty(0, dtype=np.int32)
    return make_program(times, rows, cols, offset)


# ---------------------------------------------------------------------------
# Program files: duration header line + time_ms,row,col CSV
# ---------------------------------------------------------------------------

def save_program(program: StimulusProgram, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# duration_ms={program.duration!r}\n")
        fh.write("time_ms,row,col\n")
        for t, r, c in zip(program.times, program.rows, program.cols):
            fh.write(f"{float(t)!r},{int(r)},{int(c)}\n")


def load_program(path) -> StimulusProgram:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# duration_ms="):
            raise ValueError("missing duration header line")
        duration = float(header.split("=", 1)[1])
        column_line = fh.readline().strip()
        if column_line != "time_ms,row,col":
            raise ValueError(f"unexpected column header {column_line!r}")
        times, rows, cols = [], [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            t, r, c = line.split(",")
            times.append(float(t))
            rows.append(int(r))
            cols.append(int(c))
    return make_program(times, rows, cols, duration)
