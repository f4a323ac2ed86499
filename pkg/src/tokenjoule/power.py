"""GPU board-power sampling and trace integration.

A sampler command prints one ``device_id,watts`` line per device each time it
is invoked and exits with status 0. ``nvidia-smi --query-gpu=index,power.draw
--format=csv,noheader,nounits`` satisfies this contract. Traces are stored as
CSV with header ``timestamp_s,device_id,watts``.
"""

from __future__ import annotations

import csv
import io
import logging
import shlex
import subprocess
import threading
import time
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from .errors import (
    DomainError,
    EmptyTraceError,
    GapError,
    InsufficientDataError,
    ParseError,
    SamplerError,
)

log = logging.getLogger(__name__)

DEFAULT_PERIOD = 0.1
GAP_FACTOR = 10
TRACE_HEADER = ("timestamp_s", "device_id", "watts")
NVIDIA_SMI_COMMAND = "nvidia-smi --query-gpu=index,power.draw --format=csv,noheader,nounits"

Clock = Callable[[], float]


@dataclass(frozen=True)
class PowerSample:
    timestamp: float
    watts: float
    device_id: str

    def __post_init__(self) -> None:
        if not self.watts >= 0:
            raise DomainError(f"power must be non-negative, got {self.watts}")


@dataclass(frozen=True)
class PowerTrace:
    device_id: str
    samples: tuple[PowerSample, ...]
    sample_period: float = DEFAULT_PERIOD

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.sample_period <= 0:
            raise DomainError("sample_period must be positive")
        prev = None
        for s in self.samples:
            if s.device_id != self.device_id:
                raise DomainError(f"sample for {s.device_id!r} in trace of {self.device_id!r}")
            if prev is not None and s.timestamp <= prev:
                raise DomainError("sample timestamps must be strictly increasing")
            prev = s.timestamp

    @classmethod
    def from_arrays(
        cls,
        device_id: str,
        timestamps: Iterable[float],
        watts: Iterable[float],
        sample_period: float = DEFAULT_PERIOD,
    ) -> PowerTrace:
        samples = tuple(PowerSample(float(t), float(w), device_id) for t, w in zip(timestamps, watts))
        return cls(device_id, samples, sample_period)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def timestamps(self) -> np.ndarray:
        return np.fromiter((s.timestamp for s in self.samples), dtype=float, count=len(self.samples))

    @property
    def watts(self) -> np.ndarray:
        return np.fromiter((s.watts for s in self.samples), dtype=float, count=len(self.samples))

    def shifted(self, offset: float) -> PowerTrace:
        return PowerTrace.from_arrays(
            self.device_id, self.timestamps + offset, self.watts, self.sample_period
        )


@dataclass(frozen=True)
class EnergyMeasurement:
    energy_wh: float
    span: tuple[float, float]
    device_id: str
    source: str = "sampled"

    def __post_init__(self) -> None:
        if self.energy_wh < 0:
            raise DomainError("energy must be non-negative")
        if not self.span[1] > self.span[0]:
            raise DomainError("energy span must have t_end > t_start")
        if self.source not in ("sampled", "replayed"):
            raise DomainError(f"unknown energy source {self.source!r}")

    def to_dict(self) -> dict:
        return {
            "energy_wh": self.energy_wh,
            "span": list(self.span),
            "device_id": self.device_id,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> EnergyMeasurement:
        return cls(d["energy_wh"], tuple(d["span"]), d["device_id"], d.get("source", "sampled"))


def slice_trace(trace: PowerTrace, t0: float, t1: float) -> PowerTrace:
    """Samples inside ``[t0, t1]`` plus the nearest sample on each side.

    The outer neighbours are kept even when a sample falls exactly on a
    boundary, so the result always brackets the window when the trace allows.
    """
    if not t0 < t1:
        raise DomainError(f"slice needs t0 < t1, got [{t0}, {t1}]")
    ts = trace.timestamps
    if len(ts) == 0 or t1 < ts[0] or t0 > ts[-1]:
        raise EmptyTraceError(f"window [{t0}, {t1}] lies outside trace of {trace.device_id!r}")
    lo = max(int(np.searchsorted(ts, t0, side="left")) - 1, 0)
    hi = min(int(np.searchsorted(ts, t1, side="right")) + 1, len(ts))
    return PowerTrace(trace.device_id, trace.samples[lo:hi], trace.sample_period)


def integrate_energy(
    trace: PowerTrace, t0: float, t1: float, source: str = "sampled"
) -> EnergyMeasurement:
    """Trapezoidal energy over ``[t0, t1]`` in watt-hours.

    Boundary power is interpolated between the neighbouring samples, or
    clamped to the nearest sample when the boundary lies within one sample
    period outside the trace.
    """
    window = slice_trace(trace, t0, t1)
    if len(window) < 2:
        raise InsufficientDataError(f"need at least 2 samples in [{t0}, {t1}], got {len(window)}")
    ts, ws = window.timestamps, window.watts
    slack = trace.sample_period * (1 + 1e-9)
    if ts[0] > t0 + slack or ts[-1] < t1 - slack:
        raise InsufficientDataError(
            f"trace [{ts[0]:.3f}, {ts[-1]:.3f}] does not cover [{t0:.3f}, {t1:.3f}]"
        )
    limit = GAP_FACTOR * trace.sample_period
    for a, b in zip(ts[:-1], ts[1:]):
        if b - a > limit and b > t0 and a < t1:
            raise GapError(f"gap of {b - a:.3f} s at t={a:.3f} exceeds {limit:.3f} s")

    inner = ts[(ts > t0) & (ts < t1)]
    grid = np.concatenate(([t0], inner, [t1]))
    power = np.interp(grid, ts, ws)
    joules = float(np.trapezoid(power, grid))
    return EnergyMeasurement(max(joules, 0.0) / 3600.0, (t0, t1), trace.device_id, source)


def integrate_devices(
    traces: Mapping[str, PowerTrace], t0: float, t1: float, source: str = "sampled"
) -> EnergyMeasurement:
    """Sum of per-device energies over the same window."""
    if not traces:
        raise InsufficientDataError("no device traces to integrate")
    parts = [integrate_energy(traces[d], t0, t1, source) for d in sorted(traces)]
    return EnergyMeasurement(
        sum(p.energy_wh for p in parts), (t0, t1), "+".join(sorted(traces)), source
    )


# -- trace files ------------------------------------------------------------


def _estimate_period(timestamps: Sequence[float]) -> float:
    if len(timestamps) < 2:
        return DEFAULT_PERIOD
    return float(np.median(np.diff(np.asarray(timestamps, dtype=float))))


def read_trace_csv(source: str | Path | IO[str]) -> dict[str, PowerTrace]:
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_trace_csv(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
        raise ParseError(f"trace header must be {','.join(TRACE_HEADER)}", 1)
    rows: dict[str, list[tuple[float, float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError("expected 3 fields", lineno)
        try:
            t, w = float(row[0]), float(row[2])
        except ValueError:
            raise ParseError(f"non-numeric field in {row}", lineno) from None
        rows.setdefault(row[1].strip(), []).append((t, w))
    traces = {}
    for device, pts in rows.items():
        pts.sort()
        ts = [p[0] for p in pts]
        traces[device] = PowerTrace.from_arrays(device, ts, (p[1] for p in pts), _estimate_period(ts))
    return traces


def write_trace_csv(traces: Mapping[str, PowerTrace], target: str | Path | IO[str]) -> None:
    if isinstance(target, (str, Path)):
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", newline="", encoding="utf-8") as fh:
            write_trace_csv(traces, fh)
        return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for device in sorted(traces):
        for s in traces[device].samples:
            writer.writerow([repr(s.timestamp), device, repr(s.watts)])


def traces_to_csv(traces: Mapping[str, PowerTrace]) -> str:
    buf = io.StringIO()
    write_trace_csv(traces, buf)
    return buf.getvalue()


# -- live sampling ----------------------------------------------------------


def parse_sampler_line(line: str) -> tuple[str, float] | None:
    """``"gpu0, 301.5"`` -> ``("gpu0", 301.5)``; None for malformed lines."""
    parts = line.strip().split(",")
    if len(parts) != 2:
        return None
    device = parts[0].strip()
    try:
        watts = float(parts[1])
    except ValueError:
        return None
    if not device or not watts >= 0:
        return None
    return device, watts


class SamplingSession:
    """Background sampler thread. The trace is read only after ``stop``."""

    source = "sampled"

    def __init__(self, command: Sequence[str], period: float, clock: Clock):
        self.command = list(command)
        self.period = period
        self.clock = clock
        self.dropped_count = 0
        self.failed_reads = 0
        self._samples: dict[str, list[PowerSample]] = {}
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._traces: dict[str, PowerTrace] | None = None
        self._lock = threading.Lock()

    def _invoke(self) -> str:
        result = subprocess.run(
            self.command,
            capture_output=True,
            text=True,
            timeout=max(5.0, 10 * self.period),
        )
        if result.returncode != 0:
            raise SamplerError(
                f"sampler exited with status {result.returncode}: {result.stderr.strip()[:200]}"
            )
        return result.stdout

    def _record(self, output: str) -> None:
        now = self.clock()
        for line in output.splitlines():
            if not line.strip():
                continue
            parsed = parse_sampler_line(line)
            if parsed is None:
                self.dropped_count += 1
                continue
            device, watts = parsed
            series = self._samples.setdefault(device, [])
            if series and now <= series[-1].timestamp:
                self.dropped_count += 1
                continue
            series.append(PowerSample(now, watts, device))

    def _read_once(self) -> None:
        try:
            output = self._invoke()
        except (SamplerError, OSError, subprocess.TimeoutExpired) as exc:
            self.failed_reads += 1
            log.warning("power sample failed: %s", exc)
            return
        self._record(output)

    def _run(self) -> None:
        next_at = self.clock() + self.period
        while not self._stop.wait(max(0.0, next_at - self.clock())):
            self._read_once()
            next_at += self.period
            now = self.clock()
            if next_at < now:
                next_at = now + self.period

    def start(self) -> SamplingSession:
        try:
            output = self._invoke()
        except FileNotFoundError as exc:
            raise SamplerError(f"sampler command not found: {self.command[0]}") from exc
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise SamplerError(f"sampler failed to run: {exc}") from exc
        self._record(output)
        if not self._samples:
            raise SamplerError("sampler produced no parseable 'device_id,watts' lines")
        self._thread = threading.Thread(target=self._run, name="power-sampler", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> dict[str, PowerTrace]:
        with self._lock:
            if self._traces is None:
                self._stop.set()
                if self._thread is not None:
                    self._thread.join()
                # Closing read so the trace reaches past the last request.
                self._read_once()
                self._traces = {
                    d: PowerTrace(d, tuple(s), self.period) for d, s in self._samples.items()
                }
        return self._traces

    @property
    def traces(self) -> dict[str, PowerTrace]:
        if self._traces is None:
            raise SamplerError("sampling session still running")
        return self._traces


@dataclass(frozen=True)
class CommandSampler:
    command: str | tuple[str, ...] = NVIDIA_SMI_COMMAND
    period: float = DEFAULT_PERIOD

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise DomainError("sampling period must be positive")

    def argv(self) -> list[str]:
        return shlex.split(self.command) if isinstance(self.command, str) else list(self.command)

    def start(self, clock: Clock = time.monotonic) -> SamplingSession:
        return SamplingSession(self.argv(), self.period, clock).start()

    def describe(self) -> dict:
        return {"kind": "command", "command": self.command, "period": self.period}


def start_sampling(
    sampler_command: str | Sequence[str],
    period: float = DEFAULT_PERIOD,
    clock: Clock = time.monotonic,
) -> SamplingSession:
    """Start background sampling; raises ``SamplerError`` if the first read fails."""
    command = sampler_command if isinstance(sampler_command, str) else tuple(sampler_command)
    return CommandSampler(command, period).start(clock)


class ReplaySession:
    source = "replayed"

    def __init__(self, traces: Mapping[str, PowerTrace], offset: float):
        self.dropped_count = 0
        self.failed_reads = 0
        self._traces = {d: t.shifted(offset) for d, t in traces.items()}

    def stop(self) -> dict[str, PowerTrace]:
        return self._traces

    @property
    def traces(self) -> dict[str, PowerTrace]:
        return self._traces


class ReplaySampler:
    """Substitutes a recorded trace for live sampling.

    On ``start`` the trace is shifted so its first sample coincides with the
    current clock reading.
    """

    def __init__(self, traces: Mapping[str, PowerTrace] | str | Path):
        self.path = None if isinstance(traces, Mapping) else str(traces)
        self.traces = dict(traces) if isinstance(traces, Mapping) else read_trace_csv(traces)
        if not self.traces or not all(len(t) for t in self.traces.values()):
            raise SamplerError("replay trace is empty")

    def start(self, clock: Clock = time.monotonic) -> ReplaySession:
        first = min(t.samples[0].timestamp for t in self.traces.values())
        return ReplaySession(self.traces, clock() - first)

    def describe(self) -> dict:
        if self.path is not None:
            return {"kind": "replay", "path": self.path}
        return {"kind": "replay", "devices": sorted(self.traces)}


def constant_trace(
    watts: float, duration: float, period: float = DEFAULT_PERIOD, device_id: str = "gpu0", start: float = 0.0
) -> PowerTrace:
    n = int(round(duration / period)) + 1
    ts = start + period * np.arange(n)
    return PowerTrace.from_arrays(device_id, ts, np.full(n, float(watts)), period)
