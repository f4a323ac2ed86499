"""Experiment protocol: repeated passes over the fixed prompt sequence.

Each pass issues the suite in order, ``batch_size`` requests at a time, and
waits for a whole window to finish before starting the next one. Local passes
sample board power for the duration of the pass. After every pass the run is
appended to a newline-delimited log, so an interrupted experiment can resume.
"""

from __future__ import annotations

import asyncio
import datetime as dt
import hashlib
import json
import logging
import os
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

import httpx

from .client import ChatClient, EndpointConfig, RequestRecord
from .errors import ConfigError, GapError, InsufficientDataError, PersistenceError
from .metrics import ExperimentSummary, summarize_runs
from .power import EnergyMeasurement, integrate_devices, write_trace_csv
from .prompts import BenchmarkSuite
from .simulation import run_virtual

log = logging.getLogger(__name__)

WallClock = Callable[[], dt.datetime]


class Sampler(Protocol):
    def start(self, clock: Callable[[], float]) -> Any: ...

    def describe(self) -> dict: ...


def parse_slot(value: str | dt.time) -> dt.time:
    if isinstance(value, dt.time):
        return value
    try:
        return dt.time.fromisoformat(value)
    except ValueError:
        raise ConfigError(f"invalid time-of-day slot {value!r}; expected HH:MM") from None


@dataclass(frozen=True)
class RunConfig:
    suite_ref: str
    endpoint: EndpointConfig
    passes: int = 10
    batch_size: int = 8
    schedule: tuple[dt.time, ...] = ()
    sampler: Sampler | None = None
    gpu: str | None = None
    count_prompt_tokens: bool = False
    model_label: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "schedule", tuple(parse_slot(s) for s in self.schedule))
        if self.passes < 1:
            raise ConfigError("passes must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        local = self.endpoint.deployment_kind == "local"
        if local and self.sampler is None:
            raise ConfigError("local runs need a power sampler")
        if not local and self.sampler is not None:
            raise ConfigError("API runs cannot have a power sampler")

    @property
    def is_local(self) -> bool:
        return self.endpoint.deployment_kind == "local"

    @property
    def model(self) -> str:
        """Model name shared by local and API runs; defaults to the served id."""
        return self.model_label or self.endpoint.model_id

    def to_dict(self) -> dict[str, Any]:
        return {
            "suite_ref": self.suite_ref,
            "endpoint": self.endpoint.public_dict(),
            "passes": self.passes,
            "batch_size": self.batch_size,
            "schedule": [s.isoformat(timespec="minutes") for s in self.schedule],
            "sampler": None if self.sampler is None else self.sampler.describe(),
            "gpu": self.gpu,
            "count_prompt_tokens": self.count_prompt_tokens,
            "model": self.model,
        }

    @property
    def checksum(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @property
    def experiment_id(self) -> str:
        return self.checksum[:16]


@dataclass(frozen=True)
class RunRecord:
    run_index: int
    config_ref: str
    requests: tuple[RequestRecord, ...]
    total_wall_time_s: float
    total_tokens: int
    energy: EnergyMeasurement | None
    started_at: str
    deployment_kind: str = "local"
    valid: bool = True
    invalid_reason: str | None = None
    scheduled_slot: str | None = None
    dropped_samples: int = 0

    def summary_dict(self) -> dict[str, Any]:
        return {
            "run_index": self.run_index,
            "config_ref": self.config_ref,
            "total_wall_time_s": self.total_wall_time_s,
            "total_tokens": self.total_tokens,
            "energy": None if self.energy is None else self.energy.to_dict(),
            "started_at": self.started_at,
            "deployment_kind": self.deployment_kind,
            "valid": self.valid,
            "invalid_reason": self.invalid_reason,
            "scheduled_slot": self.scheduled_slot,
            "dropped_samples": self.dropped_samples,
            "request_count": len(self.requests),
        }

    @classmethod
    def from_log(cls, summary: dict[str, Any], requests: Sequence[RequestRecord]) -> RunRecord:
        d = dict(summary)
        d.pop("request_count", None)
        energy = d.pop("energy")
        return cls(
            requests=tuple(requests),
            energy=None if energy is None else EnergyMeasurement.from_dict(energy),
            **d,
        )


def count_run_tokens(requests: Sequence[RequestRecord], include_prompt: bool = False) -> int:
    ok = [r for r in requests if r.succeeded]
    total = sum(r.completion_tokens for r in ok)
    if include_prompt:
        total += sum(r.prompt_tokens for r in ok)
    return total


async def execute_pass_async(
    suite: BenchmarkSuite,
    config: RunConfig,
    run_index: int,
    client: ChatClient,
    *,
    wall_clock: WallClock = dt.datetime.now,
    scheduled_slot: str | None = None,
    trace_path: Path | None = None,
) -> RunRecord:
    if suite.checksum != config.suite_ref:
        raise ConfigError(f"suite checksum {suite.checksum[:12]} does not match config {config.suite_ref[:12]}")
    loop = asyncio.get_running_loop()
    started_at = wall_clock().isoformat()

    session = config.sampler.start(loop.time) if config.is_local else None
    records: list[RequestRecord] = []
    try:
        prompts = suite.prompts
        for i in range(0, len(prompts), config.batch_size):
            window = prompts[i : i + config.batch_size]
            records.extend(await asyncio.gather(*(client.send_chat(p) for p in window)))
    finally:
        traces = session.stop() if session is not None else None

    t_first = min(r.start_time for r in records)
    t_last = max(r.end_time for r in records)
    failed = [r.prompt_id for r in records if r.status == "failed"]
    valid = not failed
    reason = f"failed requests: {failed}" if failed else None

    energy = None
    if traces is not None:
        if trace_path is not None:
            write_trace_csv(traces, trace_path)
        if t_last > t_first:
            try:
                energy = integrate_devices(traces, t_first, t_last, session.source)
            except (GapError, InsufficientDataError) as exc:
                valid, reason = False, f"energy integration failed: {exc}"
        else:
            valid, reason = False, "zero-length pass"

    return RunRecord(
        run_index=run_index,
        config_ref=config.checksum,
        requests=tuple(records),
        total_wall_time_s=t_last - t_first,
        total_tokens=count_run_tokens(records, config.count_prompt_tokens),
        energy=energy,
        started_at=started_at,
        deployment_kind=config.endpoint.deployment_kind,
        valid=valid,
        invalid_reason=reason,
        scheduled_slot=scheduled_slot,
        dropped_samples=getattr(session, "dropped_count", 0),
    )


# -- persistence ------------------------------------------------------------


@dataclass
class RunStore:
    """Run logs under ``<root>/runs`` and power traces under ``<root>/traces``."""

    root: Path

    def __post_init__(self) -> None:
        self.root = Path(self.root)

    def log_path(self, experiment_id: str) -> Path:
        return self.root / "runs" / f"{experiment_id}.jsonl"

    def trace_path(self, experiment_id: str, run_index: int) -> Path:
        return self.root / "traces" / experiment_id / f"pass_{run_index:03d}.csv"

    def exists(self, experiment_id: str) -> bool:
        return self.log_path(experiment_id).exists()

    def experiment_ids(self) -> list[str]:
        runs = self.root / "runs"
        return sorted(p.stem for p in runs.glob("*.jsonl")) if runs.exists() else []

    def create(self, config: RunConfig, suite: BenchmarkSuite, force: bool = False) -> None:
        path = self.log_path(config.experiment_id)
        if path.exists() and not force:
            raise PersistenceError(f"{path} exists; resume it or pass force to overwrite")
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "type": "header",
            "experiment_id": config.experiment_id,
            "config_ref": config.checksum,
            "config": config.to_dict(),
            "model": config.model,
            "kind": config.endpoint.deployment_kind,
            "gpu": config.gpu,
            "suite_checksum": suite.checksum,
            "suite_size": len(suite),
        }
        path.write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")

    def append(self, experiment_id: str, run: RunRecord) -> None:
        lines = [
            json.dumps({"type": "request", "run_index": run.run_index, **r.to_dict()}, sort_keys=True)
            for r in run.requests
        ]
        lines.append(json.dumps({"type": "pass", **run.summary_dict()}, sort_keys=True))
        with open(self.log_path(experiment_id), "a", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def rewrite(self, experiment_id: str, header: dict[str, Any], runs: Sequence[RunRecord]) -> None:
        """Rewrite a log from parsed records, dropping any torn trailing line."""
        path = self.log_path(experiment_id)
        tmp = path.with_suffix(".jsonl.tmp")
        tmp.write_text(json.dumps({"type": "header", **header}, sort_keys=True) + "\n", encoding="utf-8")
        tmp.replace(path)
        for run in runs:
            self.append(experiment_id, run)

    def load(self, experiment_id: str) -> tuple[dict[str, Any], list[RunRecord]]:
        path = self.log_path(experiment_id)
        if not path.exists():
            raise PersistenceError(f"no run log for experiment {experiment_id!r}")
        header: dict[str, Any] | None = None
        pending: dict[int, list[RequestRecord]] = {}
        runs: list[RunRecord] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    # A torn final line from a crash mid-write; everything after it is unusable.
                    log.warning("%s:%d: truncated record ignored", path, lineno)
                    break
                kind = rec.pop("type")
                if kind == "header":
                    header = rec
                elif kind == "request":
                    idx = rec.pop("run_index")
                    pending.setdefault(idx, []).append(RequestRecord.from_dict(rec))
                elif kind == "pass":
                    runs.append(RunRecord.from_log(rec, pending.pop(rec["run_index"], [])))
        if header is None:
            raise PersistenceError(f"{path} has no header record")
        return header, runs

    def summary(self, experiment_id: str) -> ExperimentSummary:
        header, runs = self.load(experiment_id)
        return summarize_runs(
            runs,
            experiment_id=experiment_id,
            model=header["model"],
            kind=header["kind"],
            gpu=header.get("gpu"),
        )


# -- experiment -------------------------------------------------------------


def seconds_until(slot: dt.time, now: dt.datetime) -> float:
    target = now.replace(hour=slot.hour, minute=slot.minute, second=slot.second, microsecond=0)
    if target < now:
        target += dt.timedelta(days=1)
    return (target - now).total_seconds()


async def run_experiment_async(
    suite: BenchmarkSuite,
    config: RunConfig,
    *,
    transport: httpx.AsyncBaseTransport | None = None,
    store: RunStore | None = None,
    resume: bool = False,
    force: bool = False,
    wall_clock: WallClock = dt.datetime.now,
    on_pass: Callable[[RunRecord], None] | None = None,
) -> list[RunRecord]:
    exp_id = config.experiment_id
    runs: list[RunRecord] = []
    if store is not None:
        if resume and store.exists(exp_id):
            header, runs = store.load(exp_id)
            if header["config_ref"] != config.checksum:
                raise PersistenceError("stored run log belongs to a different configuration")
            runs = [r for r in runs if r.run_index < config.passes]
            store.rewrite(exp_id, header, runs)
            log.info("resuming %s after %d completed passes", exp_id, len(runs))
        else:
            store.create(config, suite, force=force)

    async with ChatClient(config.endpoint, transport=transport) as client:
        for index in range(len(runs), config.passes):
            slot = None
            if config.schedule and not config.is_local:
                chosen = config.schedule[index % len(config.schedule)]
                slot = chosen.isoformat(timespec="minutes")
                delay = seconds_until(chosen, wall_clock())
                log.info("pass %d waits %.0f s for slot %s", index, delay, slot)
                await asyncio.sleep(delay)
            trace_path = store.trace_path(exp_id, index) if store is not None and config.is_local else None
            run = await execute_pass_async(
                suite,
                config,
                index,
                client,
                wall_clock=wall_clock,
                scheduled_slot=slot,
                trace_path=trace_path,
            )
            if store is not None:
                store.append(exp_id, run)
            runs.append(run)
            log.info(
                "pass %d: T=%.2f s, tokens=%d, valid=%s", index, run.total_wall_time_s, run.total_tokens, run.valid
            )
            if on_pass is not None:
                on_pass(run)

    if sum(r.valid for r in runs) < 2:
        log.warning("experiment %s has fewer than 2 valid runs; it cannot be aggregated", exp_id)
    return runs


def execute_experiment(
    suite: BenchmarkSuite,
    config: RunConfig,
    *,
    virtual_time: bool = False,
    **kwargs,
) -> list[RunRecord]:
    """Run ``config.passes`` passes sequentially.

    With ``virtual_time`` the experiment runs on a simulated clock, which is
    only meaningful with mock transports and replayed power traces.
    """
    coro = run_experiment_async(suite, config, **kwargs)
    return run_virtual(coro) if virtual_time else asyncio.run(coro)


def execute_pass(
    suite: BenchmarkSuite,
    config: RunConfig,
    run_index: int = 0,
    *,
    transport: httpx.AsyncBaseTransport | None = None,
    virtual_time: bool = False,
    wall_clock: WallClock = dt.datetime.now,
) -> RunRecord:
    async def _run() -> RunRecord:
        async with ChatClient(config.endpoint, transport=transport) as client:
            return await execute_pass_async(suite, config, run_index, client, wall_clock=wall_clock)

    return run_virtual(_run()) if virtual_time else asyncio.run(_run())


def valid_runs(runs: Sequence[RunRecord]) -> list[RunRecord]:
    return [r for r in runs if r.valid]

