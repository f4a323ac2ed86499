"""Per-run derived quantities and across-run statistics.

Standard deviations are sample standard deviations (n - 1 denominator). A
single value has an undefined sd, stored as ``None`` rather than 0.
"""

from __future__ import annotations

import math
import statistics
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any

from .errors import DataError, DegenerateRunError, DomainError, InsufficientDataError

if TYPE_CHECKING:
    from .orchestrator import RunRecord


@dataclass(frozen=True)
class AggregateStats:
    mean: float
    sd: float | None
    n: int
    unit: str = ""

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DomainError("AggregateStats needs n >= 1")
        if self.sd is not None and self.sd < 0:
            raise DomainError("sd must be non-negative")
        if self.n == 1 and self.sd is not None:
            object.__setattr__(self, "sd", None)

    @property
    def sd_defined(self) -> bool:
        return self.sd is not None

    @property
    def sd_or_zero(self) -> float:
        return 0.0 if self.sd is None else self.sd

    def scaled(self, factor: float, unit: str | None = None) -> AggregateStats:
        sd = None if self.sd is None else self.sd * abs(factor)
        return AggregateStats(self.mean * factor, sd, self.n, self.unit if unit is None else unit)

    def to_dict(self) -> dict[str, Any]:
        return {"mean": self.mean, "sd": self.sd, "n": self.n, "unit": self.unit}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AggregateStats:
        return cls(d["mean"], d.get("sd"), d["n"], d.get("unit", ""))


def aggregate(values: Iterable[float], unit: str = "") -> AggregateStats:
    data = [float(v) for v in values]
    if not data:
        raise InsufficientDataError("cannot aggregate an empty list")
    mean = math.fsum(data) / len(data)
    sd = statistics.stdev(data) if len(data) > 1 else None
    return AggregateStats(mean, sd, len(data), unit)


def pool(groups: Sequence[AggregateStats], unit: str | None = None) -> AggregateStats:
    """Statistics of the concatenation of several groups, from their summaries.

    Exact for mean and sample sd: the pooled sum of squares is the within-group
    part plus the between-group part.
    """
    if not groups:
        raise InsufficientDataError("cannot pool zero groups")
    n = sum(g.n for g in groups)
    mean = math.fsum(g.n * g.mean for g in groups) / n
    ss = math.fsum((g.n - 1) * g.sd_or_zero**2 + g.n * (g.mean - mean) ** 2 for g in groups)
    sd = math.sqrt(ss / (n - 1)) if n > 1 else None
    return AggregateStats(mean, sd, n, groups[0].unit if unit is None else unit)


def ratio_stats(num: AggregateStats, den: AggregateStats, unit: str = "") -> AggregateStats:
    """First-order estimate of the stats of num/den, assuming independence."""
    if den.mean == 0:
        raise DomainError("denominator mean is zero")
    mean = num.mean / den.mean
    rel = math.hypot(
        num.sd_or_zero / num.mean if num.mean else 0.0,
        den.sd_or_zero / den.mean,
    )
    return AggregateStats(mean, abs(mean) * rel, min(num.n, den.n), unit)


@dataclass(frozen=True)
class RunDerived:
    run_index: int
    time_per_token_s: float
    power_w: float | None = None
    energy_per_token_mwh: float | None = None


def derive_run(run: RunRecord) -> RunDerived:
    if not run.valid:
        raise DataError(f"run {run.run_index} is invalid")
    if run.total_tokens <= 0:
        raise DegenerateRunError(f"run {run.run_index} produced no tokens")
    if run.total_wall_time_s <= 0:
        raise DegenerateRunError(f"run {run.run_index} has zero duration")
    t_token = run.total_wall_time_s / run.total_tokens
    if run.energy is None:
        if run.deployment_kind == "local":
            raise DataError(f"local run {run.run_index} has no energy measurement")
        return RunDerived(run.run_index, t_token)
    e_wh = run.energy.energy_wh
    return RunDerived(
        run.run_index,
        t_token,
        power_w=e_wh * 3600.0 / run.total_wall_time_s,
        energy_per_token_mwh=e_wh / run.total_tokens * 1000.0,
    )


def mean_power(runs: Sequence[RunDerived]) -> float:
    """Mean of per-run average power (not total energy over total time)."""
    if len(runs) < 2:
        raise InsufficientDataError(f"mean power needs at least 2 local runs, got {len(runs)}")
    if any(r.power_w is None for r in runs):
        raise DataError("every run needs a power value")
    return math.fsum(r.power_w for r in runs) / len(runs)


@dataclass(frozen=True)
class ExperimentSummary:
    """Across-run statistics of one (model, deployment, GPU) experiment.

    Built from persisted runs by :func:`summarize_runs` or directly from
    published summary figures. ``t_token_runs`` holds raw per-run values when
    they are known.
    """

    id: str
    model: str
    kind: str
    gpu: str | None
    time_s: AggregateStats
    tokens: AggregateStats
    t_token_s: AggregateStats
    energy_wh: AggregateStats | None = None
    energy_per_token_mwh: AggregateStats | None = None
    power_w: AggregateStats | None = None
    t_token_runs: tuple[float, ...] = field(default=())
    runs_total: int = 0

    @property
    def is_local(self) -> bool:
        return self.kind == "local"

    @property
    def tier(self) -> str | None:
        return {"api_free": "free", "api_paid": "paid"}.get(self.kind)

    @property
    def sufficient(self) -> bool:
        return self.time_s.n >= 2

    def to_dict(self) -> dict[str, Any]:
        def opt(s):
            return None if s is None else s.to_dict()

        return {
            "id": self.id,
            "model": self.model,
            "kind": self.kind,
            "gpu": self.gpu,
            "time_s": self.time_s.to_dict(),
            "tokens": self.tokens.to_dict(),
            "t_token_s": self.t_token_s.to_dict(),
            "energy_wh": opt(self.energy_wh),
            "energy_per_token_mwh": opt(self.energy_per_token_mwh),
            "power_w": opt(self.power_w),
            "t_token_runs": list(self.t_token_runs),
            "runs_total": self.runs_total,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExperimentSummary:
        def opt(key):
            return None if d.get(key) is None else AggregateStats.from_dict(d[key])

        return cls(
            id=d["id"],
            model=d["model"],
            kind=d["kind"],
            gpu=d.get("gpu"),
            time_s=AggregateStats.from_dict(d["time_s"]),
            tokens=AggregateStats.from_dict(d["tokens"]),
            t_token_s=AggregateStats.from_dict(d["t_token_s"]),
            energy_wh=opt("energy_wh"),
            energy_per_token_mwh=opt("energy_per_token_mwh"),
            power_w=opt("power_w"),
            t_token_runs=tuple(d.get("t_token_runs", ())),
            runs_total=d.get("runs_total", 0),
        )

    def with_id(self, new_id: str) -> ExperimentSummary:
        return replace(self, id=new_id)


def summarize_runs(
    runs: Sequence[RunRecord],
    *,
    experiment_id: str,
    model: str,
    kind: str,
    gpu: str | None = None,
) -> ExperimentSummary:
    """Aggregate the valid runs of one experiment. Invalid runs are skipped."""
    valid = [r for r in runs if r.valid]
    if not valid:
        raise InsufficientDataError(f"experiment {experiment_id} has no valid runs")
    derived = [derive_run(r) for r in valid]
    energy = [r.energy.energy_wh for r in valid if r.energy is not None]
    has_energy = len(energy) == len(valid)
    return ExperimentSummary(
        id=experiment_id,
        model=model,
        kind=kind,
        gpu=gpu,
        time_s=aggregate((r.total_wall_time_s for r in valid), "s"),
        tokens=aggregate((r.total_tokens for r in valid), "tokens"),
        t_token_s=aggregate((d.time_per_token_s for d in derived), "s/token"),
        energy_wh=aggregate(energy, "Wh") if has_energy else None,
        energy_per_token_mwh=(
            aggregate((d.energy_per_token_mwh for d in derived), "mWh/token") if has_energy else None
        ),
        power_w=aggregate((d.power_w for d in derived), "W") if has_energy else None,
        t_token_runs=tuple(d.time_per_token_s for d in derived),
        runs_total=len(runs),
    )
