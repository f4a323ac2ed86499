"""Result tables, boxplot data, and the on-disk report bundle.

Machine outputs (CSV) keep full float precision via ``repr``. Markdown
outputs round for reading: at least three significant figures, integer
digits never dropped (1820.4 -> "1820", 9.236 -> "9.24").
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from collections import defaultdict
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .estimator import (
    DEFAULT_SUSTAINED_FACTOR,
    estimate_time_proxy,
    estimate_token_proxy,
    gap_pct,
    round_half_up,
    tdp_energy,
)
from .fleet import (
    MATCH_CAVEAT,
    GpuCatalog,
    build_clusters,
    match_api,
    rank_gpus,
    select_representative,
)
from .errors import InsufficientDataError
from .metrics import AggregateStats, ExperimentSummary

KIND_LABELS = {"local": "Local", "api_free": "Free-API", "api_paid": "Paid-API"}
KIND_ORDER = {"local": 0, "api_free": 1, "api_paid": 2}
NA = "n/a"


@dataclass(frozen=True)
class Unavailable:
    """An experiment that exists but cannot be summarised (e.g. no valid runs)."""

    id: str
    model: str
    kind: str
    gpu: str | None
    reason: str


Experiment = ExperimentSummary | Unavailable


@dataclass
class Table:
    name: str
    columns: tuple[str, ...]
    rows: list[dict[str, Any]] = field(default_factory=list)
    markdown_header: tuple[str, ...] = ()
    markdown_rows: list[tuple[str, ...]] = field(default_factory=list)
    footer: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_csv_value(row.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_markdown(self) -> str:
        header = self.markdown_header or self.columns
        lines = [
            "| " + " | ".join(header) + " |",
            "|" + "|".join("---" for _ in header) + "|",
        ]
        lines += ["| " + " | ".join(r) + " |" for r in self.markdown_rows]
        if self.footer:
            lines += ["", self.footer]
        return "\n".join(lines) + "\n"


def _csv_value(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def fmt_sig(x: float | None, sig: int = 3) -> str:
    if x is None:
        return NA
    if x == 0:
        return "0"
    if not math.isfinite(x):
        return str(x)
    mag = math.floor(math.log10(abs(x)))
    decimals = max(0, sig - 1 - mag)
    return f"{x:.{decimals}f}"


def fmt_pm(stats: AggregateStats | None, sig: int = 3) -> str:
    if stats is None:
        return NA
    sd = fmt_sig(stats.sd, sig) if stats.sd_defined else NA
    return f"{fmt_sig(stats.mean, sig)} ± {sd}"


def _gpu_order(catalog: GpuCatalog, gpu: str | None) -> tuple[int, str]:
    if gpu is None:
        return (len(catalog) + 1, "")
    return (catalog.position(gpu), gpu) if gpu in catalog else (len(catalog), gpu)


def _sorted(experiments: Sequence[Experiment], catalog: GpuCatalog) -> list[Experiment]:
    return sorted(
        experiments,
        key=lambda e: (e.model, KIND_ORDER.get(e.kind, 9), _gpu_order(catalog, e.gpu), e.id),
    )


def _summaries(experiments: Sequence[Experiment]) -> list[ExperimentSummary]:
    return [e for e in experiments if isinstance(e, ExperimentSummary)]


# -- runtime table ----------------------------------------------------------


def emit_runtime_table(experiments: Sequence[Experiment], catalog: GpuCatalog) -> Table:
    table = Table(
        "runtime_table",
        ("model", "type", "gpu", "mean_s", "sd_s", "n", "flag", "source"),
        markdown_header=("Model", "Type", "GPU", "mean ± sd [s]"),
        footer="sd is the sample standard deviation over passes (n - 1 denominator). "
        "GPUs in release order.",
    )
    for e in _sorted(experiments, catalog):
        gpu = e.gpu or "-"
        kind = KIND_LABELS.get(e.kind, e.kind)
        if isinstance(e, Unavailable):
            table.rows.append(
                {"model": e.model, "type": kind, "gpu": gpu, "n": 0, "flag": e.reason, "source": e.id}
            )
            table.markdown_rows.append((e.model, kind, gpu, f"{NA} ({e.reason})"))
            continue
        flag = None if e.sufficient else "insufficient runs"
        table.rows.append(
            {
                "model": e.model,
                "type": kind,
                "gpu": gpu,
                "mean_s": e.time_s.mean,
                "sd_s": e.time_s.sd,
                "n": e.time_s.n,
                "flag": flag,
                "source": e.id,
            }
        )
        cell = fmt_pm(e.time_s)
        table.markdown_rows.append((e.model, kind, gpu, cell + (f" ({flag})" if flag else "")))
    return table


# -- TDP vs measured --------------------------------------------------------


@dataclass(frozen=True)
class EnergyRow:
    model: str
    gpu: str
    total_tokens: float
    tdp_total: AggregateStats
    tdp_per_token: AggregateStats
    measured_total: AggregateStats | None
    measured_per_token: AggregateStats | None
    gap_pct: float | None
    source: str

    @property
    def gap_rounded(self) -> int | None:
        return None if self.gap_pct is None else round_half_up(self.gap_pct)


def energy_row(
    e: ExperimentSummary, catalog: GpuCatalog, sustained_factor: float = DEFAULT_SUSTAINED_FACTOR
) -> EnergyRow:
    tdp = tdp_energy(
        e.gpu, e.time_s.mean, sustained_factor, catalog=catalog, duration_sd_s=e.time_s.sd
    )
    tdp_total = AggregateStats(tdp.total_wh, tdp.sd_wh, e.time_s.n, "Wh")
    tokens = e.tokens.mean
    gap = None
    if e.energy_wh is not None:
        gap = gap_pct(e.energy_wh.mean, tdp.total_wh)
    return EnergyRow(
        model=e.model,
        gpu=e.gpu,
        total_tokens=tokens,
        tdp_total=tdp_total,
        tdp_per_token=tdp_total.scaled(1000.0 / tokens, "mWh/token"),
        measured_total=e.energy_wh,
        measured_per_token=e.energy_per_token_mwh,
        gap_pct=gap,
        source=e.id,
    )


def emit_energy_table(
    experiments: Sequence[Experiment],
    catalog: GpuCatalog,
    sustained_factor: float = DEFAULT_SUSTAINED_FACTOR,
) -> Table:
    table = Table(
        "energy_table",
        (
            "model",
            "gpu",
            "total_tokens",
            "tdp_per_token_mwh",
            "tdp_per_token_sd",
            "tdp_total_wh",
            "tdp_total_sd",
            "measured_per_token_mwh",
            "measured_per_token_sd",
            "measured_total_wh",
            "measured_total_sd",
            "gap_pct",
            "gap_pct_rounded",
            "source",
        ),
        markdown_header=(
            "Model",
            "GPU",
            "Total tokens",
            "TDP per token (mWh)",
            "TDP total (Wh)",
            "Measured per token (mWh)",
            "Measured total (Wh)",
            "Difference (% of measured)",
        ),
        footer=f"TDP columns assume a sustained draw of {sustained_factor:g} x TDP; "
        "they ignore board-level auxiliary power and are a lower bound.",
    )
    locals_ = [e for e in _sorted(_summaries(experiments), catalog) if e.is_local and e.gpu]
    for e in locals_:
        r = energy_row(e, catalog, sustained_factor)

        def sd(s):
            return None if s is None else s.sd

        def mean(s):
            return None if s is None else s.mean

        table.rows.append(
            {
                "model": r.model,
                "gpu": r.gpu,
                "total_tokens": r.total_tokens,
                "tdp_per_token_mwh": r.tdp_per_token.mean,
                "tdp_per_token_sd": r.tdp_per_token.sd,
                "tdp_total_wh": r.tdp_total.mean,
                "tdp_total_sd": r.tdp_total.sd,
                "measured_per_token_mwh": mean(r.measured_per_token),
                "measured_per_token_sd": sd(r.measured_per_token),
                "measured_total_wh": mean(r.measured_total),
                "measured_total_sd": sd(r.measured_total),
                "gap_pct": r.gap_pct,
                "gap_pct_rounded": r.gap_rounded,
                "source": r.source,
            }
        )
        table.markdown_rows.append(
            (
                r.model,
                r.gpu,
                f"{r.total_tokens:.0f}",
                fmt_pm(r.tdp_per_token),
                fmt_pm(r.tdp_total),
                fmt_pm(r.measured_per_token),
                fmt_pm(r.measured_total),
                NA if r.gap_rounded is None else str(r.gap_rounded),
            )
        )
    return table


# -- API estimates ----------------------------------------------------------


@dataclass(frozen=True)
class EstimateRow:
    model: str
    tier: str
    route: str
    tokens: AggregateStats | None
    total_wh: float | None
    sd_wh: float | None
    per_token_mwh: float | None
    basis_gpu: str | None
    time_proxy_wh: float | None
    note: str | None
    api_source: str
    local_source: str | None

    @property
    def divergence_pct(self) -> float | None:
        if self.total_wh is None or self.time_proxy_wh is None or self.total_wh == 0:
            return None
        return (self.time_proxy_wh - self.total_wh) / self.total_wh * 100.0


def select_local_basis(
    experiments: Sequence[Experiment], gpu: str | None = None
) -> dict[str, ExperimentSummary]:
    """Local experiment used as the estimation basis, per model.

    With ``gpu`` given, that GPU's experiment is used for every model;
    otherwise the GPU nearest to the model's pooled API time per token.
    """
    summaries = _summaries(experiments)
    basis: dict[str, ExperimentSummary] = {}
    for model in sorted({e.model for e in summaries}):
        locals_ = {e.gpu: e for e in summaries if e.model == model and e.is_local and e.gpu}
        apis = [e.t_token_s for e in summaries if e.model == model and not e.is_local]
        if not locals_:
            continue
        if gpu is not None:
            if gpu in locals_:
                basis[model] = locals_[gpu]
            continue
        if apis:
            chosen = select_representative(apis, {g: e.t_token_s for g, e in locals_.items()})
            basis[model] = locals_[chosen]
    return basis


def estimate_rows(
    api: Experiment,
    local: ExperimentSummary | None,
    catalog: GpuCatalog,
    sustained_factor: float = DEFAULT_SUSTAINED_FACTOR,
) -> list[EstimateRow]:
    tier = {"api_free": "free", "api_paid": "paid"}.get(api.kind, api.kind)

    def suppressed(route: str, note: str) -> EstimateRow:
        return EstimateRow(
            api.model, tier, route, getattr(api, "tokens", None), None, None, None,
            None if local is None else local.gpu, None, note, api.id, None if local is None else local.id,
        )

    if isinstance(api, Unavailable):
        return [suppressed("M", api.reason), suppressed("C", api.reason)]
    if local is None:
        note = "no local basis for this model"
        return [suppressed("M", note), suppressed("C", note)]

    basis = {"gpu": local.gpu, "local": local.id, "api": api.id}
    rows = []
    if local.energy_per_token_mwh is not None and local.power_w is not None:
        m = estimate_token_proxy(local.energy_per_token_mwh, api.tokens, basis)
        tp = estimate_time_proxy(local.power_w.mean, api.time_s.mean, api.time_s.sd, basis)
        rows.append(
            EstimateRow(
                api.model, tier, "M", api.tokens, m.total_wh, m.sd_wh, m.per_token_mwh,
                local.gpu, tp.total_wh, None, api.id, local.id,
            )
        )
    else:
        rows.append(suppressed("M", "local basis has no energy measurement"))

    tdp = tdp_energy(local.gpu, local.time_s.mean, sustained_factor, catalog=catalog, duration_sd_s=local.time_s.sd)
    tdp_total = AggregateStats(tdp.total_wh, tdp.sd_wh, local.time_s.n, "Wh")
    per_token = tdp_total.scaled(1000.0 / local.tokens.mean, "mWh/token")
    c = estimate_token_proxy(per_token, api.tokens, basis)
    gpu = catalog.get(local.gpu)
    tp = estimate_time_proxy(gpu.tdp_w * sustained_factor, api.time_s.mean, api.time_s.sd, basis)
    rows.append(
        EstimateRow(
            api.model, tier, "C", api.tokens, c.total_wh, c.sd_wh, c.per_token_mwh,
            local.gpu, tp.total_wh, None, api.id, local.id,
        )
    )
    return rows


def emit_estimate_table(
    api_experiments: Sequence[Experiment],
    local_basis: Mapping[str, ExperimentSummary],
    catalog: GpuCatalog,
    sustained_factor: float = DEFAULT_SUSTAINED_FACTOR,
) -> Table:
    table = Table(
        "estimate_table",
        (
            "model",
            "api_tier",
            "route",
            "tokens_mean",
            "tokens_sd",
            "total_wh",
            "total_sd_wh",
            "per_token_mwh",
            "basis_gpu",
            "time_proxy_wh",
            "divergence_pct",
            "note",
            "api_source",
            "local_source",
        ),
        markdown_header=(
            "Model",
            "API tier",
            "",
            "Number of tokens",
            "Total energy (Wh)",
            "Basis GPU",
            "Time-proxy energy (Wh)",
        ),
        footer=f"M = measured energy per token; C = {sustained_factor:g} x TDP per token. "
        "Total energy is energy per token times API tokens; the time-proxy column is mean "
        "local power times mean API time. " + MATCH_CAVEAT,
    )
    apis = [e for e in _sorted(api_experiments, catalog) if e.kind != "local"]
    for api in apis:
        for r in estimate_rows(api, local_basis.get(api.model), catalog, sustained_factor):
            table.rows.append(
                {
                    "model": r.model,
                    "api_tier": r.tier,
                    "route": r.route,
                    "tokens_mean": None if r.tokens is None else r.tokens.mean,
                    "tokens_sd": None if r.tokens is None else r.tokens.sd,
                    "total_wh": r.total_wh,
                    "total_sd_wh": r.sd_wh,
                    "per_token_mwh": r.per_token_mwh,
                    "basis_gpu": r.basis_gpu,
                    "time_proxy_wh": r.time_proxy_wh,
                    "divergence_pct": r.divergence_pct,
                    "note": r.note,
                    "api_source": r.api_source,
                    "local_source": r.local_source,
                }
            )
            tokens = NA if r.tokens is None else f"{r.tokens.mean:.0f} ± " + (
                f"{r.tokens.sd:.0f}" if r.tokens.sd_defined else NA
            )
            if r.total_wh is None:
                total = f"suppressed: {r.note}"
            else:
                total = f"{r.total_wh:.2f} ± {r.sd_wh:.2f}"
            tp = NA if r.time_proxy_wh is None else f"{r.time_proxy_wh:.2f}"
            table.markdown_rows.append((r.model, r.tier, r.route, tokens, total, r.basis_gpu or NA, tp))
    return table


# -- fleet matching ---------------------------------------------------------


def emit_match_table(experiments: Sequence[Experiment], catalog: GpuCatalog) -> Table:
    table = Table(
        "match_table",
        ("model", "api_tier", "cluster", "members", "z_score", "within_one_sd", "verdict", "nearest_gpu", "nearest_gpu_z"),
        markdown_header=("Model", "API tier", "Verdict", "Cluster z-scores", "Nearest GPU (z)"),
        footer="z = (API mean - cluster mean) / sqrt(sd_API^2 + sd_cluster^2); a verdict needs |z| <= 1. "
        + MATCH_CAVEAT,
    )
    summaries = _summaries(experiments)
    for model in sorted({e.model for e in summaries}):
        local_stats = {
            e.gpu: e.t_token_s for e in summaries if e.model == model and e.is_local and e.gpu in catalog
        }
        if not local_stats:
            continue
        try:
            clusters = build_clusters(local_stats, catalog)
        except InsufficientDataError as exc:
            table.markdown_rows.append((model, NA, NA, str(exc), NA))
            continue
        members = {c.label: c.members for c in clusters}
        apis = sorted(
            (e for e in summaries if e.model == model and not e.is_local), key=lambda e: KIND_ORDER.get(e.kind, 9)
        )
        for api in apis:
            result = match_api(api.t_token_s, clusters)
            nearest = rank_gpus(api.t_token_s, local_stats)[0]
            for entry in result.ranked:
                table.rows.append(
                    {
                        "model": model,
                        "api_tier": api.tier,
                        "cluster": entry.label,
                        "members": ";".join(members[entry.label]),
                        "z_score": entry.z_score,
                        "within_one_sd": entry.within_one_sd,
                        "verdict": result.verdict,
                        "nearest_gpu": nearest.label,
                        "nearest_gpu_z": nearest.z_score,
                    }
                )
            zs = ", ".join(f"{e.label}: {e.z_score:+.2f}" for e in result.ranked)
            table.markdown_rows.append(
                (model, api.tier or api.kind, result.verdict, zs, f"{nearest.label} ({nearest.z_score:+.2f})")
            )
    return table


# -- boxplot data -----------------------------------------------------------


def emit_boxplot_data(experiments: Sequence[Experiment], catalog: GpuCatalog) -> Table:
    """Long-format per-run time per token, one series per (model, GPU or API tier).

    Experiments without per-run values contribute one ``mean`` row carrying
    the summary mean and sd.
    """
    table = Table(
        "boxplot_data",
        ("model", "series", "kind", "cluster", "value_kind", "run_index", "t_token_s", "sd_s"),
    )
    for e in _sorted(_summaries(experiments), catalog):
        series = e.gpu if e.is_local else KIND_LABELS.get(e.kind, e.kind)
        cluster = catalog.get(e.gpu).cluster_label if e.is_local and e.gpu in catalog else "api"
        base = {"model": e.model, "series": series, "kind": e.kind, "cluster": cluster}
        if e.t_token_runs:
            for i, v in enumerate(e.t_token_runs):
                table.rows.append({**base, "value_kind": "run", "run_index": i, "t_token_s": v})
        else:
            table.rows.append(
                {**base, "value_kind": "mean", "t_token_s": e.t_token_s.mean, "sd_s": e.t_token_s.sd}
            )
    return table


def boxplot_series(table: Table) -> dict[tuple[str, str], list[float]]:
    series: dict[tuple[str, str], list[float]] = defaultdict(list)
    for row in table.rows:
        series[(row["model"], row["series"])].append(row["t_token_s"])
    return dict(series)


# -- bundle -----------------------------------------------------------------


@dataclass
class ReportBundle:
    runtime_table: Table
    energy_table: Table
    estimate_table: Table
    match_table: Table
    boxplot_data: Table
    metadata: dict[str, Any]

    @property
    def tables(self) -> list[Table]:
        return [self.runtime_table, self.energy_table, self.estimate_table, self.match_table, self.boxplot_data]


def build_report(
    experiments: Sequence[Experiment],
    catalog: GpuCatalog,
    *,
    sustained_factor: float = DEFAULT_SUSTAINED_FACTOR,
    basis_gpu: str | None = None,
    metadata: Mapping[str, Any] | None = None,
) -> ReportBundle:
    basis = select_local_basis(experiments, basis_gpu)
    meta = {
        "tool_version": __version__,
        "experiments": sorted(e.id for e in experiments),
        "sustained_factor": sustained_factor,
        "local_basis": {m: e.id for m, e in sorted(basis.items())},
        **(metadata or {}),
    }
    return ReportBundle(
        runtime_table=emit_runtime_table(experiments, catalog),
        energy_table=emit_energy_table(experiments, catalog, sustained_factor),
        estimate_table=emit_estimate_table(experiments, basis, catalog, sustained_factor),
        match_table=emit_match_table(experiments, catalog),
        boxplot_data=emit_boxplot_data(experiments, catalog),
        metadata=meta,
    )


def write_report(bundle: ReportBundle, out_dir: str | Path) -> list[Path]:
    """Write tables to ``<out_dir>/reports``. Only metadata.json holds a timestamp."""
    reports = Path(out_dir) / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    written = []
    markdown = []
    for table in bundle.tables:
        path = reports / f"{table.name}.csv"
        path.write_text(table.to_csv(), encoding="utf-8")
        written.append(path)
        if table.name != "boxplot_data":
            md = reports / f"{table.name}.md"
            md.write_text(table.to_markdown(), encoding="utf-8")
            written.append(md)
            markdown.append(f"## {table.name.replace('_', ' ')}\n\n{table.to_markdown()}")
    summary = reports / "report.md"
    summary.write_text("\n".join(markdown), encoding="utf-8")
    written.append(summary)
    meta = {**bundle.metadata, "generated_at": dt.datetime.now(dt.timezone.utc).isoformat()}
    meta_path = reports / "metadata.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(meta_path)
    return written

