"""GPU catalog and generation-cluster matching of time-per-token statistics.

Local GPUs are grouped by catalog generation (Ampere -> "A", Hopper -> "H").
An API deployment is compared with each cluster through a z-score whose
denominator pools both dispersions, ``sqrt(sd_api**2 + sd_cluster**2)``. The
verdict is the closest cluster if it lies within one pooled sd, otherwise
"inconclusive". Matching time per token does not imply matching energy per
token: a provider may trade power for latency with multi-GPU parallelism.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import IO

from .errors import CatalogError, InsufficientDataError, ParseError
from .metrics import AggregateStats, pool

CATALOG_HEADER = ("name", "vram_gb", "tdp_w", "opt_low_w", "opt_high_w", "generation", "form_factor")
GENERATIONS = ("ampere", "hopper")
FORM_FACTORS = ("sxm", "pcie")
GENERATION_LABELS = {"ampere": "A", "hopper": "H"}
INCONCLUSIVE = "inconclusive"
MATCH_CAVEAT = (
    "A time-per-token match suggests the serving hardware generation; it does not "
    "show that both deployments use the same energy per token."
)


@dataclass(frozen=True)
class GpuSpec:
    name: str
    vram_gb: int
    tdp_w: int
    optimal_load_w: tuple[int, int]
    generation: str
    form_factor: str

    def __post_init__(self) -> None:
        low, high = self.optimal_load_w
        if not 0 < low <= high <= self.tdp_w:
            raise CatalogError(
                f"{self.name}: optimal load range {low}-{high} W must satisfy 0 < low <= high <= TDP {self.tdp_w} W"
            )
        if self.vram_gb <= 0:
            raise CatalogError(f"{self.name}: vram_gb must be positive")
        if self.generation not in GENERATIONS:
            raise CatalogError(f"{self.name}: unknown generation {self.generation!r}")
        if self.form_factor not in FORM_FACTORS:
            raise CatalogError(f"{self.name}: unknown form factor {self.form_factor!r}")

    @property
    def cluster_label(self) -> str:
        return GENERATION_LABELS[self.generation]


class GpuCatalog(Sequence[GpuSpec]):
    """Ordered GPU list. Row order is release order and drives table layout."""

    def __init__(self, gpus: Sequence[GpuSpec]):
        self._gpus = tuple(gpus)
        self._by_name = {g.name: g for g in self._gpus}
        if len(self._by_name) != len(self._gpus):
            raise CatalogError("duplicate GPU name in catalog")

    def __getitem__(self, index):
        return self._gpus[index]

    def __len__(self) -> int:
        return len(self._gpus)

    def __iter__(self) -> Iterator[GpuSpec]:
        return iter(self._gpus)

    def __contains__(self, item) -> bool:
        if isinstance(item, str):
            return item in self._by_name
        return item in self._gpus

    def get(self, name: str) -> GpuSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise CatalogError(f"unknown GPU {name!r}") from None

    def position(self, name: str) -> int:
        return self._gpus.index(self.get(name))

    @property
    def names(self) -> list[str]:
        return [g.name for g in self._gpus]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CATALOG_HEADER)
        for g in self._gpus:
            writer.writerow(
                [g.name, g.vram_gb, g.tdp_w, *g.optimal_load_w, g.generation, g.form_factor]
            )
        return buf.getvalue()


def _parse_catalog(fh: IO[str]) -> GpuCatalog:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CATALOG_HEADER:
        raise ParseError(f"catalog header must be {','.join(CATALOG_HEADER)}", 1)
    gpus: list[GpuSpec] = []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(CATALOG_HEADER):
            raise ParseError(f"expected {len(CATALOG_HEADER)} fields, got {len(row)}", lineno)
        name, vram, tdp, low, high, generation, form = (c.strip() for c in row)
        if name in seen:
            raise ParseError(f"duplicate GPU name {name!r}", lineno)
        seen.add(name)
        try:
            gpu = GpuSpec(name, int(vram), int(tdp), (int(low), int(high)), generation, form)
        except ValueError as exc:
            raise ParseError(f"non-integer field: {exc}", lineno) from None
        except CatalogError as exc:
            raise ParseError(str(exc), lineno) from None
        gpus.append(gpu)
    return GpuCatalog(gpus)


def load_catalog(source: str | Path | IO[str] | None = None) -> GpuCatalog:
    """Read a catalog CSV; ``None`` loads the bundled six-GPU default."""
    if source is None:
        text = resources.files("tokenjoule").joinpath("data/gpu_catalog.csv").read_text("utf-8")
        return _parse_catalog(io.StringIO(text))
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return _parse_catalog(fh)
    return _parse_catalog(source)


@dataclass(frozen=True)
class ClusterStats:
    label: str
    members: tuple[str, ...]
    t_token: AggregateStats


def build_clusters(
    local_stats: Mapping[str, AggregateStats], catalog: GpuCatalog
) -> list[ClusterStats]:
    """One cluster per generation present, pooling member GPUs' per-run values."""
    for name in local_stats:
        catalog.get(name)
    clusters = []
    for generation in GENERATIONS:
        members = [g.name for g in catalog if g.generation == generation and g.name in local_stats]
        if not members:
            continue
        pooled = pool([local_stats[m] for m in members])
        if pooled.n < 2:
            raise InsufficientDataError(f"cluster {GENERATION_LABELS[generation]} has fewer than 2 runs")
        clusters.append(ClusterStats(GENERATION_LABELS[generation], tuple(members), pooled))
    return clusters


def z_score(api: AggregateStats, ref: AggregateStats) -> float:
    diff = api.mean - ref.mean
    scale = math.hypot(api.sd_or_zero, ref.sd_or_zero)
    if scale == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return diff / scale


@dataclass(frozen=True)
class MatchEntry:
    label: str
    z_score: float
    within_one_sd: bool


@dataclass(frozen=True)
class MatchResult:
    ranked: tuple[MatchEntry, ...]
    verdict: str

    @property
    def best(self) -> MatchEntry:
        return self.ranked[0]

    def entry(self, label: str) -> MatchEntry:
        for e in self.ranked:
            if e.label == label:
                return e
        raise KeyError(label)


def _rank(api: AggregateStats, refs: Sequence[tuple[str, AggregateStats]]) -> tuple[MatchEntry, ...]:
    entries = []
    for label, ref in refs:
        z = z_score(api, ref)
        entries.append(MatchEntry(label, z, abs(z) <= 1.0))
    return tuple(sorted(entries, key=lambda e: abs(e.z_score)))


def match_api(api_t_token: AggregateStats, clusters: Sequence[ClusterStats]) -> MatchResult:
    if not clusters:
        raise InsufficientDataError("need at least one cluster to match against")
    ranked = _rank(api_t_token, [(c.label, c.t_token) for c in clusters])
    verdict = ranked[0].label if ranked[0].within_one_sd else INCONCLUSIVE
    return MatchResult(ranked, verdict)


def rank_gpus(
    api_t_token: AggregateStats, local_stats: Mapping[str, AggregateStats]
) -> tuple[MatchEntry, ...]:
    """Single-GPU ranking, reported next to the cluster verdict."""
    return _rank(api_t_token, sorted(local_stats.items()))


def select_representative(
    api_t_tokens: Sequence[AggregateStats], local_stats: Mapping[str, AggregateStats]
) -> str:
    """GPU closest (by |z|) to the pooled API statistics of one model.

    Pooling all API tiers of a model yields a single local basis per model.
    """
    if not local_stats:
        raise InsufficientDataError("no local GPUs to select from")
    if not api_t_tokens:
        raise InsufficientDataError("no API statistics to match")
    return rank_gpus(pool(list(api_t_tokens)), local_stats)[0].label
