"""Bundled published dataset, exposed as experiment summaries.

Only summary statistics were published, so per-run values are absent.
Local time per token uses the constant per-pass token count directly; API
time per token and local mean power are first-order ratio estimates that
assume independent numerator and denominator.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from .metrics import AggregateStats, ExperimentSummary, ratio_stats

FIXTURE_PREFIX = "published"


def _stats(pair, n: int, unit: str) -> AggregateStats:
    if isinstance(pair, (int, float)):
        return AggregateStats(float(pair), 0.0, n, unit)
    mean, sd = pair
    return AggregateStats(float(mean), float(sd), n, unit)


def fixture_id(model: str, kind: str, gpu: str | None = None) -> str:
    parts = [FIXTURE_PREFIX, model.lower(), kind]
    if gpu is not None:
        parts.append(gpu)
    return "/".join(parts)


@lru_cache(maxsize=1)
def _raw() -> dict:
    text = resources.files("tokenjoule").joinpath("data/published_fixture.json").read_text("utf-8")
    return json.loads(text)


def load_published_fixture() -> list[ExperimentSummary]:
    raw = _raw()
    n = raw["runs_per_experiment"]
    out: list[ExperimentSummary] = []
    for model, block in raw["models"].items():
        for gpu, d in block["local"].items():
            time_s = _stats(d["time_s"], n, "s")
            tokens = _stats(d["tokens"], n, "tokens")
            energy = _stats(d["energy_wh"], n, "Wh")
            out.append(
                ExperimentSummary(
                    id=fixture_id(model, "local", gpu),
                    model=model,
                    kind="local",
                    gpu=gpu,
                    time_s=time_s,
                    tokens=tokens,
                    t_token_s=time_s.scaled(1.0 / tokens.mean, "s/token"),
                    energy_wh=energy,
                    energy_per_token_mwh=_stats(d["energy_per_token_mwh"], n, "mWh/token"),
                    power_w=ratio_stats(energy, time_s).scaled(3600.0, "W"),
                    runs_total=n,
                )
            )
        for kind, d in block["api"].items():
            time_s = _stats(d["time_s"], n, "s")
            tokens = _stats(d["tokens"], n, "tokens")
            out.append(
                ExperimentSummary(
                    id=fixture_id(model, kind),
                    model=model,
                    kind=kind,
                    gpu=None,
                    time_s=time_s,
                    tokens=tokens,
                    t_token_s=ratio_stats(time_s, tokens, "s/token"),
                    runs_total=n,
                )
            )
    return out


def select_fixture(prefix: str) -> list[ExperimentSummary]:
    """Fixture experiments whose id equals ``prefix`` or starts with ``prefix/``."""
    return [e for e in load_published_fixture() if e.id == prefix or e.id.startswith(prefix + "/")]
