"""Energy estimates for API deployments and TDP-based lower bounds.

Two routes estimate the energy of an API run from a local reference:

* time proxy: mean local power times mean API wall time,
  ``E = P_loc * T_api / 3600``;
* token proxy: local energy per token times API token count,
  ``E = e_token * N_api / 1000``.

Both agree whenever the local power equals energy per token divided by time
per token and the API time equals time per token times tokens.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

from .errors import DomainError
from .fleet import GpuCatalog, GpuSpec, load_catalog
from .metrics import AggregateStats

log = logging.getLogger(__name__)

METHODS = ("time_proxy", "token_proxy", "tdp_bound")
DEFAULT_SUSTAINED_FACTOR = 0.9
SUSTAINED_RANGE = (0.85, 0.95)


@dataclass(frozen=True)
class EnergyEstimate:
    method: str
    total_wh: float
    per_token_mwh: float | None = None
    sd_wh: float | None = None
    basis: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise DomainError(f"unknown estimate method {self.method!r}")
        if not self.total_wh >= 0:
            raise DomainError("total energy must be non-negative")
        if self.method == "tdp_bound" and "gpu" not in self.basis:
            raise DomainError("a TDP bound must name its GPU")


def _positive(name: str, value: float) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise DomainError(f"{name} must be positive and finite, got {value}")


def estimate_time_proxy(
    p_loc_w: float,
    t_api_mean_s: float,
    t_api_sd_s: float | None = None,
    basis: dict[str, Any] | None = None,
) -> EnergyEstimate:
    _positive("local power", p_loc_w)
    _positive("API mean time", t_api_mean_s)
    total = p_loc_w * t_api_mean_s / 3600.0
    sd = None if t_api_sd_s is None else p_loc_w * t_api_sd_s / 3600.0
    return EnergyEstimate("time_proxy", total, sd_wh=sd, basis=dict(basis or {}))


def estimate_token_proxy(
    e_token_mwh: AggregateStats,
    n_tokens_api: AggregateStats,
    basis: dict[str, Any] | None = None,
) -> EnergyEstimate:
    """Energy per token times token count; sd by first-order propagation."""
    _positive("energy per token", e_token_mwh.mean)
    _positive("API token count", n_tokens_api.mean)
    total = e_token_mwh.mean * n_tokens_api.mean / 1000.0
    rel = math.hypot(
        e_token_mwh.sd_or_zero / e_token_mwh.mean,
        n_tokens_api.sd_or_zero / n_tokens_api.mean,
    )
    return EnergyEstimate(
        "token_proxy",
        total,
        per_token_mwh=e_token_mwh.mean,
        sd_wh=total * rel,
        basis=dict(basis or {}),
    )


def _resolve(gpu: GpuSpec | str, catalog: GpuCatalog | None) -> GpuSpec:
    if isinstance(gpu, GpuSpec):
        return gpu
    return (catalog if catalog is not None else load_catalog()).get(gpu)


def _check_factor(sustained_factor: float) -> None:
    if not 0 < sustained_factor <= 1:
        raise DomainError(f"sustained factor must lie in (0, 1], got {sustained_factor}")
    lo, hi = SUSTAINED_RANGE
    if not lo <= sustained_factor <= hi:
        log.warning("sustained factor %.3f is outside the usual %.2f-%.2f range", sustained_factor, lo, hi)


def tdp_energy(
    gpu: GpuSpec | str,
    duration_s: float,
    sustained_factor: float = DEFAULT_SUSTAINED_FACTOR,
    *,
    catalog: GpuCatalog | None = None,
    duration_sd_s: float | None = None,
) -> EnergyEstimate:
    """Energy at a constant ``sustained_factor * TDP`` for ``duration_s``."""
    spec = _resolve(gpu, catalog)
    _check_factor(sustained_factor)
    _positive("duration", duration_s)
    watts = spec.tdp_w * sustained_factor
    sd = None if duration_sd_s is None else watts * duration_sd_s / 3600.0
    return EnergyEstimate(
        "tdp_bound",
        watts * duration_s / 3600.0,
        sd_wh=sd,
        basis={"gpu": spec.name, "tdp_w": spec.tdp_w, "sustained_factor": sustained_factor},
    )


def tdp_per_token(
    gpu: GpuSpec | str,
    duration_s: float,
    tokens: float,
    sustained_factor: float = DEFAULT_SUSTAINED_FACTOR,
    *,
    catalog: GpuCatalog | None = None,
) -> float:
    """TDP-bound energy per token in mWh."""
    _positive("token count", tokens)
    return tdp_energy(gpu, duration_s, sustained_factor, catalog=catalog).total_wh / tokens * 1000.0


def gap_pct(measured_wh: float, tdp_wh: float) -> float:
    """Shortfall of the TDP bound as a percentage of the measured energy."""
    _positive("measured energy", measured_wh)
    return (measured_wh - tdp_wh) / measured_wh * 100.0


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))
