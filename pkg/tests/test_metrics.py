import math
import random

import pytest
from _builders import make_run
from hypothesis import given, settings
from hypothesis import strategies as st

from tokenjoule.errors import DataError, DegenerateRunError, DomainError, InsufficientDataError
from tokenjoule.metrics import (
    AggregateStats,
    ExperimentSummary,
    RunDerived,
    aggregate,
    derive_run,
    mean_power,
    pool,
    ratio_stats,
    summarize_runs,
)


def two_pass(values):
    n = len(values)
    mean = sum(values) / n
    sd = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1))
    return mean, sd


def test_aggregate_examples():
    s = aggregate([3, 3, 3])
    assert (s.mean, s.sd) == (3.0, 0.0)
    s = aggregate([1, 2, 3, 4])
    assert s.mean == 2.5 and s.sd == pytest.approx(1.2910, abs=1e-4)
    s = aggregate([5])
    assert s.mean == 5 and s.sd is None and not s.sd_defined
    with pytest.raises(InsufficientDataError):
        aggregate([])


def test_aggregate_oracle_long_vectors():
    rng = random.Random(1)
    for size in (2, 17, 1000, 10_000):
        values = [rng.uniform(-1e3, 1e3) for _ in range(size)]
        s = aggregate(values)
        mean, sd = two_pass(values)
        assert s.mean == pytest.approx(mean, rel=1e-12, abs=1e-12)
        assert s.sd == pytest.approx(sd, rel=1e-12)


def test_single_value_has_no_sd():
    assert AggregateStats(1.0, 0.5, 1).sd is None
    with pytest.raises(DomainError):
        AggregateStats(1.0, -0.1, 3)


def test_pool_equals_concatenation():
    rng = random.Random(2)
    groups = [[rng.gauss(5, 1) for _ in range(k)] for k in (10, 10, 7)]
    pooled = pool([aggregate(g) for g in groups])
    mean, sd = two_pass([v for g in groups for v in g])
    assert pooled.mean == pytest.approx(mean, rel=1e-12)
    assert pooled.sd == pytest.approx(sd, rel=1e-12)
    assert pooled.n == 27


def test_ratio_stats_first_order():
    r = ratio_stats(AggregateStats(10.0, 1.0, 10), AggregateStats(2.0, 0.1, 10))
    assert r.mean == 5.0
    assert r.sd == pytest.approx(5.0 * math.hypot(0.1, 0.05))


def test_derive_run_published_numbers():
    d = derive_run(make_run(time_s=1820.0, tokens=327674, energy_wh=296.0))
    assert d.power_w == pytest.approx(585.49, abs=0.01)
    assert d.time_per_token_s * 1000 == pytest.approx(5.554, abs=5e-4)
    assert d.energy_per_token_mwh == pytest.approx(0.9033, abs=1e-4)


def test_derive_run_zero_energy():
    d = derive_run(make_run(energy_wh=0.0))
    assert d.power_w == 0.0 and d.energy_per_token_mwh == 0.0


def test_derive_run_errors():
    with pytest.raises(DegenerateRunError):
        derive_run(make_run(tokens=0, energy_wh=1.0))
    with pytest.raises(DataError):
        derive_run(make_run(energy_wh=None, kind="local"))
    with pytest.raises(DataError):
        derive_run(make_run(energy_wh=1.0, valid=False))
    api = derive_run(make_run(kind="api_free"))
    assert api.power_w is None and api.energy_per_token_mwh is None


def test_mean_power():
    assert mean_power([RunDerived(0, 1.0, 585.0), RunDerived(1, 1.0, 587.0)]) == 586.0
    assert mean_power([RunDerived(i, 1.0, 360.0) for i in range(10)]) == 360.0
    assert mean_power([RunDerived(i, 1.0, 300.0 + i) for i in range(10)]) == 304.5
    with pytest.raises(InsufficientDataError):
        mean_power([RunDerived(0, 1.0, 1.0)])
    with pytest.raises(DataError):
        mean_power([RunDerived(0, 1.0, 1.0), RunDerived(1, 1.0)])


def test_mean_power_is_mean_of_ratios():
    runs = [derive_run(make_run(i, t, 1000, e)) for i, (t, e) in enumerate([(100.0, 10.0), (300.0, 10.0)])]
    # (360 + 120) / 2, not 20 Wh over 400 s = 180 W
    assert mean_power(runs) == pytest.approx(240.0)


@settings(max_examples=100)
@given(
    time_s=st.floats(1.0, 1e5),
    tokens=st.integers(1, 10**7),
    energy=st.floats(0.01, 1e4),
    k=st.floats(0.01, 100.0),
)
def test_scaling_and_consistency(time_s, tokens, energy, k):
    base = derive_run(make_run(time_s=time_s, tokens=tokens, energy_wh=energy))
    scaled = derive_run(make_run(time_s=time_s * k, tokens=tokens, energy_wh=energy))
    assert scaled.time_per_token_s == pytest.approx(base.time_per_token_s * k, rel=1e-12)
    assert scaled.power_w == pytest.approx(base.power_w / k, rel=1e-12)
    assert base.power_w * time_s / 3600 == pytest.approx(energy, rel=1e-9)
    assert base.energy_per_token_mwh * tokens / 1000 == pytest.approx(energy, rel=1e-9)


def test_summarize_skips_invalid_runs():
    runs = [make_run(i, 100.0 + i, 1000, 10.0 + i) for i in range(4)] + [make_run(4, 1.0, 1, 1.0, valid=False)]
    s = summarize_runs(runs, experiment_id="x", model="m", kind="local", gpu="H100")
    assert s.time_s.n == 4 and s.runs_total == 5
    assert s.time_s.mean == 101.5
    assert s.power_w is not None and s.sufficient
    assert len(s.t_token_runs) == 4
    assert ExperimentSummary.from_dict(s.to_dict()) == s
    with pytest.raises(InsufficientDataError):
        summarize_runs([make_run(valid=False)], experiment_id="x", model="m", kind="local")


def test_api_summary_has_no_energy():
    runs = [make_run(i, 700.0 + i, 110000, kind="api_free") for i in range(3)]
    s = summarize_runs(runs, experiment_id="a", model="m", kind="api_free")
    assert s.energy_wh is None and s.power_w is None and s.tier == "free"
