import io
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokenjoule.errors import CatalogError, ParseError
from tokenjoule.fixtures import load_published_fixture
from tokenjoule.fleet import (
    CATALOG_HEADER,
    ClusterStats,
    GpuSpec,
    build_clusters,
    load_catalog,
    match_api,
    rank_gpus,
    select_representative,
    z_score,
)
from tokenjoule.metrics import AggregateStats, pool


@pytest.fixture(scope="module")
def catalog():
    return load_catalog()


def _local_t_token(model):
    return {e.gpu: e.t_token_s for e in load_published_fixture() if e.model == model and e.is_local}


def _api_t_token(model, kind):
    return next(e.t_token_s for e in load_published_fixture() if e.model == model and e.kind == kind)


def test_bundled_catalog_rows(catalog):
    assert catalog.names == ["A100-40GB", "A100-80GB", "A100-PCI", "H100", "H100-PCI", "H200"]
    a = catalog.get("A100-40GB")
    assert (a.vram_gb, a.tdp_w, a.optimal_load_w) == (40, 400, (340, 380))
    h = catalog.get("H200")
    assert (h.vram_gb, h.tdp_w, h.optimal_load_w) == (140, 700, (595, 665))
    p = catalog.get("H100-PCI")
    assert (p.vram_gb, p.tdp_w, p.optimal_load_w, p.form_factor) == (94, 400, (340, 380), "pcie")
    assert load_catalog(io.StringIO(catalog.to_csv())).names == catalog.names


def _csv(*rows):
    return io.StringIO(",".join(CATALOG_HEADER) + "\n" + "\n".join(rows) + "\n")


def test_catalog_parse_errors():
    with pytest.raises(ParseError):
        load_catalog(_csv("X,40,400,380,340,ampere,sxm"))
    with pytest.raises(ParseError):
        load_catalog(_csv("X,40,400,340,380,ampere,sxm", "X,80,400,340,380,ampere,sxm"))
    with pytest.raises(ParseError):
        load_catalog(io.StringIO("name,tdp\nX,1\n"))
    with pytest.raises(ParseError):
        load_catalog(_csv("X,40,400,340,380,volta,sxm"))


def test_spec_invariants(catalog):
    with pytest.raises(CatalogError):
        GpuSpec("X", 40, 400, (340, 450), "ampere", "sxm")
    with pytest.raises(CatalogError):
        catalog.get("V100")


def test_clusters_by_generation(catalog):
    clusters = build_clusters(_local_t_token("Mistral-NeMo"), catalog)
    assert [(c.label, c.members) for c in clusters] == [
        ("A", ("A100-40GB", "A100-80GB", "A100-PCI")),
        ("H", ("H100", "H100-PCI", "H200")),
    ]
    h = clusters[1].t_token
    assert h.mean * 1000 == pytest.approx((2140 + 2353 + 2018) / 3 / 332860 * 1000, rel=1e-12)
    assert h.mean * 1000 == pytest.approx(6.52, abs=0.01)
    assert h.n == 30


def test_singleton_cluster(catalog):
    clusters = build_clusters({"H200": AggregateStats(0.005, 0.0001, 10)}, catalog)
    assert [(c.label, c.members) for c in clusters] == [("H", ("H200",))]


def test_identity_match(catalog):
    clusters = build_clusters(_local_t_token("Mistral-7B"), catalog)
    result = match_api(clusters[0].t_token, clusters)
    assert result.verdict == "A" and result.best.z_score == 0.0


def test_far_api_is_inconclusive(catalog):
    clusters = build_clusters(_local_t_token("Mistral-7B"), catalog)
    far = AggregateStats(1.0, 1e-6, 10)
    result = match_api(far, clusters)
    assert result.verdict == "inconclusive"
    assert all(abs(e.z_score) > 10 for e in result.ranked)


def test_nemo_api_matches_h(catalog):
    clusters = build_clusters(_local_t_token("Mistral-NeMo"), catalog)
    for kind in ("api_free", "api_paid"):
        result = match_api(_api_t_token("Mistral-NeMo", kind), clusters)
        assert result.verdict == "H"
        assert [e.label for e in result.ranked] == ["H", "A"]


def test_zero_scale():
    assert z_score(AggregateStats(1.0, 0.0, 2), AggregateStats(1.0, 0.0, 2)) == 0.0
    assert z_score(AggregateStats(2.0, 0.0, 2), AggregateStats(1.0, 0.0, 2)) == math.inf


def test_representative_is_h100_pci_for_both_models():
    for model in ("Mistral-7B", "Mistral-NeMo"):
        apis = [_api_t_token(model, k) for k in ("api_free", "api_paid")]
        assert select_representative(apis, _local_t_token(model)) == "H100-PCI"


def test_rank_gpus_sorted():
    ranked = rank_gpus(_api_t_token("Mistral-NeMo", "api_free"), _local_t_token("Mistral-NeMo"))
    assert [abs(e.z_score) for e in ranked] == sorted(abs(e.z_score) for e in ranked)


stat = st.builds(
    AggregateStats,
    mean=st.floats(1e-4, 1e-1),
    sd=st.floats(1e-6, 1e-2),
    n=st.integers(2, 20),
)


def _clusters(refs, factor=1.0):
    return [ClusterStats(str(i), (f"g{i}",), r.scaled(factor)) for i, r in enumerate(refs)]


@settings(max_examples=100)
@given(api=stat, refs=st.lists(stat, min_size=2, max_size=5))
def test_unit_invariance_and_soundness(api, refs):
    seconds = match_api(api, _clusters(refs))
    ms = match_api(api.scaled(1000.0), _clusters(refs, 1000.0))
    assert seconds.verdict == ms.verdict
    for a, b in zip(seconds.ranked, ms.ranked):
        assert a.label == b.label
        assert a.z_score == pytest.approx(b.z_score, rel=1e-9)
    if seconds.verdict != "inconclusive":
        assert seconds.best.label == seconds.verdict and seconds.best.within_one_sd


@settings(max_examples=100)
@given(api=stat, refs=st.lists(stat, min_size=2, max_size=5), extra=stat)
def test_ranking_stability(api, refs, extra):
    clusters = _clusters(refs)
    before = [e.label for e in match_api(api, clusters).ranked]
    extended = clusters + [ClusterStats("x", ("gx",), extra)]
    after = [e.label for e in match_api(api, extended).ranked if e.label != "x"]
    assert before == after


def test_pool_of_clusters_matches_cluster(catalog):
    local = _local_t_token("Mistral-7B")
    clusters = build_clusters(local, catalog)
    assert clusters[1].t_token == pool([local[g] for g in clusters[1].members])
