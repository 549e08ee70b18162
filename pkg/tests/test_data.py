import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedkws.data import (
    ClientDataset,
    client_stats,
    export_federation,
    generate_federation,
    load_federation,
    normalized_entropy,
)
from fedkws.errors import ConfigError, DataError


def test_no_skew_limit_is_iid():
    data = generate_federation(num_clients=8, feature_shift=0.0, quantity_sigma=0.0,
                               dirichlet_alpha=1e6, samples_mean=500, test_size=120, seed=3)
    sizes = {c.n for c in data.clients}
    assert sizes == {500}
    for c in data.clients:
        assert np.max(np.abs(c.class_counts / c.n - 1 / 12)) <= 0.05


def test_low_alpha_lowers_entropy():
    for seed in range(5):
        low = generate_federation(num_clients=50, dirichlet_alpha=0.1, seed=seed)
        high = generate_federation(num_clients=50, dirichlet_alpha=1e6, seed=seed)
        e_low = np.mean([s.entropy for s in client_stats(low)])
        e_high = np.mean([s.entropy for s in client_stats(high)])
        assert e_low < e_high


def test_generation_is_deterministic():
    a = generate_federation(num_clients=20, seed=11)
    b = generate_federation(num_clients=20, seed=11)
    for ca, cb in zip(a.clients + [a.global_test], b.clients + [b.global_test]):
        assert np.array_equal(ca.features, cb.features)
        assert np.array_equal(ca.labels, cb.labels)


def test_partition_accounting():
    data = generate_federation(num_clients=30, seed=2)
    ids = np.concatenate([c.sample_ids for c in data.clients] + [data.global_test.sample_ids])
    total = sum(c.n for c in data.clients) + data.global_test.n
    assert ids.size == total
    assert np.unique(ids).size == total
    assert np.all(data.global_test.class_counts > 0)
    assert all(c.n >= 1 for c in data.clients)
    assert all(c.class_counts.sum() == c.n for c in data.clients)


def test_shift_never_changes_labels():
    a = generate_federation(num_clients=15, feature_shift=0.0, seed=5)
    b = generate_federation(num_clients=15, feature_shift=3.0, seed=5)
    for ca, cb in zip(a.clients, b.clients):
        assert np.array_equal(ca.labels, cb.labels)
        offsets = cb.features - ca.features
        np.testing.assert_allclose(np.linalg.norm(offsets, axis=1), 3.0, rtol=1e-12)


@pytest.mark.parametrize("field,value", [("num_clients", 0), ("dirichlet_alpha", 0.0),
                                         ("test_size", 5), ("dim", 0)])
def test_invalid_generator_parameters(field, value):
    with pytest.raises(ConfigError):
        generate_federation(**{field: value})


def _client(counts):
    labels = np.repeat(np.arange(len(counts)), counts)
    return ClientDataset(np.zeros((labels.size, 2)), labels, len(counts))


def test_entropy_examples():
    assert client_stats([_client([0, 7, 0])])[0].entropy == 0.0
    assert client_stats([_client([3, 3, 3, 3, 3])])[0].entropy == pytest.approx(1.0, abs=1e-15)
    q = [1 / 8, 1 / 8, 1 / 8, 5 / 8]
    expected = -(sum(p * math.log(p) for p in q)) / math.log(4)
    stat = client_stats([_client([1, 1, 1, 5])])[0]
    assert stat.entropy == pytest.approx(expected, abs=1e-15)
    assert stat.entropy == pytest.approx(0.7744, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=2, max_size=15).filter(lambda c: sum(c) > 0))
def test_entropy_bounds(counts):
    e = client_stats([_client(counts)])[0].entropy
    assert 0.0 <= e <= 1.0
    if len(set(counts)) == 1:
        assert e == pytest.approx(1.0, abs=1e-12)
    else:
        assert e < 1.0


def test_normalized_entropy_zero_terms():
    assert normalized_entropy([0.5, 0.5, 0.0, 0.0]) == pytest.approx(0.5, abs=1e-15)


def test_export_import_roundtrip(tmp_path):
    data = generate_federation(num_clients=6, samples_mean=10, test_size=36, seed=4)
    export_federation(data, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["generator_spec"]["seed"] == 4
    assert len(manifest["clients"]) == 6
    back = load_federation(tmp_path)
    for a, b in zip(data.clients + [data.global_test], back.clients + [back.global_test]):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)


def test_import_rejects_tampered_manifest(tmp_path):
    data = generate_federation(num_clients=3, samples_mean=10, test_size=24, seed=4)
    export_federation(data, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["clients"][0]["n"] += 1
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DataError):
        load_federation(tmp_path)


def test_import_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        load_federation(tmp_path)
