import csv

import numpy as np
import pytest

from fedkws import nn
from fedkws.data import generate_federation
from fedkws.engine import init_rng
from fedkws.errors import ConfigError
from fedkws.landscape import (
    ProbeConfig,
    alo_probe,
    gamma_axis,
    interpolation_landscape,
    overfit_probe,
    pretrain_centralized,
)
from fedkws.metrics import accuracy

from conftest import random_model


@pytest.fixture(scope="module")
def tiny():
    return generate_federation(num_clients=10, num_classes=4, dim=6, samples_mean=30,
                               test_size=200, class_sep=3.0, seed=1)


def _models(rng, spec=(6, 8, 4)):
    return [random_model(rng, spec, "relu") for _ in range(3)]


def test_corners_equal_direct_accuracy(rng, tiny):
    t0, t1, t2 = _models(rng)
    grid = interpolation_landscape(t0, t1, t2, tiny.global_test, resolution=13)
    assert grid.values.shape == (13, 13)
    assert grid.at(0.0, 0.0) == accuracy(t0, tiny.global_test)
    assert grid.at(1.0, 0.0) == accuracy(t1, tiny.global_test)
    assert grid.at(0.0, 1.0) == accuracy(t2, tiny.global_test)
    assert grid.gamma1[0] == -0.1 and grid.gamma1[-1] == 1.1
    assert np.all((grid.values >= 0) & (grid.values <= 1))


def test_degenerate_directions_constant(rng, tiny):
    t0 = _models(rng)[0]
    grid = interpolation_landscape(t0, t0, t0, tiny.global_test, resolution=5)
    assert np.all(grid.values == accuracy(t0, tiny.global_test))


def test_interior_point_matches_manual_mix(rng, tiny):
    t0, t1, t2 = _models(rng)
    grid = interpolation_landscape(t0, t1, t2, tiny.global_test, (0.0, 1.0), (0.0, 1.0), 3)
    mix = t0 + (t1 - t0) * 0.5 + (t2 - t0) * 0.5
    assert grid.at(0.5, 0.5) == accuracy(mix, tiny.global_test)


def test_spec_mismatch_and_resolution(rng, tiny):
    t0, t1, _ = _models(rng)
    other = random_model(rng, (6, 5, 4))
    with pytest.raises(ConfigError):
        interpolation_landscape(t0, t1, other, tiny.global_test)
    with pytest.raises(ConfigError):
        interpolation_landscape(t0, t1, t1, tiny.global_test, resolution=1)


def test_csv_rows(rng, tiny, tmp_path):
    t0, t1, t2 = _models(rng)
    grid = interpolation_landscape(t0, t1, t2, tiny.global_test, resolution=3)
    grid.to_csv(tmp_path / "g.csv")
    rows = list(csv.DictReader(open(tmp_path / "g.csv")))
    assert len(rows) == 9
    assert list(rows[0]) == ["gamma1", "gamma2", "accuracy"]


def test_parallel_grid_identical(rng, tiny):
    t0, t1, t2 = _models(rng)
    a = interpolation_landscape(t0, t1, t2, tiny.global_test, resolution=6)
    b = interpolation_landscape(t0, t1, t2, tiny.global_test, resolution=6, threads=3)
    assert np.array_equal(a.values, b.values)


def test_gamma_axis_hits_anchors():
    g = gamma_axis(-0.1, 1.1, 25)
    assert 0.0 in g and 1.0 in g and g.size == 25


def test_probe_zero_lr_and_determinism(tiny):
    t0 = nn.init_model(nn.mlp_spec(6, 4, (8,)), init_rng(0))
    ds = tiny.clients[0]
    assert overfit_probe(t0, ds, 3, ProbeConfig(lr=0.0)).equals(t0)
    a = overfit_probe(t0, ds, 3, ProbeConfig(seed=5))
    b = overfit_probe(t0, ds, 3, ProbeConfig(seed=5))
    assert a.equals(b)
    with pytest.raises(ConfigError):
        overfit_probe(t0, ds, 0)


def test_probe_overfits_skewed_client():
    data = generate_federation(num_clients=1, samples_mean=100, quantity_sigma=0.0,
                               dirichlet_alpha=0.1, seed=3)
    client = data.clients[0]
    assert client.n == 100
    init = nn.init_model(nn.mlp_spec(40, 12), init_rng(3))
    # pretrain on a separate balanced draw of the same classes
    pool = generate_federation(num_clients=20, samples_mean=150, quantity_sigma=0.0,
                               dirichlet_alpha=1e6, feature_shift=0.0, seed=3)
    theta0 = pretrain_centralized(init, pool.pooled(), 1500, ProbeConfig(seed=3), mu=0.2)
    before = accuracy(theta0, data.global_test)
    theta1 = overfit_probe(theta0, client, 20, ProbeConfig(seed=3))
    assert accuracy(theta1, client) >= 0.95
    assert accuracy(theta1, data.global_test) < before


def test_alo_probe_runs_and_stays_finite(tiny):
    t0 = nn.init_model(nn.mlp_spec(6, 4, (8,)), init_rng(0))
    over = overfit_probe(t0, tiny.clients[0], 10)
    out = alo_probe(t0, over, tiny.clients[0], 10)
    assert out.is_finite() and not out.equals(t0)
