"""Fine-tuning probes and 2-D interpolation landscapes between parameter vectors."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .data import ClientDataset
from .engine import ClientState, FedConfig, local_update_alo
from .errors import ConfigError
from .losses import label_smoothed_ce
from .metrics import accuracy
from .training import ce_grad, train_steps

GAMMA_RANGE = (-0.1, 1.1)


@dataclass(frozen=True, eq=False)
class LandscapeGrid:
    gamma1: np.ndarray
    gamma2: np.ndarray
    values: np.ndarray = field(repr=False)

    @property
    def resolution(self) -> int:
        return int(self.gamma1.size)

    def at(self, g1: float, g2: float) -> float:
        i = int(np.flatnonzero(np.isclose(self.gamma1, g1))[0])
        j = int(np.flatnonzero(np.isclose(self.gamma2, g2))[0])
        return float(self.values[i, j])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("gamma1", "gamma2", "accuracy"))
            for i, g1 in enumerate(self.gamma1):
                for j, g2 in enumerate(self.gamma2):
                    w.writerow((repr(float(g1)), repr(float(g2)), repr(float(self.values[i, j]))))


def gamma_axis(lo: float, hi: float, resolution: int) -> np.ndarray:
    # rounding snaps values such as 1.3e-17 back onto exact 0 and 1
    return np.round(np.linspace(lo, hi, resolution), 12) + 0.0


def interpolate(theta0: nn.ModelParams, theta1: nn.ModelParams, theta2: nn.ModelParams,
                g1: float, g2: float) -> nn.ModelParams:
    if g1 == 0.0 and g2 == 0.0:
        return theta0
    if g1 == 1.0 and g2 == 0.0:
        return theta1
    if g1 == 0.0 and g2 == 1.0:
        return theta2
    return theta0.zip_map(theta1, lambda a, b: a + g1 * (b - a)).zip_map(
        theta0.zip_map(theta2, lambda a, c: g2 * (c - a)), np.add
    )


def interpolation_landscape(theta0: nn.ModelParams, theta1: nn.ModelParams,
                            theta2: nn.ModelParams, test_set: ClientDataset,
                            g1_range=GAMMA_RANGE, g2_range=GAMMA_RANGE,
                            resolution: int = 25, threads: int = 1) -> LandscapeGrid:
    """Test accuracy over ``theta0 + g1 (theta1 - theta0) + g2 (theta2 - theta0)``."""
    if theta0.spec != theta1.spec or theta0.spec != theta2.spec:
        raise ConfigError("landscape endpoints have different layer specs")
    if resolution < 2:
        raise ConfigError("resolution must be >= 2")
    g1s = gamma_axis(*g1_range, resolution)
    g2s = gamma_axis(*g2_range, resolution)
    cells = [(i, j) for i in range(resolution) for j in range(resolution)]

    def cell(ij):
        i, j = ij
        return accuracy(interpolate(theta0, theta1, theta2, g1s[i], g2s[j]), test_set)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            accs = list(pool.map(cell, cells))
    else:
        accs = [cell(ij) for ij in cells]
    values = np.array(accs).reshape(resolution, resolution)
    return LandscapeGrid(g1s, g2s, values)


@dataclass(frozen=True)
class ProbeConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0


def epoch_steps(n: int, batch_size: int) -> int:
    return max(1, -(-n // batch_size))


def overfit_probe(theta0: nn.ModelParams, client: ClientDataset, epochs: int,
                  cfg: ProbeConfig = ProbeConfig()) -> nn.ModelParams:
    """Fine-tune ``theta0`` on one client's data with plain cross-entropy."""
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    steps = epochs * epoch_steps(client.n, cfg.batch_size)
    model, _ = train_steps(theta0, client, steps, ce_grad,
                           nn.OptimizerState(cfg.lr, cfg.momentum),
                           cfg.batch_size, np.random.default_rng(cfg.seed))
    return model


def alo_probe(theta0: nn.ModelParams, overfitted: nn.ModelParams, client: ClientDataset,
              epochs: int, cfg: ProbeConfig = ProbeConfig(), mu: float = 0.2,
              lam: float = 0.001) -> nn.ModelParams:
    """Fine-tune ``theta0`` on ``client`` against an already overfitted private model."""
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    steps = epochs * epoch_steps(client.n, cfg.batch_size)
    fed = FedConfig(strategy="alo_only", local_steps=max(1, steps), batch_size=cfg.batch_size,
                    client_lr=cfg.lr, momentum=cfg.momentum, mu=mu, lam=lam, seed=cfg.seed)
    state = ClientState(private_model=overfitted)
    rng = np.random.default_rng(cfg.seed)
    model, _ = local_update_alo(theta0, client, steps, state, fed, rng, rng.spawn(1)[0])
    return model


def pretrain_centralized(model: nn.ModelParams, data: ClientDataset, steps: int,
                         cfg: ProbeConfig = ProbeConfig(), mu: float = 0.0) -> nn.ModelParams:
    """Minibatch SGD on pooled data, optionally with label smoothing ``mu``."""
    if mu == 0.0:
        grad_fn = ce_grad
    else:
        def grad_fn(m, x, y):
            return nn.loss_and_grad(m, x, lambda p: label_smoothed_ce(p, y, mu))[1]
    model, _ = train_steps(model, data, steps, grad_fn, nn.OptimizerState(cfg.lr, cfg.momentum),
                           cfg.batch_size, np.random.default_rng(cfg.seed))
    return model


def with_seed(cfg: ProbeConfig, seed: int) -> ProbeConfig:
    return replace(cfg, seed=seed)
