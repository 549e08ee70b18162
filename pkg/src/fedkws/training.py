"""Minibatch SGD loop shared by clients, private models and analysis probes."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import nn
from .data import ClientDataset
from .losses import cross_entropy

# (model, x_batch, y_batch) -> parameter gradient
GradFn = Callable[[nn.ModelParams, np.ndarray, np.ndarray], nn.ModelParams]


class BatchSampler:
    """Index batches for one client.

    Draws with replacement when the client has fewer samples than a batch,
    otherwise walks shuffled epochs (the last chunk of an epoch may be short).
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self.n < self.batch_size:
            return self.rng.integers(0, self.n, size=self.batch_size)
        if self._pos >= self._order.size:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def train_steps(model: nn.ModelParams, data: ClientDataset, steps: int, grad_fn: GradFn,
                state: nn.OptimizerState, batch_size: int,
                rng: np.random.Generator) -> tuple[nn.ModelParams, nn.OptimizerState]:
    if steps <= 0:
        return model, state
    sampler = BatchSampler(data.n, batch_size, rng)
    for _ in range(steps):
        idx = sampler.next()
        grad = grad_fn(model, data.features[idx], data.labels[idx])
        model, state = nn.sgd_step(model, grad, state)
    return model, state


def ce_grad(model, x, y):
    return nn.loss_and_grad(model, x, lambda p: cross_entropy(p, y))[1]
