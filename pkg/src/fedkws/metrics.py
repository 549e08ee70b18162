"""Accuracy and keyword-spotting false accept / false reject rates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import nn
from .data import ClientDataset
from .errors import ConfigError, EvaluationError


@dataclass(frozen=True)
class KwsClassMap:
    """Split of the label set into keywords (positive) and silence/unknown (negative)."""

    positive: tuple[int, ...]
    negative: tuple[int, ...]

    def __post_init__(self):
        pos, neg = set(self.positive), set(self.negative)
        if pos & neg:
            raise ConfigError("positive and negative classes overlap")
        if len(pos) != len(self.positive) or len(neg) != len(self.negative):
            raise ConfigError("duplicate class index in class map")

    @property
    def num_classes(self) -> int:
        return len(self.positive) + len(self.negative)

    def validate_for(self, num_classes: int) -> None:
        if set(self.positive) | set(self.negative) != set(range(num_classes)):
            raise ConfigError(f"class map does not cover exactly the {num_classes} classes")

    @classmethod
    def from_negatives(cls, num_classes: int, negatives: Iterable[int]) -> KwsClassMap:
        neg = tuple(sorted(int(c) for c in negatives))
        if any(c < 0 or c >= num_classes for c in neg):
            raise ConfigError("negative class index out of range")
        pos = tuple(c for c in range(num_classes) if c not in neg)
        return cls(pos, neg)


def default_class_map(num_classes: int) -> KwsClassMap:
    """Last two classes play silence/unknown (the last one only when C < 3)."""
    if num_classes < 2:
        raise ConfigError("FA/FR needs at least two classes")
    n_neg = 2 if num_classes >= 3 else 1
    return KwsClassMap.from_negatives(num_classes, range(num_classes - n_neg, num_classes))


def accuracy_from_predictions(pred: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        raise EvaluationError("accuracy of an empty set is undefined")
    return int(np.count_nonzero(np.asarray(pred) == np.asarray(labels))) / len(labels)


def accuracy(model: nn.ModelParams, test_set: ClientDataset) -> float:
    if test_set.n == 0:
        raise EvaluationError("accuracy of an empty set is undefined")
    return accuracy_from_predictions(nn.predict(model, test_set.features), test_set.labels)


def fa_fr_from_predictions(pred, labels, class_map: KwsClassMap) -> tuple[float, float]:
    """FA is averaged over keywords: negatives predicted as that keyword / all negatives.
    FR is keyword samples predicted into any negative class / all keyword samples.
    """
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    neg = np.isin(labels, class_map.negative)
    pos = np.isin(labels, class_map.positive)
    n_neg, n_pos = int(neg.sum()), int(pos.sum())
    if n_neg == 0 or n_pos == 0:
        raise EvaluationError("FA/FR needs both positive and negative samples")
    neg_pred = pred[neg]
    # one division keeps the result correctly rounded
    false_accepts = int(np.count_nonzero(np.isin(neg_pred, class_map.positive)))
    fa = false_accepts / (n_neg * len(class_map.positive))
    fr = int(np.count_nonzero(np.isin(pred[pos], class_map.negative))) / n_pos
    return fa, fr


def fa_fr(model: nn.ModelParams, test_set: ClientDataset,
          class_map: KwsClassMap) -> tuple[float, float]:
    class_map.validate_for(test_set.num_classes)
    return fa_fr_from_predictions(nn.predict(model, test_set.features), test_set.labels, class_map)


def evaluate(model: nn.ModelParams, test_set: ClientDataset,
             class_map: KwsClassMap) -> tuple[float, float, float]:
    """Accuracy, FA and FR from a single prediction pass."""
    class_map.validate_for(test_set.num_classes)
    pred = nn.predict(model, test_set.features)
    fa, fr = fa_fr_from_predictions(pred, test_set.labels, class_map)
    return accuracy_from_predictions(pred, test_set.labels), fa, fr
