"""Losses and decision strategies for multi-label pair classification.

The adaptive-thresholding loss has two categorical cross-entropy parts: one
pushes every positive class above the threshold class, the other pulls all
negative classes below it. Decisions either compare logits against the
threshold class (adaptive) or compare sigmoid probabilities against a tuned
global or per-class threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError
from .head import TH_INDEX, class_index

_MASK_OFF = -1e30

GLOBAL_THRESHOLD_GRID = tuple(round(0.1 * i, 2) for i in range(1, 10))
PER_CLASS_THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))

STRATEGIES = ("adaptive", "global", "per_class")


@dataclass(frozen=True)
class LabelSets:
    """Positive and negative relation ids of one pair; they partition R."""

    positives: frozenset[int]
    negatives: frozenset[int]

    @classmethod
    def from_positives(cls, positive_ids: Iterable[int], n_relations: int) -> "LabelSets":
        pos = frozenset(positive_ids)
        for r in pos:
            if not 0 <= r < n_relations:
                raise DataError(f"relation id {r} outside schema of size {n_relations}")
        return cls(positives=pos,
                   negatives=frozenset(range(n_relations)) - pos)

    def __post_init__(self):
        if self.positives & self.negatives:
            raise DataError("positive and negative class sets intersect")


@dataclass
class ThresholdConfig:
    """Decision strategy plus whatever threshold values it needs."""

    strategy: str = "adaptive"
    theta: float | None = None
    per_class_thetas: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected {STRATEGIES}")
        if self.strategy == "global" and (self.theta is None or not 0 < self.theta < 1):
            raise ConfigError("global strategy needs theta in (0, 1)")
        if self.strategy == "per_class" and not self.per_class_thetas:
            raise ConfigError("per_class strategy needs per-class thresholds")


# ---------------------------------------------------------------------------
# losses


def _loss_masks(label_sets: Sequence[LabelSets], n_classes: int):
    n = len(label_sets)
    pos_mask = np.zeros((n, n_classes))
    keep_pos = np.full((n, n_classes), _MASK_OFF)  # P u {TH}
    keep_neg = np.full((n, n_classes), _MASK_OFF)  # N u {TH}
    keep_pos[:, TH_INDEX] = 0.0
    keep_neg[:, TH_INDEX] = 0.0
    for i, ls in enumerate(label_sets):
        for r in ls.positives:
            pos_mask[i, class_index(r)] = 1.0
            keep_pos[i, class_index(r)] = 0.0
        for r in ls.negatives:
            keep_neg[i, class_index(r)] = 0.0
    return pos_mask, keep_pos, keep_neg


def adaptive_threshold_loss_batch(logits: Tensor, label_sets: Sequence[LabelSets]) -> Tensor:
    """Mean adaptive-thresholding loss over pairs; ``logits`` is [n_pairs, C].

    Per pair: L1 sums, over each positive class r, the cross entropy of r
    under a softmax restricted to the positives plus TH (absent when there
    are no positives); L2 is the cross entropy of TH under a softmax over
    the negatives plus TH.
    """
    n, n_classes = logits.shape
    if n != len(label_sets):
        raise DataError(f"{n} logit rows vs {len(label_sets)} label sets")
    pos_mask, keep_pos, keep_neg = _loss_masks(label_sets, n_classes)
    pos_counts = pos_mask.sum(axis=1)

    lse_pos = ad.logsumexp(ad.add(logits, Tensor(keep_pos)), axis=1)   # [n]
    pos_logit_sum = ad.sum_(ad.mul(logits, Tensor(pos_mask)), axis=1)
    l1 = ad.sub(ad.mul(lse_pos, Tensor(pos_counts)), pos_logit_sum)

    th_onehot = np.zeros((n, n_classes))
    th_onehot[:, TH_INDEX] = 1.0
    lse_neg = ad.logsumexp(ad.add(logits, Tensor(keep_neg)), axis=1)
    th_logit = ad.sum_(ad.mul(logits, Tensor(th_onehot)), axis=1)
    l2 = ad.sub(lse_neg, th_logit)

    return ad.mean(ad.add(l1, l2))


def adaptive_threshold_loss_terms(logits: Tensor, labels: LabelSets) -> tuple[Tensor, Tensor]:
    """(L1, L2) for one pair's logit vector [n_relations + 1]."""
    n_classes = logits.shape[0]
    row = ad.reshape(logits, (1, n_classes))
    pos_mask, keep_pos, keep_neg = _loss_masks([labels], n_classes)
    if labels.positives:
        lse_pos = ad.logsumexp(ad.add(row, Tensor(keep_pos)), axis=1)
        pos_sum = ad.sum_(ad.mul(row, Tensor(pos_mask)), axis=1)
        l1 = ad.reshape(ad.sub(ad.scale(lse_pos, float(len(labels.positives))), pos_sum), ())
    else:
        l1 = Tensor(0.0)
    th = np.zeros((1, n_classes))
    th[0, TH_INDEX] = 1.0
    lse_neg = ad.logsumexp(ad.add(row, Tensor(keep_neg)), axis=1)
    l2 = ad.reshape(ad.sub(lse_neg, ad.sum_(ad.mul(row, Tensor(th)), axis=1)), ())
    return l1, l2


def adaptive_threshold_loss(logits: Tensor, labels: LabelSets) -> Tensor:
    """Scalar L1 + L2 for one pair."""
    l1, l2 = adaptive_threshold_loss_terms(logits, labels)
    return ad.add(l1, l2)


def bce_loss(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross entropy over all (pair, relation) entries.

    ``probs`` are per-relation probabilities (the TH class is not part of
    this path); values are clamped to [1e-12, 1 - 1e-12] before the logs.
    """
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != probs.shape:
        raise DataError(f"targets shape {y.shape} != probs shape {probs.shape}")
    p = ad.clip(probs, 1e-12, 1.0 - 1e-12)
    one_minus = ad.sub(Tensor(np.ones_like(y)), p)
    ll = ad.add(ad.mul(ad.log(p), Tensor(y)),
                ad.mul(ad.log(one_minus), Tensor(1.0 - y)))
    return ad.scale(ad.mean(ll), -1.0)


# ---------------------------------------------------------------------------
# decision rules


def _values(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def decide_adaptive(logits) -> set[int]:
    """Relations whose logit strictly exceeds the TH logit; empty set is NA."""
    v = _values(logits)
    th = v[TH_INDEX]
    return {r for r in range(v.shape[0] - 1) if v[class_index(r)] > th}


def decide_global(probs, theta: float) -> set[int]:
    """Relations whose probability strictly exceeds a global threshold."""
    if not 0.0 < theta < 1.0:
        raise ConfigError(f"theta must be in (0, 1), got {theta}")
    v = _values(probs)
    return {r for r in range(v.shape[0]) if v[r] > theta}


def decide_per_class(probs, thetas: Sequence[float]) -> set[int]:
    v = _values(probs)
    if len(thetas) != v.shape[0]:
        raise ConfigError(f"{len(thetas)} thresholds for {v.shape[0]} relations")
    return {r for r in range(v.shape[0]) if v[r] > thetas[r]}


def relation_probabilities(logits) -> np.ndarray:
    """Sigmoid of the relation logits (TH dropped); input is [C] or [n, C]."""
    v = _values(logits)
    rel = np.delete(v, TH_INDEX, axis=-1)
    return 1.0 / (1.0 + np.exp(-rel))


# ---------------------------------------------------------------------------
# threshold tuning on development predictions


@dataclass(frozen=True)
class ScoredPair:
    """One dev pair: per-relation probabilities plus its gold positive ids."""

    probs: tuple[float, ...]
    gold: frozenset[int]


def _micro_f1(decisions: list[set[int]], pairs: Sequence[ScoredPair]) -> float:
    tp = fp = fn = 0
    for dec, pair in zip(decisions, pairs):
        tp += len(dec & pair.gold)
        fp += len(dec - pair.gold)
        fn += len(pair.gold - dec)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def tune_global_threshold(pairs: Sequence[ScoredPair],
                          grid: Sequence[float] = GLOBAL_THRESHOLD_GRID) -> float:
    """Grid-search the global threshold maximizing micro-F1; ties pick the
    smallest value."""
    if not pairs:
        raise DataError("cannot tune a threshold on an empty dev set")
    best_theta, best_f1 = None, -1.0
    for theta in grid:
        decisions = [decide_global(np.asarray(p.probs), theta) for p in pairs]
        f1 = _micro_f1(decisions, pairs)
        if f1 > best_f1:
            best_theta, best_f1 = theta, f1
    return best_theta


def tune_per_class_thresholds(pairs: Sequence[ScoredPair], n_relations: int,
                              max_sweeps: int = 10,
                              grid: Sequence[float] = PER_CLASS_THRESHOLD_GRID,
                              init: float = 0.5) -> tuple[float, ...]:
    """Cyclic coordinate ascent over per-class thresholds.

    Classes are visited in ascending id order; each update sets one class's
    threshold to the grid value maximizing overall dev micro-F1 with the
    others held fixed (smallest value on ties). Stops after a full sweep
    without change or ``max_sweeps`` sweeps. Never decreases micro-F1
    because the incumbent value is in the grid.
    """
    if not pairs:
        raise DataError("cannot tune thresholds on an empty dev set")
    if init not in grid:
        raise ConfigError(f"initial threshold {init} must be on the grid")
    thetas = [init] * n_relations
    prob_rows = [np.asarray(p.probs) for p in pairs]

    def f1_with(ts: list[float]) -> float:
        decisions = [decide_per_class(row, ts) for row in prob_rows]
        return _micro_f1(decisions, pairs)

    for _ in range(max_sweeps):
        changed = False
        for c in range(n_relations):
            best_theta, best_f1 = None, -1.0
            for cand in grid:
                trial = list(thetas)
                trial[c] = cand
                f1 = f1_with(trial)
                if f1 > best_f1:
                    best_theta, best_f1 = cand, f1
            if best_theta != thetas[c]:
                thetas[c] = best_theta
                changed = True
        if not changed:
            break
    return tuple(thetas)
