"""The adaptive-thresholding loss and the three decision strategies.

Each entity pair gets a learnable threshold logit (class TH). The loss
pushes positive-class logits above TH and negative-class logits below;
decisions then need no tuned cutoff at all.

Run:  python demos/03_adaptive_threshold_loss.py
"""

import math

import numpy as np

from docrelex.autodiff import Tensor, backward
from docrelex.objective import (LabelSets, ScoredPair, adaptive_threshold_loss,
                                adaptive_threshold_loss_terms, decide_adaptive,
                                decide_global, tune_global_threshold,
                                tune_per_class_thresholds)

# Logit layout: index 0 is TH, relation r sits at index r + 1.
logits = np.array([0.0, 2.0, -1.0])  # TH=0, r0=+2 (gold), r1=-1
labels = LabelSets.from_positives({0}, 2)

l1, l2 = adaptive_threshold_loss_terms(Tensor(logits), labels)
print(f"L1 = {l1.item():.6f}  (= ln(1+e^-2) = {math.log(1 + math.exp(-2)):.6f})")
print(f"L2 = {l2.item():.6f}  (= ln(1+e^-1) = {math.log(1 + math.exp(-1)):.6f})")
print("decision:", decide_adaptive(logits), " (empty set would mean NA)")

# The loss is shift invariant: only margins against TH matter.
a = adaptive_threshold_loss(Tensor(logits), labels).item()
b = adaptive_threshold_loss(Tensor(logits + 123.0), labels).item()
print(f"\nshift invariance: |L(x) - L(x+123)| = {abs(a - b):.2e}")

# Gradients push the gold class up and the TH/negative logits apart.
t = Tensor(logits, requires_grad=True)
backward(adaptive_threshold_loss(t, labels))
print("dL/dlogits:", np.round(t.grad, 4), " (TH, gold, negative)")

# Baseline strategies tune thresholds on dev predictions instead.
rng = np.random.default_rng(0)
dev = []
for _ in range(200):
    gold = set(np.flatnonzero(rng.random(2) < 0.3))
    probs = np.clip(rng.normal(0.25, 0.15, size=2)
                    + 0.5 * np.isin(np.arange(2), list(gold)), 0.01, 0.99)
    dev.append(ScoredPair(probs=tuple(probs), gold=frozenset(gold)))

theta = tune_global_threshold(dev)
per_class = tune_per_class_thresholds(dev, 2)
print(f"\ntuned global threshold: {theta}")
print(f"tuned per-class thresholds: {per_class}")
print("decision for probs [0.62, 0.41] under global:",
      decide_global(np.array([0.62, 0.41]), theta))
