"""Walk through each loss term of the combined objective on hand-sized
numbers.

The total objective has four ingredients on top of the base SSL loss:
an inverse cross-entropy that pushes differently-labeled images into
different clusters, a self-supervised ambiguity term driven by a batch
prior, and an optional similarity term that keeps augmented views of an
ambiguous image in the same cluster. Run:

    python3 demos/02_loss_terms_tour.py
"""

import numpy as np
import torch

from dc3.losses import (
    LossWeights,
    ambiguity_loss,
    dc3_total_loss,
    inverse_cross_entropy,
    pseudo_ambiguity_targets,
    select_negative_partner,
    similarity_loss,
)
from dc3.model import HeadConfig, split_head

t = lambda x: torch.tensor(x, dtype=torch.float64)

print("== inverse cross-entropy ==")
print("disjoint clusters (the goal):", round(abs(float(inverse_cross_entropy(t([1, 0, 0.0]), t([0, 1, 0.0])))), 4))
print("identical uniform clusters:  ", round(float(inverse_cross_entropy(t([1/3]*3), t([1/3]*3))), 4))
print("same confident cluster (bad):", round(float(inverse_cross_entropy(t([1, 0, 0.0]), t([1, 0, 0.0]))), 2))

print("\n== negative partner selection ==")
labels = [0, 0, 1, 2, 1]
partners = select_negative_partner(labels, np.random.default_rng(3))
for i, j in enumerate(partners):
    print(f"  image {i} (class {labels[i]}) pairs with image {j} (class {labels[j]})")

print("\n== pseudo ambiguity targets ==")
p_a = t([0.1, 0.9, 0.5, 0.8, 0.2])
targets = pseudo_ambiguity_targets(p_a, prior_ambiguity=0.6)
print(f"  p_a      = {p_a.tolist()}")
print(f"  targets  = {targets.tolist()}  (3 highest marked ambiguous)")
print(f"  BCE loss = {float(ambiguity_loss(p_a, targets)):.4f}")

print("\n== similarity between augmented views ==")
view_a = t([[0.9, 0.05, 0.05]])
view_b = t([[0.8, 0.15, 0.05]])
for pa in (0.0, 0.5, 1.0):
    v = float(similarity_loss(view_a, view_b, t([pa])))
    print(f"  p_a={pa}: {v:.4f}")

print("\n== the combined objective on a random batch ==")
cfg = HeadConfig(k=2, k_prime=4, embedding_dim=8)
rng = np.random.default_rng(0)
raw = lambda: torch.tensor(rng.normal(size=(6, cfg.raw_dim)), dtype=torch.float64)
out_l, out_u, out_u2 = split_head(raw(), cfg), split_head(raw(), cfg), split_head(raw(), cfg)
ssl_vec = torch.tensor(rng.random(6), dtype=torch.float64)
labels_l = torch.tensor(rng.integers(0, 2, size=6))
breakdown = dc3_total_loss(
    ssl_vec, out_l, out_u, out_u2, labels_l, LossWeights(), np.random.default_rng(1)
)
for key, value in breakdown.to_dict().items():
    print(f"  {key:>24}: {value:.4f}")
