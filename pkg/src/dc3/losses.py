"""Loss terms for combined classification, overclustering and ambiguity.

The total objective scales the base SSL loss and the unlabeled inverse
cross-entropy by (1 - p_a), trains the ambiguity head against count-based
pseudo targets, and optionally pulls augmented views of ambiguous images
into the same cluster. All ambiguity scale factors, pseudo labels and
pseudo targets are detached: the ambiguity logit receives gradient only
through the ambiguity term itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .model import ModelOutputs

EPS = 1e-7

SKIP = -1  # partner marker for batch positions without a differing label

TARGET_ORDERS = ("descending", "ascending_literal")


@dataclass
class LossWeights:
    """Weights and priors for the combined objective.

    wou/wol weight the inverse cross-entropy on unlabeled/labeled batches,
    wa the ambiguity term and ws the similarity term. prior_ambiguity is the
    assumed fraction of fuzzy images per batch and confidence_tau the
    pseudo-label confidence threshold for the unlabeled inverse CE.
    """

    wou: float = 10.0
    wol: float = 10.0
    wa: float = 0.1
    ws: float = 0.1
    prior_ambiguity: float = 0.6
    confidence_tau: float = 0.95
    ambiguity_target_order: str = "descending"

    def __post_init__(self) -> None:
        for name in ("wou", "wol", "wa", "ws"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.prior_ambiguity < 1.0:
            raise ValueError("prior_ambiguity must lie in (0, 1)")
        if not 0.0 < self.confidence_tau <= 1.0:
            raise ValueError("confidence_tau must lie in (0, 1]")
        if self.ambiguity_target_order not in TARGET_ORDERS:
            raise ValueError(f"unknown target order {self.ambiguity_target_order!r}")


@dataclass
class LossBreakdown:
    """Per-term values of one objective evaluation.

    ``total`` keeps its autograd graph; the individual terms are detached
    scalars. ``total`` always equals
    ssl_term + wou*ce_inv_unlabeled + wol*ce_inv_labeled
    + wa*ambiguity_term + ws*similarity_term
    (terms whose weight is exactly zero are skipped and reported as 0).
    """

    total: torch.Tensor
    ssl_term: float
    ce_inv_labeled: float
    ce_inv_unlabeled: float
    ambiguity_term: float
    similarity_term: float
    fraction_predicted_fuzzy: float
    partners_labeled: np.ndarray | None = field(default=None, repr=False)
    partners_unlabeled: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "total": float(self.total.detach()),
            "ssl_term": self.ssl_term,
            "ce_inv_labeled": self.ce_inv_labeled,
            "ce_inv_unlabeled": self.ce_inv_unlabeled,
            "ambiguity_term": self.ambiguity_term,
            "similarity_term": self.similarity_term,
            "fraction_predicted_fuzzy": self.fraction_predicted_fuzzy,
        }


def inverse_cross_entropy(
    p: torch.Tensor, p_neg: torch.Tensor, eps: float = EPS
) -> torch.Tensor:
    """-sum_c p_c * ln(1 - p_neg_c), clamped inside the log; >= 0 and finite.

    Zero iff the mass of ``p`` sits where ``p_neg`` has no mass, i.e. the two
    distributions occupy disjoint clusters. Accepts single vectors (returns a
    scalar) or batches (returns one value per row).
    """
    if p.shape != p_neg.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(p_neg.shape)}")
    return -(p * torch.log(torch.clamp(1.0 - p_neg, min=eps))).sum(dim=-1)


def select_negative_partner(labels, rng: np.random.Generator) -> np.ndarray:
    """For each batch position pick a uniform random position with a
    different label; positions without any differing label get SKIP."""
    labels = np.asarray(labels)
    n = len(labels)
    if n < 2:
        raise ValueError("need a batch of at least 2 samples")
    partners = np.full(n, SKIP, dtype=np.int64)
    for i in range(n):
        eligible = np.flatnonzero(labels != labels[i])
        if len(eligible):
            partners[i] = eligible[rng.integers(len(eligible))]
    return partners


def pseudo_ambiguity_targets(
    p_a: torch.Tensor, prior_ambiguity: float, order: str = "descending"
) -> torch.Tensor:
    """Binary pseudo targets for the ambiguity head.

    Exactly floor(B * prior_ambiguity) entries are set to 1. With
    ``descending`` (default) the highest-p_a entries are marked ambiguous;
    ``ascending_literal`` marks the lowest instead. Ties break by batch
    position. The result is detached.
    """
    if order not in TARGET_ORDERS:
        raise ValueError(f"unknown target order {order!r}")
    values = p_a.detach()
    n = values.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    m = int(np.floor(n * prior_ambiguity))
    descending = order == "descending"
    idx = torch.argsort(values, descending=descending, stable=True)
    targets = torch.zeros(n, dtype=values.dtype, device=values.device)
    targets[idx[:m]] = 1.0
    return targets


def ambiguity_loss(
    p_a: torch.Tensor, targets: torch.Tensor, eps: float = EPS
) -> torch.Tensor:
    """Mean binary cross-entropy between pseudo targets and p_a."""
    if p_a.shape != targets.shape:
        raise ValueError("p_a and targets must align")
    p = torch.clamp(p_a, min=eps, max=1.0 - eps)
    h = targets.detach()
    return (-(1.0 - h) * torch.log(1.0 - p) - h * torch.log(p)).mean()


def similarity_loss(
    p_o: torch.Tensor, p_o_aug: torch.Tensor, p_a: torch.Tensor, eps: float = EPS
) -> torch.Tensor:
    """Ambiguity-scaled cross-entropy between cluster assignments of two views.

    The p_a factor is detached; minimizing also sharpens p_o since the CE
    upper-bounds the entropy of the first view.
    """
    if p_o.shape != p_o_aug.shape:
        raise ValueError("view shapes must match")
    ce = -(p_o * torch.log(p_o_aug + eps)).sum(dim=-1)
    return (ce * p_a.detach()).mean()


def confidence_mask(p_n: torch.Tensor, tau: float) -> torch.Tensor:
    """1 where the top class probability reaches ``tau``, else 0; detached."""
    return (p_n.detach().max(dim=-1).values >= tau).to(p_n.dtype)


def _masked_mean(values: torch.Tensor, partners: np.ndarray) -> torch.Tensor:
    # skip positions contribute 0; denominator stays the full batch size
    valid = torch.as_tensor(partners != SKIP, dtype=values.dtype, device=values.device)
    return (values * valid).sum() / values.shape[0]


def dc3_total_loss(
    ssl_per_sample: torch.Tensor,
    outputs_l: ModelOutputs,
    outputs_u: ModelOutputs,
    outputs_u2: ModelOutputs | None,
    labels_l: torch.Tensor,
    weights: LossWeights,
    rng: np.random.Generator,
    stop_scales: torch.Tensor | None = None,
) -> LossBreakdown:
    """Combine the SSL loss with the three extension terms.

    ssl_per_sample must align with the unlabeled batch. Inverse-CE partners
    come from the true labels on the labeled batch and from detached argmax
    pseudo labels on the unlabeled batch. When no second view is given the
    similarity term is zero. Terms with weight exactly 0 are skipped, which
    also leaves the rng stream untouched.

    ``stop_scales`` pins the detached ambiguity values used in all scale
    factors and pseudo targets to the given constants; finite-difference
    verification needs this since those paths deliberately carry no gradient.
    """
    if len(outputs_u) == 0:
        raise ValueError("empty unlabeled batch")
    if ssl_per_sample.shape[0] != len(outputs_u):
        raise ValueError("ssl_per_sample must align with the unlabeled batch")

    p_a_u = outputs_u.p_a.detach() if stop_scales is None else stop_scales.detach()
    certain_scale = 1.0 - p_a_u

    ssl_term = (ssl_per_sample * certain_scale).mean()
    total = ssl_term

    ce_inv_l = torch.zeros((), dtype=ssl_term.dtype)
    partners_l = None
    if weights.wol != 0.0:
        partners_l = select_negative_partner(
            np.asarray(labels_l.detach().cpu(), dtype=np.int64), rng
        )
        gathered = outputs_l.p_o[np.where(partners_l == SKIP, 0, partners_l)]
        ce_inv_l = _masked_mean(
            inverse_cross_entropy(outputs_l.p_o, gathered), partners_l
        )
        total = total + weights.wol * ce_inv_l

    ce_inv_u = torch.zeros((), dtype=ssl_term.dtype)
    partners_u = None
    if weights.wou != 0.0:
        pseudo = np.asarray(
            outputs_u.p_n.detach().argmax(dim=-1).cpu(), dtype=np.int64
        )
        partners_u = select_negative_partner(pseudo, rng)
        gathered = outputs_u.p_o[np.where(partners_u == SKIP, 0, partners_u)]
        mask = confidence_mask(outputs_u.p_n, weights.confidence_tau)
        ce_inv_u = _masked_mean(
            inverse_cross_entropy(outputs_u.p_o, gathered) * mask * certain_scale,
            partners_u,
        )
        total = total + weights.wou * ce_inv_u

    amb = torch.zeros((), dtype=ssl_term.dtype)
    if weights.wa != 0.0:
        targets = pseudo_ambiguity_targets(
            p_a_u, weights.prior_ambiguity, weights.ambiguity_target_order
        )
        amb = ambiguity_loss(outputs_u.p_a, targets)
        total = total + weights.wa * amb

    sim = torch.zeros((), dtype=ssl_term.dtype)
    if weights.ws != 0.0 and outputs_u2 is not None:
        sim = similarity_loss(outputs_u.p_o, outputs_u2.p_o, p_a_u)
        total = total + weights.ws * sim

    return LossBreakdown(
        total=total,
        ssl_term=float(ssl_term.detach()),
        ce_inv_labeled=float(ce_inv_l.detach()),
        ce_inv_unlabeled=float(ce_inv_u.detach()),
        ambiguity_term=float(amb.detach()),
        similarity_term=float(sim.detach()),
        fraction_predicted_fuzzy=float((p_a_u >= 0.5).to(p_a_u.dtype).mean()),
        partners_labeled=partners_l,
        partners_unlabeled=partners_u,
    )
