"""Pluggable semi-supervised baselines supplying per-sample unlabeled losses.

Each algorithm returns one loss value per unlabeled image so the training
loop can scale individual images by their estimated certainty. Algorithms
that consume a second augmented view declare it via ``needs_second_view``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .losses import EPS
from .model import ModelOutputs

ALGORITHMS = ("pseudo_label", "pi_model", "mean_teacher")


@dataclass
class SSLAlgorithmSpec:
    name: str = "pseudo_label"
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in ALGORITHMS:
            raise ValueError(f"unknown ssl algorithm {self.name!r}")


@dataclass
class SSLBatch:
    """One training step's data: a labeled batch plus one unlabeled batch,
    optionally with a second, differently augmented view of the same
    unlabeled images (index-aligned)."""

    x_labeled: torch.Tensor
    labels: torch.Tensor
    x_unlabeled: torch.Tensor
    x_unlabeled_aug: torch.Tensor | None = None

    def __post_init__(self) -> None:
        if self.x_labeled.shape[0] != self.labels.shape[0]:
            raise ValueError("labeled batch and labels must align")
        if (
            self.x_unlabeled_aug is not None
            and self.x_unlabeled_aug.shape != self.x_unlabeled.shape
        ):
            raise ValueError("augmented view must align with the unlabeled batch")


def supervised_loss(
    p_n: torch.Tensor, labels: torch.Tensor, eps: float = EPS
) -> torch.Tensor:
    """Per-sample cross-entropy of the classification head on labeled data."""
    if int(labels.max()) >= p_n.shape[-1] or int(labels.min()) < 0:
        raise ValueError("label out of range")
    picked = p_n.gather(-1, labels.long().view(-1, 1)).squeeze(1)
    return -torch.log(torch.clamp(picked, min=eps))


def pseudo_label_loss(
    p_n: torch.Tensor, threshold: float, eps: float = EPS
) -> torch.Tensor:
    """CE against the detached argmax class where confidence reaches the
    threshold, zero elsewhere."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    detached = p_n.detach()
    pseudo = detached.argmax(dim=-1)
    mask = (detached.max(dim=-1).values >= threshold).to(p_n.dtype)
    picked = p_n.gather(-1, pseudo.view(-1, 1)).squeeze(1)
    return -torch.log(torch.clamp(picked, min=eps)) * mask


def pi_model_loss(p_n: torch.Tensor, p_n_aug: torch.Tensor) -> torch.Tensor:
    """Per-sample squared L2 distance between the two view predictions."""
    if p_n_aug is None:
        raise ValueError("pi-model needs a second augmented view")
    if p_n.shape != p_n_aug.shape:
        raise ValueError("view shapes must match")
    return ((p_n - p_n_aug) ** 2).sum(dim=-1)


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, decay: float) -> None:
    """teacher <- decay * teacher + (1 - decay) * student, parameters and buffers."""
    if not 0.0 <= decay < 1.0:
        raise ValueError("ema decay must lie in [0, 1)")
    for t, s in zip(teacher.parameters(), student.parameters()):
        t.mul_(decay).add_(s.detach(), alpha=1.0 - decay)
    for t, s in zip(teacher.buffers(), student.buffers()):
        t.copy_(s)


def linear_ramp(step: int, total_steps: int, fraction: float = 0.2) -> float:
    """0 -> 1 over the first ``fraction`` of training, then flat."""
    warm = max(1, int(round(total_steps * fraction)))
    return min(1.0, (step + 1) / warm)


class SSLAlgorithm:
    """Base interface; subclasses fill in the per-sample unlabeled loss."""

    name: str
    needs_second_view = False

    def attach(self, model: nn.Module) -> None:
        """Called once before training with the student model."""

    def per_sample_loss(
        self,
        outputs_u: ModelOutputs,
        outputs_u2: ModelOutputs | None,
        x_u2: torch.Tensor | None,
        step: int,
        total_steps: int,
    ) -> torch.Tensor:
        raise NotImplementedError

    def after_step(self) -> None:
        """Called after each optimizer step."""


class PseudoLabel(SSLAlgorithm):
    name = "pseudo_label"

    def __init__(self, threshold: float = 0.95, weight: float = 1.0) -> None:
        self.threshold = threshold
        self.weight = weight

    def per_sample_loss(self, outputs_u, outputs_u2, x_u2, step, total_steps):
        return pseudo_label_loss(outputs_u.p_n, self.threshold) * self.weight


class PiModel(SSLAlgorithm):
    name = "pi_model"
    needs_second_view = True

    def __init__(self, weight: float = 1.0, ramp_fraction: float = 0.2) -> None:
        self.weight = weight
        self.ramp_fraction = ramp_fraction

    def per_sample_loss(self, outputs_u, outputs_u2, x_u2, step, total_steps):
        if outputs_u2 is None:
            raise ValueError("pi-model needs a second augmented view")
        scale = self.weight * linear_ramp(step, total_steps, self.ramp_fraction)
        return pi_model_loss(outputs_u.p_n, outputs_u2.p_n) * scale


class MeanTeacher(SSLAlgorithm):
    """Consistency against an EMA copy of the student.

    The teacher sees the second augmented view, receives no gradients, and is
    updated after every optimizer step.
    """

    name = "mean_teacher"
    needs_second_view = True

    def __init__(
        self,
        ema_decay: float = 0.99,
        weight: float = 1.0,
        ramp_fraction: float = 0.2,
    ) -> None:
        if not 0.0 <= ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        self.ema_decay = ema_decay
        self.weight = weight
        self.ramp_fraction = ramp_fraction
        self.student: nn.Module | None = None
        self.teacher: nn.Module | None = None

    def attach(self, model: nn.Module) -> None:
        self.student = model
        self.teacher = copy.deepcopy(model)
        for p in self.teacher.parameters():
            p.requires_grad_(False)

    def teacher_p_n(self, x: torch.Tensor, k: int) -> torch.Tensor:
        with torch.no_grad():
            raw, _ = self.teacher(x)
        return torch.softmax(raw[:, :k], dim=-1)

    def per_sample_loss(self, outputs_u, outputs_u2, x_u2, step, total_steps):
        if self.teacher is None:
            raise RuntimeError("mean teacher not attached to a model")
        if x_u2 is None:
            raise ValueError("mean teacher needs a second augmented view")
        k = outputs_u.p_n.shape[-1]
        teacher_p = self.teacher_p_n(x_u2, k)
        scale = self.weight * linear_ramp(step, total_steps, self.ramp_fraction)
        return ((outputs_u.p_n - teacher_p) ** 2).sum(dim=-1) * scale

    def after_step(self) -> None:
        ema_update(self.teacher, self.student, self.ema_decay)


def build_algorithm(spec: SSLAlgorithmSpec) -> SSLAlgorithm:
    params = dict(spec.params)
    if spec.name == "pseudo_label":
        return PseudoLabel(**params)
    if spec.name == "pi_model":
        return PiModel(**params)
    if spec.name == "mean_teacher":
        return MeanTeacher(**params)
    raise ValueError(f"unknown ssl algorithm {spec.name!r}")
