"""Three-headed output contract on top of a small backbone.

The backbone emits one raw vector of length k + k' + 1 per image. The first
k entries are classification logits, the next k' overclustering logits and
the last entry the ambiguity logit. Inference routes an image either to its
argmax class (certain) or to its argmax cluster (fuzzy) based on the
estimated ambiguity.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

BACKBONES = ("small_conv", "mlp")


@dataclass
class HeadConfig:
    k: int
    k_prime: int
    embedding_dim: int = 128

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.k_prime <= self.k:
            raise ValueError("k_prime must exceed k (overclustering)")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")

    @property
    def raw_dim(self) -> int:
        return self.k + self.k_prime + 1


@dataclass
class ModelOutputs:
    """Batched head outputs; all tensors share the leading batch dimension."""

    p_n: torch.Tensor
    p_o: torch.Tensor
    p_a: torch.Tensor
    logits_n: torch.Tensor
    logits_o: torch.Tensor
    logit_a: torch.Tensor
    embedding: torch.Tensor | None = None

    def __len__(self) -> int:
        return self.p_n.shape[0]


@dataclass
class Prediction:
    kind: str  # "certain" | "fuzzy"
    class_index: int | None
    cluster_index: int | None
    p_a: float

    def __post_init__(self) -> None:
        if self.kind not in ("certain", "fuzzy"):
            raise ValueError(f"unknown prediction kind {self.kind!r}")
        if (self.kind == "certain") != (self.class_index is not None):
            raise ValueError("certain predictions carry exactly a class index")
        if (self.kind == "fuzzy") != (self.cluster_index is not None):
            raise ValueError("fuzzy predictions carry exactly a cluster index")

    def encode(self) -> str:
        if self.kind == "certain":
            return f"class:{self.class_index}"
        return f"cluster:{self.cluster_index}"


def split_head(
    raw: torch.Tensor, cfg: HeadConfig, embedding: torch.Tensor | None = None
) -> ModelOutputs:
    """Split a raw output batch into classification, clustering and ambiguity.

    Softmax over the first k entries gives p_n, softmax over the next k'
    gives p_o, and a sigmoid on the last entry gives p_a.
    """
    if raw.dim() == 1:
        raw = raw.unsqueeze(0)
    if raw.shape[-1] != cfg.raw_dim:
        raise ValueError(
            f"raw output has length {raw.shape[-1]}, expected {cfg.raw_dim}"
        )
    logits_n = raw[:, : cfg.k]
    logits_o = raw[:, cfg.k : cfg.k + cfg.k_prime]
    logit_a = raw[:, -1]
    return ModelOutputs(
        p_n=F.softmax(logits_n, dim=-1),
        p_o=F.softmax(logits_o, dim=-1),
        p_a=torch.sigmoid(logit_a),
        logits_n=logits_n,
        logits_o=logits_o,
        logit_a=logit_a,
        embedding=embedding,
    )


def route_prediction(outputs: ModelOutputs) -> list[Prediction]:
    """Route every sample: p_a < 0.5 classifies, p_a >= 0.5 clusters."""
    preds = []
    p_a = outputs.p_a.detach().cpu()
    cls = outputs.p_n.detach().argmax(dim=-1).cpu()
    clu = outputs.p_o.detach().argmax(dim=-1).cpu()
    for i in range(len(outputs)):
        a = float(p_a[i])
        if a < 0.5:
            preds.append(Prediction("certain", int(cls[i]), None, a))
        else:
            preds.append(Prediction("fuzzy", None, int(clu[i]), a))
    return preds


class SmallConv(nn.Module):
    """Four conv-norm-relu-pool blocks followed by a linear head."""

    def __init__(self, cfg: HeadConfig, in_channels: int = 1) -> None:
        super().__init__()
        chans = (32, 64, 96, 128)
        blocks = []
        prev = in_channels
        for ch in chans:
            blocks += [
                nn.Conv2d(prev, ch, 3, padding=1),
                nn.GroupNorm(4, ch),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            prev = ch
        self.features = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.embed = nn.Linear(chans[-1], cfg.embedding_dim)
        self.head = nn.Linear(cfg.embedding_dim, cfg.raw_dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.pool(self.features(x)).flatten(1)
        emb = F.relu(self.embed(h))
        return self.head(emb), emb


class Mlp(nn.Module):
    """Flatten, one hidden layer, embedding layer, linear head."""

    def __init__(
        self,
        cfg: HeadConfig,
        in_channels: int = 1,
        image_size: int = 32,
        hidden: int = 256,
    ) -> None:
        super().__init__()
        self.fc1 = nn.Linear(in_channels * image_size * image_size, hidden)
        self.embed = nn.Linear(hidden, cfg.embedding_dim)
        self.head = nn.Linear(cfg.embedding_dim, cfg.raw_dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = F.relu(self.fc1(x.flatten(1)))
        emb = F.relu(self.embed(h))
        return self.head(emb), emb


def build_backbone(
    name: str,
    cfg: HeadConfig,
    image_size: int = 32,
    in_channels: int = 1,
    seed: int = 0,
    hidden: int = 256,
) -> nn.Module:
    """Construct a backbone with deterministic initialization under ``seed``."""
    torch.manual_seed(seed)
    if name == "small_conv":
        return SmallConv(cfg, in_channels=in_channels)
    if name == "mlp":
        return Mlp(cfg, in_channels=in_channels, image_size=image_size, hidden=hidden)
    raise ValueError(f"unknown backbone {name!r}; supported: {BACKBONES}")


@torch.no_grad()
def forward_outputs(
    model: nn.Module, x: torch.Tensor, cfg: HeadConfig, batch_size: int = 256
) -> ModelOutputs:
    """Inference over a (possibly large) batch without gradients."""
    model.eval()
    raws, embs = [], []
    for start in range(0, x.shape[0], batch_size):
        raw, emb = model(x[start : start + batch_size])
        raws.append(raw)
        embs.append(emb)
    return split_head(torch.cat(raws), cfg, embedding=torch.cat(embs))


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    cfg: HeadConfig,
    backbone: str,
    image_size: int,
    in_channels: int = 1,
    step: int = 0,
    hidden: int = 256,
) -> None:
    torch.save(
        {
            "state_dict": model.state_dict(),
            "head_config": asdict(cfg),
            "backbone": backbone,
            "image_size": image_size,
            "in_channels": in_channels,
            "hidden": hidden,
            "step": step,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[nn.Module, HeadConfig, dict]:
    """Rebuild the model from a checkpoint; returns (model, cfg, metadata)."""
    blob = torch.load(path, map_location="cpu", weights_only=True)
    cfg = HeadConfig(**blob["head_config"])
    model = build_backbone(
        blob["backbone"],
        cfg,
        image_size=blob["image_size"],
        in_channels=blob["in_channels"],
        hidden=blob.get("hidden", 256),
    )
    model.load_state_dict(blob["state_dict"])
    model.eval()
    meta = {k: blob[k] for k in ("backbone", "image_size", "in_channels", "step")}
    return model, cfg, meta
