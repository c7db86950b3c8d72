"""Training loop wiring dataset, model, SSL baseline and the combined loss.

Runs are deterministic under their seed: model init, batch order, label
sampling, augmentations and partner selection all derive from it. A run
writes its config, loss history, metrics history and final checkpoint into
an output directory.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics as metrics_mod
from .dataset import (
    DatasetManifest,
    apply_label_mode,
    is_fuzzy,
    load_images,
    load_manifest,
    split_dataset,
)
from .losses import LossWeights, dc3_total_loss
from .model import (
    HeadConfig,
    build_backbone,
    forward_outputs,
    load_checkpoint,
    save_checkpoint,
    split_head,
)
from .ssl_algos import SSLAlgorithmSpec, SSLBatch, build_algorithm, supervised_loss


class TrainingDiverged(RuntimeError):
    """Raised when the objective becomes non-finite; carries the breakdown."""

    def __init__(self, step: int, breakdown: dict) -> None:
        super().__init__(f"non-finite loss at step {step}: {breakdown}")
        self.step = step
        self.breakdown = breakdown


@dataclass
class RunConfig:
    manifest: str
    ssl: SSLAlgorithmSpec = field(default_factory=SSLAlgorithmSpec)
    backbone: str = "small_conv"
    k_prime: int | None = None  # None -> 3 * k
    embedding_dim: int = 128
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 64
    steps: int = 500
    lr: float = 0.03
    momentum: float = 0.9
    optimizer: str = "sgd"
    grad_clip: float | None = 5.0  # max gradient norm; None disables
    seed: int = 0
    label_mode: str = "sampled"
    supervised_fraction: float | None = None  # None -> keep manifest splits
    val_fraction: float = 0.2
    eval_every: int = 0  # 0 -> final evaluation only
    dc3_enabled: bool = True
    force_certain: bool = False  # p_a treated as 0 in the loss (ablations)
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (partner selection)")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.optimizer != "sgd":
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ssl"] = {"name": self.ssl.name, "params": dict(self.ssl.params)}
        d["weights"] = dataclasses.asdict(self.weights)
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        if "ssl" in d and isinstance(d["ssl"], dict):
            d["ssl"] = SSLAlgorithmSpec(**d["ssl"])
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        return RunConfig(**d)

    @staticmethod
    def from_json(path: str | Path) -> "RunConfig":
        return RunConfig.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RunArtifacts:
    config: RunConfig
    out_dir: Path | None
    checkpoint_path: Path | None
    loss_history: list[dict]
    metrics_history: list[tuple[int, metrics_mod.RunMetrics]]
    final_metrics: metrics_mod.RunMetrics
    embeddings_path: Path | None = None


def _shift_image(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape[-2:]
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[..., ys, xs] = img[..., ys_src, xs_src]
    return out


def augment_batch(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random flip, +-10% translation and brightness jitter."""
    out = x.copy()
    n, _, h, _ = out.shape
    flips = rng.random(n) < 0.5
    out[flips] = out[flips, :, :, ::-1]
    max_shift = max(1, int(round(0.1 * h)))
    shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
    brightness = rng.uniform(0.9, 1.1, size=n).astype(np.float32)
    for i in range(n):
        dy, dx = int(shifts[i, 0]), int(shifts[i, 1])
        if dy or dx:
            out[i] = _shift_image(out[i], dy, dx)
    out *= brightness[:, None, None, None]
    return np.clip(out, 0.0, 1.0)


def _prepare_pools(
    manifest: DatasetManifest, config: RunConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Resolve splits and label mode into index pools and training labels."""
    if config.supervised_fraction is not None:
        split_dataset(manifest, config.supervised_fraction, config.val_fraction, config.seed)

    images = load_images(manifest)
    labeled_idx, labels = [], []
    unlabeled_idx = []
    for i, item in enumerate(manifest.items):
        if item.split == "labeled":
            y = apply_label_mode(item, config.label_mode, rng)
            if y is not None:
                labeled_idx.append(i)
                labels.append(y)
        elif item.split == "unlabeled":
            # certain_only removes fuzzy images from training entirely
            if (
                config.label_mode == "certain_only"
                and item.gt_soft is not None
                and is_fuzzy(item.gt_soft)
            ):
                continue
            unlabeled_idx.append(i)
    if not labeled_idx:
        raise ValueError("no labeled items after applying the label mode")
    if not unlabeled_idx:
        raise ValueError("no unlabeled items after applying the label mode")
    return (
        images,
        np.asarray(labeled_idx),
        np.asarray(labels, dtype=np.int64),
        np.asarray(unlabeled_idx),
    )


def _cosine_lr(base_lr: float, step: int, total: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / max(1, total)))


def train(config: RunConfig, manifest: DatasetManifest | None = None) -> RunArtifacts:
    """Run one training; returns artifacts and writes them when out_dir is set."""
    if manifest is None:
        manifest = load_manifest(config.manifest)
    rng = np.random.default_rng(config.seed)

    images, labeled_idx, labels, unlabeled_idx = _prepare_pools(manifest, config, rng)
    image_size = images.shape[-1]
    k = manifest.num_classes
    cfg = HeadConfig(
        k=k,
        k_prime=config.k_prime if config.k_prime is not None else 3 * k,
        embedding_dim=config.embedding_dim,
    )
    model = build_backbone(config.backbone, cfg, image_size=image_size, seed=config.seed)
    algo = build_algorithm(config.ssl)
    algo.attach(model)
    opt = torch.optim.SGD(model.parameters(), lr=config.lr, momentum=config.momentum)
    vanilla_eval = (not config.dc3_enabled) or config.force_certain

    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=1))

    loss_history: list[dict] = []
    metrics_history: list[tuple[int, metrics_mod.RunMetrics]] = []

    for step in range(config.steps):
        for group in opt.param_groups:
            group["lr"] = _cosine_lr(config.lr, step, config.steps)

        pos_l = rng.integers(0, len(labeled_idx), size=config.batch_size)
        bi_l = labeled_idx[pos_l]
        bi_u = unlabeled_idx[rng.integers(0, len(unlabeled_idx), size=config.batch_size)]
        y_l = labels[pos_l]
        x_l = augment_batch(images[bi_l], rng)
        x_u = augment_batch(images[bi_u], rng)
        x_u2 = augment_batch(images[bi_u], rng) if algo.needs_second_view else None

        model.train()
        batch = SSLBatch(
            x_labeled=torch.from_numpy(x_l),
            labels=torch.from_numpy(y_l),
            x_unlabeled=torch.from_numpy(x_u),
            x_unlabeled_aug=torch.from_numpy(x_u2) if x_u2 is not None else None,
        )

        raw_l, _ = model(batch.x_labeled)
        outputs_l = split_head(raw_l, cfg)
        raw_u, _ = model(batch.x_unlabeled)
        outputs_u = split_head(raw_u, cfg)

        outputs_u2 = None
        if batch.x_unlabeled_aug is not None and (
            algo.name == "pi_model"
            or (config.dc3_enabled and config.weights.ws != 0.0)
        ):
            raw_u2, _ = model(batch.x_unlabeled_aug)
            outputs_u2 = split_head(raw_u2, cfg)

        sup = supervised_loss(outputs_l.p_n, batch.labels).mean()
        ssl_vec = algo.per_sample_loss(
            outputs_u, outputs_u2, batch.x_unlabeled_aug, step, config.steps
        )

        if config.dc3_enabled:
            loss_outputs_u = outputs_u
            if config.force_certain:
                loss_outputs_u = dataclasses.replace(
                    outputs_u, p_a=torch.zeros_like(outputs_u.p_a)
                )
            breakdown = dc3_total_loss(
                ssl_vec, outputs_l, loss_outputs_u, outputs_u2, batch.labels,
                config.weights, rng
            )
            objective = sup + breakdown.total
            entry = {
                "step": step,
                "objective": float(objective.detach()),
                "supervised": float(sup.detach()),
            }
            entry.update(breakdown.to_dict())
        else:
            ssl_mean = ssl_vec.mean()
            objective = sup + ssl_mean
            entry = {
                "step": step,
                "objective": float(objective.detach()),
                "supervised": float(sup.detach()),
                "total": float(ssl_mean.detach()),
                "ssl_term": float(ssl_mean.detach()),
                "ce_inv_labeled": 0.0,
                "ce_inv_unlabeled": 0.0,
                "ambiguity_term": 0.0,
                "similarity_term": 0.0,
                "fraction_predicted_fuzzy": 0.0,
            }

        if not torch.isfinite(objective):
            raise TrainingDiverged(step, entry)

        opt.zero_grad()
        objective.backward()
        if config.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        algo.after_step()
        loss_history.append(entry)

        if config.eval_every and (step + 1) % config.eval_every == 0 and step + 1 < config.steps:
            metrics_history.append(
                (step + 1, metrics_mod.evaluate(model, cfg, manifest, vanilla_mode=vanilla_eval))
            )

    final = metrics_mod.evaluate(model, cfg, manifest, vanilla_mode=vanilla_eval)
    metrics_history.append((config.steps, final))

    checkpoint_path = None
    if out_dir:
        checkpoint_path = out_dir / "checkpoint.pt"
        save_checkpoint(
            checkpoint_path, model, cfg, config.backbone, image_size, step=config.steps
        )
        with (out_dir / "loss_history.jsonl").open("w") as fh:
            for entry in loss_history:
                fh.write(json.dumps(entry) + "\n")
        with (out_dir / "metrics_history.jsonl").open("w") as fh:
            for step, m in metrics_history:
                fh.write(json.dumps({"step": step, **m.to_dict()}) + "\n")

    return RunArtifacts(
        config=config,
        out_dir=out_dir,
        checkpoint_path=checkpoint_path,
        loss_history=loss_history,
        metrics_history=metrics_history,
        final_metrics=final,
    )


@dataclass
class SuiteResult:
    runs: list[RunArtifacts]
    final_metrics: list[metrics_mod.RunMetrics]
    best_index: int | None
    summary: dict

    def best_run(self) -> RunArtifacts | None:
        return None if self.best_index is None else self.runs[self.best_index]


def summarize(metrics: list[metrics_mod.RunMetrics]) -> dict:
    """Mean +- sample std of F1, distance and diff over non-degenerated runs."""
    kept = [m for m in metrics if not m.degenerated]
    summary: dict = {
        "n_runs": len(metrics),
        "n_excluded_degenerated": len(metrics) - len(kept),
        "all_degenerated": not kept,
    }
    for key, values in (
        ("f1_weighted", [m.f1_weighted for m in kept]),
        ("inner_distance", [m.inner_distance for m in kept]),
        ("diff", [m.diff for m in kept]),
    ):
        defined = [v for v in values if v is not None]
        if defined:
            summary[key] = {
                "mean": float(np.mean(defined)),
                "std": float(np.std(defined, ddof=1)) if len(defined) > 1 else 0.0,
                "n": len(defined),
            }
        else:
            summary[key] = None
    return summary


def run_suite(
    config: RunConfig, n_seeds: int = 3, manifest: DatasetManifest | None = None
) -> SuiteResult:
    """Train ``n_seeds`` runs with consecutive seeds and select the best by
    diff score among non-degenerated runs."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    runs = []
    for i in range(n_seeds):
        sub = dataclasses.replace(
            config,
            seed=config.seed + i,
            out_dir=str(Path(config.out_dir) / f"seed{config.seed + i}")
            if config.out_dir
            else None,
        )
        runs.append(train(sub, manifest=manifest))
    finals = [r.final_metrics for r in runs]
    best = metrics_mod.select_best_run(finals)
    summary = summarize(finals)
    summary["best_index"] = best
    summary["seeds"] = [r.config.seed for r in runs]
    if config.out_dir:
        Path(config.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(config.out_dir) / "summary.json").write_text(json.dumps(summary, indent=1))
    return SuiteResult(runs=runs, final_metrics=finals, best_index=best, summary=summary)


def export_embeddings(
    checkpoint: str | Path, manifest: DatasetManifest | str | Path, out: str | Path
) -> Path:
    """Write one CSV row per item: id, embedding, p_a, routed prediction, gt."""
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    model, cfg, _ = load_checkpoint(checkpoint)
    items = [it for it in manifest.items if it.gt_soft is not None]
    x = torch.from_numpy(load_images(manifest, items))
    outputs = forward_outputs(model, x, cfg)
    preds = metrics_mod.build_records(items, outputs)
    emb = outputs.embedding.cpu().numpy()
    p_a = outputs.p_a.cpu().numpy()

    out = Path(out)
    dim = emb.shape[1]
    k = manifest.num_classes
    header = (
        ["image_id"]
        + [f"e{j}" for j in range(dim)]
        + ["p_a", "prediction"]
        + [f"gt{j}" for j in range(k)]
    )
    lines = [",".join(header)]
    for i, (item, rec) in enumerate(zip(items, preds)):
        cells = [item.image_id]
        cells += [format(float(v), ".10g") for v in emb[i]]
        cells.append(format(float(p_a[i]), ".10g"))
        cells.append(rec.prediction.encode())
        cells += [format(float(v), ".10g") for v in item.gt_soft.probs]
        lines.append(",".join(cells))
    out.write_text("\n".join(lines) + "\n")
    return out
