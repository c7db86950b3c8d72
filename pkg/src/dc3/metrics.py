"""Evaluation metrics: weighted F1 on certain-routed images, mean inner
distance of soft labels on fuzzy-routed clusters, their difference as the
run-selection score, and degeneration detection.

Undefined metrics (no certain record, no fuzzy record) propagate as None so a
degenerate run can never report a flattering 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .dataset import DatasetManifest, SoftLabel, load_images
from .model import HeadConfig, ModelOutputs, Prediction, forward_outputs, route_prediction

DEGENERATION_THRESHOLD = 0.10


@dataclass
class EvalRecord:
    image_id: str
    prediction: Prediction
    gt_soft: SoftLabel


@dataclass
class RunMetrics:
    f1_weighted: float | None
    inner_distance: float | None
    diff: float | None
    fraction_fuzzy_predicted: float
    degenerated: bool
    n_certain: int
    n_fuzzy: int
    per_class_f1: list[float] | None = None
    cluster_sizes: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "f1_weighted": self.f1_weighted,
            "inner_distance": self.inner_distance,
            "diff": self.diff,
            "fraction_fuzzy_predicted": self.fraction_fuzzy_predicted,
            "degenerated": self.degenerated,
            "n_certain": self.n_certain,
            "n_fuzzy": self.n_fuzzy,
            "per_class_f1": self.per_class_f1,
            "cluster_sizes": {str(c): n for c, n in sorted(self.cluster_sizes.items())},
        }

    @staticmethod
    def from_dict(d: dict) -> "RunMetrics":
        return RunMetrics(
            f1_weighted=d["f1_weighted"],
            inner_distance=d["inner_distance"],
            diff=d["diff"],
            fraction_fuzzy_predicted=d["fraction_fuzzy_predicted"],
            degenerated=d["degenerated"],
            n_certain=d["n_certain"],
            n_fuzzy=d["n_fuzzy"],
            per_class_f1=d.get("per_class_f1"),
            cluster_sizes={int(c): n for c, n in d.get("cluster_sizes", {}).items()},
        )


def _gt_class(record: EvalRecord) -> int:
    # ground-truth class = argmax of the soft label, ties to the lowest index
    return int(np.argmax(record.gt_soft.probs))


def per_class_f1(records: list[EvalRecord]) -> tuple[np.ndarray, np.ndarray]:
    """F1 and support per class over certain-routed records."""
    certain = [r for r in records if r.prediction.kind == "certain"]
    k = len(certain[0].gt_soft.probs)
    y_true = np.array([_gt_class(r) for r in certain])
    y_pred = np.array([r.prediction.class_index for r in certain])
    f1 = np.zeros(k)
    support = np.zeros(k)
    for c in range(k):
        tp = int(np.sum((y_true == c) & (y_pred == c)))
        fp = int(np.sum((y_true != c) & (y_pred == c)))
        fn = int(np.sum((y_true == c) & (y_pred != c)))
        support[c] = int(np.sum(y_true == c))
        denom = 2 * tp + fp + fn
        f1[c] = 2 * tp / denom if denom else 0.0
    return f1, support


def weighted_f1(records: list[EvalRecord]) -> float | None:
    """Support-weighted mean of per-class F1 on certain-routed records."""
    if not any(r.prediction.kind == "certain" for r in records):
        return None
    f1, support = per_class_f1(records)
    return float((f1 * support).sum() / support.sum())


def inner_distance(
    records: list[EvalRecord], group_by_class: bool = False
) -> float | None:
    """Mean over clusters of the mean euclidean distance between member soft
    labels and the cluster centroid.

    With ``group_by_class`` the certain-routed records are grouped by their
    predicted class instead (used when a run has no clustering output).
    """
    clusters: dict[int, list[np.ndarray]] = {}
    for r in records:
        if group_by_class:
            if r.prediction.kind == "certain":
                clusters.setdefault(r.prediction.class_index, []).append(
                    r.gt_soft.probs
                )
        elif r.prediction.kind == "fuzzy":
            clusters.setdefault(r.prediction.cluster_index, []).append(r.gt_soft.probs)
    if not clusters:
        return None
    per_cluster = []
    for members in clusters.values():
        arr = np.stack(members)
        centroid = arr.mean(axis=0)
        per_cluster.append(float(np.linalg.norm(arr - centroid, axis=1).mean()))
    return float(np.mean(per_cluster))


def cluster_sizes(records: list[EvalRecord]) -> dict[int, int]:
    sizes: dict[int, int] = {}
    for r in records:
        if r.prediction.kind == "fuzzy":
            sizes[r.prediction.cluster_index] = (
                sizes.get(r.prediction.cluster_index, 0) + 1
            )
    return sizes


def degeneration_check(records: list[EvalRecord]) -> bool:
    """A run degenerates when at most 10% of records fall on either side of
    the certain/fuzzy split (boundary included)."""
    if not records:
        raise ValueError("no records")
    frac = sum(r.prediction.kind == "fuzzy" for r in records) / len(records)
    return frac <= DEGENERATION_THRESHOLD or frac >= 1.0 - DEGENERATION_THRESHOLD


def diff_score(f1: float | None, d: float | None) -> float | None:
    """d - F1; the run-selection score, smaller is better."""
    if f1 is None or d is None:
        return None
    return d - f1


def compute_run_metrics(
    records: list[EvalRecord], vanilla_mode: bool = False
) -> RunMetrics:
    """Assemble all metrics from routed records.

    In vanilla mode every record is certain by construction; the distance is
    then computed over predicted classes treated as clusters and the
    degeneration flag does not apply.
    """
    if not records:
        raise ValueError("no records")
    n_fuzzy = sum(r.prediction.kind == "fuzzy" for r in records)
    n_certain = len(records) - n_fuzzy
    f1 = weighted_f1(records)
    d = inner_distance(records, group_by_class=vanilla_mode)
    pc = per_class_f1(records)[0].tolist() if n_certain else None
    return RunMetrics(
        f1_weighted=f1,
        inner_distance=d,
        diff=diff_score(f1, d),
        fraction_fuzzy_predicted=n_fuzzy / len(records),
        degenerated=False if vanilla_mode else degeneration_check(records),
        n_certain=n_certain,
        n_fuzzy=n_fuzzy,
        per_class_f1=pc,
        cluster_sizes=cluster_sizes(records),
    )


def evaluate(
    model: torch.nn.Module,
    cfg: HeadConfig,
    manifest: DatasetManifest,
    split: str = "validation",
    vanilla_mode: bool = False,
) -> RunMetrics:
    """Route every item of the split and compute all metrics."""
    items = manifest.items_in_split(split) if split != "all" else manifest.items
    items = [it for it in items if it.gt_soft is not None]
    if not items:
        raise ValueError(f"no evaluable items in split {split!r}")
    x = torch.from_numpy(load_images(manifest, items))
    outputs = forward_outputs(model, x, cfg)
    records = build_records(items, outputs, vanilla_mode=vanilla_mode)
    return compute_run_metrics(records, vanilla_mode=vanilla_mode)


def build_records(
    items, outputs: ModelOutputs, vanilla_mode: bool = False
) -> list[EvalRecord]:
    if vanilla_mode:
        cls = outputs.p_n.detach().argmax(dim=-1).cpu()
        preds = [
            Prediction("certain", int(cls[i]), None, 0.0) for i in range(len(outputs))
        ]
    else:
        preds = route_prediction(outputs)
    return [
        EvalRecord(image_id=it.image_id, prediction=p, gt_soft=it.gt_soft)
        for it, p in zip(items, preds)
    ]


def select_best_run(metrics: list[RunMetrics]) -> int | None:
    """Index of the lowest diff among non-degenerated runs, None if all
    degenerated or no run has a defined diff."""
    if not metrics:
        raise ValueError("no runs")
    best = None
    for i, m in enumerate(metrics):
        if m.degenerated or m.diff is None:
            continue
        if best is None or m.diff < metrics[best].diff:
            best = i
    return best
