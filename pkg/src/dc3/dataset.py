"""Soft-label data model, manifest IO, dataset splitting and a synthetic generator.

Every image carries a list of hard annotations from (possibly disagreeing)
annotators. The soft label of an image is the per-class frequency of those
annotations; an image is *certain* when the soft label is one-hot and *fuzzy*
when at least two classes received mass. Soft labels are always recomputed
from the stored annotations so the two can never drift apart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SPLITS = ("labeled", "unlabeled", "validation")
LABEL_MODES = ("sampled", "argmax", "certain_only")

FUZZY_TOL = 1e-9


class ManifestError(ValueError):
    """Raised when a manifest file or its invariants are broken."""


@dataclass
class AnnotationRecord:
    """One hard class guess for one image by one annotator."""

    image_id: str
    annotator_id: str
    class_index: int
    repetition: int = 1
    timestamp: float | None = None
    duration: float | None = None

    def to_dict(self) -> dict:
        out = {
            "annotator": self.annotator_id,
            "class": self.class_index,
            "repetition": self.repetition,
        }
        if self.timestamp is not None:
            out["timestamp"] = self.timestamp
        if self.duration is not None:
            out["duration"] = self.duration
        return out

    @staticmethod
    def from_dict(image_id: str, d: dict) -> "AnnotationRecord":
        return AnnotationRecord(
            image_id=image_id,
            annotator_id=str(d["annotator"]),
            class_index=int(d["class"]),
            repetition=int(d.get("repetition", 1)),
            timestamp=d.get("timestamp"),
            duration=d.get("duration"),
        )


class SoftLabel:
    """Probability vector over k classes; entries >= 0 and summing to 1."""

    __slots__ = ("probs",)

    def __init__(self, probs) -> None:
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1:
            raise ValueError("soft label must be a 1-D vector")
        if np.any(p < 0):
            raise ValueError("soft label entries must be >= 0")
        if abs(float(p.sum()) - 1.0) > 1e-6:
            raise ValueError(f"soft label must sum to 1, got {p.sum():.8f}")
        self.probs = p

    def __len__(self) -> int:
        return len(self.probs)

    def __repr__(self) -> str:
        return f"SoftLabel({np.round(self.probs, 4).tolist()})"

    def __eq__(self, other) -> bool:
        return isinstance(other, SoftLabel) and np.array_equal(self.probs, other.probs)


@dataclass
class DatasetItem:
    image_id: str
    image_path: str
    annotations: list[AnnotationRecord] = field(default_factory=list)
    split: str = "unlabeled"
    gt_soft: SoftLabel | None = None
    # generator provenance: intended blend before annotation sampling
    source: dict | None = None


@dataclass
class DatasetManifest:
    name: str
    num_classes: int
    class_names: list[str]
    items: list[DatasetItem]
    label_mode: str = "sampled"
    root: Path | None = None  # directory that image paths are relative to

    def item_by_id(self, image_id: str) -> DatasetItem:
        for it in self.items:
            if it.image_id == image_id:
                return it
        raise KeyError(image_id)

    def items_in_split(self, split: str) -> list[DatasetItem]:
        return [it for it in self.items if it.split == split]


@dataclass
class SyntheticConfig:
    k: int = 2
    n_images: int = 100
    fuzzy_fraction: float = 0.2
    ambiguity_range: tuple[float, float] = (0.2, 0.8)
    image_size: int = 32
    annotators_per_image: int = 3
    seed: int = 0

    def validate(self) -> None:
        if not 2 <= self.k <= len(PROTOTYPE_NAMES):
            raise ValueError(f"k must be in [2, {len(PROTOTYPE_NAMES)}]")
        if not 0.0 <= self.fuzzy_fraction <= 1.0:
            raise ValueError("fuzzy_fraction must lie in [0, 1]")
        lo, hi = self.ambiguity_range
        if not (0.0 < lo <= hi < 1.0):
            raise ValueError("ambiguity_range must be contained in (0, 1)")
        if self.annotators_per_image < 1:
            raise ValueError("annotators_per_image must be >= 1")
        if self.fuzzy_fraction > 0 and self.annotators_per_image < 2:
            raise ValueError("fuzzy items need annotators_per_image >= 2")
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")


# ---------------------------------------------------------------------------
# soft-label operations


def aggregate_soft_label(annotations: list[AnnotationRecord], k: int) -> SoftLabel:
    """Per-class frequency of the hard annotations."""
    if not annotations:
        raise ValueError("no annotations")
    counts = np.zeros(k, dtype=np.float64)
    for ann in annotations:
        if not 0 <= ann.class_index < k:
            raise ValueError(f"class index {ann.class_index} out of range for k={k}")
        counts[ann.class_index] += 1.0
    return SoftLabel(counts / len(annotations))


def ambiguity(label: SoftLabel) -> float:
    """1 minus the largest class probability; 0 for one-hot labels."""
    return float(1.0 - label.probs.max())


def is_fuzzy(label: SoftLabel, tol: float = FUZZY_TOL) -> bool:
    """True iff at least two classes carry probability above ``tol``."""
    return int((label.probs > tol).sum()) >= 2


def sample_hard_label(label: SoftLabel, rng: np.random.Generator) -> int:
    """Draw one class index distributed according to the soft label."""
    return int(rng.choice(len(label.probs), p=label.probs))


def apply_label_mode(
    item: DatasetItem, mode: str, rng: np.random.Generator | None = None
) -> int | None:
    """Reduce an item's soft label to a training label, or None when excluded.

    ``sampled`` draws a hard label from the soft label, ``argmax`` takes the
    most frequent annotation (ties to the lowest class index) and
    ``certain_only`` keeps only non-fuzzy items.
    """
    if item.gt_soft is None:
        raise ValueError(f"item {item.image_id} has no soft label")
    if mode == "sampled":
        if rng is None:
            raise ValueError("sampled mode needs an rng")
        return sample_hard_label(item.gt_soft, rng)
    if mode == "argmax":
        return int(np.argmax(item.gt_soft.probs))
    if mode == "certain_only":
        if is_fuzzy(item.gt_soft):
            return None
        return int(np.argmax(item.gt_soft.probs))
    raise ValueError(f"unknown label mode {mode!r}")


def split_dataset(
    manifest: DatasetManifest,
    supervised_fraction: float,
    val_fraction: float,
    seed: int,
) -> DatasetManifest:
    """Assign labeled/unlabeled/validation splits by a seeded permutation.

    |validation| = round(val_fraction * N) and
    |labeled| = round(supervised_fraction * N * (1 - val_fraction)); the rest
    is unlabeled. Raises if any split ends up empty.
    """
    if not 0.0 < supervised_fraction < 1.0:
        raise ValueError("supervised_fraction must lie in (0, 1)")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    if supervised_fraction + val_fraction > 1.0:
        raise ValueError("supervised_fraction + val_fraction must be <= 1")

    n = len(manifest.items)
    n_val = int(round(val_fraction * n))
    n_labeled = int(round(supervised_fraction * n * (1.0 - val_fraction)))
    n_unlabeled = n - n_val - n_labeled
    if min(n_val, n_labeled, n_unlabeled) < 1:
        raise ValueError(
            f"degenerate split for N={n}: labeled={n_labeled}, "
            f"unlabeled={n_unlabeled}, validation={n_val}"
        )

    order = np.random.default_rng(seed).permutation(n)
    for pos, idx in enumerate(order):
        if pos < n_val:
            manifest.items[idx].split = "validation"
        elif pos < n_val + n_labeled:
            manifest.items[idx].split = "labeled"
        else:
            manifest.items[idx].split = "unlabeled"
    return manifest


# ---------------------------------------------------------------------------
# synthetic fuzzy-image generator

PROTOTYPE_NAMES = ("disc", "cross", "triangle", "ring")

NOISE_SIGMA = 0.05  # fraction of dynamic range


def _prototype(name: str, size: int) -> np.ndarray:
    """Grayscale prototype shape in [0, 1], shape (size, size)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    r = size * 0.33
    img = np.zeros((size, size), dtype=np.float64)
    if name == "disc":
        img[(yy - c) ** 2 + (xx - c) ** 2 <= r**2] = 1.0
    elif name == "cross":
        w = max(1.0, size * 0.12)
        img[np.abs(xx - c) <= w] = 1.0
        img[np.abs(yy - c) <= w] = 1.0
    elif name == "triangle":
        # upright triangle: below the apex, between the two slanted edges
        h = yy / (size - 1)
        half_width = h * (size * 0.45)
        img[(np.abs(xx - c) <= half_width) & (h >= 0.15) & (h <= 0.85)] = 1.0
    elif name == "ring":
        d2 = (yy - c) ** 2 + (xx - c) ** 2
        img[(d2 <= r**2) & (d2 >= (r * 0.55) ** 2)] = 1.0
    else:
        raise ValueError(f"unknown prototype {name!r}")
    return img


def _render(blend: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Blend prototypes by class weight and add pixel noise; uint8 output."""
    img = np.zeros((size, size), dtype=np.float64)
    for cls, w in enumerate(blend):
        if w > 0:
            img += w * _prototype(PROTOTYPE_NAMES[cls], size)
    img += rng.normal(0.0, NOISE_SIGMA, size=img.shape)
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def _sample_annotations(
    image_id: str,
    blend: np.ndarray,
    n_annotators: int,
    rng: np.random.Generator,
    require_fuzzy: bool,
) -> list[AnnotationRecord]:
    # fuzzy items are redrawn until >= 2 classes appear so that the
    # aggregated soft label is fuzzy by construction
    while True:
        classes = rng.choice(len(blend), size=n_annotators, p=blend)
        if not require_fuzzy or len(np.unique(classes)) >= 2:
            break
    return [
        AnnotationRecord(image_id=image_id, annotator_id=f"sim{j}", class_index=int(c))
        for j, c in enumerate(classes)
    ]


def generate_synthetic(config: SyntheticConfig, out_dir: str | Path) -> DatasetManifest:
    """Render a synthetic dataset with a controllable fraction of fuzzy images.

    Certain images show a single class prototype; fuzzy images alpha-blend two
    prototypes with the blend weight drawn from ``ambiguity_range``. Simulated
    annotations are drawn from the blend distribution. Writes PNGs plus a
    manifest.json under ``out_dir`` and returns the loaded manifest.
    """
    config.validate()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)

    n_fuzzy = int(round(config.n_images * config.fuzzy_fraction))
    fuzzy_flags = np.zeros(config.n_images, dtype=bool)
    fuzzy_flags[rng.permutation(config.n_images)[:n_fuzzy]] = True

    items = []
    for i in range(config.n_images):
        image_id = f"img{i:05d}"
        blend = np.zeros(config.k, dtype=np.float64)
        if fuzzy_flags[i]:
            a, b = rng.choice(config.k, size=2, replace=False)
            alpha = rng.uniform(*config.ambiguity_range)
            blend[a] = 1.0 - alpha
            blend[b] = alpha
            source = {"classes": [int(a), int(b)], "alpha": float(alpha)}
        else:
            c = int(rng.integers(config.k))
            blend[c] = 1.0
            source = {"classes": [c], "alpha": 0.0}

        rel_path = f"images/{image_id}.png"
        Image.fromarray(_render(blend, config.image_size, rng), mode="L").save(
            out / rel_path
        )
        annotations = _sample_annotations(
            image_id, blend, config.annotators_per_image, rng, bool(fuzzy_flags[i])
        )
        items.append(
            DatasetItem(
                image_id=image_id,
                image_path=rel_path,
                annotations=annotations,
                split="unlabeled",
                gt_soft=aggregate_soft_label(annotations, config.k),
                source=source,
            )
        )

    manifest = DatasetManifest(
        name=f"synthetic_k{config.k}_n{config.n_images}",
        num_classes=config.k,
        class_names=list(PROTOTYPE_NAMES[: config.k]),
        items=items,
        label_mode="sampled",
        root=out,
    )
    save_manifest(manifest, out / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# manifest IO


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "name": manifest.name,
        "num_classes": manifest.num_classes,
        "class_names": manifest.class_names,
        "label_mode": manifest.label_mode,
        "items": [
            {
                "id": it.image_id,
                "path": it.image_path,
                "split": it.split,
                "annotations": [a.to_dict() for a in it.annotations],
                **({"source": it.source} if it.source is not None else {}),
            }
            for it in manifest.items
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a manifest; soft labels are recomputed on the fly."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc

    try:
        k = int(doc["num_classes"])
        items = []
        for entry in doc["items"]:
            image_id = str(entry["id"])
            annotations = [
                AnnotationRecord.from_dict(image_id, a)
                for a in entry.get("annotations", [])
            ]
            items.append(
                DatasetItem(
                    image_id=image_id,
                    image_path=str(entry["path"]),
                    annotations=annotations,
                    split=str(entry.get("split", "unlabeled")),
                    gt_soft=None,
                    source=entry.get("source"),
                )
            )
        manifest = DatasetManifest(
            name=str(doc["name"]),
            num_classes=k,
            class_names=[str(c) for c in doc["class_names"]],
            items=items,
            label_mode=str(doc.get("label_mode", "sampled")),
            root=path.parent,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc

    errors = validate_manifest(manifest)
    if errors:
        raise ManifestError(
            f"invalid manifest {path}: " + "; ".join(errors[:10])
            + (f" (+{len(errors) - 10} more)" if len(errors) > 10 else "")
        )
    return manifest


def validate_manifest(manifest: DatasetManifest) -> list[str]:
    """Check all invariants; returns one message per violation (empty = valid)."""
    errors = []
    if manifest.num_classes < 2:
        errors.append("num_classes must be >= 2")
    if len(manifest.class_names) != manifest.num_classes:
        errors.append(
            f"class_names has {len(manifest.class_names)} entries, "
            f"expected {manifest.num_classes}"
        )
    if manifest.label_mode not in LABEL_MODES:
        errors.append(f"unknown label_mode {manifest.label_mode!r}")

    seen: set[str] = set()
    for it in manifest.items:
        if it.image_id in seen:
            errors.append(f"duplicate image_id {it.image_id!r}")
        seen.add(it.image_id)
        if it.split not in SPLITS:
            errors.append(f"item {it.image_id}: unknown split {it.split!r}")
        if it.split == "labeled" and not it.annotations:
            errors.append(f"item {it.image_id}: labeled item has no annotations")
        bad = [
            a.class_index
            for a in it.annotations
            if not 0 <= a.class_index < manifest.num_classes
        ]
        if bad:
            errors.append(f"item {it.image_id}: class index {bad[0]} out of range")
        if any(a.repetition < 1 for a in it.annotations):
            errors.append(f"item {it.image_id}: repetition must be >= 1")
        if it.annotations and not bad:
            it.gt_soft = aggregate_soft_label(it.annotations, manifest.num_classes)
    return errors


def load_images(
    manifest: DatasetManifest, items: list[DatasetItem] | None = None
) -> np.ndarray:
    """Load grayscale images as float32 in [0, 1], shape (N, 1, H, W)."""
    if manifest.root is None:
        raise ValueError("manifest has no root directory")
    if items is None:
        items = manifest.items
    arrays = []
    for it in items:
        with Image.open(Path(manifest.root) / it.image_path) as img:
            arrays.append(np.asarray(img.convert("L"), dtype=np.float32) / 255.0)
    return np.stack(arrays)[:, None, :, :]
