"""Generate a small synthetic dataset with controllable label ambiguity and
poke at its soft labels.

Certain images show one prototype shape per class; fuzzy images blend two
prototypes, and simulated annotators disagree on them in proportion to the
blend. Run from the repository root:

    python3 demos/01_synthetic_fuzzy_dataset.py
"""

import tempfile
from collections import Counter
from pathlib import Path

import numpy as np

from dc3.dataset import (
    SyntheticConfig,
    ambiguity,
    generate_synthetic,
    is_fuzzy,
    sample_hard_label,
    split_dataset,
)

out_dir = Path(tempfile.mkdtemp(prefix="fuzzy_demo_"))
config = SyntheticConfig(
    k=3,
    n_images=300,
    fuzzy_fraction=0.25,
    ambiguity_range=(0.25, 0.75),
    image_size=32,
    annotators_per_image=8,
    seed=7,
)
manifest = generate_synthetic(config, out_dir)
print(f"wrote {len(manifest.items)} images to {out_dir}")
print(f"classes: {manifest.class_names}")

n_fuzzy = sum(is_fuzzy(it.gt_soft) for it in manifest.items)
print(f"fuzzy images: {n_fuzzy} ({n_fuzzy / len(manifest.items):.0%})")

ambiguities = np.array([ambiguity(it.gt_soft) for it in manifest.items])
print(f"ambiguity: mean {ambiguities.mean():.3f}, max {ambiguities.max():.3f}")

# one fuzzy example in detail: the annotators genuinely disagree
example = next(it for it in manifest.items if is_fuzzy(it.gt_soft))
votes = Counter(a.class_index for a in example.annotations)
print(f"\nexample fuzzy image {example.image_id}:")
print(f"  intended blend: {example.source}")
print(f"  annotator votes: {dict(votes)}")
print(f"  soft label: {example.gt_soft}")
print(f"  ambiguity: {ambiguity(example.gt_soft):.3f}")

# sampling hard labels from the soft label reproduces the disagreement
rng = np.random.default_rng(0)
draws = Counter(sample_hard_label(example.gt_soft, rng) for _ in range(1000))
print(f"  1000 sampled hard labels: {dict(sorted(draws.items()))}")

# a seeded split keeps most images unlabeled, the usual SSL setting
split_dataset(manifest, supervised_fraction=0.1, val_fraction=0.2, seed=1)
for split in ("labeled", "unlabeled", "validation"):
    print(f"{split}: {len(manifest.items_in_split(split))} images")
