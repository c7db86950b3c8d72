"""End-to-end annotation workflow: proposals, simulated relabeling and the
consistency/speed-up report.

A trained checkpoint turns into per-image proposals (a class for certain
images, a cluster with description for ambiguous ones). A simulated
annotator relabels the dataset three times with and without proposals; the
report shows how proposals make repeated annotations more consistent and
faster. Run:

    python3 demos/04_annotation_workflow.py
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from dc3.dataset import SyntheticConfig, generate_synthetic
from dc3.proposals import (
    AnnotatorBehavior,
    build_report,
    generate_proposals,
    simulate_annotator,
)
from dc3.ssl_algos import SSLAlgorithmSpec
from dc3.trainer import RunConfig, train

work = Path(tempfile.mkdtemp(prefix="annotate_demo_"))
config = SyntheticConfig(
    k=2, n_images=300, fuzzy_fraction=0.25, ambiguity_range=(0.25, 0.75),
    image_size=32, annotators_per_image=8, seed=2,
)
manifest = generate_synthetic(config, work / "data")

run = RunConfig(
    manifest=str(work / "data" / "manifest.json"),
    ssl=SSLAlgorithmSpec("pseudo_label"),
    backbone="small_conv",
    batch_size=64, steps=250, seed=0,
    supervised_fraction=0.15, val_fraction=0.2,
    out_dir=str(work / "run"),
)
artifacts = train(run)
print("trained; final metrics:", json.dumps(artifacts.final_metrics.to_dict(), indent=1))

proposals = generate_proposals(artifacts.checkpoint_path, work / "data" / "manifest.json")
print(f"\n{len(proposals.clusters)} proposal clusters:")
for cluster in proposals.clusters:
    print(f"  cluster {cluster.cluster_id}: {len(cluster.members)} images, "
          f"\"{cluster.description}\"")

gt = {it.image_id: it.gt_soft for it in manifest.items}
behavior = AnnotatorBehavior(accept_prob=0.9, base_time=12.0, proposal_time=5.0, noise=0.5)
rng = np.random.default_rng(11)
sessions = []
for rep in (1, 2, 3):
    sessions.append(simulate_annotator(gt, proposals, behavior, rng, "alice", rep))
    sessions.append(simulate_annotator(gt, None, behavior, rng, "alice", rep))

report = build_report(sessions)
print("\nper-mode report:")
for mode, cell in report.per_mode.items():
    speedup = cell["speed_up_vs_none"]
    print(f"  {mode:>5}: consistency {cell['consistency']:.4f}, "
          f"{cell['mean_time_s']:.1f} s/image"
          + (f", speed-up {speedup:.2f}x" if speedup else ""))
