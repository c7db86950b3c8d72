"""Prepare a data root for the annotation review service and print the
commands to serve it together with the browser UI.

Builds a dataset, trains briefly, saves proposal files for both modes and
lays everything out the way the HTTP service expects:

    <root>/<dataset>/manifest.json
    <root>/<dataset>/images/
    <root>/<dataset>/proposals/{dc3,ssl}.json

Run:

    python3 demos/05_review_service_setup.py
"""

import tempfile
from pathlib import Path

from dc3.dataset import SyntheticConfig, generate_synthetic
from dc3.proposals import generate_proposals, save_proposals
from dc3.ssl_algos import SSLAlgorithmSpec
from dc3.trainer import RunConfig, train

root = Path(tempfile.mkdtemp(prefix="review_root_"))
data_dir = root / "shapes"
config = SyntheticConfig(
    k=2, n_images=120, fuzzy_fraction=0.25, ambiguity_range=(0.25, 0.75),
    image_size=48, annotators_per_image=8, seed=21,
)
generate_synthetic(config, data_dir)

run = RunConfig(
    manifest=str(data_dir / "manifest.json"),
    ssl=SSLAlgorithmSpec("pseudo_label"),
    backbone="small_conv",
    batch_size=32, steps=200, seed=0,
    supervised_fraction=0.2, val_fraction=0.2,
    out_dir=str(root / "run"),
)
artifacts = train(run)

(data_dir / "proposals").mkdir()
for mode in ("dc3", "ssl"):
    proposals = generate_proposals(
        artifacts.checkpoint_path, data_dir / "manifest.json", mode=mode
    )
    save_proposals(proposals, data_dir / "proposals" / f"{mode}.json")
    print(f"saved {mode} proposals "
          f"({sum(e.kind == 'fuzzy' for e in proposals.images)} fuzzy images)")

print(f"""
data root ready: {root}

start the service:

    dc3 serve --root {root} --port 8000

then build and open the review UI (see frontend/README.md):

    cd frontend && npm install && npm run build && npm run preview

the UI talks to http://127.0.0.1:8000 by default; annotate the dataset in
mode "dc3" and mode "none" (two repetitions each) and watch the consistency
and speed-up table fill in on the report view.
""")
