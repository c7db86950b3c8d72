"""Annotation proposals from model predictions, consistency and speed-up
reporting over annotation sessions, and a simulated annotator.

Certain-routed images get a proposed class; fuzzy-routed images are grouped
by cluster with an auto-generated description so an annotator can label
visually similar ambiguous images together. Consistency is the mean pairwise
exact agreement between repetitions of the same annotator over the same
image set.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import AnnotationRecord, DatasetManifest, SoftLabel, load_images, load_manifest
from .metrics import build_records
from .model import forward_outputs, load_checkpoint

PROPOSAL_MODES = ("none", "ssl", "dc3")


@dataclass
class ProposalEntry:
    image_id: str
    kind: str  # "certain" | "fuzzy"
    proposed_class: int | None
    cluster_id: int | None
    p_a: float


@dataclass
class ClusterEntry:
    cluster_id: int
    members: list[str]
    description: str
    top_classes: list[int] = field(default_factory=list)


@dataclass
class ProposalSet:
    manifest_name: str
    mode: str  # "ssl" | "dc3"
    images: list[ProposalEntry]
    clusters: list[ClusterEntry]

    def entry_for(self, image_id: str) -> ProposalEntry:
        for e in self.images:
            if e.image_id == image_id:
                return e
        raise KeyError(image_id)

    def cluster_for(self, cluster_id: int) -> ClusterEntry:
        for c in self.clusters:
            if c.cluster_id == cluster_id:
                return c
        raise KeyError(cluster_id)

    def suggested_class(self, entry: ProposalEntry) -> int:
        """Class an annotator would accept: the proposed class for certain
        images, the cluster's dominant predicted class for fuzzy ones."""
        if entry.kind == "certain":
            return entry.proposed_class
        return self.cluster_for(entry.cluster_id).top_classes[0]

    def to_dict(self) -> dict:
        return {
            "manifest": self.manifest_name,
            "mode": self.mode,
            "images": [
                {
                    "id": e.image_id,
                    "kind": e.kind,
                    **({"class": e.proposed_class} if e.proposed_class is not None else {}),
                    **({"cluster": e.cluster_id} if e.cluster_id is not None else {}),
                    "p_a": e.p_a,
                }
                for e in self.images
            ],
            "clusters": [
                {
                    "id": c.cluster_id,
                    "members": c.members,
                    "description": c.description,
                    "top_classes": c.top_classes,
                }
                for c in self.clusters
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "ProposalSet":
        return ProposalSet(
            manifest_name=d["manifest"],
            mode=d["mode"],
            images=[
                ProposalEntry(
                    image_id=e["id"],
                    kind=e["kind"],
                    proposed_class=e.get("class"),
                    cluster_id=e.get("cluster"),
                    p_a=e["p_a"],
                )
                for e in d["images"]
            ],
            clusters=[
                ClusterEntry(
                    cluster_id=c["id"],
                    members=list(c["members"]),
                    description=c["description"],
                    top_classes=list(c.get("top_classes", [])),
                )
                for c in d["clusters"]
            ],
        )


def save_proposals(proposals: ProposalSet, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(proposals.to_dict(), indent=1))


def load_proposals(path: str | Path) -> ProposalSet:
    return ProposalSet.from_dict(json.loads(Path(path).read_text()))


def generate_proposals(
    checkpoint: str | Path,
    manifest: DatasetManifest | str | Path,
    mode: str = "dc3",
) -> ProposalSet:
    """Turn routed predictions into per-image proposals.

    mode "dc3" routes via the ambiguity head; mode "ssl" ignores it and
    proposes a class for every image (the vanilla comparison arm).
    """
    if mode not in ("ssl", "dc3"):
        raise ValueError(f"proposal mode must be 'ssl' or 'dc3', got {mode!r}")
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    model, cfg, _ = load_checkpoint(checkpoint)
    items = manifest.items
    x = torch.from_numpy(load_images(manifest, items))
    outputs = forward_outputs(model, x, cfg)
    records = build_records(items, outputs, vanilla_mode=(mode == "ssl"))

    p_n = outputs.p_n.cpu().numpy()
    entries = []
    members: dict[int, list[int]] = {}
    for i, rec in enumerate(records):
        pred = rec.prediction
        entries.append(
            ProposalEntry(
                image_id=rec.image_id,
                kind=pred.kind,
                proposed_class=pred.class_index,
                cluster_id=pred.cluster_index,
                p_a=float(outputs.p_a[i]),
            )
        )
        if pred.kind == "fuzzy":
            members.setdefault(pred.cluster_index, []).append(i)

    clusters = []
    for cluster_id in sorted(members):
        rows = members[cluster_id]
        mean_p = p_n[rows].mean(axis=0)
        top = np.argsort(-mean_p, kind="stable")[:2].tolist()
        names = [manifest.class_names[c] for c in top]
        clusters.append(
            ClusterEntry(
                cluster_id=cluster_id,
                members=[records[i].image_id for i in rows],
                description=f"ambiguous between {names[0]} and {names[1]}",
                top_classes=[int(c) for c in top],
            )
        )
    return ProposalSet(
        manifest_name=manifest.name, mode=mode, images=entries, clusters=clusters
    )


# ---------------------------------------------------------------------------
# annotation sessions


@dataclass
class AnnotationSession:
    annotator_id: str
    proposal_mode: str  # "none" | "ssl" | "dc3"
    repetition: int
    records: list[AnnotationRecord] = field(default_factory=list)
    started: float | None = None
    ended: float | None = None
    session_id: str | None = None
    manifest_name: str | None = None

    def image_ids(self) -> set[str]:
        return {r.image_id for r in self.records}

    def class_for(self, image_id: str) -> int:
        for r in self.records:
            if r.image_id == image_id:
                return r.class_index
        raise KeyError(image_id)

    def mean_time(self) -> float:
        durations = [r.duration for r in self.records if r.duration is not None]
        if not durations:
            raise ValueError("session has no timed records")
        return float(np.mean(durations))


def save_session(session: AnnotationSession, path: str | Path) -> None:
    """JSON lines: one header object, then one annotation record per line."""
    header = {
        "session": {
            "annotator": session.annotator_id,
            "mode": session.proposal_mode,
            "repetition": session.repetition,
            "started": session.started,
            "ended": session.ended,
            "session_id": session.session_id,
            "manifest": session.manifest_name,
        }
    }
    with Path(path).open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for r in session.records:
            fh.write(json.dumps({"image_id": r.image_id, **r.to_dict()}) + "\n")


def load_session(path: str | Path) -> AnnotationSession:
    with Path(path).open() as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or "session" not in lines[0]:
        raise ValueError(f"{path} is not a session log")
    head = lines[0]["session"]
    session = AnnotationSession(
        annotator_id=head["annotator"],
        proposal_mode=head["mode"],
        repetition=head["repetition"],
        started=head.get("started"),
        ended=head.get("ended"),
        session_id=head.get("session_id"),
        manifest_name=head.get("manifest"),
    )
    for entry in lines[1:]:
        session.records.append(AnnotationRecord.from_dict(entry["image_id"], entry))
    return session


def load_sessions(directory: str | Path) -> list[AnnotationSession]:
    return [load_session(p) for p in sorted(Path(directory).glob("*.jsonl"))]


def consistency(sessions: list[AnnotationSession]) -> float:
    """Mean over unordered repetition pairs of the exact-agreement fraction."""
    if len(sessions) < 2:
        raise ValueError("consistency needs at least 2 repetitions")
    image_sets = [s.image_ids() for s in sessions]
    if any(s != image_sets[0] for s in image_sets[1:]):
        raise ValueError("repetitions cover different image sets")
    ids = sorted(image_sets[0])
    agreements = []
    for a, b in itertools.combinations(sessions, 2):
        same = sum(a.class_for(i) == b.class_for(i) for i in ids)
        agreements.append(same / len(ids))
    return float(np.mean(agreements))


def mean_time_per_image(sessions: list[AnnotationSession]) -> float:
    durations = [
        r.duration for s in sessions for r in s.records if r.duration is not None
    ]
    if not durations:
        raise ValueError("no timed records")
    return float(np.mean(durations))


def speed_up(sessions: list[AnnotationSession], mode: str = "dc3") -> float:
    """Mean per-image time without proposals divided by mean time with them."""
    baseline = [s for s in sessions if s.proposal_mode == "none"]
    tested = [s for s in sessions if s.proposal_mode == mode]
    if not baseline or not tested:
        raise ValueError(f"need sessions for both 'none' and {mode!r}")
    return mean_time_per_image(baseline) / mean_time_per_image(tested)


@dataclass
class ConsistencyReport:
    per_annotator: dict  # annotator -> mode -> {consistency, mean_time_s, n_sessions}
    per_mode: dict  # mode -> {consistency, mean_time_s, speed_up_vs_none}

    def to_dict(self) -> dict:
        return {"annotators": self.per_annotator, "modes": self.per_mode}


def build_report(sessions: list[AnnotationSession]) -> ConsistencyReport:
    """Aggregate sessions into per-annotator and per-mode consistency/timing."""
    by_annotator_mode: dict[tuple[str, str], list[AnnotationSession]] = {}
    for s in sessions:
        by_annotator_mode.setdefault((s.annotator_id, s.proposal_mode), []).append(s)

    per_annotator: dict = {}
    for (annotator, mode), group in sorted(by_annotator_mode.items()):
        cell = {
            "n_sessions": len(group),
            "mean_time_s": mean_time_per_image(group),
            "consistency": consistency(group) if len(group) >= 2 else None,
        }
        per_annotator.setdefault(annotator, {})[mode] = cell

    per_mode: dict = {}
    modes = sorted({s.proposal_mode for s in sessions})
    for mode in modes:
        group = [s for s in sessions if s.proposal_mode == mode]
        cons = [
            per_annotator[a][mode]["consistency"]
            for a in per_annotator
            if mode in per_annotator[a]
            and per_annotator[a][mode]["consistency"] is not None
        ]
        cell = {
            "mean_time_s": mean_time_per_image(group),
            "consistency": float(np.mean(cons)) if cons else None,
            "speed_up_vs_none": None,
        }
        per_mode[mode] = cell
    if "none" in per_mode:
        for mode in modes:
            if mode != "none":
                per_mode[mode]["speed_up_vs_none"] = (
                    per_mode["none"]["mean_time_s"] / per_mode[mode]["mean_time_s"]
                )
    return ConsistencyReport(per_annotator=per_annotator, per_mode=per_mode)


# ---------------------------------------------------------------------------
# simulated annotator


@dataclass
class AnnotatorBehavior:
    accept_prob: float = 0.9
    base_time: float = 12.0
    proposal_time: float = 5.0
    noise: float = 0.0  # std of gaussian time jitter, seconds

    def __post_init__(self) -> None:
        if not 0.0 <= self.accept_prob <= 1.0:
            raise ValueError("accept_prob must lie in [0, 1]")
        if self.base_time <= 0 or self.proposal_time <= 0:
            raise ValueError("times must be positive")


def simulate_annotator(
    gt_soft: dict[str, SoftLabel],
    proposals: ProposalSet | None,
    behavior: AnnotatorBehavior,
    rng: np.random.Generator,
    annotator_id: str = "sim",
    repetition: int = 1,
) -> AnnotationSession:
    """Simulate one relabeling pass over the given images.

    With proposals the annotator accepts the suggested class with
    ``accept_prob`` whenever it matches the argmax of the true soft label
    (taking ``proposal_time``); otherwise, and always without proposals, a
    class is drawn from the soft label (taking ``base_time``).
    """
    mode = "none" if proposals is None else proposals.mode
    session = AnnotationSession(
        annotator_id=annotator_id, proposal_mode=mode, repetition=repetition, started=0.0
    )
    now = 0.0
    for image_id in sorted(gt_soft):
        label = gt_soft[image_id]
        accepted = False
        if proposals is not None:
            suggestion = proposals.suggested_class(proposals.entry_for(image_id))
            if suggestion == int(np.argmax(label.probs)) and rng.random() < behavior.accept_prob:
                chosen = suggestion
                accepted = True
        if not accepted:
            chosen = int(rng.choice(len(label.probs), p=label.probs))
        duration = behavior.proposal_time if accepted else behavior.base_time
        if behavior.noise > 0:
            duration = max(0.1, duration + rng.normal(0.0, behavior.noise))
        now += duration
        session.records.append(
            AnnotationRecord(
                image_id=image_id,
                annotator_id=annotator_id,
                class_index=chosen,
                repetition=repetition,
                timestamp=now,
                duration=duration,
            )
        )
    session.ended = now
    return session
