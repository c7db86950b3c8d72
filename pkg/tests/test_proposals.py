import numpy as np
import pytest

from dc3.dataset import SoftLabel, SyntheticConfig, generate_synthetic
from dc3.proposals import (
    AnnotationSession,
    AnnotatorBehavior,
    ProposalEntry,
    ProposalSet,
    build_report,
    consistency,
    generate_proposals,
    load_proposals,
    load_session,
    save_proposals,
    save_session,
    simulate_annotator,
    speed_up,
)
from dc3.ssl_algos import SSLAlgorithmSpec
from dc3.trainer import RunConfig, train

from dc3.dataset import AnnotationRecord


def session(mode, classes_by_image, times=None, annotator="a1", repetition=1):
    s = AnnotationSession(annotator_id=annotator, proposal_mode=mode, repetition=repetition)
    for i, (image_id, cls) in enumerate(sorted(classes_by_image.items())):
        t = (times or {}).get(image_id, 1.0)
        s.records.append(
            AnnotationRecord(
                image_id=image_id, annotator_id=annotator, class_index=cls,
                repetition=repetition, timestamp=float(i), duration=t,
            )
        )
    return s


class TestConsistency:
    def test_identical_repetitions(self):
        reps = [session("none", {"a": 0, "b": 1}, repetition=r) for r in (1, 2)]
        assert consistency(reps) == 1.0

    def test_one_of_ten_differs(self):
        base = {f"i{j}": 0 for j in range(10)}
        other = dict(base)
        other["i3"] = 1
        reps = [session("none", base, repetition=1), session("none", other, repetition=2)]
        assert consistency(reps) == pytest.approx(0.9)

    def test_three_repetitions_pairwise_mean(self):
        a = {f"i{j}": 0 for j in range(4)}
        c = {f"i{j}": 1 for j in range(4)}
        reps = [
            session("none", a, repetition=1),
            session("none", a, repetition=2),
            session("none", c, repetition=3),
        ]
        assert consistency(reps) == pytest.approx(1 / 3)

    def test_symmetric_in_order(self):
        a = {f"i{j}": j % 2 for j in range(8)}
        b = {f"i{j}": (j + 1) % 2 for j in range(8)}
        r1 = session("none", a, repetition=1)
        r2 = session("none", b, repetition=2)
        assert consistency([r1, r2]) == consistency([r2, r1])

    def test_mismatched_image_sets_rejected(self):
        r1 = session("none", {"a": 0})
        r2 = session("none", {"b": 0}, repetition=2)
        with pytest.raises(ValueError):
            consistency([r1, r2])

    def test_needs_two_repetitions(self):
        with pytest.raises(ValueError):
            consistency([session("none", {"a": 0})])


class TestSpeedUp:
    def test_equal_times(self):
        sessions = [
            session("none", {"a": 0}, {"a": 5.0}),
            session("dc3", {"a": 0}, {"a": 5.0}),
        ]
        assert speed_up(sessions) == pytest.approx(1.0)

    def test_paper_ratio(self):
        sessions = [
            session("none", {"a": 0, "b": 1}, {"a": 12.0, "b": 12.0}),
            session("dc3", {"a": 0, "b": 1}, {"a": 5.0, "b": 5.0}),
        ]
        assert speed_up(sessions) == pytest.approx(2.4)

    def test_slower_mode_below_one(self):
        sessions = [
            session("none", {"a": 0}, {"a": 5.0}),
            session("dc3", {"a": 0}, {"a": 10.0}),
        ]
        assert speed_up(sessions) == pytest.approx(0.5)

    def test_missing_mode_rejected(self):
        with pytest.raises(ValueError):
            speed_up([session("none", {"a": 0})])


def perfect_proposals(gt, mode="dc3"):
    images = [
        ProposalEntry(image_id=i, kind="certain",
                      proposed_class=int(np.argmax(l.probs)), cluster_id=None, p_a=0.0)
        for i, l in gt.items()
    ]
    return ProposalSet(manifest_name="m", mode=mode, images=images, clusters=[])


class TestSimulator:
    def test_perfect_acceptance_fully_consistent(self):
        gt = {f"i{j}": SoftLabel([1.0, 0.0]) for j in range(20)}
        props = perfect_proposals(gt)
        behavior = AnnotatorBehavior(accept_prob=1.0, base_time=10, proposal_time=2)
        rng = np.random.default_rng(0)
        reps = [
            simulate_annotator(gt, props, behavior, rng, repetition=r) for r in (1, 2, 3)
        ]
        assert consistency(reps) == 1.0

    def test_uniform_gt_without_proposals_half_consistent(self):
        gt = {f"i{j}": SoftLabel([0.5, 0.5]) for j in range(2000)}
        behavior = AnnotatorBehavior(accept_prob=0.0)
        rng = np.random.default_rng(1)
        reps = [simulate_annotator(gt, None, behavior, rng, repetition=r) for r in (1, 2)]
        assert consistency(reps) == pytest.approx(0.5, abs=0.04)

    def test_speed_up_ratio_from_times(self):
        gt = {f"i{j}": SoftLabel([1.0, 0.0]) for j in range(50)}
        props = perfect_proposals(gt)
        behavior = AnnotatorBehavior(accept_prob=1.0, base_time=10, proposal_time=2)
        rng = np.random.default_rng(2)
        with_props = simulate_annotator(gt, props, behavior, rng)
        without = simulate_annotator(gt, None, behavior, rng)
        assert speed_up([with_props, without], mode="dc3") == pytest.approx(5.0)

    def test_helpful_proposals_beat_none_in_consistency(self):
        # monte-carlo over 1000 images with fuzzy ground truth
        rng = np.random.default_rng(3)
        gt = {
            f"i{j}": SoftLabel(rng.dirichlet(np.ones(2)) * 0.6 + 0.2)
            for j in range(1000)
        }
        props = perfect_proposals(gt)
        behavior = AnnotatorBehavior(accept_prob=0.9)
        with_reps = [
            simulate_annotator(gt, props, behavior, rng, repetition=r) for r in (1, 2)
        ]
        none_reps = [
            simulate_annotator(gt, None, behavior, rng, repetition=r) for r in (1, 2)
        ]
        c_with = consistency(with_reps)
        c_none = consistency(none_reps)
        n = len(gt)
        margin = 1.96 * np.sqrt(
            c_with * (1 - c_with) / n + c_none * (1 - c_none) / n
        )
        assert c_with - c_none > margin

    def test_timestamps_monotone(self):
        gt = {f"i{j}": SoftLabel([1.0, 0.0]) for j in range(10)}
        s = simulate_annotator(gt, None, AnnotatorBehavior(), np.random.default_rng(4))
        stamps = [r.timestamp for r in s.records]
        assert stamps == sorted(stamps)
        assert all(r.duration > 0 for r in s.records)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("propds")
    config = SyntheticConfig(
        k=2, n_images=40, fuzzy_fraction=0.3, ambiguity_range=(0.3, 0.7),
        image_size=16, annotators_per_image=5, seed=4,
    )
    manifest = generate_synthetic(config, out)
    run = RunConfig(
        manifest=str(out / "manifest.json"),
        ssl=SSLAlgorithmSpec("pseudo_label"),
        backbone="mlp", embedding_dim=16, batch_size=8, steps=3,
        supervised_fraction=0.3, val_fraction=0.2, seed=0,
        out_dir=str(out / "run"),
    )
    artifacts = train(run)
    return artifacts.checkpoint_path, out / "manifest.json", manifest


class TestProposalGeneration:
    def test_partition_and_cluster_membership(self, trained):
        checkpoint, manifest_path, manifest = trained
        proposals = generate_proposals(checkpoint, manifest_path, mode="dc3")
        ids = [e.image_id for e in proposals.images]
        assert sorted(ids) == sorted(it.image_id for it in manifest.items)
        clustered = [m for c in proposals.clusters for m in c.members]
        fuzzy_ids = [e.image_id for e in proposals.images if e.kind == "fuzzy"]
        assert sorted(clustered) == sorted(fuzzy_ids)
        for c in proposals.clusters:
            assert c.description
            assert len(c.top_classes) == 2

    def test_ssl_mode_all_certain(self, trained):
        checkpoint, manifest_path, _ = trained
        proposals = generate_proposals(checkpoint, manifest_path, mode="ssl")
        assert all(e.kind == "certain" for e in proposals.images)
        assert proposals.clusters == []

    def test_round_trip(self, trained, tmp_path):
        checkpoint, manifest_path, _ = trained
        proposals = generate_proposals(checkpoint, manifest_path, mode="dc3")
        path = tmp_path / "props.json"
        save_proposals(proposals, path)
        again = load_proposals(path)
        assert again.to_dict() == proposals.to_dict()


class TestSessionIO:
    def test_round_trip(self, tmp_path):
        s = session("dc3", {"a": 0, "b": 1}, {"a": 2.0, "b": 3.0})
        s.session_id = "s1"
        s.manifest_name = "m"
        path = tmp_path / "s1.jsonl"
        save_session(s, path)
        again = load_session(path)
        assert again.annotator_id == "a1"
        assert again.proposal_mode == "dc3"
        assert [(r.image_id, r.class_index, r.duration) for r in again.records] == [
            ("a", 0, 2.0), ("b", 1, 3.0),
        ]


class TestReport:
    def test_aggregates_and_speed_up(self):
        sessions = [
            session("none", {"a": 0, "b": 0}, {"a": 10.0, "b": 14.0}, repetition=1),
            session("none", {"a": 0, "b": 1}, {"a": 10.0, "b": 14.0}, repetition=2),
            session("dc3", {"a": 0, "b": 0}, {"a": 5.0, "b": 5.0}, repetition=1),
            session("dc3", {"a": 0, "b": 0}, {"a": 5.0, "b": 5.0}, repetition=2),
        ]
        report = build_report(sessions)
        assert report.per_annotator["a1"]["none"]["consistency"] == pytest.approx(0.5)
        assert report.per_annotator["a1"]["dc3"]["consistency"] == 1.0
        assert report.per_mode["dc3"]["speed_up_vs_none"] == pytest.approx(12.0 / 5.0)
        assert report.per_mode["none"]["speed_up_vs_none"] is None
