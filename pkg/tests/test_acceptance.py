"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -s`` to see them
as they complete)."""

import math
import time

import numpy as np
import pytest
import torch
import torch.nn as nn

import oracle_losses as oracle
from dc3.dataset import (
    SoftLabel,
    SyntheticConfig,
    ambiguity,
    generate_synthetic,
    load_images,
    load_manifest,
    split_dataset,
)
from dc3.losses import (
    LossWeights,
    ambiguity_loss,
    dc3_total_loss,
    inverse_cross_entropy,
    pseudo_ambiguity_targets,
    similarity_loss,
)
from dc3.metrics import (
    EvalRecord,
    RunMetrics,
    build_records,
    degeneration_check,
    inner_distance,
    select_best_run,
    weighted_f1,
)
from dc3.model import HeadConfig, Prediction, forward_outputs, load_checkpoint, split_head
from dc3.proposals import (
    AnnotatorBehavior,
    ProposalEntry,
    ProposalSet,
    consistency,
    generate_proposals,
    simulate_annotator,
    speed_up,
)
from dc3.ssl_algos import SSLAlgorithmSpec, pseudo_label_loss
from dc3.trainer import RunConfig, train


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# 1. loss-oracle equivalence


CFG64 = HeadConfig(k=3, k_prime=5, embedding_dim=4)


def _random_outputs(rng, batch, p_a=None):
    raw = torch.tensor(rng.normal(size=(batch, CFG64.raw_dim)), dtype=torch.float64)
    out = split_head(raw, CFG64)
    if p_a is not None:
        out.p_a = torch.tensor(p_a, dtype=torch.float64)
    return out


def test_loss_oracle_equivalence():
    start = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(60):
        batch = int(rng.integers(2, 16))
        weights = LossWeights(
            wou=float(rng.uniform(0, 4)),
            wol=float(rng.uniform(0, 4)),
            wa=float(rng.uniform(0, 2)),
            ws=float(rng.uniform(0, 2)),
            prior_ambiguity=float(rng.uniform(0.1, 0.9)),
            confidence_tau=float(rng.uniform(0.3, 0.99)),
        )
        out_l = _random_outputs(rng, batch)
        out_u = _random_outputs(rng, batch)
        with_u2 = trial % 3 != 0
        out_u2 = _random_outputs(rng, batch) if with_u2 else None
        labels = torch.tensor(rng.integers(0, CFG64.k, size=batch))
        ssl_vec = torch.tensor(rng.random(batch), dtype=torch.float64)

        # standalone op checks against the scalar oracle
        p = out_u.p_o[0].tolist()
        q = out_l.p_o[0].tolist()
        worst = max(worst, abs(
            float(inverse_cross_entropy(out_u.p_o[0], out_l.p_o[0]))
            - oracle.ce_inv_scalar(p, q)
        ))
        h = float(rng.integers(0, 2))
        worst = max(worst, abs(
            float(ambiguity_loss(out_u.p_a[:1], torch.tensor([h], dtype=torch.float64)))
            - oracle.bce_scalar(float(out_u.p_a[0]), h)
        ))
        if with_u2:
            worst = max(worst, abs(
                float(similarity_loss(out_u.p_o[:1], out_u2.p_o[:1], out_u.p_a[:1]))
                - oracle.similarity_scalar(out_u.p_o[0].tolist(), out_u2.p_o[0].tolist())
                * float(out_u.p_a[0])
            ))

        breakdown = dc3_total_loss(
            ssl_vec, out_l, out_u, out_u2, labels, weights,
            np.random.default_rng(trial),
        )
        expected = oracle.total_scalar(
            ssl_vec.tolist(),
            out_l.p_o.tolist(),
            labels.tolist(),
            out_u.p_n.tolist(),
            out_u.p_o.tolist(),
            out_u.p_a.tolist(),
            out_u2.p_o.tolist() if with_u2 else None,
            {
                "wou": weights.wou, "wol": weights.wol,
                "wa": weights.wa, "ws": weights.ws,
                "prior_ambiguity": weights.prior_ambiguity,
                "confidence_tau": weights.confidence_tau,
                "order": weights.ambiguity_target_order,
            },
            breakdown.partners_labeled,
            breakdown.partners_unlabeled,
        )
        worst = max(worst, abs(float(breakdown.total) - expected["total"]))
        for key in ("ssl_term", "ce_inv_labeled", "ce_inv_unlabeled",
                    "ambiguity_term", "similarity_term"):
            worst = max(worst, abs(getattr(breakdown, key) - expected[key]))
    elapsed = time.time() - start
    report(
        "loss-oracle equivalence (60 batches, float64)",
        worst < 1e-6 and elapsed < 60,
        f"max |delta|={worst:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 2. gradient checks on a 2-layer model


class TinyNet(nn.Module):
    def __init__(self, in_dim, hidden, out_dim):
        super().__init__()
        self.l1 = nn.Linear(in_dim, hidden)
        self.l2 = nn.Linear(hidden, out_dim)

    def forward(self, x):
        return self.l2(torch.relu(self.l1(x)))


def _gradient_pipeline(weights):
    """Closure over a tiny float64 model computing the combined loss."""
    cfg = HeadConfig(k=2, k_prime=5, embedding_dim=4)
    torch.manual_seed(7)
    model = TinyNet(16, 12, cfg.raw_dim).double()
    n_params = sum(p.numel() for p in model.parameters())
    assert n_params <= 1000

    rng = np.random.default_rng(17)
    x_l = torch.tensor(rng.normal(size=(6, 16)))
    x_u = torch.tensor(rng.normal(size=(6, 16)))
    x_u2 = torch.tensor(rng.normal(size=(6, 16)))
    labels = torch.tensor([0, 1, 0, 1, 1, 0])

    def closure(stop_scales=None):
        out_l = split_head(model(x_l), cfg)
        out_u = split_head(model(x_u), cfg)
        out_u2 = split_head(model(x_u2), cfg)
        ssl_vec = pseudo_label_loss(out_u.p_n, threshold=0.6)
        return dc3_total_loss(
            ssl_vec, out_l, out_u, out_u2, labels, weights,
            np.random.default_rng(99), stop_scales=stop_scales,
        ), out_u

    # guard: stay away from the non-differentiable mask/threshold boundaries
    with torch.no_grad():
        _, out_u = closure()
        max_pn = out_u.p_n.max(dim=-1).values
        assert float((max_pn - 0.6).abs().min()) > 1e-3
        assert float((max_pn - weights.confidence_tau).abs().min()) > 1e-3
        gaps = torch.diff(torch.sort(out_u.p_a).values)
        assert float(gaps.min()) > 1e-3
    return model, closure


def _fd_relative_error(model, closure):
    center, out_u = closure()
    p_a0 = out_u.p_a.detach().clone()
    params = list(model.parameters())
    if not center.total.requires_grad:
        return 0.0  # term inactive: zero gradient on both routes
    grads = torch.autograd.grad(center.total, params, allow_unused=True)
    h = 1e-5
    worst = 0.0
    for p, g in zip(params, grads):
        g = torch.zeros_like(p) if g is None else g
        flat = p.detach().view(-1)
        fd = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + h
            with torch.no_grad():
                up = float(closure(stop_scales=p_a0)[0].total)
            flat[i] = orig - h
            with torch.no_grad():
                down = float(closure(stop_scales=p_a0)[0].total)
            flat[i] = orig
            fd[i] = (up - down) / (2 * h)
        fd = fd.view_as(p)
        denom = max(float(g.norm()), float(fd.norm()), 1e-10)
        worst = max(worst, float((g - fd).norm()) / denom)
    return worst


TERM_CONFIGS = {
    "ssl": LossWeights(wou=0.0, wol=0.0, wa=0.0, ws=0.0),
    "ce_inv_labeled": LossWeights(wou=0.0, wol=1.0, wa=0.0, ws=0.0),
    "ce_inv_unlabeled": LossWeights(wou=1.0, wol=0.0, wa=0.0, ws=0.0, confidence_tau=0.45),
    "ambiguity": LossWeights(wou=0.0, wol=0.0, wa=1.0, ws=0.0),
    "similarity": LossWeights(wou=0.0, wol=0.0, wa=0.0, ws=1.0),
    "combined": LossWeights(wou=2.0, wol=1.0, wa=0.5, ws=0.5, confidence_tau=0.45),
}


def test_gradient_checks():
    start = time.time()
    errors = {}
    for name, weights in TERM_CONFIGS.items():
        model, closure = _gradient_pipeline(weights)
        errors[name] = _fd_relative_error(model, closure)
    ok = all(e < 1e-4 for e in errors.values())

    # gradient-stop contract: with wa = 0 the ambiguity logit gets nothing
    weights = LossWeights(wou=2.0, wol=1.0, wa=0.0, ws=0.5, confidence_tau=0.45)
    cfg = HeadConfig(k=2, k_prime=5, embedding_dim=4)
    torch.manual_seed(7)
    model = TinyNet(16, 12, cfg.raw_dim).double()
    rng = np.random.default_rng(17)
    raw_l = model(torch.tensor(rng.normal(size=(6, 16))))
    raw_u = model(torch.tensor(rng.normal(size=(6, 16))))
    raw_u2 = model(torch.tensor(rng.normal(size=(6, 16))))
    leaf_l = raw_l.detach().clone().requires_grad_()
    leaf_u = raw_u.detach().clone().requires_grad_()
    leaf_u2 = raw_u2.detach().clone().requires_grad_()
    out_l, out_u, out_u2 = (split_head(r, cfg) for r in (leaf_l, leaf_u, leaf_u2))
    ssl_vec = pseudo_label_loss(out_u.p_n, threshold=0.6)
    total = dc3_total_loss(
        ssl_vec, out_l, out_u, out_u2, torch.tensor([0, 1, 0, 1, 1, 0]),
        weights, np.random.default_rng(99),
    ).total
    g_l, g_u, g_u2 = torch.autograd.grad(total, (leaf_l, leaf_u, leaf_u2))
    stop_leak = max(
        float(g_l[:, -1].abs().max()),
        float(g_u[:, -1].abs().max()),
        float(g_u2[:, -1].abs().max()),
    )
    elapsed = time.time() - start
    detail = ", ".join(f"{k}={v:.2e}" for k, v in errors.items())
    report(
        "gradient checks (2-layer model, central differences)",
        ok and stop_leak < 1e-8 and elapsed < 120,
        f"rel errors: {detail}; d(total)/d(logit_a) with wa=0: {stop_leak:.2e}; "
        f"{elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 3. metric oracles


def _certain(cls, gt):
    return EvalRecord("x", Prediction("certain", cls, None, 0.0), SoftLabel(gt))


def _fuzzy(cluster, gt):
    return EvalRecord("x", Prediction("fuzzy", None, cluster, 1.0), SoftLabel(gt))


def test_metric_oracles():
    start = time.time()
    d1 = inner_distance([_fuzzy(0, [1, 0]), _fuzzy(0, [0, 1])])
    fixture = [
        _fuzzy(0, [1, 0]), _fuzzy(0, [1, 0]),
        _fuzzy(1, [0.5, 0.5]), _fuzzy(1, [0.7, 0.3]),
    ]
    d2 = inner_distance(fixture)
    f1 = weighted_f1(
        [
            _certain(0, [1, 0, 0]), _certain(0, [1, 0, 0]),
            _certain(0, [0.9, 0.1, 0]), _certain(2, [0, 1, 0]),
        ]
    )
    deg10 = degeneration_check(
        [_fuzzy(0, [0.5, 0.5])] * 10 + [_certain(0, [1, 0])] * 90
    )
    deg11 = degeneration_check(
        [_fuzzy(0, [0.5, 0.5])] * 11 + [_certain(0, [1, 0])] * 89
    )
    deg90 = degeneration_check(
        [_fuzzy(0, [0.5, 0.5])] * 90 + [_certain(0, [1, 0])] * 10
    )
    ok = (
        abs(d1 - 0.7071) < 1e-4
        and abs(d2 - 0.0707) < 1e-4
        and f1 == 0.75
        and deg10 is True
        and deg11 is False
        and deg90 is True
    )
    elapsed = time.time() - start
    report(
        "metric oracles (fixtures + degeneration boundary)",
        ok and elapsed < 1,
        f"d={d1:.4f}/{d2:.4f}, f1={f1}, boundary(10%/11%/90%)="
        f"{deg10}/{deg11}/{deg90}, {elapsed:.2f}s",
    )


# ---------------------------------------------------------------------------
# 4. vanilla-equivalence over 200 steps


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept_small")
    config = SyntheticConfig(
        k=2, n_images=200, fuzzy_fraction=0.2, ambiguity_range=(0.2, 0.8),
        image_size=16, annotators_per_image=5, seed=50,
    )
    generate_synthetic(config, out)
    return out / "manifest.json"


def test_vanilla_equivalence_200_steps(small_dataset):
    start = time.time()
    mismatches = {}
    for algo in ("pseudo_label", "pi_model", "mean_teacher"):
        common = dict(
            manifest=str(small_dataset),
            ssl=SSLAlgorithmSpec(algo),
            backbone="mlp", embedding_dim=16, batch_size=16,
            steps=200, lr=0.03, seed=0,
            supervised_fraction=0.2, val_fraction=0.2,
        )
        vanilla = train(RunConfig(**common, dc3_enabled=False))
        zeroed = train(
            RunConfig(
                **common,
                dc3_enabled=True,
                force_certain=True,
                weights=LossWeights(wou=0.0, wol=0.0, wa=0.0, ws=0.0),
            )
        )
        va = [e["objective"] for e in vanilla.loss_history]
        vb = [e["objective"] for e in zeroed.loss_history]
        mismatches[algo] = sum(a != b for a, b in zip(va, vb))
    elapsed = time.time() - start
    ok = all(m == 0 for m in mismatches.values()) and elapsed < 300
    report(
        "vanilla-equivalence (200 steps, bitwise)",
        ok,
        f"mismatching steps per algorithm: {mismatches}, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# 5. pseudo-ambiguity targets


def test_pseudo_ambiguity_target_counts_and_complementarity():
    start = time.time()
    rng = np.random.default_rng(31)
    count_ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 128))
        prior = float(rng.uniform(0.02, 0.98))
        p_a = torch.tensor(rng.random(n))
        for order in ("descending", "ascending_literal"):
            targets = pseudo_ambiguity_targets(p_a, prior, order)
            if int(targets.sum()) != math.floor(n * prior):
                count_ok = False

    # complementarity on distinct-valued batches: the two orders pick from
    # opposite ends of the ranking; descending on p equals ascending on 1-p,
    # and the two selections are disjoint whenever 2m <= B
    comp_ok = True
    for _ in range(200):
        n = int(rng.integers(2, 64))
        values = torch.tensor(rng.permutation(np.linspace(0.05, 0.95, n)))
        prior = float(rng.uniform(0.05, 0.95))
        m = math.floor(n * prior)
        desc = pseudo_ambiguity_targets(values, prior, "descending")
        asc = pseudo_ambiguity_targets(values, prior, "ascending_literal")
        mirrored = pseudo_ambiguity_targets(1.0 - values, prior, "ascending_literal")
        top_m = set(torch.argsort(values, descending=True)[:m].tolist())
        bottom_m = set(torch.argsort(values)[:m].tolist())
        if set(torch.nonzero(desc).flatten().tolist()) != top_m:
            comp_ok = False
        if set(torch.nonzero(asc).flatten().tolist()) != bottom_m:
            comp_ok = False
        if not torch.equal(desc, mirrored):
            comp_ok = False
        if 2 * m <= n and top_m & bottom_m:
            comp_ok = False
    elapsed = time.time() - start
    report(
        "pseudo-ambiguity targets (1000 batches)",
        count_ok and comp_ok and elapsed < 10,
        f"counts exact: {count_ok}, complementary selections: {comp_ok}, "
        f"{elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 6 + 7. directional end-to-end and the simulated annotation study


@pytest.fixture(scope="module")
def directional(tmp_path_factory):
    """Three seeds of Pseudo-Label with and without the extension on the
    k=2 / n=1000 / 20% fuzzy synthetic dataset."""
    out = tmp_path_factory.mktemp("accept_e2e")
    data_cfg = SyntheticConfig(
        k=2, n_images=1000, fuzzy_fraction=0.2, ambiguity_range=(0.2, 0.8),
        image_size=32, annotators_per_image=10, seed=100,
    )
    generate_synthetic(data_cfg, out / "data")
    manifest_path = out / "data" / "manifest.json"

    runs = {}
    t0 = time.time()
    for seed in (0, 1, 2):
        for dc3 in (True, False):
            config = RunConfig(
                manifest=str(manifest_path),
                ssl=SSLAlgorithmSpec("pseudo_label"),
                backbone="small_conv",
                batch_size=64, steps=500, lr=0.03, seed=seed,
                supervised_fraction=0.1, val_fraction=0.2,
                dc3_enabled=dc3,
                out_dir=str(out / f"{'dc3' if dc3 else 'vanilla'}_seed{seed}"),
            )
            runs[(seed, dc3)] = train(config)
    return {
        "manifest_path": manifest_path,
        "runs": runs,
        "train_seconds": time.time() - t0,
    }


def test_directional_end_to_end(directional):
    runs = directional["runs"]
    wins = 0
    lines = []
    for seed in (0, 1, 2):
        diff_dc3 = runs[(seed, True)].final_metrics.diff
        diff_van = runs[(seed, False)].final_metrics.diff
        win = diff_dc3 is not None and diff_van is not None and diff_dc3 <= diff_van
        wins += win
        lines.append(f"seed{seed}: {diff_dc3:+.3f} vs {diff_van:+.3f}")

    manifest = load_manifest(directional["manifest_path"])
    split_dataset(manifest, 0.1, 0.2, seed=0)
    val = manifest.items_in_split("validation")
    x = torch.from_numpy(load_images(manifest, val))
    recalls = []
    n_live = 0
    for seed in (0, 1, 2):
        artifacts = runs[(seed, True)]
        if artifacts.final_metrics.degenerated:
            continue
        n_live += 1
        model, cfg, _ = load_checkpoint(artifacts.checkpoint_path)
        records = build_records(val, forward_outputs(model, x, cfg))
        truly = [
            r for r, it in zip(records, val) if ambiguity(it.gt_soft) >= 0.2
        ]
        recalls.append(sum(r.prediction.kind == "fuzzy" for r in truly) / len(truly))

    elapsed = directional["train_seconds"]
    ok = wins >= 2 and n_live >= 1 and all(r >= 0.6 for r in recalls) and elapsed < 1200
    report(
        "directional end-to-end (diff and fuzzy routing)",
        ok,
        f"diff wins {wins}/3 ({'; '.join(lines)}); fuzzy recall per "
        f"non-degenerated run: {[round(r, 3) for r in recalls]}; "
        f"training {elapsed:.0f}s",
    )


def test_simulated_annotation_study(directional):
    start = time.time()
    runs = directional["runs"]
    dc3_metrics = [runs[(s, True)].final_metrics for s in (0, 1, 2)]
    best = select_best_run(dc3_metrics)
    assert best is not None, "no non-degenerated run to build proposals from"
    checkpoint = runs[(best, True)].checkpoint_path

    manifest = load_manifest(directional["manifest_path"])
    gt = {it.image_id: it.gt_soft for it in manifest.items}
    proposals = generate_proposals(checkpoint, directional["manifest_path"], mode="dc3")

    behavior = AnnotatorBehavior(accept_prob=0.9, base_time=12.0, proposal_time=5.0)
    rng = np.random.default_rng(7)
    with_reps = [
        simulate_annotator(gt, proposals, behavior, rng, repetition=r) for r in (1, 2, 3)
    ]
    none_reps = [
        simulate_annotator(gt, None, behavior, rng, repetition=r) for r in (1, 2, 3)
    ]
    c_with = consistency(with_reps)
    c_none = consistency(none_reps)
    n = len(gt)
    margin = 1.96 * math.sqrt(c_with * (1 - c_with) / n + c_none * (1 - c_none) / n)
    gain_ok = (c_with - c_none) > margin
    su = speed_up(with_reps + none_reps, mode="dc3")

    # arithmetic reproduction of the 12/5 ratio under full acceptance
    perfect = ProposalSet(
        manifest.name, "dc3",
        [
            ProposalEntry(i, "certain", int(np.argmax(l.probs)), None, 0.0)
            for i, l in gt.items()
        ],
        [],
    )
    strict = AnnotatorBehavior(accept_prob=1.0, base_time=12.0, proposal_time=5.0)
    rng2 = np.random.default_rng(8)
    ratio = speed_up(
        [
            simulate_annotator(gt, perfect, strict, rng2),
            simulate_annotator(gt, None, strict, rng2),
        ],
        mode="dc3",
    )
    ratio_ok = abs(ratio - 2.4) / 2.4 < 0.05
    elapsed = time.time() - start
    report(
        "simulated annotation study",
        gain_ok and su > 1.0 and ratio_ok and elapsed < 60,
        f"consistency {c_with:.4f} vs {c_none:.4f} (margin {margin:.4f}), "
        f"speed-up {su:.2f}, arithmetic ratio {ratio:.3f}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 8. run-suite selection


def _metrics(diff, degenerated=False):
    return RunMetrics(
        f1_weighted=0.5, inner_distance=0.5 + diff, diff=diff,
        fraction_fuzzy_predicted=0.5, degenerated=degenerated,
        n_certain=1, n_fuzzy=1,
    )


def test_run_suite_selection():
    fixture = [_metrics(-0.2), _metrics(-0.5, degenerated=True), _metrics(-0.3)]
    picked = select_best_run(fixture)
    all_deg = select_best_run(
        [_metrics(-0.2, True), _metrics(-0.9, True)]
    )
    ok = picked == 2 and all_deg is None
    report(
        "run-suite selection",
        ok,
        f"fixture picks index {picked}, all-degenerated -> {all_deg}",
    )
