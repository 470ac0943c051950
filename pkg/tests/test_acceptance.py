"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from lsslab import metrics_seg, metrics_text, pidloss
from lsslab.gradcheck import numerical_grad, relative_error
from lsslab.grading import AreaStats, build_context, generate_report, grade_from_area
from lsslab.harness.config import TrainConfig
from lsslab.harness.data import load_dataset, load_samples
from lsslab.harness.evaluate import ablation_samples
from lsslab.harness.synth import make_corpus, make_phantom
from lsslab.harness.train import train, train_samples
from lsslab.imaging import otsu_threshold
from lsslab.pseudomask import GRADES, Grade, generate_pseudo_mask, parse_severity

from .golden_nlg import GOLDEN
from .netcheck import network_gradient_errors
from .oracles import auc_pairs, otsu_exhaustive


def test_gradient_fidelity(criterion):
    start = time.perf_counter()
    worst = {}
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        p = rng.uniform(0.02, 0.98, (16, 16))
        y = rng.random((16, 16)) > 0.7
        for name, fn in (("focal_tversky", lambda: pidloss.focal_tversky_loss(p, y, 0.3, 0.7)),
                         ("bce", lambda: pidloss.bce_loss(p, y))):
            num = numerical_grad(lambda: fn()[0], {"p": p}, eps=1e-5)["p"]
            worst[name] = max(worst.get(name, 0.0), relative_error(fn()[1], num))
        for loss in ("tversky", "bce"):
            errs = network_gradient_errors(seed, loss)
            worst[f"net_{loss}"] = max(worst.get(f"net_{loss}", 0.0), max(errs.values()))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"
    assert criterion(1, "gradient fidelity", ok, detail)


def test_controller_safety(criterion):
    rng = np.random.default_rng(0)
    streams = list(rng.uniform(-1, 1, (9000, 30)))
    # adversarial shapes: saturated, alternating, long ramps
    streams += [np.full(30, s) for s in (-1.0, 1.0)] * 200
    streams += [np.tile([1.0, -1.0], 15)] * 200
    streams += [np.r_[np.ones(20), -np.ones(10)]] * 200
    streams += list(rng.choice([-1.0, 1.0], (200, 30)))
    streams = streams[:10_000]
    start = time.perf_counter()
    violations = 0
    for stream in streams:
        state = pidloss.PidState()
        for e in stream:
            state, _ = pidloss.pid_update(state, float(e))
            if not (0.65 <= state.beta <= 0.85) or state.alpha != 1.0 - state.beta:
                violations += 1
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 5
    assert criterion(2, "controller safety", ok,
                     f"{len(streams)} streams x 30 steps, {violations} violations, {elapsed:.2f}s")


def test_tversky_dice_identity(criterion):
    rng = np.random.default_rng(1)
    triples = rng.uniform(1e-3, 1e4, (1000, 3))
    worst = 0.0
    worst_default_eps = 0.0
    for tp, fp, fn in triples:
        dice = 2 * tp / (2 * tp + fp + fn)
        exact = pidloss.tversky_index(pidloss.ConfusionCounts(tp, fp, fn, 0, epsilon=0.0), 0.5, 0.5)
        guarded = pidloss.tversky_index(pidloss.ConfusionCounts(tp, fp, fn, 0), 0.5, 0.5)
        worst = max(worst, abs(exact - dice))
        worst_default_eps = max(worst_default_eps, abs(guarded - dice))
    ok = worst < 1e-12
    assert criterion(3, "Tversky-Dice identity", ok,
                     f"max |TI-Dice| {worst:.1e} without stabilizer, {worst_default_eps:.1e} with eps=1e-6")


@pytest.mark.slow
def test_ablation_direction(criterion, tmp_path):
    start = time.perf_counter()
    root = make_corpus(tmp_path / "blobs", 250, seed=11, size=64)
    manifest = load_dataset(root, splits={"train": list(range(200)), "val": list(range(200, 250)), "test": []})
    cfg = TrainConfig(seed=0)
    kw = dict(image_size=64, roi_fraction=cfg.roi_fraction)
    train_set = load_samples(manifest.split("train"), **kw)
    val_set = load_samples(manifest.split("val"), **kw)
    fg = float(np.mean([s.mask.mean() for s in train_set + val_set]))
    summary, _ = ablation_samples(train_set, val_set, cfg, workers=2)
    elapsed = time.perf_counter() - start
    ce, pid = summary["table"]["cross_entropy"], summary["table"]["pid_tversky"]
    d_dice, d_recall = pid["dice"] - ce["dice"], pid["recall"] - ce["recall"]
    ok = d_dice >= 0.05 and d_recall >= 0.05 and elapsed < 300 and 0.03 <= fg <= 0.07
    assert criterion(4, "ablation direction", ok,
                     f"fg {fg:.3f}; dice {ce['dice']:.3f} -> {pid['dice']:.3f} ({d_dice:+.3f}), "
                     f"recall {ce['recall']:.3f} -> {pid['recall']:.3f} ({d_recall:+.3f}); {elapsed:.0f}s")


def test_grade_mapping_fixtures(criterion):
    checks = {
        "0.0->A": grade_from_area(0.0) is Grade.A,
        "43.6->D": grade_from_area(43.6) is Grade.D,
        "10.0->BC": grade_from_area(10.0) is Grade.BC,
        "25.0->BC": grade_from_area(25.0) is Grade.BC,
    }
    mask = np.zeros((20, 20), bool)
    mask[5:10, 5:10] = True
    for grade, pct in ((Grade.A, 0.0), (Grade.BC, 17.0), (Grade.D, 43.6)):
        rep = generate_report("X", build_context(np.zeros(2), mask), AreaStats(pct, 25, 400), grade)
        checks[f"round-trip {grade.value}"] = parse_severity(rep.text) is grade
    failed = [k for k, v in checks.items() if not v]
    assert criterion(5, "grade mapping fixtures", not failed,
                     f"{len(checks) - len(failed)}/{len(checks)} checks" + (f", failed {failed}" if failed else ""))


def test_empty_mask_convention(criterion):
    empty = np.zeros((16, 16), bool)
    both_empty = metrics_seg.seg_score(empty, empty).dice
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        a = rng.random((16, 16)) < rng.uniform(0, 0.5)
        b = rng.random((16, 16)) < rng.uniform(0, 0.5)
        s = metrics_seg.seg_score(a, b)
        worst = max(worst, abs(s.iou - s.dice / (2 - s.dice)))
    ok = both_empty == 1.0 and worst < 1e-12
    assert criterion(6, "empty-mask convention", ok, f"Dice(empty, empty) {both_empty:.3f}, max IoU identity gap {worst:.1e}")


def _golden_mismatches():
    cands = [c.split() for c, _, _ in GOLDEN]
    refs = [[r.split()] for _, r, _ in GOLDEN]
    corpus = metrics_text.Corpus(cands, refs)
    cider, _ = metrics_text.cider(corpus)
    bad = 0
    for i, (c, (r,), (_, _, exp)) in enumerate(zip(cands, refs, GOLDEN)):
        rg = metrics_text.rouge(c, r)
        got = {"bleu": metrics_text.bleu(c, [r]), "rouge1": rg["rouge1"], "rouge2": rg["rouge2"],
               "rougeL": rg["rougeL"], "meteor": metrics_text.meteor(c, r), "cider": cider[i],
               "jaccard": metrics_text.jaccard(c, r), "tfidf": metrics_text.tfidf_cosine(c, r, corpus),
               "dist1": metrics_text.distinct_n([c], 1), "dist2": metrics_text.distinct_n([c], 2)}
        for k, v in exp.items():
            if np.max(np.abs(np.subtract(got[k], v))) > 1e-9:
                bad += 1
    return bad


def test_metric_oracles(criterion):
    rng = np.random.default_rng(3)
    otsu_bad = 0
    for i in range(100):
        img = rng.random((24, 24)) ** rng.uniform(0.3, 3)
        if i % 2:
            img = np.where(rng.random((24, 24)) > 0.7, img * 0.4 + 0.6, img * 0.4)
        if otsu_threshold(img)[0] != otsu_exhaustive(img)[0]:
            otsu_bad += 1
    auc_bad = 0
    for _ in range(100):
        n = int(rng.integers(2, 201))
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))
        labels = rng.random(n) > 0.5
        labels[0], labels[1] = True, False
        if abs(metrics_seg.roc_auc(scores, labels) - auc_pairs(scores, labels)) > 1e-12:
            auc_bad += 1
    nlg_bad = _golden_mismatches()
    ok = otsu_bad == 0 and auc_bad == 0 and nlg_bad == 0
    assert criterion(7, "metric oracles", ok,
                     f"Otsu mismatches {otsu_bad}/100, AUC mismatches {auc_bad}/100, "
                     f"golden NLG mismatches {nlg_bad}/{sum(len(g[2]) for g in GOLDEN)}")


def test_pseudomask_monotonicity(criterion):
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(50):
        img, _ = make_phantom(rng)
        if generate_pseudo_mask(img, Grade.D).sum() < generate_pseudo_mask(img, Grade.BC).sum():
            bad += 1
    assert criterion(8, "pseudo-mask monotonicity", bad == 0, f"{50 - bad}/50 phantoms with |M_D| >= |M_BC|")


def test_determinism_and_early_stopping(criterion, corpus, tmp_path):
    cfg = TrainConfig(image_size=32, max_epochs=4, patience=2, seed=8)
    manifest = load_dataset(corpus, seed=cfg.seed)
    train(manifest, cfg, tmp_path / "a")
    train(manifest, cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    identical = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)

    patience = 5
    stagnant = cfg.replace(max_epochs=30, patience=patience, encoder_lr=0.0, decoder_lr=0.0, weight_decay=0.0)
    kw = dict(image_size=32, roi_fraction=cfg.roi_fraction)
    tr, va = load_samples(manifest.split("train"), **kw), load_samples(manifest.split("val"), **kw)
    res = train_samples(tr, va, stagnant)
    # replay the stopping rule on the logged validation scores
    best, stale, expected = -math.inf, 0, None
    for epoch, rec in enumerate(res.history, 1):
        if rec["val_dice"] > best + stagnant.min_delta:
            best, stale, last_improved = rec["val_dice"], 0, epoch
        else:
            stale += 1
        if stale >= patience:
            expected = epoch
            break
    rule_ok = expected is not None and res.stopped_epoch == expected == last_improved + patience
    ok = identical and rule_ok
    assert criterion(9, "determinism and early stopping", ok,
                     f"{len(names)} run files byte-identical: {identical}; stagnant run stopped at epoch "
                     f"{res.stopped_epoch}, last improvement {last_improved}, patience {patience}")


def test_all_grades_covered():
    # guard for criterion 5: every grade has a template and a parse rule
    assert {g.value for g in GRADES} == {"A", "BC", "D"}
