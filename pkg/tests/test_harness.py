import json
import shutil

import numpy as np
import pytest

from lsslab.errors import ConfigError, InputError, LoadError, ParseError
from lsslab.harness import checkpoint
from lsslab.harness.config import TrainConfig, load_config, write_config_file
from lsslab.harness.data import load_dataset, load_samples, prompt_tokens, prompt_vocab, split_sizes
from lsslab.harness.evaluate import (ablation_samples, evaluate, evaluate_model, evaluate_predictions,
                                     load_model)
from lsslab.harness.train import EarlyStopping, train, train_samples
from lsslab.pseudomask import GRADES, Grade


def _copy(corpus, tmp_path):
    dst = tmp_path / "data"
    shutil.copytree(corpus, dst)
    return dst


# ---------------------------------------------------------------- dataset

def test_split_sizes_floor_rule():
    assert split_sizes(10) == (7, 1, 2)
    assert split_sizes(250) == (175, 37, 38)


def test_load_dataset_split(corpus):
    m = load_dataset(corpus, seed=0)
    sizes = [len(m.splits[k]) for k in ("train", "val", "test")]
    assert sizes == [7, 1, 2]
    every = sorted(sum(m.splits.values(), []))
    assert every == list(range(10))
    assert load_dataset(corpus, seed=0).splits == m.splits
    assert load_dataset(corpus, seed=1).splits != m.splits


def test_missing_image_names_path(corpus, tmp_path):
    root = _copy(corpus, tmp_path)
    (root / "images" / "P0003.png").unlink()
    with pytest.raises(LoadError, match="P0003.png"):
        load_dataset(root)


def test_malformed_manifest_reports_line(corpus, tmp_path):
    root = _copy(corpus, tmp_path)
    lines = (root / "manifest.csv").read_text().splitlines()
    lines[3] = lines[3] + ",extra"
    (root / "manifest.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        load_dataset(root)
    assert err.value.line == 4
    assert "line 4" in str(err.value)


def test_bad_grade_and_missing_columns(corpus, tmp_path):
    root = _copy(corpus, tmp_path)
    text = (root / "manifest.csv").read_text().replace(",A,", ",Z,", 1).replace(",BC,", ",Z,", 1)
    (root / "manifest.csv").write_text(text)
    with pytest.raises(ParseError):
        load_dataset(root)
    (root / "manifest.csv").write_text("patient_id,image\n")
    with pytest.raises(ParseError):
        load_dataset(root)


def test_pseudo_masks_used_without_mask_column(corpus, tmp_path):
    root = _copy(corpus, tmp_path)
    lines = (root / "manifest.csv").read_text().splitlines()
    stripped = [",".join(line.split(",")[:4]) for line in lines]
    (root / "manifest.csv").write_text("\n".join(stripped) + "\n")
    m = load_dataset(root)
    samples = load_samples(m.records[:3], image_size=32)
    assert all(s.mask.shape == (32, 32) and s.mask.dtype == bool for s in samples)


def test_prompt_tokens_cover_vocab():
    vocab = prompt_vocab()
    assert vocab == sorted(set(vocab))
    for g in GRADES:
        toks = prompt_tokens(g, vocab)
        assert toks and max(toks) < len(vocab)


# ---------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(patience=40)
    with pytest.raises(ConfigError):
        TrainConfig(loss="dice")
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_config_file_round_trip(tmp_path):
    cfg = TrainConfig(seed=9, augment=False, decoder_lr=2e-3)
    write_config_file(cfg, tmp_path / "run.cfg")
    assert load_config(tmp_path / "run.cfg") == cfg
    assert load_config(tmp_path / "run.cfg", ["seed=3"]).seed == 3


def test_config_file_errors(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("# comment\nseed=1\nnot a pair\n")
    with pytest.raises(ParseError) as err:
        load_config(path)
    assert err.value.line == 3
    with pytest.raises(ConfigError):
        load_config(None, ["nosuchkey=1"])
    with pytest.raises(ConfigError):
        load_config(None, ["seed=abc"])


# ---------------------------------------------------------------- early stopping

def test_early_stopping_constant_scores():
    stop = EarlyStopping(patience=5)
    for epoch in range(1, 30):
        stop.update(epoch, 0.4)
        if stop.should_stop:
            break
    assert epoch == 6 and stop.best_epoch == 1


def test_early_stopping_small_gains_count_as_stale():
    stop = EarlyStopping(patience=2, min_delta=1e-4)
    assert stop.update(1, 0.5)
    assert not stop.update(2, 0.50005)
    assert stop.update(3, 0.6)
    assert not stop.update(4, 0.6)
    assert not stop.update(5, 0.6)
    assert stop.should_stop


# ---------------------------------------------------------------- training

def _splits(corpus, cfg):
    m = load_dataset(corpus, seed=cfg.seed)
    kw = dict(image_size=cfg.image_size, roi_fraction=cfg.roi_fraction)
    return m, load_samples(m.split("train"), **kw), load_samples(m.split("val"), **kw)


def test_training_log_order_and_clamp(corpus, small_cfg):
    _, tr, va = _splits(corpus, small_cfg)
    res = train_samples(tr, va, small_cfg)
    n_batches = -(-len(tr) // small_cfg.batch_size)
    for epoch in range(1, res.stopped_epoch + 1):
        tagged = [line for line in res.lines if line.startswith(f"epoch={epoch} ")]
        kinds = [line.split()[1].split("=")[0] for line in tagged]
        assert kinds[:n_batches + 2] == ["batch"] * n_batches + ["controller", "val"]
    assert len(res.controller) == res.stopped_epoch
    assert all(0.65 <= r["beta"] <= 0.85 and r["alpha"] == 1 - r["beta"] for r in res.controller)


def test_bce_run_has_no_controller(corpus, small_cfg):
    _, tr, va = _splits(corpus, small_cfg)
    res = train_samples(tr, va, small_cfg.replace(loss="bce"))
    assert res.controller == []
    assert not any(" controller " in line for line in res.lines)


def test_training_needs_both_splits(small_cfg):
    with pytest.raises(InputError):
        train_samples([], [], small_cfg)


def test_runs_are_byte_identical(corpus, small_cfg, tmp_path):
    m = load_dataset(corpus, seed=small_cfg.seed)
    train(m, small_cfg, tmp_path / "a")
    train(m, small_cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["checkpoint.bin", "checkpoint.json", "controller.csv", "epochs.jsonl", "train.log"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_stagnant_run_follows_stopping_rule(corpus):
    cfg = TrainConfig(image_size=32, max_epochs=12, patience=3, encoder_lr=0.0, decoder_lr=0.0,
                      weight_decay=0.0, seed=2)
    _, tr, va = _splits(corpus, cfg)
    res = train_samples(tr, va, cfg)
    scores = [h["val_dice"] for h in res.history]
    best, stale, expected = -np.inf, 0, None
    for epoch, s in enumerate(scores, 1):
        if s > best + cfg.min_delta:
            best, stale = s, 0
        else:
            stale += 1
        if stale >= cfg.patience:
            expected = epoch
            break
    assert res.stopped_epoch == expected
    assert cfg.patience + 1 <= res.stopped_epoch <= cfg.max_epochs
    init = train_samples(tr, va, cfg.replace(max_epochs=cfg.patience))
    for k in res.params:
        assert np.array_equal(res.params[k], init.params[k])


# ---------------------------------------------------------------- checkpoint / evaluation

def test_checkpoint_round_trip(tmp_path):
    tensors = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(3.5), "c": np.random.default_rng(0).normal(size=4)}
    path = checkpoint.save_tensors(tmp_path / "ck", tensors, {"k": 1})
    loaded, meta = checkpoint.load_tensors(path)
    assert meta == {"k": 1}
    for k, v in tensors.items():
        assert np.array_equal(loaded[k], v) and loaded[k].shape == v.shape
    manifest = json.loads(path.read_text())
    assert manifest["format"] == "lsslab-tensors" and manifest["version"] == 1
    with pytest.raises(LoadError):
        checkpoint.load_tensors(tmp_path / "missing")


def test_saved_checkpoint_evaluates_like_memory(corpus, small_cfg, tmp_path):
    m = load_dataset(corpus, seed=small_cfg.seed)
    res = train(m, small_cfg, tmp_path / "run")
    samples = load_samples(m.split("test"), image_size=32)
    in_memory, _ = evaluate_model(samples, res.params, res.buffers, res.geometry, res.vocab, 0.6)
    from_disk = evaluate(tmp_path / "run" / "checkpoint", m, "test", tmp_path / "eval")
    assert json.dumps(in_memory, sort_keys=True, default=str) == json.dumps(from_disk, sort_keys=True, default=str)
    first = (tmp_path / "eval" / "metrics.json").read_bytes()
    evaluate(tmp_path / "run" / "checkpoint", m, "test", tmp_path / "eval")
    assert (tmp_path / "eval" / "metrics.json").read_bytes() == first
    assert (tmp_path / "eval" / "reports" / "index.jsonl").is_file()


def test_geometry_mismatch(corpus, small_cfg, tmp_path):
    m = load_dataset(corpus, seed=small_cfg.seed)
    res = train(m, small_cfg, tmp_path / "run")
    params, buffers, geom, vocab, _ = load_model(tmp_path / "run" / "checkpoint")
    big = load_samples(m.split("test"), image_size=64)
    with pytest.raises(ConfigError):
        evaluate_model(big, params, buffers, geom, vocab, 0.6)
    assert res.geometry == geom


def test_ground_truth_as_prediction(corpus):
    m = load_dataset(corpus)
    samples = load_samples(m.records, image_size=32)
    metrics, reports = evaluate_predictions(samples, [s.mask for s in samples])
    assert metrics["segmentation"]["overall"]["dice"] == 1.0
    assert metrics["classification"]["accuracy"] == 1.0
    assert [r.grade for r in reports] == [s.grade for s in samples]


def test_empty_prediction(corpus):
    m = load_dataset(corpus)
    samples = load_samples(m.records, image_size=32)
    metrics, reports = evaluate_predictions(samples, [np.zeros_like(s.mask) for s in samples])
    assert metrics["segmentation"]["overall"]["dice"] == 0.0
    assert all(r.grade is Grade.A for r in reports)
    assert metrics["segmentation"]["hausdorff_infinite"] == len(samples)


def test_ablation_rows_and_trajectory(corpus, small_cfg):
    _, tr, va = _splits(corpus, small_cfg)
    summary, results = ablation_samples(tr, va, small_cfg)
    assert set(summary["table"]) == {"cross_entropy", "pid_tversky"}
    assert len(summary["trajectory"]) == results["pid_tversky"].stopped_epoch
    again, _ = ablation_samples(tr, va, small_cfg, workers=2)
    assert again["table"] == summary["table"]
