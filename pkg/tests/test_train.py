import json

import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F
import yaml

from attnmatte import cli, imaging
from attnmatte import train as train_mod
from attnmatte.data import Manifest, ManifestError, compose_dataset
from attnmatte.model import BackboneConfig, ModelOutput
from attnmatte.optim import MomentumSGD, poly_lr
from attnmatte.train import (ConfigError, NonFiniteLossError, TrainConfig, evaluate_dataset,
                             infer, load_checkpoint, train)

SMALL_MODEL = dict(widths=[8, 8, 16, 16, 16], pyramid_width=16, decoder_widths=[16, 8],
                   attention_width=8)


def small_config(manifest, tmp_path, **kw):
    base = dict(manifest=str(manifest), epochs=1, batch_size=2, crop_sizes=(64, 80, 96),
                out_size=64, checkpoint_dir=str(tmp_path / "ckpt"), model=dict(SMALL_MODEL))
    base.update(kw)
    return TrainConfig(**base)


def two_record_manifest(toy_manifest, tmp_path):
    m = Manifest(toy_manifest.per_fg, toy_manifest.seed, toy_manifest.records[:2])
    path = tmp_path / "two.jsonl"
    m.save(path)
    return path


def test_poly_lr():
    assert poly_lr(0.007, 0, 100) == 0.007
    assert poly_lr(0.007, 100, 100) == 0.0
    assert poly_lr(1.0, 50, 100, 0.9) == pytest.approx(0.5 ** 0.9, abs=1e-12)
    assert poly_lr(1.0, 50, 100, 0.9) == pytest.approx(0.53589, abs=1e-5)
    with pytest.raises(ValueError):
        poly_lr(1.0, 101, 100)


def test_momentum_sgd_hand_stepped_quadratic():
    # f(p) = 0.5 * (a1 p1^2 + a2 p2^2), grad = a * p
    a = torch.tensor([2.0, 0.5], dtype=torch.float64)
    p = torch.tensor([1.0, -3.0], dtype=torch.float64, requires_grad=True)
    opt = MomentumSGD([p], lr=0.1, momentum=0.9)
    v = np.zeros(2)
    q = np.array([1.0, -3.0])
    for step, lr in enumerate([0.1, 0.05, 0.2, 0.01]):
        opt.zero_grad()
        (0.5 * (a * p * p).sum()).backward()
        opt.set_lr(lr)
        opt.step()
        g = a.numpy() * q
        v = 0.9 * v - lr * g
        q = q + v
        np.testing.assert_allclose(p.detach().numpy(), q, atol=1e-15, err_msg=f"step {step}")


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})
    cfg = TrainConfig(model={"pyramid_width": 32})
    assert cfg.model == BackboneConfig(pyramid_width=32)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert (cfg.lr, cfg.momentum, cfg.poly_power, cfg.epochs, cfg.batch_size) == (
        0.007, 0.9, 0.9, 20, 4)


def test_train_counting(toy_manifest, tmp_path):
    cfg = small_config(two_record_manifest(toy_manifest, tmp_path), tmp_path)
    state = train(cfg)
    assert len(state.history) == 1 == state.iteration
    assert len(state.checkpoints) == 1
    log = (tmp_path / "ckpt" / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 1
    rec = json.loads(log[0])
    assert {"adv", "mse", "ssim", "sentry", "total", "lr", "disc"} <= set(rec)


def test_train_is_deterministic(toy_data, tmp_path):
    a = train(small_config(toy_data, tmp_path / "a", epochs=2)).history
    b = train(small_config(toy_data, tmp_path / "b", epochs=2)).history
    assert a == b
    assert [r["iteration"] for r in a] == [1, 2, 3, 4]


def test_schedule_switches_after_first_epoch(toy_data, tmp_path):
    state = train(small_config(toy_data, tmp_path, epochs=2))
    for rec in state.history:
        w = (0.05, 1, 0.1, 0.3) if rec["epoch"] == 1 else (0.05, 1, 0.025, 0.1)
        total = w[0] * rec["adv"] + w[1] * rec["mse"] + w[2] * rec["ssim"] + w[3] * rec["sentry"]
        assert rec["total"] == pytest.approx(total, rel=1e-5)
    assert [r["epoch"] for r in state.history] == [1, 1, 2, 2]
    lrs = [r["lr"] for r in state.history]
    assert lrs[0] == 0.007 and all(x > y for x, y in zip(lrs, lrs[1:]))


def test_train_aborts_on_non_finite(toy_data, tmp_path, monkeypatch):
    monkeypatch.setattr(train_mod, "mse_loss", lambda p, g: torch.tensor(float("nan")))
    with pytest.raises(NonFiniteLossError):
        train(small_config(toy_data, tmp_path))
    last = json.loads((tmp_path / "ckpt" / "train_log.jsonl").read_text().splitlines()[-1])
    assert last["event"] == "non_finite_loss"


def test_train_fails_fast_on_missing_manifest(tmp_path):
    with pytest.raises(ManifestError):
        train(small_config(tmp_path / "missing.jsonl", tmp_path))


@pytest.fixture(scope="module")
def checkpoint(toy_data, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ckpt")
    state = train(small_config(toy_data, tmp))
    return state.checkpoints[-1]


def test_infer_shape_and_determinism(checkpoint, tmp_path, rng):
    image = rng.random((300, 500, 3))
    imaging.write_image(tmp_path / "in.png", image)
    a = infer(checkpoint, tmp_path / "in.png", tmp_path / "a.png")
    infer(checkpoint, tmp_path / "in.png", tmp_path / "b.png")
    assert a.shape == (300, 500)
    assert a.min() >= 0 and a.max() <= 1
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    from PIL import Image
    with Image.open(tmp_path / "a.png") as im:
        assert im.mode == "L" and im.size == (500, 300)


def test_load_rejects_incompatible(checkpoint):
    with pytest.raises(ConfigError):
        load_checkpoint(checkpoint, expected_config=BackboneConfig())


class AlphaFromImage(nn.Module):
    """Returns the red channel; equals the matte for white-over-black composites."""

    def forward(self, x):
        a = x[:, :1]
        return ModelOutput(a, F.avg_pool2d(a, 4))


@pytest.fixture(scope="module")
def white_on_black(tmp_path_factory):
    root = tmp_path_factory.mktemp("wob")
    rng = np.random.default_rng(0)
    for sub in ("fg", "alpha", "bg"):
        (root / sub).mkdir()
    for i in range(3):
        imaging.write_image(root / "fg" / f"{i}.png", np.ones((37, 50, 3)))
        imaging.write_alpha(root / "alpha" / f"{i}.png", rng.random((37, 50)))
    imaging.write_image(root / "bg" / "black.png", np.zeros((40, 60, 3)))
    compose_dataset(root / "fg", root / "alpha", root / "bg", root / "out", per_fg=2, seed=0)
    return root / "out" / "manifest.jsonl"


def test_evaluate_dataset_with_perfect_model(white_on_black, tmp_path):
    report = evaluate_dataset(None, white_on_black, model=AlphaFromImage(),
                              pred_dir=tmp_path / "pred")
    assert len(report.per_image) == 6
    assert all(v == 0 for v in report.aggregate.values())
    assert len(list((tmp_path / "pred").iterdir())) == 6


def test_evaluate_dataset_errors(white_on_black, tmp_path):
    empty = tmp_path / "empty.jsonl"
    Manifest(4, 0, []).save(empty)
    with pytest.raises(ManifestError):
        evaluate_dataset(None, empty, model=AlphaFromImage())
    m = Manifest.load(white_on_black)
    m.records[0].alpha_path = str(tmp_path / "gone.png")
    with pytest.raises(FileNotFoundError):
        evaluate_dataset(None, m, model=AlphaFromImage())


def test_evaluate_dataset_row_count(checkpoint, toy_manifest):
    report = evaluate_dataset(checkpoint, toy_manifest)
    assert len(report.per_image) == len(toy_manifest)


def test_cli_end_to_end(tmp_path, capsys):
    from attnmatte.toy import make_toy_set
    make_toy_set(tmp_path / "src", n_fg=2, n_bg=3, size=72, seed=1)
    src = tmp_path / "src"
    assert cli.main(["compose", "--fg", str(src / "fg"), "--alpha", str(src / "alpha"),
                     "--bg", str(src / "bg"), "--per-fg", "2", "--seed", "3",
                     "--out", str(tmp_path / "data")]) == 0
    manifest = tmp_path / "data" / "manifest.jsonl"
    assert len(Manifest.load(manifest)) == 4

    config = tmp_path / "train.yaml"
    config.write_text(yaml.safe_dump({
        "manifest": str(manifest), "epochs": 3, "batch_size": 4, "out_size": 64,
        "crop_sizes": [64, 72], "checkpoint_dir": str(tmp_path / "ckpt"),
        "model": SMALL_MODEL}))
    assert cli.main(["train", "--config", str(config), "--epochs", "1", "--seed", "5"]) == 0
    ckpt = tmp_path / "ckpt" / "epoch_001.pt"
    assert ckpt.exists()
    assert not (tmp_path / "ckpt" / "epoch_003.pt").exists()

    rec = Manifest.load(manifest).records[0]
    assert cli.main(["infer", "--ckpt", str(ckpt), "--image", rec.composite_path,
                     "--out", str(tmp_path / "pred.png")]) == 0
    assert imaging.read_alpha(tmp_path / "pred.png").shape == (72, 72)

    assert cli.main(["eval", "--ckpt", str(ckpt), "--manifest", str(manifest),
                     "--report", str(tmp_path / "report.json")]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["per_image"]) == 4
    assert "SAD" in capsys.readouterr().out

    assert cli.main(["trimap", "--alpha", rec.alpha_path, "--radius", "5",
                     "--out", str(tmp_path / "tri.png")]) == 0
    assert set(np.unique(imaging.read_trimap(tmp_path / "tri.png"))) <= {0, 128, 255}


def test_cli_flag_overrides_config(tmp_path):
    config = tmp_path / "c.yaml"
    config.write_text(yaml.safe_dump({"epochs": 7, "lr": 0.01, "model": {"pyramid_width": 64}}))
    args = cli.build_parser().parse_args(
        ["train", "--config", str(config), "--lr", "0.002", "--batch-size", "3",
         "--model", '{"reduction": 2}'])
    overrides = {k: getattr(args, k) for k in TrainConfig().to_dict()}
    cfg = cli.load_config(args.config, overrides)
    assert (cfg.epochs, cfg.lr, cfg.batch_size) == (7, 0.002, 3)
    assert cfg.model.pyramid_width == 64 and cfg.model.reduction == 2
