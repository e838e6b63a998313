import logging

import numpy as np
import pytest

from seldkit import harness
from seldkit.augment import ALL_TRANSFORMS, transform_labels
from seldkit.autodiff import Tensor
from seldkit.config import ConfigFileError, DataConfig, OptimConfig, RunConfig, RunSection, load_config
from seldkit.harness import TrainingError, chunk_dataset, chunk_starts, evaluate_run, stitch, train
from seldkit.metrics import seld_score
from seldkit.model import ModelConfig
from seldkit.synth import EventSpec, ScenarioSpec, generate_scene, random_scenario


def scene(duration=3.0, seed=0, n_events=2):
    rng = np.random.default_rng(seed)
    return generate_scene(random_scenario(rng, duration=duration, n_events=n_events, min_length=0.5))


def tiny_model(**kw):
    base = dict(embed_dim=16, heads=2, fusion_layers=1, encoder_layers=1, kernel=5, dropout=0.0,
                cnn_channels=(4, 8, 16, 16), frame_size=(32, 16), patch=8, visual_channels=(4,))
    base.update(kw)
    return ModelConfig(**base)


def small_scene(seed=0, duration=3.0):
    # 32x16 video so tiny models can consume it
    rng = np.random.default_rng(seed)
    spec = random_scenario(rng, duration=duration, n_events=2, min_length=0.5)
    return generate_scene(ScenarioSpec(spec.seed, spec.duration, spec.events, frame_size=(32, 16)))


def tiny_run(tmp_path=None, **optim):
    opt = dict(batch_size=2, epochs=2, base_lr=1e-3)
    opt.update(optim)
    return RunConfig(model=tiny_model(), optim=OptimConfig(**opt),
                     run=RunSection(seed=5, output_dir=str(tmp_path) if tmp_path else ""))


# -- chunking ----------------------------------------------------------------

@pytest.mark.parametrize("n,mode,count", [(100, "train", 15), (30, "train", 1), (30, "test", 1), (100, "test", 4)])
def test_chunk_counts(n, mode, count):
    hop = 5 if mode == "train" else 30
    assert len(chunk_starts(n, 30, hop, pad_tail=(mode == "test"))) == count


def test_ten_second_clip_gives_fifteen_training_chunks():
    ex = chunk_dataset([scene(10.0)], mode="train")
    assert len(ex) == 15
    assert [e.start for e in ex] == list(range(0, 71, 5))
    assert all(e.labels.n_frames == 30 and e.features.shape == (7, 480, 128) for e in ex[:2])


def test_three_second_clip_gives_one_chunk_in_either_mode():
    s = scene(3.0)
    assert len(chunk_dataset([s], mode="train")) == 1
    assert len(chunk_dataset([s], mode="test")) == 1


def test_avcs_multiplies_by_eight_and_records_transforms():
    s = scene(3.5)
    plain = chunk_dataset([s], mode="train")
    aug = chunk_dataset([s], mode="train", avcs=True)
    assert len(aug) == 8 * len(plain)
    assert sorted(e.transform.index for e in aug) == sorted(list(range(8)) * len(plain))
    e = next(e for e in aug if e.transform == ALL_TRANSFORMS[5])
    assert e.labels == transform_labels(s.labels.slice(e.start, e.start + 30), ALL_TRANSFORMS[5])


@pytest.mark.parametrize("duration", [3.0, 7.3, 9.0, 10.0])
def test_test_chunks_tile_the_clip(duration):
    s = scene(duration)
    ex = chunk_dataset([s], mode="test")
    n = int(round(duration * 10))
    covered = [f for e in ex for f in range(e.start, e.start + e.valid)]
    assert covered == list(range(n))
    refs, _ = stitch(ex, [e.labels for e in ex])
    assert refs == s.labels


def test_padded_tail_is_silent():
    s = scene(4.0)
    tail = chunk_dataset([s], mode="test")[-1]
    assert tail.valid == 10
    assert np.all(tail.audio().samples[:, 2400 * 10:] == 0)
    assert tail.labels.frames[10:] == [[]] * 20


def test_short_clip_skipped_with_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="seldkit.harness"):
        ex = chunk_dataset([scene(2.0), scene(3.0)], names=["short", "ok"])
    assert len(ex) == 1 and ex[0].name == "ok"
    assert "skipping short" in caplog.text


def test_bad_mode():
    with pytest.raises(ValueError):
        chunk_dataset([scene()], mode="eval")


# -- configuration -----------------------------------------------------------

def test_config_defaults():
    cfg = load_config()
    assert (cfg.data.chunk_seconds, cfg.data.train_hop, cfg.data.test_hop) == (3.0, 0.5, 3.0)
    assert (cfg.optim.batch_size, cfg.optim.epochs) == (32, 50)
    assert 1e-4 <= cfg.optim.base_lr <= 1e-3
    assert cfg.augment.avcs is False


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[model]\nfusion = cmaf\nembed_dim = 128\n\n[augment]\navcs = yes\n")
    cfg = load_config(path, ["optim.base_lr=1e-4", "model.cnn_channels=16, 32, 64, 128"])
    assert cfg.model.fusion == "cmaf" and cfg.model.embed_dim == 128
    assert cfg.model.cnn_channels == (16, 32, 64, 128)
    assert cfg.augment.avcs is True and cfg.optim.base_lr == 1e-4
    again = tmp_path / "echo.ini"
    again.write_text(cfg.to_ini())
    assert load_config(again) == cfg


@pytest.mark.parametrize("overrides", [
    ["optim.base_lr=0.01"], ["optim.batch_size=0"], ["data.train_hop=0"], ["model.bogus=1"], ["extra.x=1"],
    ["augment.avcs=maybe"], ["noequals"], ["model.variant=XY"],
])
def test_config_errors(overrides):
    with pytest.raises(ConfigFileError):
        load_config(None, overrides)


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.ini")


def test_invalid_data_config():
    with pytest.raises(ConfigFileError):
        DataConfig(test_hop=-1)


# -- training ----------------------------------------------------------------

def test_training_is_deterministic():
    scenes = [small_scene(i) for i in range(3)]
    a = train(tiny_run(), scenes, scenes[:1], log_fn=lambda s: None)
    b = train(tiny_run(), scenes, scenes[:1], log_fn=lambda s: None)
    assert a.epoch_losses == b.epoch_losses
    assert all(np.isfinite(a.epoch_losses)) and a.steps == 4


def test_report_consistency_and_checkpoints(tmp_path):
    scenes = [small_scene(i) for i in range(2)]
    cfg = tiny_run(tmp_path, epochs=3)
    report = train(cfg, scenes, scenes, log_fn=lambda s: None)
    seld = [m.SELD for m in report.epoch_metrics]
    assert report.best_epoch == int(np.argmin(seld))
    assert report.final is report.epoch_metrics[report.best_epoch]
    for m in report.epoch_metrics:
        assert m.SELD == seld_score(m.ER, m.F1, m.LE, m.LR)
    assert len(report.checkpoints) == 3
    text = (tmp_path / "report.txt").read_text()
    assert f"best_epoch={report.best_epoch}" in text and "SELD=" in text
    assert "[optim]" in report.config
    # re-evaluating the best checkpoint reproduces its metrics
    again = evaluate_run(report.checkpoints[report.best_epoch], cfg, scenes)
    assert again.as_dict() == pytest.approx(report.final.as_dict(), abs=1e-12)


def test_max_steps_caps_training():
    scenes = [small_scene(i) for i in range(3)]
    report = train(tiny_run(epochs=5, max_steps=3), scenes, log_fn=lambda s: None)
    assert report.steps == 3


def test_nan_loss_aborts_with_diagnostics(monkeypatch):
    def bad_loss(pred, labels):
        return (pred * Tensor(np.array(np.nan, pred.dtype))).mean()
    monkeypatch.setattr(harness, "adpit_loss", bad_loss)
    with pytest.raises(TrainingError, match="non-finite loss.*step 0"):
        train(tiny_run(), [small_scene(0)], log_fn=lambda s: None)


def test_audio_pretraining_changes_encoder_only():
    scenes = [small_scene(i) for i in range(2)]
    cfg = tiny_run(epochs=1, pretrain_epochs=1)
    model = harness.SeldModel(cfg.model, seed=cfg.seed)
    before = model.state_dict()
    before = {k: v.copy() for k, v in before.items()}
    harness.pretrain_audio(cfg, model, scenes, log_fn=lambda s: None)
    after = model.state_dict()
    assert any(not np.array_equal(before[k], after[k]) for k in before if k.startswith("audio."))
    assert all(np.array_equal(before[k], after[k]) for k in before if not k.startswith("audio."))


def test_no_training_data(tmp_path):
    with pytest.raises(FileNotFoundError):
        train(RunConfig(data=DataConfig(train_dir=str(tmp_path))))


def test_overfit_single_scene_quickly():
    s = small_scene(1)
    res = harness.overfit(tiny_model(variant="AO"), [s], max_steps=40, lr=3e-3, check_every=40,
                          log_fn=lambda m: None)
    assert res.losses[-1] < res.losses[0]
    assert res.steps == 40 and res.f1_history[-1][0] == 40


def test_event_free_scene_still_trains():
    s = generate_scene(ScenarioSpec(events=(), frame_size=(32, 16)))
    report = train(tiny_run(epochs=1), [s], log_fn=lambda m: None)
    assert np.isfinite(report.epoch_losses[0])


def test_single_event_scene_labels_survive_chunking():
    spec = ScenarioSpec(events=(EventSpec(3, 0.0, 3.0, 45.0, 10.0),), frame_size=(32, 16))
    ex = chunk_dataset([generate_scene(spec)], mode="test")[0]
    assert all(f and f[0].class_id == 3 for f in ex.labels.frames)
    assert ex.frames().shape == (30, 16, 32, 3)
