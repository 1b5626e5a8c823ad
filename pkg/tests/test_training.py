"""Training step, training loop artifacts, evaluation and inference padding."""

import json

import numpy as np
import pytest

from mprnet.data.sampling import TrainingData
from mprnet.errors import NonFiniteLossError, UsageError
from mprnet.inference import pad_reflect, restore
from mprnet.losses import LossReport
from mprnet.metrics import psnr
from mprnet.network import MPRNet
from mprnet.optim import Adam
from mprnet.training import (
    IterationRecord,
    degraded_baseline,
    evaluate,
    run_training,
    score_image,
    train,
    training_step,
)


@pytest.fixture
def pairs(rng):
    clean = [rng.uniform(size=(3, 16, 16)) for _ in range(3)]
    return [(c, np.clip(c + rng.normal(0, 0.1, c.shape), 0, 1)) for c in clean]


class TestIterationRecord:
    def test_missing_stages_are_dashes(self):
        report = LossReport(stages=[3], char=[0.5], edge=[0.25], total=0.5125, total_tensor=None)
        line = IterationRecord.from_report(7, report, 1e-4).to_line()
        fields = line.split()
        assert len(fields) == 9
        assert fields[0] == "7"
        assert fields[2:6] == ["-", "-", "-", "-"]
        assert float(fields[6]) == 0.5 and float(fields[8]) == 1e-4


class TestTrainingStep:
    def test_zero_lr_leaves_weights(self, tiny_run_config):
        model = MPRNet(tiny_run_config.model)
        before = model.state_dict()
        clean, degraded = TrainingData(tiny_run_config.train, tiny_run_config.degrade).batch(1)
        report = training_step(model, Adam(model.parameters(), tiny_run_config.optim), clean, degraded,
                               tiny_run_config.loss, 0.0, 1)
        assert report.stages == [1, 2, 3]
        assert all(np.array_equal(before[name], value) for name, value in model.state_dict().items())

    def test_updates_weights(self, tiny_run_config):
        model = MPRNet(tiny_run_config.model)
        before = model.state_dict()
        clean, degraded = TrainingData(tiny_run_config.train, tiny_run_config.degrade).batch(1)
        training_step(model, Adam(model.parameters(), tiny_run_config.optim), clean, degraded,
                      tiny_run_config.loss, 1e-3, 1)
        assert not np.array_equal(before["stage1.stem.weight"], model.state_dict()["stage1.stem.weight"])

    def test_non_finite_loss(self, tiny_run_config):
        model = MPRNet(tiny_run_config.model)
        clean = np.zeros((1, 3, 16, 16))
        degraded = np.full((1, 3, 16, 16), np.nan)
        with pytest.raises(NonFiniteLossError) as excinfo:
            training_step(model, Adam(model.parameters(), tiny_run_config.optim), clean, degraded,
                          tiny_run_config.loss, 1e-3, 5)
        assert excinfo.value.iteration == 5
        assert "total" in excinfo.value.terms


class TestTrain:
    def test_writes_logs_and_checkpoints(self, tiny_run_config, tmp_path):
        cfg = tiny_run_config
        model = MPRNet(cfg.model)
        data = TrainingData(cfg.train, cfg.degrade)
        log = train(model, data, cfg.train, cfg.optim, cfg.loss, out_dir=tmp_path,
                    validation=data.validation_pairs())
        lines = (tmp_path / "train.log").read_text().splitlines()
        assert len(lines) == 3 == len(log.records)
        assert all(len(line.split()) == 9 for line in lines)
        assert [int(line.split()[0]) for line in lines] == [1, 2, 3]
        assert float(lines[0].split()[-1]) == cfg.optim.lr_init
        assert len((tmp_path / "val.log").read_text().splitlines()) == 2
        assert (tmp_path / "best.mprf").exists() and (tmp_path / "last.mprf").exists()
        assert log.best_iteration in (2, 3)

    def test_custom_schedule(self, tiny_run_config):
        cfg = tiny_run_config
        model = MPRNet(cfg.model)
        before = model.state_dict()
        log = train(model, TrainingData(cfg.train, cfg.degrade), cfg.train, cfg.optim, cfg.loss,
                    lr_schedule=lambda t: 0.0)
        assert [r.lr for r in log.records] == [0.0, 0.0, 0.0]
        assert all(np.array_equal(before[name], value) for name, value in model.state_dict().items())

    def test_runs_are_reproducible(self, tiny_run_config, tmp_path):
        for name in ("a", "b"):
            run_training(tiny_run_config, tmp_path / name, progress=False, write_artifacts=False)
        for artifact in ("train.log", "val.log", "last.mprf", "best.mprf"):
            assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()

    def test_prefetch_workers_do_not_change_results(self, tiny_run_config, tmp_path):
        run_training(tiny_run_config, tmp_path / "serial", progress=False, workers=1, write_artifacts=False)
        run_training(tiny_run_config, tmp_path / "threaded", progress=False, workers=3, write_artifacts=False)
        serial = (tmp_path / "serial" / "last.mprf").read_bytes()
        assert serial == (tmp_path / "threaded" / "last.mprf").read_bytes()

    def test_prefetcher_stopped_when_step_fails(self, tiny_run_config, monkeypatch):
        from mprnet import training as training_module
        from mprnet.data.sampling import BatchPrefetcher

        created = []

        class Recording(BatchPrefetcher):
            def __init__(self, *args, **kwargs):
                super().__init__(*args, **kwargs)
                created.append(self)

        def failing_schedule(t):
            if t == 1:
                raise RuntimeError("schedule exploded")
            return 1e-3

        monkeypatch.setattr(training_module, "BatchPrefetcher", Recording)
        cfg = tiny_run_config
        train_cfg = cfg.train.model_copy(update={"iters": 50, "prefetch": 2})
        with pytest.raises(RuntimeError, match="schedule exploded"):
            train(MPRNet(cfg.model), TrainingData(train_cfg, cfg.degrade), train_cfg, cfg.optim, cfg.loss,
                  lr_schedule=failing_schedule)
        assert len(created) == 1
        assert not created[0].running

    def test_run_directory(self, tiny_run_config, tmp_path):
        result = run_training(tiny_run_config, tmp_path, progress=False)
        for name in ("config.cfg", "manifest.json", "loss_curve.png", "README.md"):
            assert (tmp_path / name).exists(), name
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["param_count"] == result.model.param_count()
        assert manifest["iterations"] == 3
        assert [r.stage for r in result.reports] == [1, 2, 3]
        assert result.baseline.stage == 0


class TestEvaluate:
    def test_zero_model_matches_input(self, tiny_config, pairs):
        model = MPRNet(tiny_config).zero_()
        reports = evaluate(model, pairs)
        baseline = degraded_baseline(pairs)
        assert [r.stage for r in reports] == [1, 2, 3]
        assert all(r.psnr == baseline.psnr and r.ssim == baseline.ssim for r in reports)
        assert reports[0].images == 3

    def test_identical_pairs(self, tiny_config, rng):
        img = rng.uniform(size=(3, 16, 16))
        reports = evaluate(MPRNet(tiny_config).zero_(), [(img, img)])
        assert reports[-1].psnr == float("inf")
        assert reports[-1].ssim == 1.0

    def test_exit_stage(self, tiny_config, pairs):
        reports = evaluate(MPRNet(tiny_config), pairs, exit_stage=2)
        assert [r.stage for r in reports] == [2]
        with pytest.raises(UsageError):
            evaluate(MPRNet(tiny_config), pairs, exit_stage=4)

    def test_y_channel_and_peak(self, tiny_config, pairs):
        report = evaluate(MPRNet(tiny_config), pairs, y_channel=True, peak=255.0)[-1]
        assert report.evaluated_on == "y-channel"

    def test_workers_agree(self, tiny_config, pairs):
        model = MPRNet(tiny_config)
        assert evaluate(model, pairs, workers=1) == evaluate(model, pairs, workers=3)

    def test_empty(self, tiny_config):
        with pytest.raises(UsageError):
            evaluate(MPRNet(tiny_config), [])

    def test_score_image_quantizes(self, rng):
        clean = rng.uniform(size=(3, 16, 16))
        value, _ = score_image(clean + 1e-4, clean, peak=255.0)
        assert value > 50.0
        assert score_image(clean, clean)[0] == psnr(clean, clean)


class TestInference:
    def test_pad_reflect(self, rng):
        img = rng.uniform(size=(3, 30, 30))
        padded, size = pad_reflect(img, 8)
        assert padded.shape == (3, 32, 32)
        assert size == (30, 30)
        assert np.array_equal(padded[:, :30, :30], img)
        assert np.array_equal(padded[:, 30, :30], img[:, 28, :])

    def test_no_padding_needed(self, rng):
        img = rng.uniform(size=(3, 8, 8))
        padded, _ = pad_reflect(img, 4)
        assert padded is img

    def test_tiny_image_uses_symmetric_padding(self, rng):
        img = rng.uniform(size=(3, 2, 2))
        padded, _ = pad_reflect(img, 8)
        assert padded.shape == (3, 8, 8)

    def test_zero_model_restores_input(self, tiny_config, rng):
        img = rng.uniform(size=(3, 30, 30))
        outputs = restore(MPRNet(tiny_config).zero_(), img)
        assert [stage for stage, _ in outputs] == [1, 2, 3]
        assert all(np.array_equal(out, img) for _, out in outputs)

    def test_exit_stage(self, tiny_config, rng):
        outputs = restore(MPRNet(tiny_config), rng.uniform(size=(3, 12, 12)), exit_stage=1)
        assert [stage for stage, _ in outputs] == [1]
        with pytest.raises(UsageError):
            restore(MPRNet(tiny_config), rng.uniform(size=(3, 12, 12)), exit_stage=0)
