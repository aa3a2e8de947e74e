"""Loss semantics, config parsing, training determinism, checkpoints."""

import numpy as np
import pytest

from mtlseg.checkpoint import load_checkpoint, save_checkpoint
from mtlseg.dataio import load_dataset
from mtlseg.errors import ConfigError, FormatError
from mtlseg.gradcheck import grad_check
from mtlseg.metrics import evaluate_dataset
from mtlseg.model import MTLSegFormer
from mtlseg.decoder import DecoderConfig
from mtlseg.encoder import encoder_config
from mtlseg.optim import poly_lr
from mtlseg.synth import generate_dataset
from mtlseg.tensor import Tensor, using_dtype
from mtlseg.train import TrainConfig, build_model, mtl_loss, parse_config_text, train


@pytest.fixture(scope="module")
def crop_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("crop")
    generate_dataset("crop", 6, 64, 3, path)
    return path


def tiny_cfg(data, out, **kw):
    base = dict(
        data=str(data),
        out=str(out),
        iterations=4,
        batch_size=2,
        checkpoint_interval=2,
        log_interval=1,
        seed=5,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestLoss:
    def test_uniform_logits_give_t_ln2(self):
        logits = [Tensor(np.zeros((8, 8, 2), dtype=np.float32)) for _ in range(2)]
        labels = [np.zeros((8, 8), np.uint8), np.ones((8, 8), np.uint8)]
        total, per_task = mtl_loss(logits, labels)
        assert float(total.data) == pytest.approx(2 * np.log(2), rel=1e-6)
        assert per_task == pytest.approx([np.log(2)] * 2, rel=1e-6)

    def test_confident_correct_logits_near_zero_loss(self):
        label = (np.random.default_rng(0).random((8, 8)) < 0.3).astype(np.uint8)
        strong = np.stack([(1 - label) * 20.0, label * 20.0], axis=-1)
        total, _ = mtl_loss([Tensor(strong.astype(np.float32))], [label])
        assert float(total.data) < 1e-6

    def test_nonbinary_labels_rejected(self):
        logits = [Tensor(np.zeros((4, 4, 2), dtype=np.float32))]
        with pytest.raises(ConfigError):
            mtl_loss(logits, [np.full((4, 4), 2, np.uint8)])

    def test_gradient_through_prediction_heads(self):
        with using_dtype(np.float64):
            model = MTLSegFormer(encoder_config("T0"), DecoderConfig(16, 2, 2), seed=21)
            img = Tensor(np.random.default_rng(22).normal(size=(32, 32, 3)))
            labels = [
                np.random.default_rng(23 + t).integers(0, 2, (32, 32)).astype(np.uint8)
                for t in range(2)
            ]

            def f():
                loss, _ = mtl_loss(model(img), labels)
                return loss

            params = [p for _, p in model.decoder.named_parameters()]
            assert grad_check(f, params, eps=1e-3, max_coords_per_param=4, seed=2) <= 1e-4


class TestConfigParsing:
    def test_key_value_with_comments(self):
        cfg = parse_config_text("iterations = 12 # fast\nseed=9\nencoder = B0\n")
        assert cfg.iterations == 12 and cfg.seed == 9 and cfg.encoder == "B0"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config_text("iterattions = 12\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("iterations = twelve\n")

    def test_bool_words(self):
        assert parse_config_text("cross_attention = false\n").cross_attention is False

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(data="x", iterations=0).validate()


class TestTraining:
    def test_two_runs_bitwise_identical(self, crop_dir, tmp_path):
        cfg_a = tiny_cfg(crop_dir, tmp_path / "a")
        cfg_b = tiny_cfg(crop_dir, tmp_path / "b")
        ckpt_a, log_a = train(cfg_a)
        ckpt_b, log_b = train(cfg_b)
        assert load_checkpoint(ckpt_a).keys() == load_checkpoint(ckpt_b).keys()
        for k, v in load_checkpoint(ckpt_a).items():
            assert np.array_equal(v, load_checkpoint(ckpt_b)[k]), k
        assert log_a.numeric_lines() == log_b.numeric_lines()

    def test_lr_trace_matches_poly(self, crop_dir, tmp_path):
        cfg = tiny_cfg(crop_dir, tmp_path / "lr", iterations=6)
        _, log = train(cfg)
        for entry in log.entries:
            assert entry.lr == pytest.approx(
                poly_lr(entry.iteration, cfg.iterations, cfg.base_lr, cfg.poly_power), abs=0
            )
        assert log.entries[0].lr == pytest.approx(6e-5)
        assert log.entries[-1].lr == 0.0

    def test_checkpoint_roundtrip_reproduces_metrics(self, crop_dir, tmp_path):
        cfg = tiny_cfg(crop_dir, tmp_path / "ck")
        ckpt, _ = train(cfg)
        ds = load_dataset(crop_dir)
        model_a = build_model(cfg, 2)
        model_a.load_state(load_checkpoint(ckpt))
        report_a = evaluate_dataset(model_a, ds)
        save_checkpoint(tmp_path / "again.ckpt", model_a.state())
        model_b = build_model(cfg, 2)
        model_b.load_state(load_checkpoint(tmp_path / "again.ckpt"))
        report_b = evaluate_dataset(model_b, ds)
        assert report_a.lines() == report_b.lines()

    def test_run_artifacts_written(self, crop_dir, tmp_path):
        out = tmp_path / "artifacts"
        cfg = tiny_cfg(crop_dir, out)
        train(cfg)
        assert (out / "last.ckpt").exists()
        assert (out / "run.log").exists()
        assert (out / "config.txt").exists()

    def test_nonfinite_loss_aborts_keeping_last_checkpoint(self, crop_dir, tmp_path, monkeypatch):
        import mtlseg.train as train_mod

        out = tmp_path / "abort"
        real_loss = train_mod.mtl_loss
        calls = {"n": 0}

        def exploding_loss(logits, labels):
            calls["n"] += 1
            if calls["n"] > 22:  # past the init-loss window and 2 checkpoints
                bad = [Tensor(np.full_like(l.data, np.nan)) for l in logits]
                return real_loss(bad, labels)
            return real_loss(logits, labels)

        monkeypatch.setattr(train_mod, "mtl_loss", exploding_loss)
        cfg = tiny_cfg(crop_dir, out, iterations=40, checkpoint_interval=2)
        with pytest.raises(train_mod.NumericError):
            train(cfg)
        assert (out / "last.ckpt").exists()
        load_checkpoint(out / "last.ckpt")  # still a readable checkpoint

    def test_tiled_evaluation_mode(self, crop_dir, tmp_path):
        cfg = tiny_cfg(crop_dir, tmp_path / "tile")
        ckpt, _ = train(cfg)
        model = build_model(cfg, 2)
        model.load_state(load_checkpoint(ckpt))
        report = evaluate_dataset(model, load_dataset(crop_dir), mode="tiled", patch=32)
        for task in ("line", "gap"):
            assert 0.0 <= report.seg_raw[task].iou <= 1.0
            assert task in report.detection


class TestCheckpointFormat:
    def test_magic_and_roundtrip(self, tmp_path):
        state = {
            "a.weight": np.arange(6, dtype=np.float32).reshape(2, 3),
            "b.bias": np.array([1.5], dtype=np.float32),
        }
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, state)
        raw = path.read_bytes()
        assert raw.startswith(b"MTLSEG1\n")
        back = load_checkpoint(path)
        assert set(back) == set(state)
        for k in state:
            assert np.array_equal(back[k], state[k])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"NOTMAGIC")
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "x.ckpt")

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "t.ckpt"
        save_checkpoint(path, {"w": np.ones((4, 4), np.float32)})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_state_mismatch_rejected(self, crop_dir, tmp_path):
        cfg = tiny_cfg(crop_dir, tmp_path / "s")
        model = build_model(cfg, 2)
        state = model.state()
        state.pop(next(iter(state)))
        with pytest.raises(ConfigError, match="state mismatch"):
            model.load_state(state)
