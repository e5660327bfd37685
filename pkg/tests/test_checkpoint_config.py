"""Checkpoint files and JSON configuration."""

import json
import struct

import numpy as np
import pytest

from pcrnn import config as C
from pcrnn.checkpoint import MAGIC, Checkpoint, load_checkpoint, save_checkpoint
from pcrnn.data import Normalizer, collate, examples_at_fraction
from pcrnn.errors import CheckpointError, ConfigError
from pcrnn.model import PCRNN, ModelConfig
from pcrnn.training import TrainConfig, make_optimizer, train

from conftest import small_config


@pytest.fixture(scope="module")
def trained(normalized_records):
    recs, norm = normalized_records
    examples, _ = examples_at_fraction(recs[:4], 0.5, horizon=3)
    model = PCRNN(ModelConfig(gap_scale=40.0), seed=1)
    cfg = TrainConfig(epochs=2, batch_size=2)
    opt = make_optimizer(model, cfg)
    train(model, examples, cfg, opt)
    return model, opt, norm, examples


class TestCheckpoint:
    def test_bit_identical_round_trip(self, trained, tmp_path):
        model, opt, norm, examples = trained
        ckpt = Checkpoint.from_model(model, norm, "main", 1, opt, {"note": "x"})
        save_checkpoint(tmp_path / "m.ckpt", ckpt)
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.config == model.config
        assert (back.t_min, back.t_max, back.task, back.seed, back.extra) == (norm.t_min, norm.t_max, "main", 1,
                                                                              {"note": "x"})
        for name, values in model.state_dict().items():
            assert back.params[name].dtype == np.float32
            assert np.array_equal(back.params[name], values)
        restored = back.build_model()
        batch = collate(examples)
        a, b = model.forecast_batch(batch, 3), restored.forecast_batch(batch, 3)
        assert np.array_equal(a.gaps, b.gaps) and np.array_equal(a.probs, b.probs)

        opt2 = back.build_optimizer(restored)
        assert opt2.state.step == opt.state.step and opt2.clip == opt.clip
        for name in opt.state.m:
            assert np.array_equal(opt2.state.m[name], opt.state.m[name])
            assert np.array_equal(opt2.state.v[name], opt.state.v[name])

    def test_float64_model_stored_at_full_precision(self, tmp_path):
        model = PCRNN(small_config(), seed=0)
        save_checkpoint(tmp_path / "m.ckpt", Checkpoint.from_model(model, Normalizer(0.0, 1.0)))
        back = load_checkpoint(tmp_path / "m.ckpt")
        for name, values in model.state_dict().items():
            assert back.params[name].dtype == np.float64 and np.array_equal(back.params[name], values)
        with pytest.raises(CheckpointError):
            back.build_optimizer(back.build_model())

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, Checkpoint.from_model(PCRNN(small_config()), Normalizer(0.0, 1.0)))
        data = bytearray(path.read_bytes())
        struct.pack_into("<I", data, 8, 2)
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="version 2"):
            load_checkpoint(path)

    @pytest.mark.parametrize("damage", ["magic", "truncate", "header"])
    def test_damaged_files(self, tmp_path, damage):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, Checkpoint.from_model(PCRNN(small_config()), Normalizer(0.0, 1.0)))
        data = path.read_bytes()
        if damage == "magic":
            data = b"NOTACKPT" + data[8:]
        elif damage == "truncate":
            data = data[:-16]
        else:
            data = data[:16] + b"\xff" + data[17:]
        path.write_bytes(data)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_header_is_self_describing(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, Checkpoint.from_model(PCRNN(ModelConfig(vocab=37)), Normalizer(2.0, 9.0), "sub"))
        data = path.read_bytes()
        magic, version, hlen = struct.unpack_from("<8sII", data)
        header = json.loads(data[16:16 + hlen])
        assert magic == MAGIC and version == 1
        assert header["vocabulary"] == {"task": "sub", "size": 37}
        assert header["normalization"] == {"t_min": 2.0, "t_max": 9.0}
        assert header["dtype"] == "<f4"


class TestConfig:
    def test_defaults_validate(self):
        cfg = C.load_config()
        assert cfg["optim"] == {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "clip": 5.0}
        assert cfg["train"]["train_fraction"] == 0.8
        assert C.model_config(cfg).vocab == 7

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 3, "train": {"task": "sub", "epochs": 5}, "model": {"d_patent": 8}}))
        cfg = C.load_config(path, {"train": {"epochs": 7}})
        assert cfg["seed"] == 3 and cfg["train"]["epochs"] == 7 and cfg["train"]["batch_size"] == 32
        mc = C.model_config(cfg, gap_scale=12.0)
        assert (mc.vocab, mc.d_patent, mc.gap_scale) == (37, 8, 12.0)

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"train": {"epochz": 5}}))
        with pytest.raises(ConfigError, match="train.epochz"):
            C.load_config(path)

    @pytest.mark.parametrize("override", [
        {"train": {"task": "other"}},
        {"train": {"fractions": [0.5, 1.0]}},
        {"optim": {"lr": -1.0}},
        {"simulate": {"alpha": 6.0}},
        {"model": {"vocab": 7}, "train": {"task": "sub"}},
        {"model": {"d_inventor": 0}},
        {"seed": -1},
        {"train": 3},
    ])
    def test_violations(self, override):
        with pytest.raises(ConfigError):
            C.load_config(overrides=override)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            C.load_config(path)

    def test_merge_leaves_base_untouched(self):
        base = C.default_config()
        merged = C.merge(base, {"eval": {"batch_size": 2}})
        assert base["eval"]["batch_size"] == 64 and merged["eval"]["batch_size"] == 2
