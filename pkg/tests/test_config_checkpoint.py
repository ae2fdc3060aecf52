from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atss_net import checkpoint
from atss_net.config import SCHEMA, Config
from atss_net.embedder import EmbedderConfig, SpeakerEmbedder
from atss_net.errors import CheckpointError, ConfigError
from atss_net.model import AtssNet, ModelConfig

SMALL_TEXT = "model.n_blocks=1\nmodel.d_k=2\nmodel.embed_dim=4\n"


# --- configuration files ---------------------------------------------------------------

def test_defaults_are_full_scale():
    cfg = Config()
    m = cfg.model_config()
    assert (m.n_blocks, m.n_heads, m.d_k, m.freq_bins, m.embed_dim) == (3, 2, 64, 257, 256)
    t = cfg.train_config()
    assert (t.lr, t.batch_size, t.max_epochs, t.patience, t.segment) == (1e-4, 16, 50, 10, 48000)


def test_parse_comments_and_whitespace():
    cfg = Config.parse("# header\n\n  train.lr = 0.002   # faster\nmodel.mode=pit\nembed.channels = 4,8,8,16\n")
    assert cfg["train.lr"] == 0.002 and cfg["model.mode"] == "pit"
    assert cfg["embed.channels"] == (4, 8, 8, 16)


@pytest.mark.parametrize("text, lineno, fragment", [
    ("train.lr=0.1\nmodel.blocks=3\n", 2, "unknown key"),
    ("train.lr\n", 1, "expected key=value"),
    ("\n\nmodel.n_heads=two\n", 3, "bad value"),
    ("model.mode=cnn\n", 1, "expected one of"),
])
def test_parse_errors_carry_line_numbers(text, lineno, fragment):
    with pytest.raises(ConfigError) as info:
        Config.parse(text, "run.cfg")
    assert f"run.cfg:{lineno}:" in str(info.value) and fragment in str(info.value)


def test_invariant_violations_rejected():
    with pytest.raises(ConfigError):
        Config.parse("mix.snr_min=30\n")
    with pytest.raises(ConfigError):
        Config.parse("train.batch_size=0\n")
    with pytest.raises(ConfigError):
        Config.parse("stft.hop=0\n")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        Config.load(tmp_path / "absent.cfg")


def test_text_round_trip():
    cfg = Config.parse("train.lr=3e-05\nembed.channels=2,3,4,5\nmix.mode=noisy\n")
    again = Config.parse(cfg.to_text())
    assert again.values == cfg.values and again.to_text() == cfg.to_text()
    assert len(cfg.to_text().splitlines()) == len(SCHEMA)


# --- binary checkpoints -------------------------------------------------------------------

def test_encode_layout_by_hand():
    buf = checkpoint.encode({"w": np.array([[1.0, 2.0]], dtype=np.float32)}, "a=1")
    expected = (b"ATSS" + struct.pack("<I", 1) + struct.pack("<I", 3) + b"a=1" + struct.pack("<I", 1)
                + struct.pack("<H", 1) + b"w" + struct.pack("<B", 2) + struct.pack("<2I", 1, 2)
                + struct.pack("<2f", 1.0, 2.0))
    assert buf == expected


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 3)), min_size=0, max_size=4), st.text(max_size=30))
def test_encode_decode_round_trip(shapes, text):
    rng = np.random.default_rng(len(shapes))
    params = {f"t{i}": rng.standard_normal((a, b)[: 1 + i % 2]).astype(np.float32) for i, (a, b) in enumerate(shapes)}
    got_text, got = checkpoint.decode(checkpoint.encode(params, text))
    assert got_text == text and list(got) == list(params)
    for k in params:
        assert got[k].shape == params[k].shape and np.array_equal(got[k], params[k])


def test_model_save_load_save_is_byte_identical(tmp_path):
    cfg = Config.parse(SMALL_TEXT)
    model = AtssNet(cfg.model_config(), seed=4)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    checkpoint.save_model(a, model, cfg.to_text())
    loaded, loaded_cfg = checkpoint.load_model(a)
    assert isinstance(loaded, AtssNet) and loaded.cfg == model.cfg
    checkpoint.save_model(b, loaded, loaded_cfg.to_text())
    assert a.read_bytes() == b.read_bytes()


def test_embedder_checkpoint_kind(tmp_path):
    emb = SpeakerEmbedder(EmbedderConfig(channels=(2, 2, 2, 2), embed_dim=4, n_speakers=3), seed=0).without_head()
    path = tmp_path / "e.ckpt"
    checkpoint.save_model(path, emb, Config.parse("model.embed_dim=4\nembed.channels=2,2,2,2\n").to_text())
    loaded, _ = checkpoint.load_model(path)
    assert isinstance(loaded, SpeakerEmbedder) and loaded.cfg.embed_dim == 4


@pytest.mark.parametrize("mutate, fragment", [
    (lambda b: b"ATSX" + b[4:], "bad magic"),
    (lambda b: b[:4] + struct.pack("<I", 2) + b[8:], "version 2"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b[:10], "truncated"),
    (lambda b: b + b"\0", "trailing"),
])
def test_corrupt_checkpoints(tmp_path, mutate, fragment):
    good = checkpoint.encode({"x": np.ones(3, np.float32)}, "")
    path = tmp_path / "bad.ckpt"
    path.write_bytes(mutate(good))
    with pytest.raises(CheckpointError, match=fragment):
        checkpoint.load(path)


def test_load_model_mismatches(tmp_path):
    model = AtssNet(ModelConfig(n_blocks=1, n_heads=2, d_k=2, embed_dim=4))
    path = tmp_path / "m.ckpt"
    # stored config says d_k=4 but tensors were built for d_k=2
    checkpoint.save_model(path, model, "model.n_blocks=1\nmodel.d_k=4\nmodel.embed_dim=4\n")
    with pytest.raises(CheckpointError, match="do not fit"):
        checkpoint.load_model(path)
    checkpoint.save_model(path, model, "model.bogus=1\n")
    with pytest.raises(CheckpointError, match="unknown key"):
        checkpoint.load_model(path)
    with pytest.raises(CheckpointError, match="not found"):
        checkpoint.load_model(tmp_path / "nope.ckpt")
