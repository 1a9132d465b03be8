import json
import os
import struct
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra import numpy as hnp

from noir.checkpoint import COMPONENT_TAGS, Checkpoint, CheckpointError, VersionMismatch, canonical_json
from noir.config import DEFAULTS, config_load, parse_override
from noir.errors import ConfigError
from noir.pgm import PGMError, parse_pgm, quantize, read_pgm, write_gray, write_pgm


def sample_checkpoint(tag):
    rng = np.random.default_rng(len(tag))
    tensors = {"w": rng.normal(size=(3, 4)).astype(np.float32), "b": rng.normal(size=4).astype(np.float32),
               "s": np.array(2.5, dtype=np.float32)}
    return Checkpoint(tag, {"lr": 1e-2, "name": tag, "dims": [3, 4], "nested": {"b": 1, "a": 0.1}}, tensors)


@pytest.mark.parametrize("tag", COMPONENT_TAGS)
def test_checkpoint_save_load_save_is_byte_identical(tmp_path, tag):
    first = sample_checkpoint(tag).save(tmp_path / "a.ckpt")
    loaded = Checkpoint.load(first, tag)
    second = loaded.save(tmp_path / "b.ckpt")
    assert first.read_bytes() == second.read_bytes()
    assert loaded.tensors["w"].shape == (3, 4) and loaded.tensors["s"].shape == ()


def test_checkpoint_layout():
    data = sample_checkpoint("operator").to_bytes()
    assert data[:4] == b"NOIR"
    version, tag_len = struct.unpack_from("<HH", data, 4)
    assert version == 1 and data[8:8 + tag_len] == b"operator"
    pos = 8 + tag_len
    (cfg_len,) = struct.unpack_from("<I", data, pos)
    cfg = data[pos + 4:pos + 4 + cfg_len].decode()
    assert cfg == canonical_json(json.loads(cfg)) and '"a":0.1' in cfg


def test_index_alone_gives_shapes():
    ck = Checkpoint.from_bytes(Checkpoint("latents", {}, {"z": np.zeros((5, 7), np.float32)}).to_bytes())
    assert ck.tensors["z"].shape == (5, 7) and ck.config == {}


def test_version_mismatch(tmp_path):
    data = bytearray(sample_checkpoint("latents").to_bytes())
    data[4:6] = struct.pack("<H", 9)
    with pytest.raises(VersionMismatch, match="version 9"):
        Checkpoint.from_bytes(bytes(data))


@pytest.mark.parametrize("mangle, match", [
    (lambda d: b"XXXX" + d[4:], "magic"),
    (lambda d: d[:-3], "payload"),
    (lambda d: d + b"\0\0\0\0", "payload"),
    (lambda d: d[:10], "offset"),
])
def test_corrupt_checkpoints(mangle, match):
    with pytest.raises(CheckpointError, match=match):
        Checkpoint.from_bytes(mangle(sample_checkpoint("operator").to_bytes()))


def test_missing_checkpoint_and_wrong_tag(tmp_path):
    with pytest.raises(FileNotFoundError, match="does not exist"):
        Checkpoint.load(tmp_path / "nope.ckpt")
    path = sample_checkpoint("operator").save(tmp_path / "op.ckpt")
    with pytest.raises(CheckpointError, match="expected input_inr"):
        Checkpoint.load(path, "input_inr")
    with pytest.raises(CheckpointError):
        Checkpoint("weights", {}, {})


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=2, max_dims=2, max_side=20)))
def test_pgm_roundtrip(img):
    # hypothesis reruns the body, so use a private directory per example
    with tempfile.TemporaryDirectory() as d:
        path = write_pgm(os.path.join(d, "x.pgm"), img)
        np.testing.assert_array_equal(read_pgm(path), img)


def test_pgm_header(tmp_path):
    img = np.arange(6, dtype=np.uint8).reshape(2, 3)
    data = write_pgm(tmp_path / "a.pgm", img).read_bytes()
    assert data == b"P5\n3 2\n255\n" + bytes(range(6))


def test_pgm_gray_quantisation(tmp_path):
    img = np.array([[0.0, 0.5], [1.0, 1.3]])
    np.testing.assert_array_equal(read_pgm(write_gray(tmp_path / "g.pgm", img)), [[0, 128], [255, 255]])
    q = quantize(np.random.default_rng(0).uniform(size=(5, 5)))
    np.testing.assert_array_equal(read_pgm(write_pgm(tmp_path / "q.pgm", q)), q)


def test_pgm_parse_errors():
    with pytest.raises(PGMError, match="offset 0"):
        parse_pgm(b"P6\n1 1\n255\n\0")
    with pytest.raises(PGMError, match="offset"):
        parse_pgm(b"P5\n2 x\n255\n\0\0")
    with pytest.raises(PGMError, match="expected 4"):
        parse_pgm(b"P5\n2 2\n255\n\0")
    assert parse_pgm(b"P5\n# comment\n1 1\n255\n\x07")[0, 0] == 7
    with pytest.raises(PGMError):
        write_pgm("unused.pgm", np.zeros((2, 2, 2)))


def test_empty_config_gives_defaults():
    cfg = config_load()
    assert cfg["meta"]["inner_steps"] == 5 and cfg["meta"]["test_inner_steps"] == 10
    assert cfg["input_inr"]["LRL"] == 1e-2 and cfg["input_inr"]["LR"] == 5e-6
    assert cfg["meta"]["patience"] == 50 and cfg["meta"]["max_epochs"] == 1000
    assert cfg.data == DEFAULTS


def test_empty_json_file(tmp_path):
    (tmp_path / "c.json").write_text("{}")
    assert config_load(tmp_path / "c.json").data == DEFAULTS


def test_set_overrides_file_value(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"meta": {"inner_steps": 3}}))
    assert config_load(tmp_path / "c.json")["meta"]["inner_steps"] == 3
    assert config_load(tmp_path / "c.json", ["meta.inner_steps=7"])["meta"]["inner_steps"] == 7


def test_unknown_key_is_named(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"meta": {"fooo": 1}}))
    with pytest.raises(ConfigError, match="fooo"):
        config_load(tmp_path / "c.json")
    with pytest.raises(ConfigError, match="fooo"):
        config_load(None, ["fooo=1"])


@pytest.mark.parametrize("override, match", [
    ("meta.inner_steps=abc", "meta.inner_steps"),
    ("operator.Act=Tanh", "operator.Act"),
    ("meta.patience=-1", "out of range"),
    ("task.kind=seg3d", "task.kind"),
    ("input_inr.Res=true", "input_inr.Res"),
])
def test_bad_values(override, match):
    with pytest.raises(ConfigError, match=match):
        config_load(None, [override])


def test_bad_json_names_location(tmp_path):
    (tmp_path / "c.json").write_text('{"meta": {\n "inner_steps": }')
    with pytest.raises(ConfigError, match="line 2"):
        config_load(tmp_path / "c.json")
    with pytest.raises(FileNotFoundError):
        config_load(tmp_path / "missing.json")


def test_parse_override():
    assert parse_override("a.b=1e-3") == ("a.b", 1e-3)
    assert parse_override("reno.resolutions=16,24") == ("reno.resolutions", "16,24")
    assert parse_override("operator.Res=false") == ("operator.Res", False)


def test_builders_follow_table_fields():
    cfg = config_load(None, ["operator.HD=96", "output_inr.Lat=32", "operator.Out=32"])
    assert cfg.operator_config().hidden_dim == 96
    s = cfg.siren_config("output")
    assert s.latent_dim == 32 and s.final_activation == "softmax" and s.out_dim == 2
    assert cfg.meta_config("input").outer_lr == 5e-6
