import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from isocore import checkpoint as ck
from isocore.config import CONFIG_SCHEMA, TrainConfig, load_config
from isocore.errors import ConfigError


def test_defaults_validate():
    cfg = TrainConfig().validate()
    assert cfg.n == 64 and cfg.beta == 0.1 and cfg.alpha == 0.0


@pytest.mark.parametrize(
    "patch,field",
    [
        ({"steps": 10, "warmup_steps": 10}, "steps"),
        ({"lr_final": 1e-3}, "lr_peak"),
        ({"k": 100}, "k"),
        ({"regime": "triplet"}, "data.mode"),
        ({"norm": "l1"}, "norm"),
        ({"data": {"domain": "cube"}}, "data.domain"),
        ({"bogus": 1}, "bogus"),
        ({"data": {"bogus": 1}}, "data.bogus"),
        ({"steps": 1.5}, "steps"),
    ],
)
def test_invalid_configs_name_the_field(patch, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        TrainConfig.from_dict(patch)


def test_round_trip_and_schema(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    cfg = TrainConfig(seed=3)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_config(path) == cfg
    jsonschema.validate(cfg.to_dict(), CONFIG_SCHEMA)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 4)), elements=finite), st.integers(0, 2**40))
def test_checkpoint_round_trip_bit_exact(a, step):
    c = ck.Checkpoint(step, {"w": a, "s": np.array(1.5)}, {"w": -a}, {"w": a * 0}, 7, {"note": "x"})
    back = ck.decode(ck.encode(c))
    assert back.step == step and back.opt_step == 7 and back.meta == {"note": "x"}
    assert back.params["w"].tobytes() == a.astype("<f8").tobytes()
    assert back.params["s"].shape == ()
    assert np.array_equal(back.adam_m["w"], -a)


def test_checkpoint_corruption_detected(tmp_path):
    c = ck.Checkpoint(1, {"w": np.arange(4.0)})
    path = tmp_path / "c.bin"
    ck.save(path, c)
    blob = bytearray(path.read_bytes())
    blob[40] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ck.CheckpointError, match="checksum"):
        ck.load(path)
    with pytest.raises(ck.CheckpointError):
        ck.decode(b"garbage!" + bytes(20))
    with pytest.raises(ck.CheckpointError):
        ck.decode(ck.encode(c)[:-5])
    with pytest.raises(ck.CheckpointError):
        ck.load(tmp_path / "absent.bin")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    ck.atomic_write(tmp_path / "x.json", "{}")
    ck.atomic_write(tmp_path / "x.json", "[]")
    assert [p.name for p in tmp_path.iterdir()] == ["x.json"]
    assert (tmp_path / "x.json").read_text() == "[]"
