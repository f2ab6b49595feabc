import struct

import numpy as np
import pytest

from panolayout.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from panolayout.scenes import generate_scene
from panolayout.training import TrainConfig, predict_eval, train

TINY = {"height": 32, "width": 64, "channels": [4, 4, 8, 8], "mix_channels": 8, "mix_kernel": 3}


@pytest.fixture(scope="module")
def ckpt():
    r = np.random.default_rng(0)
    sc = [generate_scene(r, 4, 32, 64) for _ in range(6)]
    x = np.stack([s.panorama.pixels for s in sc])
    ck = train((x[:3], [s.target() for s in sc[:3]]), x, TrainConfig(epochs=1, steps_per_epoch=3, predictor=TINY))
    ck.meta = {"labels": 3}
    return ck, x


def test_round_trip(tmp_path, ckpt):
    ck, x = ckpt
    path = tmp_path / "m.ckpt"
    save_checkpoint(ck, path)
    back = load_checkpoint(path)
    np.testing.assert_array_equal(back.theta.data, ck.theta.data)
    np.testing.assert_array_equal(back.teacher.data, ck.teacher.data)
    np.testing.assert_array_equal(back.adam.m, ck.adam.m)
    assert back.adam.t == ck.adam.t and back.t == ck.t and back.t_max == ck.t_max
    assert back.theta.segments == ck.theta.segments
    assert back.config == ck.config and back.meta == {"labels": 3}
    np.testing.assert_array_equal(predict_eval(back, x), predict_eval(ck, x))


def test_header_layout(tmp_path, ckpt):
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt[0], path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    version, n = struct.unpack_from("<IQ", raw, 8)
    assert version == 1 and raw[20:20 + n].startswith(b"{")


def test_rejects_bad_files(tmp_path, ckpt):
    bad = tmp_path / "bad"
    bad.write_bytes(b"notackpt" + bytes(20))
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt[0], path)
    (tmp_path / "cut").write_bytes(path.read_bytes()[:-100])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut")
