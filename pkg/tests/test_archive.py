import struct

import numpy as np
import pytest

from ncp import archive
from ncp import inference as inf
from ncp.postprocess import center, whiten
from ncp.trainer import FittedModel


def test_roundtrip_fitted(tiny_fit, tmp_path):
    p = tmp_path / "m.ncp"
    archive.save(tiny_fit, p)
    back = archive.load(p)
    assert isinstance(back, FittedModel)
    for a, b in zip(tiny_fit.model.parameters(), back.model.parameters()):
        assert np.array_equal(a.value, b.value)
    assert back.config == tiny_fit.config and back.best_epoch == tiny_fit.best_epoch
    assert [r.as_row() for r in back.loss_history] == [r.as_row() for r in tiny_fit.loss_history]


@pytest.mark.parametrize("post", [whiten, center])
def test_roundtrip_outputs_bitwise(tiny_fit, lg_data, tmp_path, post):
    model = post(tiny_fit)
    p = tmp_path / "m.ncp"
    archive.save(model, p)
    back = archive.load(p)
    assert back.mode == model.mode
    x = lg_data[1].x[:7]
    grid = inf.default_grid(model.y_train)
    a = inf.cond_cdf_batch(model, x, grid)
    b = inf.cond_cdf_batch(back, x, grid)
    assert np.array_equal(a, b)
    assert np.array_equal(inf.cond_mean(model, x), inf.cond_mean(back, x))


def test_save_is_deterministic(tiny_fit, tmp_path):
    archive.save(whiten(tiny_fit), tmp_path / "a.ncp")
    archive.save(whiten(tiny_fit), tmp_path / "b.ncp")
    assert archive.file_hash(tmp_path / "a.ncp") == archive.file_hash(tmp_path / "b.ncp")


def test_config_hash_stable(tiny_fit):
    assert archive.config_hash(tiny_fit.config) == archive.config_hash(tiny_fit.config)
    from dataclasses import replace

    assert archive.config_hash(replace(tiny_fit.config, seed=9)) != archive.config_hash(tiny_fit.config)


class TestCorruption:
    @pytest.fixture
    def blob(self, tiny_fit, tmp_path):
        p = tmp_path / "m.ncp"
        archive.save(tiny_fit, p)
        return p, p.read_bytes()

    def test_bad_magic(self, blob):
        p, data = blob
        p.write_bytes(b"XXXXXXXX" + data[8:])
        with pytest.raises(archive.ArchiveError, match="magic"):
            archive.load(p)

    def test_bad_version(self, blob):
        p, data = blob
        p.write_bytes(data[:8] + struct.pack("<I", 99) + data[12:])
        with pytest.raises(archive.ArchiveError, match="version"):
            archive.load(p)

    @pytest.mark.parametrize("cut", [5, 30, -8])
    def test_truncated(self, blob, cut):
        p, data = blob
        p.write_bytes(data[:cut])
        with pytest.raises(archive.ArchiveError):
            archive.load(p)

    def test_corrupt_header(self, blob):
        p, data = blob
        p.write_bytes(data[:20] + b"}" * 10 + data[30:])
        with pytest.raises(archive.ArchiveError):
            archive.load(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises((archive.ArchiveError, OSError)):
            archive.load(tmp_path / "none.ncp")
