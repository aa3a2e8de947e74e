"""PPM/PGM round trips, malformed-file rejection, manifest parsing."""

import numpy as np
import pytest

from mtlseg.dataio import (
    Sample,
    load_dataset,
    read_pgm,
    read_ppm,
    read_sample,
    write_manifest,
    write_pgm,
    write_ppm,
    write_sample,
)
from mtlseg.errors import FormatError
from mtlseg.synth import CropSceneParams, gen_crop_scene


def test_ppm_round_trip(tmp_path):
    image = np.random.default_rng(0).integers(0, 256, (10, 14, 3), dtype=np.uint8)
    write_ppm(tmp_path / "x.ppm", image)
    assert np.array_equal(read_ppm(tmp_path / "x.ppm"), image)


def test_pgm_round_trip(tmp_path):
    gray = np.random.default_rng(1).integers(0, 256, (7, 5), dtype=np.uint8)
    write_pgm(tmp_path / "x.pgm", gray)
    assert np.array_equal(read_pgm(tmp_path / "x.pgm"), gray)


def test_comments_in_header(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 1, 2, 3]))
    assert np.array_equal(read_pgm(tmp_path / "c.pgm"), [[0, 1], [2, 3]])


def test_bad_magic_offset_zero(tmp_path):
    (tmp_path / "bad.pgm").write_bytes(b"P2\n2 2\n255\n....")
    with pytest.raises(FormatError) as exc:
        read_pgm(tmp_path / "bad.pgm")
    assert exc.value.offset == 0


def test_truncated_payload_reports_offset(tmp_path):
    (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(5))
    with pytest.raises(FormatError, match="payload"):
        read_pgm(tmp_path / "t.pgm")


def test_unsupported_maxval(tmp_path):
    (tmp_path / "m.pgm").write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(FormatError, match="maxval"):
        read_pgm(tmp_path / "m.pgm")


def test_sample_round_trip(tmp_path):
    sample = gen_crop_scene(CropSceneParams(seed=123))
    write_sample(tmp_path, "s0", sample)
    back = read_sample(tmp_path, "s0", sample.tasks)
    assert np.array_equal(back.image, sample.image)
    for a, b in zip(back.masks, sample.masks):
        assert np.array_equal(a, b)
    assert back.meta["generator"] == "crop"


def test_non_binary_mask_value_rejected(tmp_path):
    sample = gen_crop_scene(CropSceneParams(seed=5))
    write_sample(tmp_path, "s0", sample)
    raw = bytearray((tmp_path / "s0.task1.pgm").read_bytes())
    raw[-10] = 7
    (tmp_path / "s0.task1.pgm").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="not 0/255"):
        read_sample(tmp_path, "s0", sample.tasks)


def test_missing_mask_file_rejected(tmp_path):
    sample = gen_crop_scene(CropSceneParams(seed=6))
    write_sample(tmp_path, "s0", sample)
    (tmp_path / "s0.task2.pgm").unlink()
    with pytest.raises(FormatError, match="missing mask"):
        read_sample(tmp_path, "s0", sample.tasks)


def test_mask_shape_mismatch_rejected():
    with pytest.raises(FormatError, match="shape"):
        Sample(
            np.zeros((8, 8, 3), np.uint8),
            (np.zeros((4, 4), np.uint8),),
            ("line",),
        ).validate()


class TestManifest:
    def test_round_trip(self, tmp_path):
        write_manifest(tmp_path, ("line", "gap"), (True, True), ["a", "b"])
        ds = load_dataset(tmp_path)
        assert ds.tasks == ("line", "gap")
        assert ds.thin == (True, True)
        assert ds.stems == ("a", "b")

    def test_comments_ignored(self, tmp_path):
        (tmp_path / "manifest.txt").write_text("# hello\ntask leaf\ntask defoliation\ns1 # trailing\n")
        ds = load_dataset(tmp_path)
        assert ds.tasks == ("leaf", "defoliation")
        assert ds.thin == (False, False)
        assert ds.stems == ("s1",)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FormatError, match="manifest"):
            load_dataset(tmp_path)

    def test_task_after_stem_rejected(self, tmp_path):
        (tmp_path / "manifest.txt").write_text("task line\ns1\ntask gap\n")
        with pytest.raises(FormatError):
            load_dataset(tmp_path)

    def test_no_tasks_rejected(self, tmp_path):
        (tmp_path / "manifest.txt").write_text("s1\n")
        with pytest.raises(FormatError):
            load_dataset(tmp_path)
