"""Image file round-trips for both supported formats."""

import numpy as np
import pytest

from irisbench.imgio import read_image, write_image


@pytest.mark.parametrize("ext", ["png", "pgm"])
def test_roundtrip_exact(tmp_path, ext):
    rng = np.random.default_rng(3)
    arr = rng.integers(0, 256, size=(37, 53), dtype=np.uint8)
    p = tmp_path / f"img.{ext}"
    write_image(arr, p)
    assert np.array_equal(read_image(p), arr)


def test_write_rejects_bad_dtype(tmp_path):
    with pytest.raises(ValueError):
        write_image(np.zeros((4, 4), dtype=np.float32), tmp_path / "a.png")
    with pytest.raises(ValueError):
        write_image(np.zeros((4, 4, 3), dtype=np.uint8), tmp_path / "a.png")
    with pytest.raises(ValueError):
        write_image(np.zeros((4, 4), dtype=np.uint8), tmp_path / "a.tiff")


def test_pgm_comment_and_whitespace_tolerated(tmp_path):
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
    p = tmp_path / "c.pgm"
    with open(p, "wb") as fh:
        fh.write(b"P5\n# a comment line\n4 3\n255\n")
        fh.write(arr.tobytes())
    assert np.array_equal(read_image(p), arr)


def test_pgm_rejects_wide_maxval(tmp_path):
    p = tmp_path / "w.pgm"
    with open(p, "wb") as fh:
        fh.write(b"P5\n2 2\n65535\n" + b"\x00" * 8)
    with pytest.raises(ValueError):
        read_image(p)
