import numpy as np
import pytest

from tpnet.pgm import read_pgm, write_pgm, write_ppm


def test_pgm_round_trip_quantized(rng, tmp_path):
    frame = rng.uniform(0, 1, (7, 9))
    path = tmp_path / "f.pgm"
    write_pgm(path, frame)
    back = read_pgm(path)
    assert back.shape == (7, 9)
    assert np.abs(back - frame).max() <= 0.5 / 255 + 1e-12


def test_pgm_values_clipped(tmp_path):
    path = tmp_path / "f.pgm"
    write_pgm(path, np.array([[-1.0, 2.0]]))
    back = read_pgm(path)
    assert back[0, 0] == 0.0
    assert back[0, 1] == 1.0


def test_pgm_header_comments_skipped(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment line\n2 1\n# more\n255\n\x00\xff")
    back = read_pgm(path)
    assert back.shape == (1, 2)
    assert back[0, 1] == 1.0


def test_pgm_rejects_other_formats(tmp_path):
    path = tmp_path / "x.pgm"
    path.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError, match="P5"):
        read_pgm(path)


def test_pgm_truncated_raster(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(ValueError, match="truncated"):
        read_pgm(path)


def test_write_pgm_validates_shape(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "b.pgm", np.zeros(5))
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "b.pgm", np.zeros((0, 3)))


def test_write_ppm_layout(tmp_path):
    rgb = np.zeros((2, 2, 3))
    rgb[0, 0] = [1.0, 0.0, 0.0]
    path = tmp_path / "m.ppm"
    write_ppm(path, rgb)
    data = path.read_bytes()
    assert data.startswith(b"P6\n2 2\n255\n")
    assert data[-12:] == bytes([255, 0, 0] + [0] * 9)


def test_write_ppm_validates_shape(tmp_path):
    with pytest.raises(ValueError):
        write_ppm(tmp_path / "b.ppm", np.zeros((2, 2)))
