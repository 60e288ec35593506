"""Binary PGM (P5) and PPM (P6) image I/O. Pixels map to [0, 1] floats."""

import numpy as np


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header = magic, width, height, maxval; comments start with '#'
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:i])
    i += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval <= 0 or maxval > 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    if len(data) - i < width * height:
        raise ValueError(f"{path}: truncated PGM raster")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=i)
    return raster.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, frame: np.ndarray) -> None:
    """Write a float frame, clipping to [0, 1], as 8-bit P5."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.size == 0:
        raise ValueError("frame must be a non-empty 2-D array")
    pixels = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    height, width = frame.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (width, height))
        f.write(pixels.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an (h, w, 3) float RGB array, clipped to [0, 1], as 8-bit P6."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.size == 0:
        raise ValueError("rgb must be a non-empty (h, w, 3) array")
    pixels = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    height, width = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (width, height))
        f.write(pixels.tobytes())
