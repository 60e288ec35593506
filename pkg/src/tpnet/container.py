"""Binary model container: magic "TPN1", versioned, named float32 tensors
in a documented canonical order, a metadata text block, and a trailing
SHA-256 content hash. Round trips are bit-exact."""

import hashlib
import struct

import numpy as np

MAGIC = b"TPN1"
VERSION = 1


class ContainerError(ValueError):
    pass


def save_container(tensors: dict[str, np.ndarray], metadata: str = "") -> bytes:
    """Serialize named tensors (insertion order is the canonical order)."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(tensors))
    for name, tensor in tensors.items():
        tensor = np.asarray(tensor, dtype=np.float32)  # keeps 0-d rank
        name_b = name.encode("utf-8")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<B", tensor.ndim)
        for dim in tensor.shape:
            out += struct.pack("<I", dim)
        out += tensor.astype("<f4").tobytes()
    meta_b = metadata.encode("utf-8")
    out += struct.pack("<I", len(meta_b))
    out += meta_b
    out += hashlib.sha256(bytes(out)).digest()
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ContainerError("truncated container")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_container(data: bytes) -> tuple[dict[str, np.ndarray], str]:
    if len(data) < 32:
        raise ContainerError("truncated container")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ContainerError("checksum mismatch: file corrupt or truncated")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise ContainerError("bad magic: not a model container")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    (n_tensors,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = tuple(r.unpack("<I")[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(4 * count)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    (meta_len,) = r.unpack("<I")
    metadata = r.take(meta_len).decode("utf-8")
    if r.pos != len(body):
        raise ContainerError("trailing bytes after metadata")
    return tensors, metadata


def save_file(path, tensors: dict[str, np.ndarray], metadata: str = "") -> None:
    with open(path, "wb") as f:
        f.write(save_container(tensors, metadata))


def load_file(path) -> tuple[dict[str, np.ndarray], str]:
    with open(path, "rb") as f:
        return load_container(f.read())
