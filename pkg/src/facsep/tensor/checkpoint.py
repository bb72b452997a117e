"""Binary container for named float32 tensors.

Layout (little-endian):
    magic   8 bytes  b"FACSEPT\\0"
    version u32      currently 1
    count   u32
    per tensor:
        name_len u32, name utf-8 bytes
        rank     u32, dims u32 * rank
        payload  float32 * prod(dims)
"""

import struct

import numpy as np

MAGIC = b"FACSEPT\x00"
VERSION = 1


def save_tensors(path, tensors):
    """Write a dict of name -> ndarray (stored as float32)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path):
    """Read back a dict of name -> float32 ndarray."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a tensor container (bad magic {magic!r})")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if rank else 1
            payload = fh.read(4 * n)
            if len(payload) != 4 * n:
                raise ValueError(f"{path}: truncated payload for tensor {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        return out
