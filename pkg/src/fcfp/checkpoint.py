"""Binary checkpoint format for named parameter tensors.

Layout, all little-endian:

    magic   4 bytes  b"FCFP"
    version u32      currently 1
    count   u32      number of tensors
    then per tensor, in the order given:
    name_len u16, name utf-8 bytes,
    dtype    u8   (0 = float32, 1 = float64),
    rank     u8,  dims rank * u32,
    payload  raw little-endian array data, C order.

Saving the result of a load reproduces the input byte for byte, provided
the same tensor order is used; loaders preserve order for exactly that
reason.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FCFP"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _code_of(dtype: np.dtype) -> int:
    if dtype == np.float32:
        return 0
    if dtype == np.float64:
        return 1
    raise ValueError(f"unsupported checkpoint dtype {dtype}")


def save_checkpoint(path: str, named: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(named)))
        for name, arr in named:
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise ValueError(f"parameter name too long: {name[:40]}...")
            arr = np.asarray(arr)
            # ascontiguousarray promotes 0-d to 1-d; reshape restores the rank
            arr = np.ascontiguousarray(arr).reshape(arr.shape)
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _code_of(arr.dtype), arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))


def load_checkpoint(path: str) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"not a checkpoint file: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    out = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if code not in _DTYPE_CODES:
            raise ValueError(f"unknown dtype code {code} for tensor {name!r}")
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        dtype = _DTYPE_CODES[code]
        n_bytes = int(np.prod(dims)) * dtype.itemsize if rank else dtype.itemsize
        arr = np.frombuffer(blob[pos : pos + n_bytes], dtype=dtype).reshape(dims).copy()
        pos += n_bytes
        out.append((name, arr))
    if pos != len(blob):
        raise ValueError(f"trailing bytes in checkpoint: {len(blob) - pos}")
    return out


def load_into(path: str, named_params: list[tuple[str, "object"]]) -> None:
    """Load a checkpoint into model parameters, matching by name."""
    stored = dict(load_checkpoint(path))
    seen = set()
    for name, tensor in named_params:
        if name not in stored:
            raise KeyError(f"checkpoint missing parameter {name!r}")
        arr = stored[name]
        if arr.shape != tensor.data.shape:
            raise ValueError(f"shape mismatch for {name!r}: checkpoint {arr.shape}, model {tensor.data.shape}")
        tensor.data = arr.astype(tensor.data.dtype, copy=True)
        seen.add(name)
    extra = set(stored) - seen
    if extra:
        raise ValueError(f"checkpoint has unmatched tensors: {sorted(extra)[:5]}")
