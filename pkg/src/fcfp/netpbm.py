"""Binary NetPBM image I/O: P5 (grayscale) and P6 (RGB), 8-bit only."""

from __future__ import annotations

import numpy as np


def _read_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and # comments between header fields
    while pos < len(blob):
        c = blob[pos : pos + 1]
        if c == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(blob) and not blob[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("truncated netpbm header")
    return blob[start:pos], pos


def read_pnm(path: str) -> np.ndarray:
    """Read P5 as [H, W] uint8 or P6 as [H, W, 3] uint8."""
    with open(path, "rb") as f:
        blob = f.read()
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported netpbm magic {magic!r}; only binary P5/P6")
    pos = 2
    w_tok, pos = _read_token(blob, pos)
    h_tok, pos = _read_token(blob, pos)
    max_tok, pos = _read_token(blob, pos)
    w, h, maxval = int(w_tok), int(h_tok), int(max_tok)
    if maxval < 1 or maxval > 255:
        raise ValueError(f"only 8-bit netpbm supported, maxval {maxval}")
    pos += 1  # single whitespace after maxval
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    data = np.frombuffer(blob[pos : pos + need], dtype=np.uint8)
    if data.size != need:
        raise ValueError(f"truncated pixel data: wanted {need} bytes, got {data.size}")
    return data.reshape((h, w) if channels == 1 else (h, w, 3)).copy()


def write_pgm(path: str, img: np.ndarray, maxval: int = 255) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"write_pgm wants [H, W] uint8, got {img.shape} {img.dtype}")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode())
        f.write(img.tobytes(order="C"))


def write_ppm(path: str, img: np.ndarray, maxval: int = 255) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"write_ppm wants [H, W, 3] uint8, got {img.shape} {img.dtype}")
    with open(path, "wb") as f:
        f.write(f"P6\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode())
        f.write(img.tobytes(order="C"))


def to_unit_float(img: np.ndarray) -> np.ndarray:
    """uint8 image to float32 in [0, 1]."""
    return (img.astype(np.float32) / 255.0).astype(np.float32)


def from_unit_float(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
