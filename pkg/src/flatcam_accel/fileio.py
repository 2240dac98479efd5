"""Binary PGM images, CSV matrices and mask-pair files, all written atomically."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .optics import MaskPair


class FormatError(ValueError):
    pass


def write_bytes_atomic(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def write_json(path, obj) -> None:
    write_bytes_atomic(path, (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode())


def _pgm_tokens(data: bytes, count: int):
    """Return ``count`` header tokens and the offset of the raster."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # a single whitespace byte precedes the raster


def read_pgm(path) -> np.ndarray:
    """8-bit binary graymap as a uint8 array."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), off = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    raster = data[off:off + w * h]
    if len(raster) != w * h:
        raise FormatError(f"{path}: raster is truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, image) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(np.asarray(img, float) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    write_bytes_atomic(path, f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_csv(path) -> np.ndarray:
    try:
        m = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return m


def write_csv(path, matrix) -> None:
    buf = io.StringIO()
    np.savetxt(buf, np.asarray(matrix, float), delimiter=",", fmt="%.17g", newline="\n")
    write_bytes_atomic(path, buf.getvalue().encode())


def save_masks(masks: MaskPair, stem) -> None:
    """Write ``<stem>_left.csv``, ``<stem>_right.csv`` and ``<stem>.json``."""
    stem = Path(stem)
    write_csv(stem.with_name(stem.name + "_left.csv"), masks.phi_left)
    write_csv(stem.with_name(stem.name + "_right.csv"), masks.phi_right)
    meta = {"kind": masks.kind, "seed": masks.seed,
            "left": list(masks.phi_left.shape), "right": list(masks.phi_right.shape),
            "left_file": stem.name + "_left.csv", "right_file": stem.name + "_right.csv"}
    write_json(stem.with_name(stem.name + ".json"), meta)


def load_masks(sidecar) -> MaskPair:
    sidecar = Path(sidecar)
    meta = json.loads(sidecar.read_text())
    for key in ("kind", "left_file", "right_file"):
        if key not in meta:
            raise FormatError(f"{sidecar}: missing field {key!r}")
    left = read_csv(sidecar.parent / meta["left_file"])
    right = read_csv(sidecar.parent / meta["right_file"])
    for name, m in (("left", left), ("right", right)):
        if name in meta and list(m.shape) != list(meta[name]):
            raise FormatError(f"{sidecar}: {name} matrix is {m.shape}, sidecar says {meta[name]}")
    return MaskPair(left, right, meta["kind"], meta.get("seed"))
