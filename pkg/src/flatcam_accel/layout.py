"""Activation GB layout: 16-channel words striped over 4 banks, plus the four reshape maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class ActLayout:
    banks: int = 4
    word_channels: int = 16

    def tiles(self, c: int) -> int:
        return -(-c // self.word_channels)

    def words(self, shape) -> int:
        h, w, c = shape
        return self.tiles(c) * h * w

    def bank_depth(self, shape) -> int:
        """Addresses used in the deepest bank."""
        return -(-self.words(shape) // self.banks)


def _check(shape, h, w, c):
    H, W, C = shape
    if not (0 <= h < H and 0 <= w < W and 0 <= c < C):
        raise LayoutError(f"index ({h},{w},{c}) outside tensor {tuple(shape)}")


def act_address(layout: ActLayout, shape, h, w, c) -> tuple[int, int, int]:
    """Return (bank, bank_addr, slot) for element (h, w, c)."""
    _check(shape, h, w, c)
    H, W, _ = shape
    ct, slot = divmod(c, layout.word_channels)
    addr = (ct * H + h) * W + w
    return addr % layout.banks, addr // layout.banks, slot


def act_index(layout: ActLayout, shape, bank, bank_addr, slot) -> tuple[int, int, int]:
    """Inverse of :func:`act_address`."""
    H, W, C = shape
    if not (0 <= bank < layout.banks and 0 <= slot < layout.word_channels and bank_addr >= 0):
        raise LayoutError(f"address ({bank},{bank_addr},{slot}) is malformed")
    addr = bank_addr * layout.banks + bank
    ct, rem = divmod(addr, H * W)
    h, w = divmod(rem, W)
    c = ct * layout.word_channels + slot
    _check(shape, h, w, c)
    return h, w, c


def flat_address(layout: ActLayout, shape, h, w, c):
    """Element offset in a word-major memory image; works on index arrays."""
    H, W, _ = shape
    ct, slot = np.divmod(c, layout.word_channels)
    return ((ct * H + h) * W + w) * layout.word_channels + slot


def store(layout: ActLayout, tensor) -> np.ndarray:
    """Memory image of a dense (h, w, c) tensor; padded channel slots hold zero."""
    t = np.asarray(tensor)
    H, W, C = t.shape
    mem = np.zeros(layout.words(t.shape) * layout.word_channels, dtype=t.dtype)
    h, w, c = np.meshgrid(np.arange(H), np.arange(W), np.arange(C), indexing="ij")
    mem[flat_address(layout, t.shape, h, w, c)] = t
    return mem


def load(layout: ActLayout, mem, shape) -> np.ndarray:
    H, W, C = shape
    h, w, c = np.meshgrid(np.arange(H), np.arange(W), np.arange(C), indexing="ij")
    return np.asarray(mem)[flat_address(layout, shape, h, w, c)]


@dataclass(frozen=True)
class ReshapeMap:
    """Gather map: output element i comes from ``sources[src[i]]`` at offset ``offset[i]``.

    ``src == -1`` marks elements that are written as zero.
    """
    out_shape: tuple
    src: np.ndarray
    offset: np.ndarray

    def apply(self, layout: ActLayout, mems) -> np.ndarray:
        mems = [np.asarray(m) for m in mems]
        out = np.zeros(self.out_shape, dtype=np.result_type(*mems))
        for k, m in enumerate(mems):
            sel = self.src == k
            out[sel] = m[self.offset[sel]]
        return out


def reshape_map(layout: ActLayout, op: str, shapes, **params) -> ReshapeMap:
    """Address transformation for partition, concatenate, downsample or upsample.

    ``shapes`` lists the input tensor shapes (one, or several for concatenate).
    """
    shapes = [tuple(s) for s in shapes]
    H, W, C = shapes[0]
    if op == "partition":
        r0, r1, c0, c1 = params["rows"] + params["cols"]
        if not (0 <= r0 < r1 <= H and 0 <= c0 < c1 <= W):
            raise LayoutError(f"tile rows {params['rows']} cols {params['cols']} outside {H}x{W}")
        h, w, c = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), np.arange(C), indexing="ij")
        off = flat_address(layout, shapes[0], h, w, c)
        return ReshapeMap((r1 - r0, c1 - c0, C), np.zeros(off.shape, int), off)
    if op == "concatenate":
        if len({s[:2] for s in shapes}) != 1:
            raise LayoutError("concatenated tensors differ spatially")
        for s in shapes[:-1]:
            if s[2] % layout.word_channels:
                raise LayoutError(f"channel offset {s[2]} is not a multiple of {layout.word_channels}")
        total = sum(s[2] for s in shapes)
        src = np.empty((H, W, total), int)
        off = np.empty((H, W, total), int)
        base = 0
        for k, s in enumerate(shapes):
            h, w, c = np.meshgrid(np.arange(H), np.arange(W), np.arange(s[2]), indexing="ij")
            src[:, :, base:base + s[2]] = k
            off[:, :, base:base + s[2]] = flat_address(layout, s, h, w, c)
            base += s[2]
        return ReshapeMap((H, W, total), src, off)
    if op == "downsample":
        s = int(params.get("stride", 2))
        h, w, c = np.meshgrid(np.arange(0, H, s), np.arange(0, W, s), np.arange(C), indexing="ij")
        off = flat_address(layout, shapes[0], h, w, c)
        return ReshapeMap(off.shape, np.zeros(off.shape, int), off)
    if op == "upsample":
        s = int(params.get("factor", 2))
        mode = params.get("mode", "duplicate")
        if mode not in ("zero", "duplicate"):
            raise LayoutError(f"unknown upsample mode {mode!r}")
        h, w, c = np.meshgrid(np.arange(H * s), np.arange(W * s), np.arange(C), indexing="ij")
        off = flat_address(layout, shapes[0], h // s, w // s, c)
        src = np.zeros(off.shape, int)
        if mode == "zero":
            src[(h % s != 0) | (w % s != 0)] = -1
        return ReshapeMap(off.shape, src, off)
    raise LayoutError(f"unknown reshape op {op!r}")
