"""Slow, independent references used to check the fast code paths.

Nothing here imports the optics solver or the mapper; the loops are written
out on purpose. ``replay_plan`` only reads the plan objects it is handed.
"""

from __future__ import annotations

import math

import numpy as np

from .layout import ActLayout, flat_address, reshape_map, store

MAX_BRUTEFORCE_DIM = 6


class OracleError(ValueError):
    pass


def _pad_before(k):
    return (k - 1) // 2


def _out_dim(n, k, s, pad):
    if pad == "same":
        return -(-n // s)
    return (n - k) // s + 1


def _tap(x, i, j, c):
    h, w = x.shape[:2]
    if 0 <= i < h and 0 <= j < w:
        return x[i, j, c]
    return 0


def dense_layer(layer, inputs, weights=None, order="channel_last"):
    """Textbook execution of one layer on (h, w, c) arrays.

    ``inputs`` is one tensor, or a list for concat / elementwise layers.
    Weight shapes: generic (out_c, in_c, K, K); pointwise, matmul and fully
    connected (out_c, in_c); depthwise (c, K, K); elementwise either None (sum
    of the inputs) or an array broadcastable to the input (scale).
    ``order`` picks the summation nesting for convolutions so two orders can be
    compared.
    """
    xs = inputs if isinstance(inputs, (list, tuple)) else [inputs]
    xs = [np.asarray(x) for x in xs]
    x = xs[0]
    kind = layer.kind
    if kind == "concat":
        if len({a.shape[:2] for a in xs}) != 1:
            raise OracleError("concat inputs differ spatially")
        return np.concatenate(xs, axis=2)
    if x.ndim != 3 or x.shape[2] != layer.in_c and kind not in ("fully_connected",):
        raise OracleError(f"input shape {x.shape} does not fit layer {layer.id}")
    h, w, c = x.shape
    if (h, w) != (layer.in_h, layer.in_w):
        raise OracleError(f"input shape {x.shape} does not fit layer {layer.id}")
    k, s = layer.kernel, layer.stride
    if kind == "elementwise":
        if weights is None:
            out = np.zeros_like(xs[0])
            for a in xs:
                out = out + a
            return out
        return x * np.asarray(weights)
    if kind == "upsample":
        return np.repeat(np.repeat(x, s, axis=0), s, axis=1)
    if kind == "downsample":
        # pooling is modeled as decimation; it carries no MACs in the cost model
        return x[::s, ::s].copy()
    wt = np.asarray(weights)
    if kind == "fully_connected":
        flat = x.reshape(-1)
        if flat.size != wt.shape[1]:
            raise OracleError(f"fc expects {wt.shape[1]} inputs, got {flat.size}")
        out = np.zeros((1, 1, wt.shape[0]), dtype=np.result_type(x, wt))
        for o in range(wt.shape[0]):
            acc = 0
            for i in range(flat.size):
                acc += wt[o, i] * flat[i]
            out[0, 0, o] = acc
        return out
    if kind in ("pointwise_conv", "matmul"):
        if wt.shape != (layer.out_c, c):
            raise OracleError(f"weights {wt.shape} do not fit layer {layer.id}")
        oh, ow = _out_dim(h, 1, s, "same"), _out_dim(w, 1, s, "same")
        out = np.zeros((oh, ow, layer.out_c), dtype=np.result_type(x, wt))
        for r in range(oh):
            for q in range(ow):
                for o in range(layer.out_c):
                    acc = 0
                    for i in range(c):
                        acc += wt[o, i] * x[r * s, q * s, i]
                    out[r, q, o] = acc
        return out
    oh, ow = _out_dim(h, k, s, layer.padding), _out_dim(w, k, s, layer.padding)
    p = _pad_before(k) if layer.padding == "same" else 0
    if kind == "depthwise_conv":
        if wt.shape != (c, k, k):
            raise OracleError(f"weights {wt.shape} do not fit layer {layer.id}")
        out = np.zeros((oh, ow, c), dtype=np.result_type(x, wt))
        for ch in range(c):
            for r in range(oh):
                for q in range(ow):
                    acc = 0
                    for a in range(k):
                        for b in range(k):
                            acc += wt[ch, a, b] * _tap(x, r * s + a - p, q * s + b - p, ch)
                    out[r, q, ch] = acc
        return out
    if kind == "generic_conv":
        if wt.shape != (layer.out_c, c, k, k):
            raise OracleError(f"weights {wt.shape} do not fit layer {layer.id}")
        out = np.zeros((oh, ow, layer.out_c), dtype=np.result_type(x, wt))
        for o in range(layer.out_c):
            for r in range(oh):
                for q in range(ow):
                    acc = 0
                    if order == "channel_last":
                        for a in range(k):
                            for b in range(k):
                                for i in range(c):
                                    acc += wt[o, i, a, b] * _tap(x, r * s + a - p, q * s + b - p, i)
                    else:
                        for i in range(c):
                            for b in range(k):
                                for a in range(k):
                                    acc += wt[o, i, a, b] * _tap(x, r * s + a - p, q * s + b - p, i)
                    out[r, q, o] = acc
        return out
    raise OracleError(f"no reference for kind {kind!r}")


def tikhonov_bruteforce(y, phi_left, phi_right, epsilon):
    """Dense normal-equation solve with the Kronecker operator ``R (x) L``."""
    L = np.asarray(phi_left, dtype=float)
    R = np.asarray(phi_right, dtype=float)
    y = np.asarray(y, dtype=float)
    if max(L.shape[1], R.shape[1]) > MAX_BRUTEFORCE_DIM:
        raise OracleError(f"scene dimension exceeds {MAX_BRUTEFORCE_DIM}")
    A = np.kron(R, L)
    # vec() stacks columns, so vec(L X R^T) = (R kron L) vec(X)
    rhs = A.T @ y.reshape(-1, order="F")
    lhs = A.T @ A + epsilon * np.eye(A.shape[1])
    x = np.linalg.solve(lhs, rhs)
    return x.reshape((L.shape[1], R.shape[1]), order="F")


def objective_bruteforce(x, y, phi_left, phi_right, epsilon):
    A = np.kron(np.asarray(phi_right, float), np.asarray(phi_left, float))
    r = A @ np.asarray(x, float).reshape(-1, order="F") - np.asarray(y, float).reshape(-1, order="F")
    return float(r @ r + epsilon * np.sum(np.asarray(x, float) ** 2))


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at array ``x``."""
    if not h > 0:
        raise OracleError("step must be positive")
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


# ---------------------------------------------------------------- plan replay

_MATRIX = ("generic_conv", "pointwise_conv", "matmul", "fully_connected")


def _dense_shape(layer):
    """Stride-1 output extent the lanes compute before decimation."""
    k = layer.kernel if layer.kind in ("generic_conv", "depthwise_conv") else 1
    if layer.kind == "fully_connected":
        return 1, 1
    if layer.padding == "same" or k == 1:
        return layer.in_h, layer.in_w
    return layer.in_h - k + 1, layer.in_w - k + 1


# work order per depthwise reuse scheme: items sharing one fetched input row
# (row r + kernel row ka) or one row split across neighbouring segments run together
_DW_ORDER = {
    0: lambda it: (it[0], it[1][0][0], it[1][0][1], it[3]),
    1: lambda it: (it[0], it[1][0][0] + it[3], it[1][0][1], it[3]),
    2: lambda it: (it[0], it[1][0][0], it[3], it[1][0][1]),
    3: lambda it: (it[0], it[1][0][0] + it[3], it[3], it[1][0][1]),
}


class _Tile:
    """Input region of one tile, gathered from the act GB image by a partition reshape."""

    def __init__(self, layout, mem, shape, rows, cols):
        self.r0, self.c0 = rows[0], cols[0]
        m = reshape_map(layout, "partition", [shape], rows=rows, cols=cols)
        self.data = m.apply(layout, [mem])
        self.full = shape

    def read(self, r, cols, ch):
        """Input row ``r`` at columns ``cols`` (global coords); zero outside the map."""
        H, W, _ = self.full
        out = np.zeros(len(cols), dtype=self.data.dtype)
        if not 0 <= r < H:
            return out
        for n, q in enumerate(cols):
            if 0 <= q < W:
                lr, lc = r - self.r0, q - self.c0
                if not (0 <= lr < self.data.shape[0] and 0 <= lc < self.data.shape[1]):
                    raise OracleError(f"tile halo too small: read ({r}, {q}) outside tile")
                out[n] = self.data[lr, lc, ch]
        return out


def replay_plan(layer, plan, inputs, weights=None, tiles=None, layout: ActLayout | None = None,
                macs_per_lane: int = 8, lanes: int | None = None):
    """Execute ``plan`` work item by work item and return the dense output.

    ``plan`` is a lane mapping (with ``assignment`` and ``profile``) for compute
    layers, or a reshape map for data-movement layers. Inputs go through the
    act GB memory image; ``tiles`` lists ((r0, r1), (c0, c1)) ranges over the
    stride-1 output map, each computed from a partition reshape of its
    receptive field. Raises OracleError if an untiled plan runs out of
    lane-round slots, a tile reads outside its halo, or any output is written
    other than exactly once.
    """
    layout = layout or ActLayout()
    xs = inputs if isinstance(inputs, (list, tuple)) else [inputs]
    xs = [np.asarray(x) for x in xs]
    mems = [store(layout, x) for x in xs]
    if hasattr(plan, "offset"):  # reshape map
        return plan.apply(layout, mems)
    kind = layer.kind
    if kind in ("concat", "upsample", "downsample"):
        raise OracleError(f"{kind} layers replay through a reshape map")
    a, prof = plan.assignment, plan.profile
    if lanes is not None and a.lane_start + a.lane_count > lanes:
        raise OracleError("plan uses lanes beyond the array")
    slots = prof.rounds * a.lane_count
    dh, dw = _dense_shape(layer)
    x = xs[0]
    if kind == "fully_connected":
        flat = x.reshape(1, 1, -1)
        mems, xs, x = [store(layout, flat)], [flat], flat
    shape = x.shape
    k = layer.kernel if kind in ("generic_conv", "depthwise_conv") else 1
    p = (k - 1) // 2 if layer.padding == "same" else 0
    w = None if weights is None else np.asarray(weights)
    if kind == "fully_connected":
        w = w.reshape(w.shape[0], -1)
    if kind in ("pointwise_conv", "matmul", "fully_connected"):
        w = w[:, :, None, None]
    seg = macs_per_lane
    out_c = layer.out_c if kind in _MATRIX else layer.in_c
    dtype = np.result_type(x, w) if w is not None else x.dtype
    acc = np.zeros((dh, dw, out_c), dtype=dtype)
    hits = np.zeros((dh, dw, out_c), dtype=int)
    # a partitioned layer runs once per tile on the plan's lanes, so only an
    # untiled replay is held to the plan's round count
    budgeted = tiles is None
    tiles = tiles or [((0, dh), (0, dw))]
    used = 0
    for (r0, r1), (c0, c1) in tiles:
        if not (0 <= r0 < r1 <= dh and 0 <= c0 < c1 <= dw):
            raise OracleError(f"tile {(r0, r1), (c0, c1)} outside the {dh}x{dw} output map")
        ir = (max(0, r0 - p), min(shape[0], r1 - 1 - p + k))
        ic = (max(0, c0 - p), min(shape[1], c1 - 1 - p + k))
        views = [_Tile(layout, m, xx.shape, ir, ic) for m, xx in zip(mems, xs)]
        if k == 1 and c1 - c0 < seg:
            # a 1x1 window lets several whole narrow rows share one lane segment
            per = seg // (c1 - c0)
            segs = [tuple((r, c0, c1) for r in range(g, min(g + per, r1))) for g in range(r0, r1, per)]
        else:
            segs = [((r, q0, min(q0 + seg, c1)),) for r in range(r0, r1) for q0 in range(c0, c1, seg)]
        if kind in _MATRIX:
            oc_pad = -(-layer.out_c // 16) * 16
            items = [(o, s, i, ka) for o in range(oc_pad) for s in segs for i in range(shape[2]) for ka in range(k)]
        elif kind == "depthwise_conv":
            items = [(ch, s, ch, ka) for ch in range(layer.in_c) for s in segs for ka in range(k)]
            items.sort(key=_DW_ORDER[int(getattr(a, "scheme", 0))])
        elif kind == "elementwise":
            items = [(ch, s, ch, 0) for ch in range(layer.in_c) for s in segs]
        else:
            raise OracleError(f"no replay for kind {kind!r}")
        for o, pieces, i, ka in items:
            if budgeted and used >= slots:
                raise OracleError(f"plan for {layer.id} has {slots} lane-round slots, work needs more")
            used += 1
            if o >= out_c:
                continue  # padded channel slot of the last tile: computed, never stored
            for r, q0, q1 in pieces:
                cols = np.arange(q0, q1)
                if kind == "elementwise":
                    vals = [v.read(r, cols, i) for v in views]
                    if w is None:
                        res = sum(vals[1:], vals[0].astype(dtype))
                    else:
                        res = vals[0] * np.broadcast_to(w, shape)[r, cols, i]
                else:
                    res = np.zeros(len(cols), dtype=dtype)
                    wk = w[o, i] if kind in _MATRIX else w[i]
                    for kb in range(k):  # one cycle per kernel column
                        res = res + wk[ka, kb] * views[0].read(r + ka - p, cols + kb - p, i)
                acc[r, q0:q1, o] += res
                if ka == 0 and (kind not in _MATRIX or i == 0):
                    hits[r, q0:q1, o] += 1
    if hits.min() != 1 or hits.max() != 1:
        raise OracleError(f"outputs written {hits.min()}..{hits.max()} times, expected exactly once")
    s = layer.stride if kind in ("generic_conv", "depthwise_conv", "pointwise_conv") else 1
    if s > 1:
        # downsample reshape keeps the stride-aligned outputs
        keep = reshape_map(layout, "downsample", [acc.shape], stride=s)
        acc = keep.apply(layout, [store(layout, acc)])
    return acc
