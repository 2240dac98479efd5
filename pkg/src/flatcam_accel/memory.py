"""Activation liveness, peak footprint and input feature-wise partition plans.

Concat outputs alias their inputs (the layout places channel tiles back to
back), so they add no bytes of their own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .config import HardwareConfig, default_config
from .workload import NetworkSpec

INPUT = "@input"


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Tensor:
    name: str
    h: int
    w: int
    c: int
    producer: int  # layer index, -1 for the network input
    last_use: int

    def bytes(self, bits: int) -> int:
        return math.ceil(self.h * self.w * self.c * bits / 8)


def _storage(net: NetworkSpec) -> dict[str, str]:
    """Map every layer output to the tensor that actually holds it (concat resolves to itself)."""
    return {l.id: l.id for l in net.layers}


def tensors(net: NetworkSpec) -> list[Tensor]:
    """Stored tensors with live ranges; a concat keeps its inputs alive as long as it is used."""
    idx = {l.id: i for i, l in enumerate(net.layers)}
    last = {l.id: i for i, l in enumerate(net.layers)}
    last[INPUT] = -1
    # walk backwards so concat users extend the life of the concat's parts
    for i in range(len(net.layers) - 1, -1, -1):
        l = net.layers[i]
        preds = l.predecessors or (INPUT,)
        for p in preds:
            last[p] = max(last.get(p, -1), i)
        if l.kind == "concat":
            for p in l.predecessors:
                last[p] = max(last[p], last[l.id])
    out = []
    first = net.layers[0] if net.layers else None
    if first is not None:
        out.append(Tensor(INPUT, first.in_h, first.in_w, first.in_c, -1, last[INPUT]))
    for l in net.layers:
        if l.kind == "concat":
            continue
        out.append(Tensor(l.id, l.out_h, l.out_w, l.out_c, idx[l.id], last[l.id]))
    return out


def decimation_factor(layer) -> int:
    """Strided convolutions run at stride 1 and are decimated by the downsample reshape,
    so the undecimated result is live for that step."""
    if layer.kind in ("generic_conv", "depthwise_conv", "pointwise_conv") and layer.stride > 1:
        return layer.stride * layer.stride
    return 1


def live_bytes_per_step(net: NetworkSpec, bits: int = 8, size_fn=None) -> list[int]:
    ts = tensors(net)
    by_name = {t.name: t for t in ts}
    size_fn = size_fn or (lambda t: t.bytes(bits))
    steps = []
    for i, layer in enumerate(net.layers):
        live = sum(size_fn(t) for t in ts if t.producer <= i <= max(t.last_use, t.producer))
        f = decimation_factor(layer)
        if f > 1:
            live += (f - 1) * size_fn(by_name[layer.id])
        steps.append(live)
    return steps


def peak_activation_bytes(net: NetworkSpec, bits: int = 8) -> int:
    steps = live_bytes_per_step(net, bits)
    return max(steps) if steps else 0


# ---------------------------------------------------------------- partition


@dataclass(frozen=True)
class PartitionPlan:
    network: str
    grid: tuple[int, int]
    tiles: tuple
    halo: str
    halos: dict = field(default_factory=dict)
    full: frozenset = frozenset()
    groups: tuple = ()
    peak_bytes: int = 0
    unpartitioned_bytes: int = 0

    @property
    def ratio(self) -> float:
        return self.peak_bytes / self.unpartitioned_bytes if self.unpartitioned_bytes else 0.0

    def to_dict(self) -> dict:
        return {"network": self.network, "grid": list(self.grid), "halo": self.halo,
                "tiles": [[list(r), list(c)] for r, c in self.tiles],
                "full": sorted(self.full), "groups": [list(g) for g in self.groups],
                "peak_bytes": self.peak_bytes, "unpartitioned_bytes": self.unpartitioned_bytes}


def split(n: int, parts: int) -> list[tuple[int, int]]:
    """Near-equal contiguous ranges covering [0, n)."""
    return [(i * n // parts, (i + 1) * n // parts) for i in range(parts)]


def _margin(kind, k, s):
    """Extra input rows on the worse side of a tile, beyond the stride-scaled tile."""
    if kind in ("generic_conv", "depthwise_conv"):
        p = (k - 1) // 2
        return max(p, k - p - s)
    if kind == "downsample":
        return max(0, k - s)
    return 0


def _input_halo(layer, out_halo, mode):
    """Halo a layer needs on its input so its output tile (plus ``out_halo``) is exact."""
    h = out_halo if mode == "recompute" else 0
    if layer.kind == "upsample":
        return -(-h // layer.stride) + (1 if h else 0)
    return h * layer.stride + _margin(layer.kind, layer.kernel, layer.stride)


def _region(extent, parts, i, halo):
    # past one pixel per tile, sub-tiles share their parent's pixels so tiles stay nested
    while parts > extent:
        parts //= 2
        i //= 2
    a = i * extent // parts
    b = max(a + 1, (i + 1) * extent // parts)
    return max(0, a - halo), min(extent, b + halo)


RESET_THRESHOLDS = (None, 2.0, 1.0, 0.5)


def _halos(net: NetworkSpec, grid, mode, threshold=None, forced=frozenset(), fixed=None):
    """Backward pass: halo per stored tensor, plus the set materialized in full.

    A tensor is materialized when its haloed tile would cover the whole map, or
    when ``2*halo >= threshold * tile``; its producer then restarts with no halo.
    ``fixed`` reuses halos from a coarser grid unchanged.
    """
    ts = {t.name: t for t in tensors(net)}
    kinds = {l.id: l.kind for l in net.layers}
    need = {name: 0 for name in ts}
    alias = {}  # concat id -> halo requested by its users
    full = set(forced)

    def materialize(t, h):
        if t.name in full:
            return True
        for ext, g in ((t.h, grid[0]), (t.w, grid[1])):
            if g == 1:
                continue
            if _region(ext, g, g // 2, h) == (0, ext):
                return True
            if threshold is not None and 2 * h >= threshold * (ext / g):
                return True
        return False

    for layer in reversed(net.layers):
        if layer.kind == "concat":
            h = alias.get(layer.id, 0)
            for p in layer.predecessors:
                if kinds[p] == "concat":
                    alias[p] = max(alias.get(p, 0), h)
                else:
                    need[p] = max(need[p], h)
            continue
        t = ts[layer.id]
        h = fixed[layer.id] if fixed is not None else need[layer.id]
        need[layer.id] = h
        if layer.kind == "fully_connected" or materialize(t, h):
            full.add(layer.id)
            h = 0
        if layer.kind == "fully_connected":
            full.update(layer.predecessors)
        ih = _input_halo(layer, h, mode)
        for p in (layer.predecessors or (INPUT,)):
            if p != INPUT and kinds[p] == "concat":
                alias[p] = max(alias.get(p, 0), ih)
            else:
                need[p] = max(need[p], ih)
    if fixed is not None:
        need[INPUT] = fixed[INPUT]
    if materialize(ts[INPUT], need[INPUT]):
        full.add(INPUT)
    return need, full


def _tile_bytes(t: Tensor, grid, i, j, halo, bits):
    r0, r1 = _region(t.h, grid[0], i, halo)
    c0, c1 = _region(t.w, grid[1], j, halo)
    return math.ceil((r1 - r0) * (c1 - c0) * t.c * bits / 8)


def _peak(net, grid, need, full, bits):
    ts = tensors(net)
    peak = 0
    for i in range(grid[0]):
        for j in range(grid[1]):
            sizes = {t.name: t.bytes(bits) if t.name in full else _tile_bytes(t, grid, i, j, need[t.name], bits)
                     for t in ts}
            peak = max(peak, max(live_bytes_per_step(net, bits, lambda t: sizes[t.name])))
    return peak


def plan_for_grid(net: NetworkSpec, grid, config: HardwareConfig | None = None,
                  halo: str = "recompute", previous: PartitionPlan | None = None) -> PartitionPlan:
    """Best materialization policy for one grid.

    When ``previous`` is a plan on a grid this one refines, its halos and
    materialized set are also tried; nested tiles then guarantee the peak
    cannot grow.
    """
    if halo not in ("recompute", "store"):
        raise PartitionError(f"unknown halo mode {halo!r}")
    config = config or default_config()
    bits = config.precision_bits
    candidates = [_halos(net, grid, halo, th) for th in RESET_THRESHOLDS]
    if previous is not None and previous.halo == halo:
        candidates.append(_halos(net, grid, halo, None, previous.full, previous.halos))
    best = None
    for need, full in candidates:
        pk = _peak(net, grid, need, full, bits)
        if best is None or pk < best[0]:
            best = (pk, need, full)
    peak, need, full = best
    first = net.layers[0]
    tiles = tuple((r, c) for r in split(first.in_h, grid[0]) for c in split(first.in_w, grid[1]))
    groups, cur = [], []
    for l in net.layers:
        cur.append(l.id)
        if l.id in full:
            groups.append(tuple(cur))
            cur = []
    if cur:
        groups.append(tuple(cur))
    return PartitionPlan(net.name, tuple(grid), tiles, halo, dict(need), frozenset(full), tuple(groups),
                         peak, peak_activation_bytes(net, bits))


def grid_sequence(h: int, w: int):
    """1x1, then double whichever dimension has the larger tile, up to single-pixel tiles."""
    ty, tx = 1, 1
    yield ty, tx
    while ty < h or tx < w:
        if (w / tx >= h / ty and tx < w) or ty >= h:
            tx *= 2
        else:
            ty *= 2
        ty, tx = min(ty, h), min(tx, w)
        yield ty, tx


def partition_plan(net: NetworkSpec, act_budget_bytes: int, config: HardwareConfig | None = None,
                   halo: str = "recompute") -> PartitionPlan:
    """Smallest tile count (greedy doubling) whose per-tile peak fits the budget."""
    return partition_pipeline([net], act_budget_bytes, config, halo)[0]


def partition_pipeline(nets, act_budget_bytes: int, config: HardwareConfig | None = None,
                       halo: str = "recompute") -> list[PartitionPlan]:
    """One common grid for all nets; their peaks add because both stay resident."""
    if act_budget_bytes <= 0:
        raise PartitionError("budget must be positive")
    first = nets[0].layers[0]
    plans = [None] * len(nets)
    for grid in grid_sequence(first.in_h, first.in_w):
        plans = [plan_for_grid(n, grid, config, halo, prev) for n, prev in zip(nets, plans)]
        if sum(p.peak_bytes for p in plans) <= act_budget_bytes:
            return plans
    raise PartitionError(f"budget of {act_budget_bytes} bytes is infeasible even with single-pixel tiles")
