"""Lane mapping, intra-channel reuse schemes and the per-round cost model.

A round lasts K cycles (one cycle for 1x1 work). In a round every active lane
streams one act row segment through its FIFO and produces 8 consecutive outputs
of one kernel row. The number of distinct row segments fetched per round is what
the act GB has to supply, so it caps how many lanes can be active.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import IntEnum

from .config import HardwareConfig
from .workload import LayerSpec, layer_macs


class MappingError(ValueError):
    pass


class ReuseScheme(IntEnum):
    row_wise = 0
    column_wise = 1
    deeper_row_wise = 2
    column_plus_deeper = 3


MATRIX_KINDS = ("generic_conv", "pointwise_conv", "matmul", "fully_connected")
CHANNEL_TILE = 16


@dataclass(frozen=True)
class RoundProfile:
    cycles_per_round: int
    act_rows_fetched: int
    weight_words: int
    busy_macs: float
    rounds: int
    stall_cycles_per_round: int = 0

    @property
    def cycles(self) -> int:
        return self.rounds * (self.cycles_per_round + self.stall_cycles_per_round)


@dataclass(frozen=True)
class LaneAssignment:
    layer: str
    lane_start: int
    lane_count: int
    channel_tile: int
    rows_per_round: int
    scheme: ReuseScheme
    replicas: int = 1
    lanes_per_row: int = 1

    @property
    def lanes(self) -> range:
        return range(self.lane_start, self.lane_start + self.lane_count)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.name
        d["lanes"] = list(self.lanes)
        return d


@dataclass(frozen=True)
class Mapping:
    assignment: LaneAssignment
    profile: RoundProfile
    macs: int
    lanes_granted: int
    macs_per_lane: int = 8

    @property
    def cycles(self) -> int:
        return self.profile.cycles

    @property
    def utilization(self) -> float:
        """Busy MACs over the lanes granted to this layer; 0 for movement-only layers."""
        if self.cycles == 0:
            return 0.0
        return self.macs / (self.cycles * self.lanes_granted * self.macs_per_lane)


def _round_up(x: int, m: int) -> int:
    return -(-x // m) * m


def fifo_gain(kernel: int, stride: int = 1, macs_per_lane: int = 8) -> float:
    """Direct-read traffic over buffered traffic for one lane's round.

    Without the buffer each MAC reads its own operand every cycle; with it the
    lane reads the (8s + K - s) distinct elements of the row segment once.
    """
    distinct = macs_per_lane * stride + kernel - stride
    return macs_per_lane * kernel / distinct


def buffer_bandwidth_saving(kernel: int, config: HardwareConfig | None = None, stride: int = 1) -> float:
    """Fraction of act GB read bandwidth saved by the sequential-write-parallel-read buffer."""
    if kernel < 1:
        raise MappingError("kernel must be >= 1")
    p = config.macs_per_lane if config else 8
    return 1.0 - 1.0 / fifo_gain(kernel, stride, p)


def _effective_rate(layer: LayerSpec, config: HardwareConfig, boost: float = 0.0) -> float:
    rate = config.act_gb_read_rows_per_cycle * (1.0 + boost)
    if not config.input_buffer:
        rate /= min(2.0, fifo_gain(_round_cycles(layer), 1, config.macs_per_lane))
    return rate


def row_cap(layer: LayerSpec, config: HardwareConfig, boost: float = 0.0) -> int:
    """Row segments one round can be fed without stalling."""
    k = _round_cycles(layer)
    cap = math.floor(_effective_rate(layer, config, boost) * k + 1e-9)
    if config.input_buffer:
        cap = min(cap, config.read_port_rows)
    return max(cap, 0)


def _round_cycles(layer: LayerSpec) -> int:
    return layer.kernel if layer.kind in ("generic_conv", "depthwise_conv") else 1


def dense_dims(layer: LayerSpec) -> tuple[int, int]:
    """Output rows/cols the lanes actually compute.

    Strided convolutions run at stride 1; the act GB downsample reshape then
    keeps the stride-aligned outputs, so the skipped positions cost lane time.
    """
    if layer.stride > 1 and layer.kind in ("generic_conv", "depthwise_conv", "pointwise_conv"):
        if layer.padding == "same":
            return layer.in_h, layer.in_w
        return layer.in_h - layer.kernel + 1, layer.in_w - layer.kernel + 1
    return layer.out_h, layer.out_w


def _segments(layer: LayerSpec, config: HardwareConfig) -> int:
    """Lane-wide output segments per channel.

    Segments stay within one row, except that with a 1x1 window several whole
    rows narrower than a lane share one segment.
    """
    h, w = dense_dims(layer)
    m = config.macs_per_lane
    if _window(layer) == 1 and w < m:
        return math.ceil(h / (m // w))
    return h * math.ceil(w / m)


def _window(layer: LayerSpec) -> int:
    return layer.kernel if layer.kind in ("generic_conv", "depthwise_conv") else 1


def _profile(layer, config, lanes, rows, rounds, weight_words) -> RoundProfile:
    k = _round_cycles(layer)
    rate = _effective_rate(layer, config)
    t = max(k, math.ceil(rows / rate - 1e-9)) if rows else k
    busy = layer_macs(layer) / (rounds * k) if rounds else 0.0
    return RoundProfile(k, rows, weight_words, busy, rounds, t - k)


def map_generic_pointwise(layer: LayerSpec, lanes_available: int, config: HardwareConfig,
                          boost: float = 0.0) -> Mapping:
    """Output channels tiled over lanes in multiples of 16; spare lane groups replicate spatially."""
    if layer.kind not in MATRIX_KINDS:
        raise MappingError(f"{layer.id}: {layer.kind} is not a generic/pointwise-style layer")
    if lanes_available < 1:
        raise MappingError("no lanes available")
    oc_pad = _round_up(layer.out_c, CHANNEL_TILE)
    k_rows = layer.kernel if layer.kind == "generic_conv" else 1
    segs = _segments(layer, config)
    items = oc_pad * segs * layer.in_c * k_rows
    g = min(lanes_available, oc_pad)
    replicas = max(1, min(lanes_available // g, segs))
    cap = row_cap(layer, config, boost)

    def rows_for(r):
        # replicas on neighbouring output rows share an input row across kernel rows
        return math.ceil(r / k_rows)

    while replicas > 1 and rows_for(replicas) > cap:
        replicas -= 1
    active = g * replicas
    rows = rows_for(replicas)
    rounds = math.ceil(items / active)
    weight_words = math.ceil(active * layer.kernel / CHANNEL_TILE) if layer.kind == "generic_conv" else \
        math.ceil(active / CHANNEL_TILE)
    a = LaneAssignment(layer.id, 0, active, _round_up(min(oc_pad, lanes_available), CHANNEL_TILE), rows,
                       ReuseScheme.row_wise, replicas, 1)
    return Mapping(a, _profile(layer, config, active, rows, rounds, weight_words), layer_macs(layer),
                   lanes_available, config.macs_per_lane)


def lanes_per_row(layer: LayerSpec, scheme: ReuseScheme, config: HardwareConfig) -> int:
    """How many lanes one fetched act row segment serves under ``scheme``."""
    h, w = dense_dims(layer)
    col = max(1, min(layer.kernel, h))
    deep = 2 if math.ceil(w / config.macs_per_lane) >= 2 else 1
    return {ReuseScheme.row_wise: 1, ReuseScheme.column_wise: col,
            ReuseScheme.deeper_row_wise: deep, ReuseScheme.column_plus_deeper: col * deep}[scheme]


def map_depthwise(layer: LayerSpec, lanes_available: int, scheme: ReuseScheme, config: HardwareConfig,
                  boost: float = 0.0) -> Mapping:
    """One (channel, output row segment, kernel row) triple per lane-round."""
    if layer.kind != "depthwise_conv":
        raise MappingError(f"{layer.id}: reuse scheme {ReuseScheme(scheme).name} needs a depthwise layer")
    if lanes_available < 1:
        raise MappingError("no lanes available")
    scheme = ReuseScheme(scheme)
    items = layer.in_c * _segments(layer, config) * layer.kernel
    f = lanes_per_row(layer, scheme, config)
    cap = row_cap(layer, config, boost)
    active = min(lanes_available, items)
    if math.ceil(active / f) > cap:
        active = max(1, min(active, cap * f))
    rows = math.ceil(active / f)
    rounds = math.ceil(items / active)
    weight_words = math.ceil(active * layer.kernel / CHANNEL_TILE)
    a = LaneAssignment(layer.id, 0, active, _round_up(layer.in_c, CHANNEL_TILE), rows, scheme, 1, f)
    return Mapping(a, _profile(layer, config, active, rows, rounds, weight_words), layer_macs(layer),
                   lanes_available, config.macs_per_lane)


def choose_scheme(layer: LayerSpec, config: HardwareConfig, lanes_available: int | None = None) -> ReuseScheme:
    """Scheme with the highest modeled utilization; ties go to the earlier enum entry."""
    if layer.kind != "depthwise_conv":
        raise MappingError(f"{layer.id}: only depthwise layers have a reuse choice")
    lanes = lanes_available or config.lanes
    if not config.depthwise_reuse:
        return ReuseScheme.row_wise
    best, best_cycles = ReuseScheme.row_wise, None
    for s in ReuseScheme:
        c = map_depthwise(layer, lanes, s, config).cycles
        if best_cycles is None or c < best_cycles:
            best, best_cycles = s, c
    return best


def map_layer(layer: LayerSpec, config: HardwareConfig, lanes_available: int | None = None,
              scheme: ReuseScheme | None = None, boost: float = 0.0) -> Mapping:
    """Dispatch to the right mapper; data-movement layers cost one pass over their output words."""
    lanes = config.lanes if lanes_available is None else lanes_available
    if layer.kind in MATRIX_KINDS:
        return map_generic_pointwise(layer, lanes, config, boost)
    if layer.kind == "depthwise_conv":
        if scheme is None:
            scheme = choose_scheme(layer, config, lanes)
        return map_depthwise(layer, lanes, scheme, config, boost)
    if layer.kind == "elementwise":
        # one operand row segment per active lane, one cycle per round
        segs = _segments(layer, config) * layer.in_c
        cap = row_cap(layer, config, boost)
        active = max(1, min(lanes, segs, cap))
        rounds = math.ceil(segs / active)
        a = LaneAssignment(layer.id, 0, active, _round_up(layer.in_c, CHANNEL_TILE), active,
                           ReuseScheme.row_wise)
        return Mapping(a, _profile(layer, config, active, active, rounds, 0), layer_macs(layer),
                       lanes, config.macs_per_lane)
    # concat / upsample / downsample are address remaps in the act GB: no lane work
    a = LaneAssignment(layer.id, 0, 0, _round_up(layer.out_c, CHANNEL_TILE), 0, ReuseScheme.row_wise)
    return Mapping(a, RoundProfile(1, 0, 0, 0.0, 0), 0, lanes, config.macs_per_lane)


def bandwidth_requirement(layer: LayerSpec, scheme: ReuseScheme | None, config: HardwareConfig) -> float:
    """Act row segments per cycle needed to keep every lane busy (no bandwidth cap)."""
    k = _round_cycles(layer)
    if layer.kind == "depthwise_conv":
        items = layer.in_c * _segments(layer, config) * layer.kernel
        f = lanes_per_row(layer, ReuseScheme(scheme or 0), config)
        return math.ceil(min(config.lanes, items) / f) / k
    if layer.kind in MATRIX_KINDS:
        oc_pad = _round_up(layer.out_c, CHANNEL_TILE)
        g = min(config.lanes, oc_pad)
        replicas = max(1, min(config.lanes // g, _segments(layer, config)))
        k_rows = layer.kernel if layer.kind == "generic_conv" else 1
        return math.ceil(replicas / k_rows) / k
    return 0.0


def assignment_to_dict(m: Mapping, tiles=None) -> dict:
    d = m.assignment.to_dict()
    d["cycles"] = m.cycles
    d["tiles"] = tiles or []
    return d
