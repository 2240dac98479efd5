"""Round-level accelerator simulation under the three orchestration modes.

Time advances in batches of identical rounds: a layer's rounds all cost the
same, so one interval record covers them. Segmentation runs once per period of
N frames; how it shares the array with the per-frame gaze work depends on the
mode.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

from .config import HardwareConfig, config_to_dict, default_config
from .mapper import Mapping, ReuseScheme, dense_dims, map_layer
from .workload import LayerSpec, PipelineSpec, amortized_frame_macs, apply_optical_first_layer, layer_macs

STALL_CAUSES = ("act_read", "weight_load", "output_write")


class SimulationError(RuntimeError):
    pass


class DeadlineMiss(SimulationError):
    pass


@dataclass(frozen=True)
class OrchestrationMode:
    tag: str = "time_multiplexing"
    split: int | None = None
    util_threshold: float = 0.8

    def __post_init__(self):
        if self.tag not in ("time_multiplexing", "concurrent", "partial_time_multiplexing"):
            raise SimulationError(f"unknown mode {self.tag!r}")
        if not 0 < self.util_threshold <= 1:
            raise SimulationError("util_threshold must be in (0, 1]")

    @classmethod
    def parse(cls, text: str, **kw):
        return cls({"tm": "time_multiplexing", "cc": "concurrent", "ptm": "partial_time_multiplexing"}
                   .get(text, text), **kw)

    @property
    def short(self) -> str:
        return {"time_multiplexing": "tm", "concurrent": "cc", "partial_time_multiplexing": "ptm"}[self.tag]


@dataclass
class Interval:
    frame: int
    net: str
    layer: str
    start: int
    cycles: int
    macs: int
    lanes: int
    utilization: float
    stalls: dict = field(default_factory=dict)
    seg_macs: int = 0
    act_rows: float = 0.0
    seg_pending: bool = False

    @property
    def end(self) -> int:
        return self.start + self.cycles


@dataclass
class SimReport:
    mode: str
    frames: int
    frames_per_period: int
    total_cycles: int
    idle_cycles: int
    frame_cycles: list
    intervals: list
    stalls: dict
    energy_total: float
    freq_hz: float
    total_macs: int
    peak_macs: int
    frame_macs: list
    act_rows_per_cycle: float
    settings: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)
    # (layer, frame, start cycle, end cycle, macs) for every piece of segmentation work
    seg_log: list = field(default_factory=list)

    @property
    def fps(self) -> float:
        return throughput(self)

    @property
    def utilization(self) -> float:
        return self.total_macs / (self.total_cycles * self.peak_macs) if self.total_cycles else 0.0

    @property
    def layer_cycles(self) -> dict:
        out = {}
        for iv in self.intervals:
            key = f"{iv.net}/{iv.layer}"
            out[key] = out.get(key, 0) + iv.cycles
        return out

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "intervals"}
        d["fps"] = self.fps
        d["utilization"] = self.utilization
        d["energy_per_frame"] = self.energy_total / self.frames
        d["layer_cycles"] = self.layer_cycles
        d["intervals"] = [asdict(iv) for iv in self.intervals]
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "net", "layer", "start", "cycles", "macs", "seg_macs", "lanes", "utilization",
                    *[f"stall_{c}" for c in STALL_CAUSES]])
        for iv in self.intervals:
            w.writerow([iv.frame, iv.net, iv.layer, iv.start, iv.cycles, iv.macs, iv.seg_macs, iv.lanes,
                        f"{iv.utilization:.6f}", *[iv.stalls.get(c, 0) for c in STALL_CAUSES]])
        return buf.getvalue()


# ---------------------------------------------------------------- per-layer costs


def weight_bytes(layer: LayerSpec, bits: int = 8) -> int:
    k = layer.kind
    if k == "generic_conv":
        n = layer.out_c * layer.in_c * layer.kernel ** 2
    elif k in ("pointwise_conv", "matmul", "fully_connected"):
        n = layer.out_c * layer.in_c
    elif k == "depthwise_conv":
        n = layer.in_c * layer.kernel ** 2
    elif k == "elementwise" and len(layer.predecessors) <= 1:
        n = layer.in_h * layer.in_w * layer.in_c  # per-element scale
    else:
        n = 0
    return math.ceil(n * bits / 8)


@dataclass(frozen=True)
class LayerCost:
    layer: LayerSpec
    mapping: Mapping
    cycles: int
    compute_cycles: int
    stalls: dict
    rows: int

    @property
    def macs(self) -> int:
        return self.mapping.macs


def _round_time(m: Mapping, cfg: HardwareConfig, rate: float) -> tuple[int, int]:
    """(round cycles, act_read stall per round) for a plan replayed under ``cfg``."""
    k = m.profile.cycles_per_round
    r = m.assignment.rows_per_round
    if not r:
        return k, 0
    t = max(k, math.ceil(r / rate - 1e-9))
    if cfg.input_buffer and r > cfg.read_port_rows:
        t = max(t, k * math.ceil(r / cfg.read_port_rows))
    return t, t - k


def _rate(layer: LayerSpec, cfg: HardwareConfig, boost=0.0) -> float:
    from .mapper import _effective_rate
    return _effective_rate(layer, cfg, boost)


def layer_cost(layer: LayerSpec, cfg: HardwareConfig, lanes: int | None = None, prev_cycles: int = 0,
               mapping: Mapping | None = None, scheme=None) -> LayerCost:
    m = mapping or map_layer(layer, cfg, lanes, scheme)
    t, act_stall = _round_time(m, cfg, _rate(layer, cfg))
    rounds = m.profile.rounds
    compute = rounds * m.profile.cycles_per_round
    base = rounds * t
    # ping-pong weight buffers: chunk i+1 loads while chunk i computes
    wb = weight_bytes(layer, cfg.precision_bits)
    w_stall = 0
    if wb and base:
        chunks = math.ceil(wb / cfg.weight_buffer_bytes)
        load = [min(cfg.weight_buffer_bytes, wb - i * cfg.weight_buffer_bytes) / cfg.weight_gb_bytes_per_cycle
                for i in range(chunks)]
        per_chunk = base / chunks
        w_stall = max(0.0, load[0] - prev_cycles)
        w_stall += sum(max(0.0, load[i + 1] - per_chunk) for i in range(chunks - 1))
        w_stall = math.ceil(w_stall)
    o_stall = 0
    if base:
        dh, dw = dense_dims(layer)
        words = dh * dw * math.ceil(layer.out_c / cfg.word_activations)
        o_stall = max(0, math.ceil(words / cfg.act_gb_write_words_per_cycle) - base)
    stalls = {"act_read": rounds * act_stall, "weight_load": w_stall, "output_write": o_stall}
    return LayerCost(layer, m, base + w_stall + o_stall, compute, stalls, m.assignment.rows_per_round * rounds)


# ---------------------------------------------------------------- orchestration helpers


def concurrent_split(pipeline_or_workloads, total_macs: int = 1024) -> int:
    """MACs reserved for segmentation: a_seg share of ``total_macs``, rounded up to a multiple of 4.

    Accepts a PipelineSpec or an (a_seg, a_gaze) pair of amortized per-frame MACs.
    """
    if total_macs < 8:
        raise SimulationError("need at least 8 MACs to split")
    if isinstance(pipeline_or_workloads, PipelineSpec):
        a_seg, a_gaze = amortized_parts(pipeline_or_workloads)
    else:
        a_seg, a_gaze = pipeline_or_workloads
    if a_seg <= 0:
        return 0
    raw = total_macs * a_seg / (a_seg + a_gaze)
    return int(4 * math.ceil(raw / 4 - 1e-12))


def amortized_parts(pipeline: PipelineSpec) -> tuple[float, float]:
    """(segmentation, gaze + reconstruction) MACs per frame."""
    seg = sum(layer_macs(l) for l in pipeline.seg_net.layers) / pipeline.seg_period_frames
    gaze = sum(layer_macs(l) for l in pipeline.gaze_net.layers) + sum(layer_macs(l) for l in pipeline.recon_layers)
    return seg, gaze


def _frame_layers(pipeline: PipelineSpec):
    seg, gaze = pipeline.seg_net, pipeline.gaze_net
    if pipeline.optical_first_layer:
        seg = apply_optical_first_layer(seg)[0] if seg.layers else seg
        gaze = apply_optical_first_layer(gaze)[0] if gaze.layers else gaze
    per_frame = [("recon", l) for l in pipeline.recon_layers] + [("gaze", l) for l in gaze.layers]
    return per_frame, [("seg", l) for l in seg.layers]


class _SegState:
    """Progress of the current segmentation run, tracked in integer MACs."""

    def __init__(self, layers, cfg, lanes):
        # data-movement layers are address remaps with no lane work
        self.layers = [(n, l) for n, l in layers if layer_macs(l) > 0]
        self.costs = {}
        prev = 0
        for _, l in self.layers:
            self.costs[l.id] = c = layer_cost(l, cfg, lanes, prev)
            prev = c.cycles
        self.total = sum(layer_macs(l) for _, l in self.layers)
        self.reset()

    def reset(self):
        self.idx = 0
        self.done_in_layer = 0
        self.done = 0

    @property
    def finished(self) -> bool:
        return self.idx >= len(self.layers)

    def current(self):
        return self.layers[self.idx][1]

    def remaining_in_layer(self) -> int:
        return layer_macs(self.current()) - self.done_in_layer

    def advance(self, macs: int):
        self.done_in_layer += macs
        self.done += macs
        while not self.finished and self.done_in_layer >= layer_macs(self.current()):
            self.done_in_layer -= layer_macs(self.current())
            self.idx += 1


def _seg_rate(layer, cfg, lanes, boost, rows_left) -> float:
    """Segmentation MACs per cycle on ``lanes`` lanes with ``rows_left`` act rows/cycle to spare."""
    if lanes <= 0 or layer_macs(layer) == 0:
        return 0.0
    m = map_layer(layer, cfg, lanes, boost=boost)
    c = layer_cost(layer, cfg, lanes, mapping=m, prev_cycles=10**9)
    if c.cycles == 0:
        return 0.0
    rate = layer_macs(layer) / c.cycles
    need = c.rows / c.cycles
    if need > 0 and rows_left < need:
        rate *= max(0.0, rows_left) / need
    return rate


# ---------------------------------------------------------------- simulate


def simulate(pipeline: PipelineSpec, mode: OrchestrationMode | str = "time_multiplexing",
             config: HardwareConfig | None = None, frames: int | None = None, plans: dict | None = None,
             manifest: dict | None = None) -> SimReport:
    """Run ``frames`` frames (default: one segmentation period) and return the report.

    ``plans`` optionally maps layer id -> Mapping produced elsewhere (possibly
    with a different config); rounds are then timed under ``config``.
    """
    cfg = config or default_config()
    if isinstance(mode, str):
        mode = OrchestrationMode.parse(mode, util_threshold=cfg.util_threshold)
    n = pipeline.seg_period_frames
    frames = n if frames is None else frames
    if frames < 1:
        raise SimulationError("frames must be >= 1")
    per_frame, seg_layers = _frame_layers(pipeline)
    plans = plans or {}
    peak = cfg.total_macs

    gaze_lanes = cfg.lanes
    seg_macs_alloc = 0
    if mode.tag == "concurrent":
        seg_macs_alloc = mode.split if mode.split is not None else concurrent_split(pipeline, peak)
        if seg_layers and (seg_macs_alloc <= 0 or seg_macs_alloc >= peak):
            raise SimulationError(f"infeasible static split: {seg_macs_alloc} of {peak} MACs for segmentation")
        gaze_lanes = (peak - seg_macs_alloc) // cfg.macs_per_lane
        if per_frame and gaze_lanes < 1:
            raise SimulationError(f"static split leaves no whole lane for gaze: {seg_macs_alloc} of {peak} MACs")

    # per-frame layers are identical every frame: cost them once
    costs = []
    prev = 0
    for net, l in per_frame:
        c = layer_cost(l, cfg, gaze_lanes, prev, plans.get(l.id))
        costs.append((net, c))
        prev = c.cycles
    if costs:
        # steady state: the first layer's weights load while the previous frame finishes
        net, c = costs[0]
        costs[0] = (net, layer_cost(c.layer, cfg, gaze_lanes, costs[-1][1].cycles, plans.get(c.layer.id)))
    seg = _SegState(seg_layers, cfg, cfg.lanes)

    intervals: list[Interval] = []
    frame_cycles, frame_macs = [], []
    stalls = dict.fromkeys(STALL_CAUSES, 0)
    seg_log = []
    clock = 0
    energy = 0.0
    rows_total = 0.0

    def emit(frame, net, layer, cycles, macs, lanes, st=None, seg_macs=0, rows=0.0, pending=False):
        nonlocal clock, rows_total
        util = (macs + seg_macs) / (cycles * peak) if cycles else 0.0
        intervals.append(Interval(frame, net, layer, clock, cycles, macs, lanes, util, dict(st or {}),
                                  seg_macs, rows, pending))
        for k, v in (st or {}).items():
            stalls[k] += v
        clock += cycles
        rows_total += rows

    def run_seg_layer_whole(frame):
        """Time-multiplexed: the next segmentation layer runs to completion on all lanes."""
        l = seg.current()
        c = seg.costs[l.id]
        macs = seg.remaining_in_layer()
        seg_log.append((l.id, frame, clock, clock + c.cycles, macs))
        emit(frame, "seg", l.id, c.cycles, macs, c.mapping.assignment.lane_count, c.stalls,
             rows=c.rows)
        seg.advance(macs)
        return macs

    def run_seg_until(frame, target):
        """Partial mode catch-up: all lanes, round granular, stop once ``target`` MACs are done."""
        done = 0
        while not seg.finished and seg.done < target:
            l = seg.current()
            c = seg.costs[l.id]
            need = min(seg.remaining_in_layer(), target - seg.done)
            rate = layer_macs(l) / c.cycles
            cyc = max(1, math.ceil(need / rate))
            seg_log.append((l.id, frame, clock, clock + cyc, need))
            emit(frame, "seg", l.id, cyc, need, c.mapping.assignment.lane_count,
                 {k: math.ceil(v * need / layer_macs(l)) for k, v in c.stalls.items()},
                 rows=c.rows * need / layer_macs(l))
            seg.advance(need)
            done += need
        return done

    def run_seg_alongside(frame, cycles):
        """Concurrent mode: segmentation advances on its reserved MACs for ``cycles`` cycles."""
        done = 0
        budget = float(cycles)
        while budget > 0 and not seg.finished:
            l = seg.current()
            c = seg.costs[l.id]
            # the layer keeps its full-array efficiency, scaled to the reserved MACs
            rate = layer_macs(l) / c.cycles * seg_macs_alloc / peak if c.cycles else float("inf")
            take = min(seg.remaining_in_layer(), int(rate * budget)) if math.isfinite(rate) else \
                seg.remaining_in_layer()
            if take <= 0:
                break
            t0 = clock + cycles - budget
            budget -= take / rate if math.isfinite(rate) else 0
            seg_log.append((l.id, frame, t0, clock + cycles - budget, take))
            seg.advance(take)
            done += take
        return done

    for f in range(frames):
        pf = f % n
        if pf == 0:
            if f and not seg.finished and seg_layers:
                raise DeadlineMiss(f"segmentation run incomplete at frame {f}")
            seg.reset()
        start = clock
        fmacs = 0
        target = math.ceil((pf + 1) * seg.total / n) if seg_layers else 0
        for net, c in costs:
            l = c.layer
            fill = 0
            rows = float(c.rows)
            pending = bool(seg_layers) and not seg.finished
            if (mode.tag == "partial_time_multiplexing" and c.mapping.macs and not seg.finished
                    and c.mapping.utilization < mode.util_threshold and c.cycles):
                idle = cfg.lanes - c.mapping.assignment.lane_count
                left = _rate(l, cfg, cfg.partial_bw_boost) - c.rows / c.cycles
                budget = c.cycles
                while budget > 0 and not seg.finished and idle > 0:
                    sl = seg.current()
                    rate = _seg_rate(sl, cfg, idle, cfg.partial_bw_boost, left)
                    if rate <= 0:
                        break
                    take = min(seg.remaining_in_layer(), int(rate * budget))
                    if take <= 0:
                        break
                    t0 = clock + c.cycles - budget
                    budget -= take / rate
                    seg_log.append((sl.id, f, t0, clock + c.cycles - budget, take))
                    seg.advance(take)
                    fill += take
                    rows += take / rate * min(left, rate)
            if mode.tag == "concurrent" and seg_layers:
                fill = run_seg_alongside(f, c.cycles)
            emit(f, net, l.id, c.cycles, c.macs, c.mapping.assignment.lane_count, c.stalls, fill, rows, pending)
            fmacs += c.macs + fill
        if seg_layers and mode.tag == "time_multiplexing":
            while not seg.finished and seg.done < target:
                fmacs += run_seg_layer_whole(f)
        elif seg_layers and mode.tag == "partial_time_multiplexing":
            fmacs += run_seg_until(f, target)
        elif seg_layers and mode.tag == "concurrent" and pf == n - 1 and not seg.finished:
            raise DeadlineMiss(
                f"segmentation needs more than {n} frames on {seg_macs_alloc} MACs "
                f"({seg.done} of {seg.total} MACs done)")
        frame_cycles.append(clock - start)
        frame_macs.append(fmacs)

    total_macs = sum(frame_macs)
    energy = _energy(intervals, cfg)
    settings = {"mode": mode.tag, "split": seg_macs_alloc, "util_threshold": mode.util_threshold,
                "act_gb_read_rows_per_cycle": cfg.act_gb_read_rows_per_cycle,
                "partial_bw_boost": cfg.partial_bw_boost, "input_buffer": cfg.input_buffer,
                "depthwise_reuse": cfg.depthwise_reuse, "config": config_to_dict(cfg)}
    busy = sum(iv.cycles for iv in intervals)
    return SimReport(mode.tag, frames, n, clock, clock - busy, frame_cycles, intervals, stalls, energy,
                     cfg.freq_hz, total_macs, peak, frame_macs, rows_total / clock if clock else 0.0,
                     settings, dict(manifest or {}), seg_log)


def _energy(intervals, cfg: HardwareConfig) -> float:
    e = cfg.energy
    total = 0.0
    for iv in intervals:
        macs = iv.macs + iv.seg_macs
        # every MAC reads an operand from its FIFO and a weight from the lane buffer
        total += macs * e["mac"] + 2 * macs * e["local_buffer"]
        total += iv.act_rows * cfg.macs_per_lane * e["gb"]
    return total


# ---------------------------------------------------------------- metrics


def throughput(report: SimReport) -> float:
    """Average frames per second over the simulated frames."""
    if not report.total_cycles or not report.frames:
        raise ZeroDivisionError("empty report")
    return report.freq_hz / (report.total_cycles / report.frames)


def energy_per_frame(report: SimReport) -> float:
    if not report.frames:
        raise ZeroDivisionError("empty report")
    return report.energy_total / report.frames


def normalized_efficiency(report: SimReport, baseline: SimReport) -> float:
    """Frames per unit energy budget relative to ``baseline`` at equal chip power."""
    return throughput(report) / throughput(baseline)


def utilization_trace(report: SimReport, threshold: float | None = None, net: str | None = None):
    """Per-interval (net, layer, utilization, below_threshold) tuples."""
    th = report.settings.get("util_threshold", 0.8) if threshold is None else threshold
    out = []
    for iv in report.intervals:
        if net is not None and iv.net != net:
            continue
        if iv.cycles == 0:
            continue
        out.append((iv.net, iv.layer, iv.utilization, iv.utilization < th))
    return out


def fill_utilization(report: SimReport, threshold: float | None = None) -> tuple[float, float]:
    """Cycle-weighted (gaze, overall) utilization over low-util gaze intervals with segmentation pending.

    These are the intervals partial time-multiplexing is meant to fill.
    """
    th = report.settings.get("util_threshold", 0.8) if threshold is None else threshold
    cyc = gaze = both = 0
    for iv in report.intervals:
        if iv.net == "seg" or not iv.cycles or not iv.seg_pending:
            continue
        cap = iv.cycles * report.peak_macs
        if iv.macs / cap >= th:
            continue
        cyc += iv.cycles
        gaze += iv.macs
        both += iv.macs + iv.seg_macs
    if not cyc:
        return 0.0, 0.0
    return gaze / (cyc * report.peak_macs), both / (cyc * report.peak_macs)


def peak_speedup(partial: SimReport, baseline: SimReport) -> float:
    """Worst-frame latency of ``baseline`` over that of ``partial``."""
    return max(baseline.frame_cycles) / max(partial.frame_cycles)


def required_macs(pipeline: PipelineSpec, fps: float, config: HardwareConfig | None = None,
                  mode: str = "time_multiplexing") -> float:
    """MACs needed so that every frame meets ``fps`` at the config's utilization."""
    cfg = config or default_config()
    rep = simulate(pipeline, mode, cfg)
    worst = max(rep.frame_cycles)
    return cfg.total_macs * worst * fps / cfg.freq_hz


def depthwise_time_share(net, config: HardwareConfig, scheme=None) -> float:
    """Fraction of a network's cycles spent in depthwise layers."""
    total = dw = 0
    prev = 0
    for l in net.layers:
        s = scheme if l.kind == "depthwise_conv" else None
        c = layer_cost(l, config, None, prev, scheme=s)
        prev = c.cycles
        total += c.cycles
        if l.kind == "depthwise_conv":
            dw += c.cycles
    return dw / total if total else 0.0


def depthwise_cycles(net, config: HardwareConfig, scheme=None) -> int:
    return sum(layer_cost(l, config, scheme=scheme).cycles for l in net.layers if l.kind == "depthwise_conv")


def amortized_ideal_cycles(pipeline: PipelineSpec, config: HardwareConfig, frames: int) -> float:
    return amortized_frame_macs(pipeline) * frames / config.total_macs


# ---------------------------------------------------------------- system ladder

LADDER = ("lens", "flatcam_predict_then_focus", "input_buffer", "partial_time_multiplexing", "depthwise_reuse")


def ladder_rows(config: HardwareConfig | None = None, seg_period: int = 50):
    """The five cumulative configurations as (label, pipeline, mode, config) tuples."""
    from .networks import eyecod_pipeline, lens_pipeline

    cfg = config or default_config()
    base = cfg.with_(input_buffer=False, depthwise_reuse=False)
    flat = eyecod_pipeline(seg_period)
    buf = base.with_(input_buffer=True)
    full = buf.with_(depthwise_reuse=True)
    return [
        (LADDER[0], lens_pipeline(seg_period), OrchestrationMode("time_multiplexing"), base),
        (LADDER[1], flat, OrchestrationMode("time_multiplexing"), base),
        (LADDER[2], flat, OrchestrationMode("time_multiplexing"), buf),
        (LADDER[3], flat, OrchestrationMode("partial_time_multiplexing", util_threshold=cfg.util_threshold), buf),
        (LADDER[4], flat, OrchestrationMode("partial_time_multiplexing", util_threshold=cfg.util_threshold), full),
    ]


def ladder_sweep(config: HardwareConfig | None = None, seg_period: int = 50, frames: int | None = None):
    """Simulate every ladder row; returns [(label, SimReport)]."""
    return [(label, simulate(p, mode, cfg, frames)) for label, p, mode, cfg in ladder_rows(config, seg_period)]
