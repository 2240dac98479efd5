"""Layer/network descriptions of the predict-then-focus workload and MAC accounting.

Reported "FLOPs" are treated as multiply-accumulate counts throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

KINDS = (
    "generic_conv",
    "pointwise_conv",
    "depthwise_conv",
    "fully_connected",
    "matmul",
    "elementwise",
    "upsample",
    "downsample",
    "concat",
)
CONV_KINDS = ("generic_conv", "pointwise_conv", "depthwise_conv")
COMPUTE_KINDS = (
    "generic_conv",
    "pointwise_conv",
    "depthwise_conv",
    "fully_connected",
    "matmul",
    "elementwise",
)


class WorkloadError(ValueError):
    """Invalid layer, network or workload file. ``path`` points at the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    in_h: int
    in_w: int
    in_c: int
    out_c: int
    kernel: int = 1
    stride: int = 1
    padding: str = "same"
    predecessors: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "predecessors", tuple(self.predecessors))

    @property
    def out_h(self) -> int:
        return _out_dim(self, self.in_h)

    @property
    def out_w(self) -> int:
        return _out_dim(self, self.in_w)

    def validate(self) -> None:
        where = f"layer[{self.id}]"
        if self.kind not in KINDS:
            raise WorkloadError(f"unknown kind {self.kind!r}", where + "/kind")
        for name in ("in_h", "in_w", "in_c", "out_c", "kernel", "stride"):
            if getattr(self, name) < 1:
                raise WorkloadError(f"{name} must be >= 1", f"{where}/{name}")
        if self.padding not in ("same", "valid"):
            raise WorkloadError(f"bad padding {self.padding!r}", where + "/pad")
        if self.kind == "depthwise_conv" and self.out_c != self.in_c:
            raise WorkloadError("depthwise layer needs out_c == in_c", where + "/out_c")
        if self.kind in CONV_KINDS and self.padding == "same" and self.kernel % 2 == 0:
            raise WorkloadError("same padding needs an odd kernel", where + "/k")
        if self.kind == "pointwise_conv" and self.kernel != 1:
            raise WorkloadError("pointwise layer needs kernel == 1", where + "/k")
        if self.kind == "concat" and len(self.predecessors) < 2:
            raise WorkloadError("concat needs at least 2 predecessors", where + "/pred")
        if self.out_h < 1 or self.out_w < 1:
            raise WorkloadError("output dimensions not positive", where + "/k")


def _out_dim(layer: LayerSpec, n: int) -> int:
    k = layer.kind
    if k == "upsample":
        return n * layer.stride
    if k in ("downsample",) or k in CONV_KINDS:
        if layer.padding == "same":
            return -(-n // layer.stride)
        return (n - layer.kernel) // layer.stride + 1
    return n


def layer_macs(layer: LayerSpec) -> int:
    """Multiply-accumulate count of one layer (zero for pure data movement)."""
    layer.validate()
    ho, wo = layer.out_h, layer.out_w
    k = layer.kind
    if k == "generic_conv":
        return ho * wo * layer.out_c * layer.in_c * layer.kernel**2
    if k == "pointwise_conv":
        return ho * wo * layer.out_c * layer.in_c
    if k == "depthwise_conv":
        return ho * wo * layer.in_c * layer.kernel**2
    if k == "fully_connected":
        return layer.in_c * layer.out_c
    if k == "matmul":
        # (in_h*in_w x in_c) @ (in_c x out_c)
        return layer.in_h * layer.in_w * layer.in_c * layer.out_c
    if k == "elementwise":
        return ho * wo * layer.in_c
    return 0


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple[LayerSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def __len__(self):
        return len(self.layers)

    def by_id(self) -> dict[str, LayerSpec]:
        return {layer.id: layer for layer in self.layers}

    def validate(self) -> None:
        seen: dict[str, LayerSpec] = {}
        for i, layer in enumerate(self.layers):
            layer.validate()
            if layer.id in seen:
                raise WorkloadError(f"duplicate layer id {layer.id!r}", f"/layers/{i}/id")
            for p in layer.predecessors:
                if p not in seen:
                    # ordered list: an unseen id is either dangling or a back edge
                    known = any(l.id == p for l in self.layers)
                    what = "cycle or out-of-order predecessor" if known else "dangling predecessor"
                    raise WorkloadError(f"{what} {p!r}", f"/layers/{i}/pred")
            _check_shapes(layer, [seen[p] for p in layer.predecessors], i)
            seen[layer.id] = layer

    def successors(self) -> dict[str, list[str]]:
        succ: dict[str, list[str]] = {l.id: [] for l in self.layers}
        for layer in self.layers:
            for p in layer.predecessors:
                succ[p].append(layer.id)
        return succ


def _check_shapes(layer: LayerSpec, preds: list[LayerSpec], index: int) -> None:
    if not preds:
        return
    where = f"/layers/{index}"
    if layer.kind == "concat":
        dims = {(p.out_h, p.out_w) for p in preds}
        if len(dims) != 1:
            raise WorkloadError(f"concat {layer.id!r} joins unequal spatial dims {sorted(dims)}", where + "/pred")
        (h, w), = dims
        c = sum(p.out_c for p in preds)
        if (layer.in_h, layer.in_w, layer.in_c) != (h, w, c):
            raise WorkloadError(f"layer {layer.id!r} input {layer.in_h}x{layer.in_w}x{layer.in_c} != {h}x{w}x{c}", where + "/in")
        return
    if layer.kind == "fully_connected":
        p = preds[0]
        if p.out_c != layer.in_c and p.out_h * p.out_w * p.out_c != layer.in_c:
            raise WorkloadError(f"layer {layer.id!r} in_c {layer.in_c} does not match predecessor", where + "/in")
        return
    if layer.kind == "matmul":
        return
    p = preds[0]
    if (layer.in_h, layer.in_w, layer.in_c) != (p.out_h, p.out_w, p.out_c):
        raise WorkloadError(
            f"layer {layer.id!r} input {layer.in_h}x{layer.in_w}x{layer.in_c} != predecessor "
            f"{p.id!r} output {p.out_h}x{p.out_w}x{p.out_c}",
            where + "/in",
        )


def network_macs(net: NetworkSpec) -> tuple[int, dict[str, float]]:
    """Total MACs and per-kind fractions (over compute kinds present)."""
    net.validate()
    per_kind: dict[str, int] = {}
    for layer in net.layers:
        m = layer_macs(layer)
        if layer.kind in COMPUTE_KINDS:
            per_kind[layer.kind] = per_kind.get(layer.kind, 0) + m
    total = sum(per_kind.values())
    fractions = {k: v / total for k, v in per_kind.items()} if total else {}
    return total, fractions


def macs_by_kind(layers) -> dict[str, int]:
    out: dict[str, int] = {}
    for layer in layers:
        if layer.kind in COMPUTE_KINDS:
            out[layer.kind] = out.get(layer.kind, 0) + layer_macs(layer)
    return out


@dataclass(frozen=True)
class PipelineSpec:
    seg_net: NetworkSpec
    gaze_net: NetworkSpec
    recon_layers: tuple[LayerSpec, ...] = ()
    seg_period_frames: int = 50
    seg_resolution: tuple[int, int] = (128, 128)
    gaze_roi: tuple[int, int] = (96, 160)
    optical_first_layer: bool = False
    name: str = "pipeline"
    # file names the networks were loaded from; kept for round-tripping
    sources: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "recon_layers", tuple(self.recon_layers))

    def validate(self) -> None:
        if self.seg_period_frames < 1:
            raise WorkloadError("seg_period must be >= 1", "/seg_period")
        for name in ("seg_resolution", "gaze_roi"):
            if min(getattr(self, name)) < 1:
                raise WorkloadError(f"{name} must be positive", "/" + name)
        self.seg_net.validate()
        self.gaze_net.validate()
        NetworkSpec("recon", self.recon_layers).validate()


def amortized_frame_macs(pipeline: PipelineSpec) -> float:
    """Per-frame MACs with segmentation amortized over its period."""
    seg = network_macs(pipeline.seg_net)[0]
    gaze = network_macs(pipeline.gaze_net)[0]
    recon = sum(layer_macs(l) for l in pipeline.recon_layers)
    return gaze + recon + seg / pipeline.seg_period_frames


def amortized_shares(pipeline: PipelineSpec) -> dict[str, float]:
    """Per-kind share of amortized per-frame MACs."""
    n = pipeline.seg_period_frames
    totals: dict[str, float] = {}
    for kind, m in macs_by_kind(pipeline.seg_net.layers).items():
        totals[kind] = totals.get(kind, 0.0) + m / n
    for layers in (pipeline.gaze_net.layers, pipeline.recon_layers):
        for kind, m in macs_by_kind(layers).items():
            totals[kind] = totals.get(kind, 0.0) + m
    total = sum(totals.values())
    return {k: v / total for k, v in totals.items()}


@dataclass(frozen=True)
class FirstLayerSavings:
    removed_layer: str
    removed_macs: int
    raw_bytes: int
    feature_bytes: int

    @property
    def traffic_ratio(self) -> float:
        """Camera-to-processor bytes with the optical layer over bytes without it."""
        return self.feature_bytes / self.raw_bytes


def apply_optical_first_layer(net: NetworkSpec, precision_bits: int = 8) -> tuple[NetworkSpec, FirstLayerSavings]:
    """Drop the first convolution (computed optically) and report what that saves."""
    if not net.layers:
        raise WorkloadError("network is empty", "/layers")
    first = net.layers[0]
    if first.kind not in CONV_KINDS:
        raise WorkloadError(f"first layer {first.id!r} is {first.kind}, not a convolution", "/layers/0/kind")
    nbytes = precision_bits / 8
    raw = int(math.ceil(first.in_h * first.in_w * first.in_c * nbytes))
    feat = int(math.ceil(first.out_h * first.out_w * first.out_c * nbytes))
    rest = []
    for layer in net.layers[1:]:
        preds = tuple(p for p in layer.predecessors if p != first.id)
        rest.append(replace(layer, predecessors=preds))
    savings = FirstLayerSavings(first.id, layer_macs(first), raw, feat)
    return NetworkSpec(net.name + "+optical", tuple(rest)), savings


# --- JSON ---------------------------------------------------------------

def layer_to_dict(layer: LayerSpec) -> dict:
    return {
        "id": layer.id,
        "kind": layer.kind,
        "in": [layer.in_h, layer.in_w, layer.in_c],
        "out_c": layer.out_c,
        "k": layer.kernel,
        "stride": layer.stride,
        "pad": layer.padding,
        "pred": list(layer.predecessors),
    }


def layer_from_dict(d: dict, where: str = "") -> LayerSpec:
    if not isinstance(d, dict):
        raise WorkloadError("layer must be an object", where)
    required = ("id", "kind", "in", "out_c")
    unknown = sorted(set(d) - {"id", "kind", "in", "out_c", "k", "stride", "pad", "pred"})
    if unknown:
        raise WorkloadError(f"layer {d.get('id')!r}: unknown field {unknown[0]!r}", f"{where}/{unknown[0]}")
    for key in required:
        if key not in d:
            raise WorkloadError(f"missing field {key!r}", f"{where}/{key}")
    dims = d["in"]
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(v, int) for v in dims)):
        raise WorkloadError("'in' must be [h, w, c] integers", f"{where}/in")
    for key in ("out_c", "k", "stride"):
        if key in d and not isinstance(d[key], int):
            raise WorkloadError(f"{key!r} must be an integer", f"{where}/{key}")
    layer = LayerSpec(
        id=str(d["id"]),
        kind=d["kind"],
        in_h=dims[0],
        in_w=dims[1],
        in_c=dims[2],
        out_c=d["out_c"],
        kernel=d.get("k", 1),
        stride=d.get("stride", 1),
        padding=d.get("pad", "same"),
        predecessors=tuple(d.get("pred", [])),
    )
    try:
        layer.validate()
    except WorkloadError as exc:
        # rebase the layer-relative pointer onto the file: layer[id]/k -> /layers/i/k
        field_name = exc.path.rsplit("/", 1)[-1]
        raise WorkloadError(f"layer {layer.id!r}: {exc.args[0].split(': ', 1)[-1]}", f"{where}/{field_name}") from None
    return layer


def network_to_dict(net: NetworkSpec) -> dict:
    return {"name": net.name, "layers": [layer_to_dict(l) for l in net.layers]}


def network_from_dict(d: dict) -> NetworkSpec:
    if not isinstance(d, dict) or "layers" not in d:
        raise WorkloadError("network must be an object with 'layers'", "/layers")
    layers = tuple(layer_from_dict(l, f"/layers/{i}") for i, l in enumerate(d["layers"]))
    net = NetworkSpec(d.get("name", "net"), layers)
    net.validate()
    return net


def load_network(path) -> NetworkSpec:
    return network_from_dict(json.loads(Path(path).read_text()))


def save_network(net: NetworkSpec, path) -> None:
    _write_json(path, network_to_dict(net))


def load_workload(path) -> PipelineSpec:
    """Load a pipeline JSON; network entries may be file names relative to it."""
    path = Path(path)
    d = json.loads(path.read_text())
    if not isinstance(d, dict):
        raise WorkloadError("pipeline must be a JSON object", "")
    nets = {}
    sources = {}
    for key in ("seg_net", "gaze_net"):
        if key not in d:
            raise WorkloadError(f"missing field {key!r}", "/" + key)
        ref = d[key]
        if isinstance(ref, str):
            sources[key] = ref
            try:
                nets[key] = load_network(path.parent / ref)
            except WorkloadError as exc:
                raise WorkloadError(str(exc), f"/{key}") from None
        else:
            nets[key] = network_from_dict(ref)
    recon = tuple(layer_from_dict(l, f"/recon_layers/{i}") for i, l in enumerate(d.get("recon_layers", [])))
    res = d.get("resolutions", {})
    pipe = PipelineSpec(
        seg_net=nets["seg_net"],
        gaze_net=nets["gaze_net"],
        recon_layers=recon,
        seg_period_frames=d.get("seg_period", 50),
        seg_resolution=tuple(res.get("seg", (128, 128))),
        gaze_roi=tuple(res.get("gaze_roi", (96, 160))),
        optical_first_layer=bool(d.get("optical_first_layer", False)),
        name=d.get("name", path.stem),
        sources=sources,
    )
    pipe.validate()
    return pipe


def pipeline_to_dict(pipeline: PipelineSpec) -> dict:
    d = {"name": pipeline.name}
    for key in ("seg_net", "gaze_net"):
        src = pipeline.sources.get(key)
        d[key] = src if src else network_to_dict(getattr(pipeline, key))
    d["recon_layers"] = [layer_to_dict(l) for l in pipeline.recon_layers]
    d["seg_period"] = pipeline.seg_period_frames
    d["resolutions"] = {"seg": list(pipeline.seg_resolution), "gaze_roi": list(pipeline.gaze_roi)}
    d["optical_first_layer"] = pipeline.optical_first_layer
    return d


def save_workload(pipeline: PipelineSpec, path) -> None:
    path = Path(path)
    for key, src in pipeline.sources.items():
        save_network(getattr(pipeline, key), path.parent / src)
    _write_json(path, pipeline_to_dict(pipeline))


def _write_json(path, obj) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    tmp.replace(path)
