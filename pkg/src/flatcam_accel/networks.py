"""Builders for the shipped segmentation and gaze workloads.

The JSON files under ``data/`` are generated from these functions; edit the
builders and regenerate rather than hand-editing the files.
"""

from __future__ import annotations

from .workload import LayerSpec, NetworkSpec


class _Builder:
    def __init__(self, name):
        self.name = name
        self.layers: list[LayerSpec] = []

    def add(self, id, kind, src, out_c, k=1, stride=1, preds=None, in_c=None, pad="same"):
        """Append a layer reading ``src`` (a LayerSpec or an (h, w, c) input shape)."""
        if isinstance(src, LayerSpec):
            h, w, c = src.out_h, src.out_w, src.out_c
            preds = preds if preds is not None else (src.id,)
        else:
            h, w, c = src
            preds = preds or ()
        layer = LayerSpec(id, kind, h, w, in_c if in_c is not None else c, out_c, k, stride, pad, tuple(preds))
        self.layers.append(layer)
        return layer

    def concat(self, id, parts):
        c = sum(p.out_c for p in parts)
        h, w = parts[0].out_h, parts[0].out_w
        return self.add(id, "concat", (h, w, c), c, preds=tuple(p.id for p in parts))

    def build(self):
        net = NetworkSpec(self.name, tuple(self.layers))
        net.validate()
        return net


def ritnet(height=128, width=128, channels=32, in_channels=1, classes=4, name="ritnet"):
    """Dense encoder/decoder segmentation net (5 down blocks, 4 up blocks)."""
    b = _Builder(name)
    x = None
    shape = (height, width, in_channels)
    skips = []
    for i in range(1, 6):
        tag = f"d{i}"
        if i == 1:
            # block 1 reads the raw frame; the frame itself is not kept for concatenation
            x1 = b.add(f"{tag}_conv1", "generic_conv", shape, channels, k=3)
            x21 = x1
        else:
            x = b.add(f"{tag}_pool", "downsample", x, x.out_c, k=2, stride=2)
            x1 = b.add(f"{tag}_conv1", "generic_conv", x, channels, k=3)
            x21 = b.concat(f"{tag}_cat1", [x, x1])
        c21 = b.add(f"{tag}_conv21", "pointwise_conv", x21, channels)
        c22 = b.add(f"{tag}_conv22", "generic_conv", c21, channels, k=3)
        x31 = b.concat(f"{tag}_cat2", [x21, c22])
        c31 = b.add(f"{tag}_conv31", "pointwise_conv", x31, channels)
        out = b.add(f"{tag}_conv32", "generic_conv", c31, channels, k=3)
        skips.append(out)
        x = out
    for i in range(1, 5):
        tag = f"u{i}"
        skip = skips[-1 - i]
        up = b.add(f"{tag}_up", "upsample", x, x.out_c, k=2, stride=2)
        xc = b.concat(f"{tag}_cat0", [up, skip])
        c11 = b.add(f"{tag}_conv11", "pointwise_conv", xc, channels)
        c12 = b.add(f"{tag}_conv12", "generic_conv", c11, channels, k=3)
        x21 = b.concat(f"{tag}_cat1", [xc, c12])
        c21 = b.add(f"{tag}_conv21", "pointwise_conv", x21, channels)
        x = b.add(f"{tag}_conv22", "generic_conv", c21, channels, k=3)
    b.add("out_conv", "pointwise_conv", x, classes)
    return b.build()


# (expansion, kernel, out_channels, stride) per block, grouped by stage
FBNET_C_STAGES = (
    ((1, 3, 16, 1),),
    ((6, 3, 24, 2), (0, 0, 24, 1), (1, 3, 24, 1), (1, 3, 24, 1)),
    ((6, 5, 32, 2), (3, 5, 32, 1), (6, 5, 32, 1), (6, 3, 32, 1)),
    ((6, 5, 64, 2), (3, 5, 64, 1), (6, 5, 64, 1), (6, 5, 64, 1)),
    ((6, 5, 112, 1), (6, 5, 112, 1), (6, 5, 112, 1), (3, 5, 112, 1)),
    ((6, 5, 184, 2), (6, 5, 184, 1), (6, 5, 184, 1), (6, 5, 184, 1)),
    ((6, 3, 352, 1),),
)


def fbnet_c(height=96, width=160, in_channels=1, stem=16, stem_stride=2, last=1984, outputs=3,
            stage_width=(1, 1, 1, 1, 1, 1, 1), stages=FBNET_C_STAGES, name="fbnet_c"):
    """Inverted-residual gaze regressor; ``stage_width`` scales per-stage channel counts.

    An expansion of 0 marks a skip block (identity, no layers emitted).
    """
    b = _Builder(name)
    x = b.add("stem", "generic_conv", (height, width, in_channels), stem, k=3, stride=stem_stride)
    for si, (blocks, mult) in enumerate(zip(stages, stage_width), start=1):
        for bi, (e, k, c, s) in enumerate(blocks, start=1):
            if e == 0:
                continue
            tag = f"s{si}b{bi}"
            out_c = _round16(c * mult) if mult != 1 else c
            block_in = x
            hidden = x.out_c * e
            if e != 1:
                x = b.add(f"{tag}_expand", "pointwise_conv", x, hidden)
            x = b.add(f"{tag}_dw", "depthwise_conv", x, x.out_c, k=k, stride=s)
            x = b.add(f"{tag}_project", "pointwise_conv", x, out_c)
            if s == 1 and block_in.out_c == out_c:
                x = b.add(f"{tag}_add", "elementwise", x, out_c, preds=(x.id, block_in.id))
    x = b.add("head", "pointwise_conv", x, last)
    x = b.add("pool", "downsample", x, last, k=1, stride=max(x.out_h, x.out_w))
    b.add("fc", "fully_connected", (1, 1, last), outputs, preds=(x.id,))
    return b.build()


def _round16(c):
    return max(16, int(round(c / 16.0)) * 16)


# square scene/sensor size of the reconstruction stage; sized so the four
# matmuls take about 14.5% of the amortized per-frame work
RECON_DIM = 180


def eyecod_pipeline(seg_period=50, recon_dim=RECON_DIM, roi=(96, 160), seg_hw=(128, 128), optical_first_layer=False):
    """Predict-then-focus pipeline: reconstruction, periodic segmentation, per-frame ROI gaze."""
    from .optics import recon_as_layers
    from .workload import PipelineSpec

    recon = recon_as_layers(((recon_dim, recon_dim), (recon_dim, recon_dim))) if recon_dim else ()
    return PipelineSpec(ritnet(*seg_hw), fbnet_c(*roi), recon, seg_period, tuple(seg_hw), tuple(roi),
                        optical_first_layer, name="eyecod")


def lens_pipeline(seg_period=50, frame=(256, 256)):
    """Lens-camera baseline: no reconstruction and no ROI, so no segmentation; gaze sees the full frame."""
    from .workload import NetworkSpec, PipelineSpec

    return PipelineSpec(NetworkSpec("none", ()), fbnet_c(*frame), (), seg_period, tuple(frame), tuple(frame),
                        name="lens_full_frame")
