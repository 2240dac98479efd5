"""Predict-then-focus geometry: pupil-anchored crops and ROI refresh cadence."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BACKGROUND, SCLERA, IRIS, PUPIL = 0, 1, 2, 3
PGM_CODES = (0, 64, 128, 255)


class NoPupil(ValueError):
    def __init__(self, msg="no pupil pixels"):
        super().__init__(msg)


class NoSclera(ValueError):
    def __init__(self, msg="no sclera pixels"):
        super().__init__(msg)


class RoiError(ValueError):
    pass


@dataclass(frozen=True)
class SegMask:
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise RoiError("mask must be 2-D")
        if lab.size and (lab.min() < BACKGROUND or lab.max() > PUPIL):
            raise RoiError("mask labels must be in 0..3")
        object.__setattr__(self, "labels", lab.astype(np.uint8))

    @property
    def shape(self):
        return self.labels.shape

    @classmethod
    def from_pgm_codes(cls, img):
        img = np.asarray(img)
        lab = np.full(img.shape, 255, dtype=np.uint8)
        for label, code in enumerate(PGM_CODES):
            lab[img == code] = label
        if np.any(lab == 255):
            bad = sorted(set(np.unique(img)) - set(PGM_CODES))
            raise RoiError(f"unknown class codes {bad[:5]}")
        return cls(lab)

    def to_pgm_codes(self):
        return np.asarray(PGM_CODES, dtype=np.uint8)[self.labels]


@dataclass(frozen=True)
class RoiPolicy:
    mode: str = "fixed_size"
    out_h: int = 96
    out_w: int = 160
    scale: float = 1.5
    refresh_n: int = 50
    pipeline_delay_frames: int | None = None

    def __post_init__(self):
        if self.mode not in ("fixed_size", "sclera_scaled"):
            raise RoiError(f"unknown ROI mode {self.mode!r}")
        if self.out_h < 1 or self.out_w < 1 or not self.scale > 0 or self.refresh_n < 1:
            raise RoiError("ROI policy values must be positive")
        if self.pipeline_delay_frames is None:
            object.__setattr__(self, "pipeline_delay_frames", self.refresh_n)
        if self.pipeline_delay_frames < 0:
            raise RoiError("pipeline delay must be >= 0")


@dataclass(frozen=True)
class RoiRect:
    row0: int
    col0: int
    height: int
    width: int

    def to_dict(self):
        return {"row0": self.row0, "col0": self.col0, "h": self.height, "w": self.width}

    def contains(self, r, c):
        return self.row0 <= r < self.row0 + self.height and self.col0 <= c < self.col0 + self.width


def pupil_centroid(mask: SegMask) -> tuple[float, float]:
    rows, cols = np.nonzero(mask.labels == PUPIL)
    if rows.size == 0:
        raise NoPupil()
    return float(rows.mean()), float(cols.mean())


def sclera_extent(mask: SegMask) -> tuple[int, int]:
    rows, cols = np.nonzero(mask.labels == SCLERA)
    if rows.size == 0:
        raise NoSclera()
    return int(rows.max() - rows.min() + 1), int(cols.max() - cols.min() + 1)


def _even_up(x: float) -> int:
    n = math.ceil(x - 1e-9)
    return n + (n % 2)


def _place(center: float, size: int, limit: int) -> tuple[int, int]:
    size = min(size, limit)
    start = math.floor(center - size / 2 + 0.5)
    return min(max(start, 0), limit - size), size


def predict_roi(mask: SegMask, policy: RoiPolicy = RoiPolicy()) -> RoiRect:
    """Pupil-centered rectangle, shifted the least amount needed to stay in bounds."""
    cr, cc = pupil_centroid(mask)
    if policy.mode == "fixed_size":
        h, w = policy.out_h, policy.out_w
    else:
        eh, ew = sclera_extent(mask)
        h, w = _even_up(policy.scale * eh), _even_up(policy.scale * ew)
    H, W = mask.shape
    r0, h = _place(cr, h, H)
    c0, w = _place(cc, w, W)
    return RoiRect(r0, c0, h, w)


def bootstrap_roi(shape, policy: RoiPolicy = RoiPolicy()) -> RoiRect:
    """Centered policy-size crop used until the first segmentation lands."""
    H, W = shape
    r0, h = _place(H / 2, policy.out_h, H)
    c0, w = _place(W / 2, policy.out_w, W)
    return RoiRect(r0, c0, h, w)


def roi_for_frame(t: int, policy: RoiPolicy = RoiPolicy()) -> int | None:
    """ROI generation used at frame ``t``, or None while still on the bootstrap ROI."""
    if t < 0:
        raise RoiError("frame index must be >= 0")
    if t < policy.pipeline_delay_frames:
        return None
    return (t - policy.pipeline_delay_frames) // policy.refresh_n


def staleness(t: int, policy: RoiPolicy = RoiPolicy()) -> int | None:
    """Frames since the segmentation behind frame ``t``'s ROI was started."""
    g = roi_for_frame(t, policy)
    return None if g is None else t - g * policy.refresh_n


def crop(image, rect: RoiRect) -> np.ndarray:
    img = np.asarray(image)
    H, W = img.shape[:2]
    if rect.row0 < 0 or rect.col0 < 0 or rect.height < 1 or rect.width < 1 \
            or rect.row0 + rect.height > H or rect.col0 + rect.width > W:
        raise RoiError(f"rect {rect.to_dict()} is outside a {H}x{W} image")
    return img[rect.row0:rect.row0 + rect.height, rect.col0:rect.col0 + rect.width].copy()


def synth_eye_mask(center, pupil_r, iris_r, sclera_axes, seed=0, shape=(128, 128), jitter=0.0) -> SegMask:
    """Nested pupil/iris/sclera ellipses; ``jitter`` wobbles each boundary by a random low-order ripple."""
    sa, sb = sclera_axes
    if not 0 < pupil_r < iris_r < min(sa, sb):
        raise RoiError("need 0 < pupil_r < iris_r < min(sclera_axes)")
    rng = np.random.default_rng(seed)
    rr, cc = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
    dr, dc = rr - center[0], cc - center[1]
    theta = np.arctan2(dr, dc)

    def ripple():
        if jitter == 0:
            return 1.0
        amp = rng.normal(size=3) * jitter
        phase = rng.uniform(0, 2 * np.pi, size=3)
        return 1.0 + sum(a * np.cos((k + 2) * theta + p) for k, (a, p) in enumerate(zip(amp, phase)))

    lab = np.zeros(shape, dtype=np.uint8)
    lab[np.hypot(dr / sa, dc / sb) <= ripple()] = SCLERA
    lab[np.hypot(dr, dc) / iris_r <= ripple()] = IRIS
    lab[np.hypot(dr, dc) / pupil_r <= ripple()] = PUPIL
    return SegMask(lab)
