"""Separable lensless capture, Tikhonov reconstruction and first-layer mask encoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import max_len_seq

from .workload import LayerSpec

DEFAULT_EPSILON = 1e-3


class ShapeError(ValueError):
    pass


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class MaskPair:
    phi_left: np.ndarray
    phi_right: np.ndarray
    kind: str = "real"
    seed: int | None = None

    def __post_init__(self):
        for name in ("phi_left", "phi_right"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim != 2:
                raise ShapeError(f"{name} must be a matrix")
            if not np.all(np.isfinite(m)):
                raise ParameterError(f"{name} has non-finite entries")
            object.__setattr__(self, name, m)
        if self.kind not in ("binary", "real"):
            raise ParameterError(f"unknown mask kind {self.kind!r}")
        if self.kind == "binary":
            for m in (self.phi_left, self.phi_right):
                if not np.all((m == 0) | (m == 1)):
                    raise ParameterError("binary mask entries must be 0 or 1")

    @property
    def scene_shape(self) -> tuple[int, int]:
        return self.phi_left.shape[1], self.phi_right.shape[1]

    @property
    def sensor_shape(self) -> tuple[int, int]:
        return self.phi_left.shape[0], self.phi_right.shape[0]

    def condition_numbers(self) -> tuple[float, float]:
        return float(np.linalg.cond(self.phi_left)), float(np.linalg.cond(self.phi_right))


@dataclass(frozen=True)
class Measurement:
    channels: list = field(default_factory=list)
    noise_sigma: float = 0.0

    def __post_init__(self):
        chans = [np.asarray(c, dtype=float) for c in self.channels]
        if chans and len({c.shape for c in chans}) != 1:
            raise ShapeError("all measurement channels must share dimensions")
        object.__setattr__(self, "channels", chans)

    @property
    def y(self) -> np.ndarray:
        return self.channels[0]


def _check_scene(x, masks: MaskPair) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ShapeError("scene must be a 2-D grayscale image")
    if x.shape != masks.scene_shape:
        raise ShapeError(f"scene {x.shape} does not match mask inner dims {masks.scene_shape}")
    return x


def simulate_capture(scene, masks: MaskPair, noise_sigma: float = 0.0, seed: int = 0) -> Measurement:
    """Sensor reading ``phi_left @ scene @ phi_right.T`` plus i.i.d. Gaussian noise."""
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")
    x = _check_scene(scene, masks)
    y = masks.phi_left @ x @ masks.phi_right.T
    if noise_sigma > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_sigma, size=y.shape)
    return Measurement([y], noise_sigma)


def _as_channel(y) -> np.ndarray:
    if isinstance(y, Measurement):
        y = y.y
    return np.asarray(y, dtype=float)


def _check_measurement(y, masks: MaskPair) -> np.ndarray:
    y = _as_channel(y)
    if y.shape != masks.sensor_shape:
        raise ShapeError(f"measurement {y.shape} does not match mask outer dims {masks.sensor_shape}")
    return y


def tikhonov_weights(masks: MaskPair, epsilon: float):
    """SVD factors of both masks and the element-wise filter applied in the rotated domain."""
    if not epsilon > 0:
        raise ParameterError("epsilon must be > 0")
    ul, sl, vlt = np.linalg.svd(masks.phi_left, full_matrices=False)
    ur, sr, vrt = np.linalg.svd(masks.phi_right, full_matrices=False)
    w = np.outer(sl, sr) / (np.outer(sl**2, sr**2) + epsilon)
    return ul, vlt.T, ur, vrt.T, w


def reconstruct(y, masks: MaskPair, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Closed-form minimizer of ``||L X R^T - y||^2 + eps ||X||^2``."""
    y = _check_measurement(y, masks)
    ul, vl, ur, vr, w = tikhonov_weights(masks, epsilon)
    z = w * (ul.T @ y @ ur)
    return vl @ z @ vr.T


def objective_value(x, y, masks: MaskPair, epsilon: float) -> float:
    x = _check_scene(x, masks)
    y = _check_measurement(y, masks)
    r = masks.phi_left @ x @ masks.phi_right.T - y
    return float(np.sum(r * r) + epsilon * np.sum(x * x))


def _mls_rows(n_bits: int, length: int, seed: int) -> np.ndarray:
    seq = max_len_seq(n_bits)[0].astype(float)
    return np.roll(seq, seed % len(seq))[:length]


def generate_mask(kind: str, dims, seed: int = 0) -> MaskPair:
    """Binary mask pair of shape (m, n); ``dims`` is (m, n) or ((m_h, n_h), (m_w, n_w)).

    ``mls`` builds circulant matrices from a maximal-length sequence, ``bernoulli``
    draws i.i.d. fair coin flips.
    """
    if isinstance(dims[0], (tuple, list)):
        (mh, nh), (mw, nw) = dims
    else:
        mh = mw = dims[0]
        nh = nw = dims[1]
    if min(mh, nh, mw, nw) < 1:
        raise ShapeError("mask dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    mats = []
    for i, (m, n) in enumerate(((mh, nh), (mw, nw))):
        if kind == "bernoulli":
            mats.append(rng.integers(0, 2, size=(m, n)).astype(float))
        elif kind == "mls":
            n_bits = max(2, int(np.ceil(np.log2(m + n))))
            seq = _mls_rows(n_bits, 2**n_bits - 1, seed + i)
            # row r of the circulant is the sequence cyclically shifted by r
            idx = (np.arange(n)[None, :] - np.arange(m)[:, None]) % len(seq)
            mats.append(seq[idx])
        else:
            raise ParameterError(f"unknown mask family {kind!r}")
    return MaskPair(mats[0], mats[1], "binary", seed)


def mls_autocorrelation(seq) -> np.ndarray:
    """Periodic autocorrelation of a +/-1 mapped binary sequence."""
    s = 2 * np.asarray(seq, dtype=float) - 1
    return np.array([np.dot(s, np.roll(s, k)) for k in range(len(s))])


@dataclass(frozen=True)
class EncodedChannel:
    masks: MaskPair
    residual_energy: float


def encode_first_layer(base: MaskPair, filters, out_channels: int | None = None) -> list[EncodedChannel]:
    """Fold a bank of K x K filters into per-channel mask pairs via rank-1 factors.

    The leading singular pair ``u v^T`` of each filter is convolved into the rows of
    the left/right masks; the discarded singular energy is reported per filter.
    """
    bank = np.asarray(filters, dtype=float)
    if bank.ndim == 2:
        bank = bank[None]
    if bank.size == 0 or bank.ndim != 3:
        raise ParameterError("filter bank is empty")
    if out_channels is not None and out_channels != bank.shape[0]:
        raise ParameterError("need exactly one filter per output channel")
    out = []
    for f in bank:
        u, s, vt = np.linalg.svd(f)
        lead_u = u[:, 0] * np.sqrt(s[0])
        lead_v = vt[0] * np.sqrt(s[0])
        # phi @ C_u, with C_u the "same"-padded correlation matrix of u, is a row-wise convolution
        left = np.array([np.convolve(row, lead_u, mode="same") for row in base.phi_left])
        right = np.array([np.convolve(row, lead_v, mode="same") for row in base.phi_right])
        out.append(EncodedChannel(MaskPair(left, right, "real"), float(np.sum(s[1:] ** 2))))
    return out


def recon_as_layers(masks_or_dims, prefix: str = "recon") -> list[LayerSpec]:
    """Reconstruction expressed as four matmuls plus one element-wise scale.

    Accepts a MaskPair or ((m_h, n_h), (m_w, n_w)) sensor/scene dimensions.
    Matmul layers encode ``(in_h*in_w x in_c) @ (in_c x out_c)``.
    """
    if isinstance(masks_or_dims, MaskPair):
        (mh, mw), (nh, nw) = masks_or_dims.sensor_shape, masks_or_dims.scene_shape
    else:
        (mh, nh), (mw, nw) = masks_or_dims
    rh, rw = min(mh, nh), min(mw, nw)
    p = prefix
    return [
        # U_L^T y : (rh x mh) @ (mh x mw), batch over the mw columns
        LayerSpec(f"{p}_left_proj", "matmul", 1, mw, mh, rh),
        # (.) U_R : (rh x mw) @ (mw x rw)
        LayerSpec(f"{p}_right_proj", "matmul", 1, rh, mw, rw, predecessors=(f"{p}_left_proj",)),
        LayerSpec(f"{p}_scale", "elementwise", 1, rh, rw, rw, predecessors=(f"{p}_right_proj",)),
        # V_L Z : (nh x rh) @ (rh x rw), batch over the rw columns
        LayerSpec(f"{p}_left_back", "matmul", 1, rw, rh, nh, predecessors=(f"{p}_scale",)),
        # (.) V_R^T : (nh x rw) @ (rw x nw)
        LayerSpec(f"{p}_right_back", "matmul", 1, nh, rw, nw, predecessors=(f"{p}_left_back",)),
    ]


def run_recon_layers(y, masks: MaskPair, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Execute the layer sequence of :func:`recon_as_layers` on dense arrays."""
    y = _check_measurement(y, masks)
    ul, vl, ur, vr, w = tikhonov_weights(masks, epsilon)
    t = (y.T @ ul).T  # left_proj, computed column-batched
    t = t @ ur  # right_proj
    t = t * w  # scale
    t = (t.T @ vl.T).T  # left_back
    return t @ vr.T  # right_back
