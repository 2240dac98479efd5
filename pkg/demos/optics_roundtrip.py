"""Capture a synthetic eye through an MLS mask, reconstruct it and crop the gaze ROI."""

import numpy as np

from flatcam_accel.optics import generate_mask, reconstruct, simulate_capture
from flatcam_accel.roi import crop, predict_roi, synth_eye_mask


def main():
    mask = synth_eye_mask((120, 140), 12, 28, (60, 100), seed=1, shape=(256, 256), jitter=0.05)
    scene = mask.labels.astype(float) / 3.0
    masks = generate_mask("mls", ((300, 256), (300, 256)), seed=0)
    for sigma in (0.0, 1e-3, 1e-2):
        y = simulate_capture(scene, masks, sigma, seed=7).y
        for eps in (1e-6, 1e-3, 1e-1):
            x = reconstruct(y, masks, eps)
            mse = float(np.mean((x - scene) ** 2))
            psnr = np.inf if mse == 0 else 10 * np.log10(1.0 / mse)
            print(f"sigma={sigma:<6g} epsilon={eps:<6g} PSNR {psnr:6.1f} dB")
    rect = predict_roi(mask)
    print(f"ROI {rect.to_dict()} -> crop {crop(scene, rect).shape}")


if __name__ == "__main__":
    main()
