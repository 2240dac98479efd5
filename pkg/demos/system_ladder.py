"""Print the five-row ablation ladder and the three orchestration modes on the shipped pipeline."""

from flatcam_accel.config import default_config
from flatcam_accel.networks import eyecod_pipeline
from flatcam_accel.sim import concurrent_split, fill_utilization, ladder_sweep, peak_speedup, simulate


def main():
    cfg = default_config()
    prev = None
    print(f"{'row':<28}{'FPS':>9}{'step':>8}{'util':>7}")
    for label, rep in ladder_sweep(cfg):
        step = f"{rep.fps / prev:.2f}x" if prev else "-"
        print(f"{label:<28}{rep.fps:9.1f}{step:>8}{rep.utilization:7.3f}")
        prev = rep.fps

    pipe = eyecod_pipeline()
    reps = {m: simulate(pipe, m, cfg) for m in ("tm", "cc", "ptm")}
    print(f"\nconcurrent split: {concurrent_split(pipe, cfg.total_macs)} of {cfg.total_macs} MACs")
    for m, rep in reps.items():
        print(f"{m:<4} {rep.fps:8.1f} FPS  worst frame {max(rep.frame_cycles)} cycles  stalls {rep.stalls}")
    print(f"peak speedup ptm over tm: {peak_speedup(reps['ptm'], reps['tm']):.2f}x")
    gaze_u, both_u = fill_utilization(reps["ptm"])
    print(f"low-util gaze intervals: gaze {gaze_u:.2f}, with segmentation filled in {both_u:.2f}")


if __name__ == "__main__":
    main()
