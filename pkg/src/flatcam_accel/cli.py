"""Command-line entry point: ``eyecod <command> ...``.

Exit codes: 0 success, 1 usage, 2 input validation, 3 simulation/runtime.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, default_config, load_config
from .fileio import FormatError, load_masks, read_csv, read_pgm, save_masks, write_bytes_atomic, write_csv, write_json, write_pgm
from .optics import DEFAULT_EPSILON, MaskPair, generate_mask, reconstruct, simulate_capture
from .roi import NoPupil, NoSclera, RoiError, RoiPolicy, SegMask, predict_roi
from .sim import LADDER, OrchestrationMode, SimulationError, ladder_rows, normalized_efficiency, simulate
from .workload import WorkloadError, amortized_shares, load_network, load_workload, save_workload

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2, 3
DATA_DIR = Path(__file__).parent / "data"


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    command: list
    config_paths: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    output_paths: list = field(default_factory=list)
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return {"command": list(self.command), "config_paths": [str(p) for p in self.config_paths],
                "seeds": dict(self.seeds), "output_paths": [str(p) for p in self.output_paths],
                "tool_version": self.tool_version}


# ---------------------------------------------------------------- input helpers


def _exists(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{p}: no such file")
    return p


def _read_image(path) -> np.ndarray:
    p = _exists(path)
    return read_pgm(p).astype(float) if p.suffix.lower() == ".pgm" else read_csv(p)


def _write_image(path, image) -> None:
    p = Path(path)
    if p.suffix.lower() == ".pgm":
        write_pgm(p, np.clip(np.rint(image), 0, 255).astype(np.uint8))
    else:
        write_csv(p, image)


def _masks(args) -> MaskPair:
    return load_masks(_exists(args.masks))


def _config(path):
    return load_config(_exists(path)) if path else default_config()


def _pipeline(path):
    return load_workload(_exists(path)) if path else load_workload(DATA_DIR / "eyecod_pipeline.json")


# ---------------------------------------------------------------- commands


def cmd_masks(args, manifest):
    dims = ((args.sensor[0], args.scene[0]), (args.sensor[1], args.scene[1]))
    if args.kind == "identity":
        if tuple(args.sensor) != tuple(args.scene):
            raise InputError("identity masks need --sensor equal to --scene")
        m = MaskPair(np.eye(args.scene[0]), np.eye(args.scene[1]), "binary", None)
    else:
        m = generate_mask(args.kind, dims, args.seed)
    manifest.seeds["mask"] = args.seed
    save_masks(m, args.out)
    manifest.output_paths.append(f"{args.out}.json")
    print(f"masks {args.kind} sensor {m.sensor_shape} scene {m.scene_shape} -> {args.out}.json")


def cmd_capture(args, manifest):
    scene = _read_image(args.scene)
    masks = _masks(args)
    manifest.config_paths.append(args.masks)
    manifest.seeds["noise"] = args.seed
    meas = simulate_capture(scene, masks, args.sigma, args.seed)
    write_csv(args.out, meas.y)
    manifest.output_paths.append(args.out)
    print(f"capture {scene.shape} -> {meas.y.shape} sigma={args.sigma} -> {args.out}")


def cmd_reconstruct(args, manifest):
    y = read_csv(_exists(args.measurement))
    masks = _masks(args)
    manifest.config_paths.append(args.masks)
    x = reconstruct(y, masks, args.epsilon)
    _write_image(args.out, x)
    manifest.output_paths.append(args.out)
    print(f"reconstruct {y.shape} -> {x.shape} epsilon={args.epsilon:g} -> {args.out}")


def cmd_roi(args, manifest):
    codes = read_pgm(_exists(args.mask))
    mask = SegMask.from_pgm_codes(codes)
    policy = RoiPolicy()
    if args.policy:
        manifest.config_paths.append(args.policy)
        try:
            policy = RoiPolicy(**json.loads(_exists(args.policy).read_text()))
        except (TypeError, json.JSONDecodeError) as exc:
            raise InputError(f"{args.policy}: {exc}") from None
    rect = predict_roi(mask, policy)
    manifest.output_paths.append(args.out)
    out = dict(rect.to_dict(), manifest=manifest.to_dict())
    write_json(args.out, out)
    print(f"roi rows [{rect.row0},{rect.row0 + rect.height}) cols [{rect.col0},{rect.col0 + rect.width}) -> {args.out}")


def cmd_sim(args, manifest):
    if args.frames is not None and args.frames < 1:
        raise UsageError("--frames must be >= 1")
    cfg = _config(args.hw)
    pipe = _pipeline(args.pipeline)
    manifest.config_paths += [p for p in (args.hw, args.pipeline) if p]
    out = Path(args.out)
    csv_path = out.with_suffix(".csv")
    manifest.output_paths += [str(out), str(csv_path)]
    mode = OrchestrationMode.parse(args.mode, util_threshold=cfg.util_threshold)
    rep = simulate(pipe, mode, cfg, args.frames, manifest=manifest.to_dict())
    write_json(out, rep.to_dict())
    write_bytes_atomic(csv_path, rep.to_csv().encode())
    print(f"{mode.short}: {rep.fps:.2f} FPS, utilization {rep.utilization:.3f}, "
          f"energy/frame {rep.energy_total / rep.frames:.4g}, stalls {rep.stalls}")


def _threads() -> int:
    raw = os.environ.get("EYECOD_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"EYECOD_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def cmd_sweep(args, manifest):
    cfg = _config(args.hw)
    pipe = _pipeline(args.pipeline)
    manifest.config_paths += [p for p in (args.hw, args.pipeline) if p]
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = ladder_rows(cfg, pipe.seg_period_frames)
    if args.pipeline:
        # the user's pipeline replaces the shipped one in the FlatCam rows
        rows = [rows[0]] + [(label, pipe, mode, c) for label, _, mode, c in rows[1:]]
    jobs = [(label, p, mode, c) for label, p, mode, c in rows]
    jobs += [(f"mode_{m}", pipe, OrchestrationMode.parse(m, util_threshold=cfg.util_threshold), cfg)
             for m in ("tm", "cc", "ptm")]

    def run(job):
        label, p, mode, c = job
        try:
            return label, simulate(p, mode, c), None
        except SimulationError as exc:
            return label, None, exc

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(run, jobs))
    for label, _, exc in results[:len(LADDER)]:
        if exc is not None:
            raise SimulationError(f"ladder row {label}: {exc}")
    ladder = [(label, rep) for label, rep, _ in results[:len(LADDER)]]
    base = ladder[0][1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "fps", "speedup_vs_previous", "normalized_efficiency", "utilization"])
    prev = None
    for label, rep in ladder:
        w.writerow([label, f"{rep.fps:.2f}", f"{rep.fps / prev.fps:.3f}" if prev else "",
                    f"{normalized_efficiency(rep, base):.3f}", f"{rep.utilization:.4f}"])
        prev = rep
    ladder_csv = outdir / "ladder.csv"
    write_bytes_atomic(ladder_csv, buf.getvalue().encode())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "fps", "utilization", "worst_frame_cycles", "error"])
    for label, rep, exc in results[len(LADDER):]:
        if rep is None:
            w.writerow([label[5:], "", "", "", str(exc)])
        else:
            w.writerow([label[5:], f"{rep.fps:.2f}", f"{rep.utilization:.4f}", max(rep.frame_cycles), ""])
    modes_csv = outdir / "modes.csv"
    write_bytes_atomic(modes_csv, buf.getvalue().encode())
    manifest.output_paths += [str(ladder_csv), str(modes_csv), str(outdir / "sweep.json")]
    summary = {"ladder": [{"row": l, "fps": r.fps} for l, r in ladder],
               "modes": {l[5:]: (r.fps if r else str(e)) for l, r, e in results[len(LADDER):]},
               "manifest": manifest.to_dict()}
    write_json(outdir / "sweep.json", summary)
    print(ladder_csv.read_text(), end="")


def cmd_workload(args, manifest):
    if args.action == "validate":
        paths = args.paths or sorted(str(p) for p in DATA_DIR.glob("*.json") if p.name != "hw_default.json")
        for path in paths:
            p = _exists(path)
            d = json.loads(p.read_text())
            if isinstance(d, dict) and "layers" in d:
                net = load_network(p)
                print(f"{p}: network {net.name} ok, {len(net.layers)} layers")
            else:
                pipe = load_workload(p)
                shares = amortized_shares(pipe)
                print(f"{p}: pipeline {pipe.name} ok, shares " +
                      ", ".join(f"{k} {v * 100:.1f}%" for k, v in shares.items()))
        return
    from .networks import eyecod_pipeline

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    pipe = eyecod_pipeline(args.seg_period, args.recon_dim, optical_first_layer=args.optical_first_layer)
    sh, sw = pipe.seg_resolution
    seg_name = f"ritnet_{sh}.json" if sh == sw else f"ritnet_{sh}x{sw}.json"
    gaze_name = "fbnet_c100_{}x{}.json".format(*pipe.gaze_roi)
    pipe.sources.update(seg_net=seg_name, gaze_net=gaze_name)
    target = outdir / args.name
    save_workload(pipe, target)
    manifest.output_paths += [str(outdir / seg_name), str(outdir / gaze_name), str(target)]
    print(f"wrote {target} ({seg_name}, {gaze_name}, recon {args.recon_dim})")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eyecod", description="Lensless eye-tracking pipeline and accelerator simulator.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("masks", help="generate a separable mask pair")
    s.add_argument("--kind", choices=("mls", "bernoulli", "identity"), default="mls")
    s.add_argument("--sensor", type=int, nargs=2, required=True, metavar=("H", "W"))
    s.add_argument("--scene", type=int, nargs=2, required=True, metavar=("H", "W"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output stem; writes STEM.json, STEM_left.csv, STEM_right.csv")
    s.set_defaults(func=cmd_masks)

    s = sub.add_parser("capture", help="simulate a sensor measurement")
    s.add_argument("scene", help="scene image (.pgm or .csv)")
    s.add_argument("--masks", required=True, help="mask sidecar JSON")
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_capture)

    s = sub.add_parser("reconstruct", help="regularized least-squares reconstruction")
    s.add_argument("measurement", help="measurement CSV")
    s.add_argument("--masks", required=True)
    s.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    s.add_argument("--out", required=True, help=".pgm (rounded to 8 bits) or .csv")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("roi", help="predict a gaze ROI from a segmentation mask")
    s.add_argument("mask", help="segmentation mask PGM (codes 0/64/128/255)")
    s.add_argument("--policy", help="RoiPolicy JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_roi)

    s = sub.add_parser("sim", help="simulate the accelerator")
    s.add_argument("--hw", help="hardware config JSON (default: built-in)")
    s.add_argument("--pipeline", help="pipeline JSON (default: shipped)")
    s.add_argument("--mode", choices=("tm", "cc", "ptm"), default="ptm")
    s.add_argument("--frames", type=int)
    s.add_argument("--out", required=True, help="report JSON; the per-layer CSV goes next to it")
    s.set_defaults(func=cmd_sim)

    s = sub.add_parser("sweep", help="ablation ladder and orchestration modes")
    s.add_argument("--hw")
    s.add_argument("--pipeline")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("workload", help="validate or regenerate workload files")
    s.add_argument("action", choices=("validate", "gen"))
    s.add_argument("paths", nargs="*")
    s.add_argument("--out", default=str(DATA_DIR))
    s.add_argument("--name", default="eyecod_pipeline.json")
    s.add_argument("--recon-dim", type=int, default=None)
    s.add_argument("--seg-period", type=int, default=50)
    s.add_argument("--optical-first-layer", action="store_true")
    s.set_defaults(func=cmd_workload)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "recon_dim", 0) is None:
            from .networks import RECON_DIM
            args.recon_dim = RECON_DIM
        manifest = RunManifest(["eyecod", *argv])
        args.func(args, manifest)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (InputError, FormatError, ConfigError, WorkloadError, NoPupil, NoSclera, RoiError,
            ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
