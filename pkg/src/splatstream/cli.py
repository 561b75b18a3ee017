"""Command-line front end: run, synth, eval, render, sweep.

Exit codes: 0 success, 1 bad usage or configuration, 2 missing or malformed
files, 3 numerical failure while processing. --set flags override config-file
values, and the dedicated flags (--tracker, --seed) override both.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (ConfigError, FullConfig, apply_overrides, load_config,
                     synth_spec_from_text)
from .dba import DbaError
from .fileio import (DEPTH_PNG_SCALE, FileFormatError, export_ply,
                     read_color_png, read_depth_png, read_trajectory,
                     write_color_png, write_depth_png, write_flow,
                     write_trajectory)
from .flow import FileFlowProvider
from .gaussian_map import GaussianBatch, GaussianMap
from .geometry import DepthMap, GeometryError, Intrinsics, Pose
from .local_graph import GraphError, coarse_view
from .metrics import (MetricsError, Trajectory, associate, ate_rmse,
                      depth_l1, psnr, ssim)
from .optimizer import OptimError
from .pipeline import (PipelineError, SequenceDepthProvider,
                       make_state, make_synthetic_inputs)
from .pipeline import run as run_pipeline
from .renderer import render as render_map
from .synthetic import transport_visibility
from .tum import load_tum

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

TRACKER_FLAGS = {"ff": "feedforward", "ff-nolgr": "feedforward_no_lgr",
                 "iter": "iterative"}

_IO_ERRORS = (OSError, FileFormatError)
_NUMERIC_ERRORS = (GeometryError, GraphError, DbaError, OptimError,
                   MetricsError, PipelineError, np.linalg.LinAlgError,
                   FloatingPointError, OverflowError, ZeroDivisionError)


class UsageError(Exception):
    """Bad flags or flag values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we want 1
        raise UsageError(message)


# ------------------------------------------------------------ configuration


def _configured(args) -> FullConfig:
    cfg = FullConfig()
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} does not exist")
        cfg = load_config(path, base=cfg)
    cfg = apply_overrides(cfg, list(getattr(args, "set", None) or []))
    tracker = getattr(args, "tracker", None)
    if tracker:
        cfg = apply_overrides(
            cfg, [f"pipeline.tracker={TRACKER_FLAGS[tracker]}"])
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg = apply_overrides(cfg, [f"pipeline.seed={seed}"])
    return cfg


def _make_inputs(cfg: FullConfig, input_spec: str):
    """Returns (frame source, depth provider, flow provider, gt or None)."""
    kind, sep, rest = input_spec.partition(":")
    if not sep:
        raise UsageError("--input must be tum:DIR or synth:SPEC")
    if kind == "synth":
        spec = synth_spec_from_text(cfg.synth, rest)
        inp = make_synthetic_inputs(spec, cfg.intrinsics, cfg.depth,
                                    cfg.flow, seed=cfg.pipeline.seed)
        gt = Trajectory(inp.gt_entries())
        return inp.frames(), inp.depth_provider, inp.flow_provider, gt
    if kind == "tum":
        directory = Path(rest)
        if not directory.is_dir():
            raise FileNotFoundError(
                f"input directory {directory} does not exist")
        seq = load_tum(directory)
        tracker = cfg.pipeline.tracker
        flow_provider = None
        if tracker == "feedforward":
            raise ConfigError(
                "tracker 'ff' renders extra graph nodes and needs flow for "
                "them; stored sequences carry flow only for real frame "
                "pairs, so use ff-nolgr or iter")
        if tracker != "iterative":
            if not any(directory.glob("flow_*.gflw")):
                raise FileNotFoundError(
                    f"{directory}: no flow_*.gflw fields; tracker "
                    "'ff-nolgr' needs them (synth writes them, or use iter)")
            flow_provider = FileFlowProvider(directory)

        def frames():
            for entry in seq.entries:
                yield read_color_png(entry.rgb_path), entry.timestamp

        return frames(), SequenceDepthProvider(seq), flow_provider, \
            seq.groundtruth
    raise UsageError(f"unknown input kind {kind!r}; use tum: or synth:")


# -------------------------------------------------------------- map sidecar


def _sidecar_for(map_path) -> Path:
    return Path(map_path).with_suffix(".json")


def _write_map_state(path, gmap: GaussianMap, K: Intrinsics) -> None:
    state = {
        "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
                       "width": K.width, "height": K.height},
        "mu": np.asarray(gmap.mu).tolist(),
        "radius": np.asarray(gmap.radius).tolist(),
        "opacity": np.asarray(gmap.opacity).tolist(),
        "color": np.asarray(gmap.color).tolist(),
    }
    Path(path).write_text(json.dumps(state))


def load_map_state(path):
    """Rebuild (map, intrinsics) from a run's JSON sidecar.

    The sidecar exists because PLY stores colors as bytes; reloading it gives
    back the exact float state the run ended with.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(
            f"{path} missing: rendering needs the JSON sidecar written "
            "next to map.ply by run")
    try:
        state = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FileFormatError(f"{path}: {e}") from None
    try:
        ki = state["intrinsics"]
        K = Intrinsics(fx=float(ki["fx"]), fy=float(ki["fy"]),
                       cx=float(ki["cx"]), cy=float(ki["cy"]),
                       width=int(ki["width"]), height=int(ki["height"]))
        batch = GaussianBatch(
            mu=np.asarray(state["mu"], dtype=np.float64).reshape(-1, 3),
            radius=np.asarray(state["radius"], dtype=np.float64),
            opacity=np.asarray(state["opacity"], dtype=np.float64),
            color=np.asarray(state["color"], dtype=np.float64).reshape(-1, 3),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FileFormatError(f"{path}: bad map state: {e}") from None
    gmap = GaussianMap()
    gmap.extend(batch)
    return gmap, K


def parse_pose_line(text: str) -> Pose:
    """Pose from "tx ty tz qx qy qz qw", with an optional leading timestamp."""
    parts = text.replace(",", " ").split()
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"pose line has non-numeric fields: {text!r}") \
            from None
    if len(vals) == 8:
        vals = vals[1:]
    if len(vals) != 7:
        raise UsageError("pose line needs 7 numbers (tx ty tz qx qy qz qw) "
                         "or 8 with a leading timestamp")
    tx, ty, tz, qx, qy, qz, qw = vals
    try:
        return Pose(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz]))
    except GeometryError as e:
        raise UsageError(f"bad pose: {e}") from None


def rendered_image(map_path, pose_line: str) -> np.ndarray:
    """Float color image for --map/--pose, before any PNG quantization."""
    gmap, K = load_map_state(_sidecar_for(map_path))
    pose = parse_pose_line(pose_line)
    return render_map(gmap, pose, K).color


# -------------------------------------------------------------- subcommands


def _write_timings(path, timings) -> None:
    lines = ["frame,track_s,map_s"]
    for i, (track_s, map_s) in enumerate(timings):
        lines.append(f"{i},{track_s:.9f},{map_s:.9f}")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_run(args) -> int:
    cfg = _configured(args)
    source, depth_p, flow_p, _ = _make_inputs(cfg, args.input)
    settings = cfg.pipeline_settings()
    state = make_state(cfg.intrinsics, depth_p, flow_provider=flow_p,
                       settings=settings)
    report = run_pipeline(state, source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / "trajectory.txt", report.stamps,
                     report.trajectory)
    _write_timings(out / "timings.csv", report.timings)
    points, colors = report.gmap.point_cloud()
    export_ply(points, colors, out / "map.ply")
    _write_map_state(_sidecar_for(out / "map.ply"), report.gmap,
                     cfg.intrinsics)
    print(f"frames {len(report.trajectory)}")
    print(f"fallbacks {report.fallback_count}")
    print(f"map_size {len(report.gmap)}")
    return EXIT_OK


def _quantize_depth(dm: DepthMap) -> DepthMap:
    # mirror of the 16-bit PNG roundtrip, so flow files written from memory
    # agree with the depth files a consumer will actually read
    counts = np.where(dm.valid,
                      np.clip(np.round(dm.values * DEPTH_PNG_SCALE), 0,
                              65535), 0.0)
    return DepthMap(counts / DEPTH_PNG_SCALE, counts > 0)


def _write_flow_fields(out: Path, inp, quantized, divisor: int) -> None:
    """Absolute displacement fields for consecutive frame pairs.

    Displacements live in image space, so they hold in any world gauge the
    consumer tracks in.
    """
    Kc = inp.intrinsics.downscaled(divisor)
    grid = Kc.pixel_grid()
    for t in range(1, len(inp.poses)):
        src = quantized[t - 1]
        d_c = coarse_view(src.values, divisor)
        v_c = coarse_view(src.valid, divisor)
        coords, valid_t, visible = transport_visibility(
            inp.scene, np.where(v_c, d_c, 1.0), inp.poses[t - 1],
            inp.poses[t], Kc)
        valid = v_c & valid_t
        corrections = np.where(valid[..., None], coords - grid, 0.0)
        confidence = np.zeros_like(corrections)
        confidence[valid & visible] = 1.0
        write_flow(out / f"flow_{t - 1:06d}_{t:06d}.gflw", corrections,
                   confidence, valid)


def cmd_synth(args) -> int:
    cfg = _configured(args)
    spec = synth_spec_from_text(cfg.synth, args.spec or "")
    if args.frames is not None:
        try:
            spec = replace(spec, n_frames=args.frames)
        except ValueError as e:
            raise ConfigError(f"--frames: {e}") from None
    inp = make_synthetic_inputs(spec, cfg.intrinsics, cfg.depth, cfg.flow,
                                seed=cfg.pipeline.seed)
    out = Path(args.out)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    rgb_lines = ["# timestamp path"]
    depth_lines = ["# timestamp path"]
    quantized = []
    for t, (rgb, stamp) in enumerate(inp.frames()):
        rgb_rel = f"rgb/frame_{t:06d}.png"
        depth_rel = f"depth/frame_{t:06d}.png"
        write_color_png(rgb, out / rgb_rel)
        dm = inp.depth_provider.provide(t)
        write_depth_png(dm, out / depth_rel)
        quantized.append(_quantize_depth(dm))
        rgb_lines.append(f"{stamp:.6f} {rgb_rel}")
        depth_lines.append(f"{stamp:.6f} {depth_rel}")
    (out / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (out / "depth.txt").write_text("\n".join(depth_lines) + "\n")
    write_trajectory(out / "groundtruth.txt", inp.stamps, inp.poses)
    _write_flow_fields(out, inp, quantized, cfg.pipeline.divisor)
    print(f"frames {spec.n_frames}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    metric = args.metric
    if metric == "ate":
        ts_e, poses_e = read_trajectory(args.est)
        ts_g, poses_g = read_trajectory(args.gt)
        est = Trajectory(zip(ts_e, poses_e))
        gt = Trajectory(zip(ts_g, poses_g))
        ie, _ = associate(est, gt)
        print(f"pairs {len(ie)}")
        print(f"ate_rmse_cm {ate_rmse(est, gt):.6f}")
    elif metric in ("psnr", "ssim"):
        a = read_color_png(args.est)
        b = read_color_png(args.gt)
        if metric == "psnr":
            print(f"psnr_db {psnr(a, b):.6f}")
        else:
            print(f"ssim {ssim(a, b):.6f}")
    else:
        a = read_depth_png(args.est)
        b = read_depth_png(args.gt)
        print(f"depth_l1_cm {100.0 * depth_l1(a, b):.6f}")
    return EXIT_OK


def cmd_render(args) -> int:
    map_path = Path(args.map)
    if not map_path.exists():
        raise FileNotFoundError(f"map file {map_path} does not exist")
    image = rendered_image(map_path, args.pose)
    write_color_png(image, args.out)
    print(f"rendered {args.out}")
    return EXIT_OK


_SWEEP_KEYS = {"N": ("sampling", "n_nodes", int),
               "alpha": ("sampling", "alpha", float),
               "theta": ("sampling", "theta_deg", float)}


def _photometric_scores(report, cfg: FullConfig, input_spec: str,
                        every: int = 10):
    """Mean PSNR/SSIM of the final map rendered at every k-th tracked pose."""
    source, _, _, _ = _make_inputs(cfg, input_spec)
    ps, ss = [], []
    for t, (rgb, _stamp) in enumerate(source):
        if t % every:
            continue
        out = render_map(report.gmap, report.trajectory[t], cfg.intrinsics)
        ps.append(psnr(out.color, rgb))
        ss.append(ssim(out.color, rgb))
    return float(np.mean(ps)), float(np.mean(ss))


def cmd_sweep(args) -> int:
    section, key, typ = _SWEEP_KEYS[args.param]
    raw_values = [v for v in (s.strip() for s in args.values.split(","))
                  if v]
    if not raw_values:
        raise UsageError("--values must list at least one value")
    try:
        values = [typ(v) for v in raw_values]
    except ValueError:
        raise UsageError(
            f"--values for {args.param} must be {typ.__name__}s") from None
    cfg = _configured(args)
    input_spec = args.input or "synth:"
    rows = []
    for v in values:
        run_cfg = apply_overrides(cfg, [f"{section}.{key}={v}"])
        source, depth_p, flow_p, gt = _make_inputs(run_cfg, input_spec)
        settings = run_cfg.pipeline_settings()
        state = make_state(run_cfg.intrinsics, depth_p,
                           flow_provider=flow_p, settings=settings)
        report = run_pipeline(state, source)
        if gt is not None and len(gt) == len(report.trajectory):
            est = Trajectory(zip(report.stamps, report.trajectory))
            ate = ate_rmse(est, gt)
        else:
            ate = float("nan")
        p, s = _photometric_scores(report, run_cfg, input_spec)
        rows.append((v, ate, p, s))
    lines = ["value,ate_rmse_cm,psnr_db,ssim"]
    for v, ate, p, s in rows:
        lines.append(f"{v:g},{ate:.6f},{p:.6f},{s:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------- parser


def _add_config_flags(p, tracker: bool = True) -> None:
    p.add_argument("--config", metavar="YAML", help="settings file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one setting (repeatable)")
    p.add_argument("--seed", type=int, help="override pipeline.seed")
    if tracker:
        p.add_argument("--tracker", choices=sorted(TRACKER_FLAGS),
                       help="pose tracking mode")


def _build_parser() -> _Parser:
    p = _Parser(prog="splatstream",
                description="Online tracking and mapping with an isotropic "
                            "Gaussian map.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND",
                           parser_class=_Parser)

    run_p = sub.add_parser("run", help="track and map an input sequence")
    run_p.add_argument("--input", required=True, metavar="tum:DIR|synth:SPEC")
    run_p.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(run_p)
    run_p.set_defaults(func=cmd_run)

    synth_p = sub.add_parser("synth",
                             help="materialize a synthetic sequence to disk")
    synth_p.add_argument("--spec", metavar="KIND[,KEY=VALUE...]", default="")
    synth_p.add_argument("--frames", type=int, metavar="N")
    synth_p.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(synth_p, tracker=False)
    synth_p.set_defaults(func=cmd_synth)

    eval_p = sub.add_parser("eval", help="score estimates against references")
    eval_p.add_argument("--est", required=True, metavar="PATH")
    eval_p.add_argument("--gt", required=True, metavar="PATH")
    eval_p.add_argument("--metric", choices=["ate", "psnr", "ssim",
                                             "depthl1"], default="ate")
    eval_p.set_defaults(func=cmd_eval)

    render_p = sub.add_parser("render", help="render a saved map at a pose")
    render_p.add_argument("--map", required=True, metavar="PLY")
    render_p.add_argument("--pose", required=True, metavar="LINE")
    render_p.add_argument("--out", required=True, metavar="PNG")
    render_p.set_defaults(func=cmd_render)

    sweep_p = sub.add_parser("sweep",
                             help="rerun over one parameter, emit a CSV")
    sweep_p.add_argument("--param", required=True,
                         choices=sorted(_SWEEP_KEYS))
    sweep_p.add_argument("--values", required=True, metavar="V1,V2,...")
    sweep_p.add_argument("--input", metavar="tum:DIR|synth:SPEC")
    sweep_p.add_argument("--out", metavar="CSV")
    _add_config_flags(sweep_p)
    sweep_p.set_defaults(func=cmd_sweep)

    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except _IO_ERRORS as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except _NUMERIC_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
