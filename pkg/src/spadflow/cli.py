"""Command-line driver: simulate, reconstruct, baseline, evaluate, bench."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baseline import build_histogram, xcorr_depth
from .config import RunConfig, parse_config
from .engine import FrameEvents, init_state, step_frame
from .errors import SpadflowError
from .fileio import (
    EventStreamReader,
    EventStreamWriter,
    TruthReader,
    read_raster,
    write_raster,
    write_truth,
)
from .metrics import (
    FrameMetrics,
    MetricsWriter,
    ci_width_map,
    mean_step_time,
    convergence_summary,
    frame_metrics,
    read_metrics_csv,
    rmse_frame,
)
from .scenes import StaticMaps, scene_eval
from .simulator import sample_frame

log = logging.getLogger("spadflow")

EVENTS_FILE = "events.pev"
TRUTH_FILE = "truth.gtv"
METRICS_FILE = "metrics.csv"
FINAL_RANGE = "final_range.f64"


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.values["seed"] = args.seed
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    spec = cfg.scene()
    sys_cfg = cfg.system
    h, w = spec.dims
    write_truth(out / TRUTH_FILE, spec)
    n_det = 0
    with EventStreamWriter(out / EVENTS_FILE, h, w, sys_cfg.rep_period, sys_cfg.irf_variance) as wr:
        for n in range(spec.frames):
            truth = scene_eval(spec, n)
            if n == 0:
                truth.check_range(sys_cfg.rep_period)
            ev = sample_frame(truth, sys_cfg, cfg["seed"], n + 1)
            wr.write_frame(ev)
            n_det += len(ev)
    print(f"simulated {spec.frames} frames of {h}x{w} pixels, {n_det} detections -> {out}")
    return 0


def _checkpoint(out: Path, grid) -> None:
    tag = f"{grid.frame_index:06d}"
    write_raster(out / f"range_{tag}.f64", grid.mean, frame=grid.frame_index)
    write_raster(out / f"std_{tag}.f64", np.sqrt(grid.variance), frame=grid.frame_index)
    write_raster(out / f"wbar_{tag}.f64", grid.weights, frame=grid.frame_index)


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    params = cfg.filter_params(no_st=args.no_st)
    workers = args.workers or cfg["workers"]
    reader = EventStreamReader(args.events)
    hdr = reader.header
    sys_cfg = cfg.system
    if (hdr.rep_period, hdr.irf_variance) != (sys_cfg.rep_period, sys_cfg.irf_variance):
        log.warning("event header period/IRF (%s, %s) override config (%s, %s)",
                    hdr.rep_period, hdr.irf_variance, sys_cfg.rep_period, sys_cfg.irf_variance)
        sys_cfg = type(sys_cfg)(hdr.rep_period, hdr.irf_variance, sys_cfg.speed_scale, sys_cfg.frame_reps)
    truth = TruthReader(args.truth) if args.truth else None
    if truth is not None:
        th = truth.header
        if (th.height, th.width) != (hdr.height, hdr.width):
            raise SpadflowError(f"events are {hdr.height}x{hdr.width} but truth is {th.height}x{th.width}")
        if th.frame_count < hdr.frame_count:
            raise SpadflowError(f"truth has {th.frame_count} frames, events have {hdr.frame_count}")

    grid = init_state((hdr.height, hdr.width), sys_cfg, params)
    executor = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        with open(out / METRICS_FILE, "w", newline="") as fh, reader:
            mw = MetricsWriter(fh)
            for ev in reader:
                t0 = time.perf_counter()
                grid = step_frame(grid, ev, sys_cfg, params, executor=executor)
                dt = time.perf_counter() - t0
                if truth is not None:
                    gt = truth.frame(ev.frame_index - 1)
                    mw.write(frame_metrics(grid, gt.range_map, gt.signal_frac_map, dt))
                else:
                    ci = float(np.mean(ci_width_map(grid)))
                    mw.write(FrameMetrics(grid.frame_index, float("nan"), ci, float("nan"), dt))
                if args.checkpoint_every and grid.frame_index % args.checkpoint_every == 0:
                    _checkpoint(out, grid)
    finally:
        if executor is not None:
            executor.shutdown()
        if truth is not None:
            truth.close()
    write_raster(out / FINAL_RANGE, grid.mean, frame=grid.frame_index)
    write_raster(out / "final_std.f64", np.sqrt(grid.variance), frame=grid.frame_index)
    write_raster(out / "final_wbar.f64", grid.weights, frame=grid.frame_index)
    print(f"reconstructed {grid.frame_index} frames -> {out}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    n0 = args.batch_size
    with EventStreamReader(args.events) as reader:
        hdr = reader.header
        irf = type(cfg.system)(hdr.rep_period, hdr.irf_variance).irf
        per_pixel: dict[int, list[float]] = defaultdict(list)
        frames_in_batch = 0
        batch = 0
        prev = np.full(hdr.height * hdr.width, np.nan)
        with open(out / "baseline.csv", "w") as fh:
            fh.write("batch,pixel,estimate,carried\n")

            def flush():
                for p in range(hdr.height * hdr.width):
                    toas = per_pixel.get(p)
                    est = xcorr_depth(build_histogram(toas, hdr.rep_period), irf) if toas else None
                    if est is not None:
                        prev[p] = est
                        carried = 0
                    else:
                        carried = 1
                    val = "" if np.isnan(prev[p]) else repr(float(prev[p]))
                    fh.write(f"{batch},{p},{val},{carried}\n")

            for ev in reader:
                for p, t in zip(ev.pixels.tolist(), ev.toas.tolist()):
                    per_pixel[p].append(t)
                frames_in_batch += 1
                if frames_in_batch == n0:
                    flush()
                    per_pixel.clear()
                    frames_in_batch = 0
                    batch += 1
            if frames_in_batch:
                flush()
                batch += 1
    write_raster(out / "baseline_range.f64", prev.reshape(hdr.height, hdr.width), batches=batch)
    print(f"baseline: {batch} batches of {n0} frames -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.out_dir)
    result = {}
    metrics_path = out / METRICS_FILE
    if metrics_path.exists():
        metrics = read_metrics_csv(metrics_path)
        if metrics:
            s = convergence_summary(metrics, args.threshold)
            result.update(frames=len(metrics), first_below=s.first_below, terminal_rmse=s.terminal_rmse,
                          mean_step_time_s=s.mean_step_time, threshold=args.threshold)
    if args.truth:
        with TruthReader(args.truth) as tr:
            gt = tr.frame(tr.header.frame_count - 1)
        for name in (FINAL_RANGE, "baseline_range.f64"):
            p = out / name
            if p.exists():
                est = read_raster(p)
                if est.shape != gt.shape:
                    raise SpadflowError(f"{p} is {est.shape}, truth is {gt.shape}")
                result[f"rmse_{p.stem}"] = rmse_frame(np.nan_to_num(est, nan=0.0), gt.range_map)
    if not result:
        raise SpadflowError(f"nothing to evaluate in {out}")
    (out / "summary.json").write_text(json.dumps(result, indent=2) + "\n")
    for k, v in result.items():
        print(f"{k}: {v}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    sys_cfg = cfg.system
    params = cfg.filter_params(no_st=args.no_st)
    h = w = args.side
    spec = StaticMaps(np.full((h, w), sys_cfg.rep_period / 3), np.full((h, w), 0.5),
                      np.full((h, w), args.detect_prob), args.frames)
    truth = spec.eval(0)
    grid = init_state((h, w), sys_cfg, params)
    workers = args.workers or cfg["workers"]
    executor = ThreadPoolExecutor(workers) if workers > 1 else None
    times = []
    try:
        for n in range(args.frames):
            ev = sample_frame(truth, sys_cfg, cfg["seed"], n + 1)
            t0 = time.perf_counter()
            grid = step_frame(grid, ev, sys_cfg, params, executor=executor)
            times.append(time.perf_counter() - t0)
    finally:
        if executor is not None:
            executor.shutdown()
    mean_t = mean_step_time(times)
    print(f"pixels={h * w} frames={args.frames} workers={workers} "
          f"mean_step_ms={mean_t * 1e3:.3f} frames_per_s={1.0 / mean_t:.1f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spadflow", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--seed", type=int, default=None)
        if out:
            p.add_argument("--out-dir", required=True)

    p = sub.add_parser("simulate", help="generate PEV1 events and GTV1 truth")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="run the online filter over an event file")
    common(p)
    p.add_argument("--events", required=True)
    p.add_argument("--truth")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--no-st", action="store_true", help="independent pixels (self-only prediction)")
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("baseline", help="batch cross-correlation estimates")
    common(p)
    p.add_argument("--events", required=True)
    p.add_argument("--batch-size", type=int, default=100)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="summarize metrics and compare final maps to truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--truth")
    p.add_argument("--threshold", type=float, default=50.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="time step_frame on a synthetic square grid")
    common(p, out=False)
    p.add_argument("--side", type=int, default=100)
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--detect-prob", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--no-st", action="store_true")
    p.set_defaults(func=cmd_bench)
    return ap


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SpadflowError, OSError) as e:
        print(f"spadflow {args.command}: error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
