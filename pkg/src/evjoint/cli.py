"""Command-line interface: simulate, estimate, evaluate and render.

Data goes to files; diagnostics go to stderr. The exit code is 0 on success,
2 on usage errors and 1 on runtime errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext

import numpy as np
from threadpoolctl import threadpool_limits

from .events import EventSlice, FixedDuration, parse_policy, read_events, slice_events, write_events
from .losses import DEFAULT_WEIGHTS, TERMS, LossConfig
from .metrics import flow_metrics, fwl, image_metrics, normalize_robust, pearson
from .rasters import flow_wheel, gray, read_raster, write_ppm, write_raster
from .simulator import intensity_at, render_pattern, simulate_events, translating_scene
from .solver import SolverConfig, estimate_sequence
from .warp import FlowField

log = logging.getLogger("evjoint")


# ---------------------------------------------------------------------------
# Argument types


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def _floats(n: int):
    def parse(text: str) -> tuple[float, ...]:
        try:
            vals = tuple(float(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}") from None
        if len(vals) != n or not all(np.isfinite(vals)):
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated finite numbers, got {text!r}")
        return vals
    return parse


def _positive(kind):
    def parse(text: str):
        try:
            val = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not val > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
        return val
    return parse


def _weights(text: str) -> tuple[float, ...]:
    vals = _floats(5)(text)
    if any(w < 0 for w in vals):
        raise argparse.ArgumentTypeError("weights must be non-negative")
    return vals


def _policy(text: str):
    try:
        return parse_policy(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args) -> None:
    w, h = args.size
    L0 = render_pattern(args.pattern, h, w, seed=args.seed)
    scene = translating_scene(L0, args.flow, args.duration, args.contrast,
                              refractory=args.refractory, jitter=args.jitter, seed=args.seed)
    events = simulate_events(scene, args.substeps)
    prefix = args.out_prefix
    write_events(events, f"{prefix}events.bin", format="binary")
    write_raster(f"{prefix}flow_gt.evr", scene.flow_gt.dense)
    write_raster(f"{prefix}L_start.evr", intensity_at(scene, 0.0))
    write_raster(f"{prefix}L_end.evr", intensity_at(scene, args.duration))
    log.info("wrote %d events to %sevents.bin", len(events), prefix)


def _slices(events: EventSlice, policy):
    if policy is None:
        policy = FixedDuration(events.duration / 2)
    return slice_events(events, policy)


def cmd_estimate(args) -> None:
    events = read_events(args.events)
    slices = _slices(events, args.slice)
    if len(slices) < 2:
        raise ValueError("insufficient data: slicing produced fewer than two slices")
    loss_cfg = LossConfig(weights=args.weights, contrast=args.contrast, stride=args.stride)
    solver_cfg = SolverConfig(iterations=args.iters, lr=args.lr, seed=args.seed, warm_start=args.warm_start)
    estimates = estimate_sequence(slices, loss_cfg, solver_cfg)
    prefix = args.out_prefix
    for k, est in enumerate(estimates):
        write_raster(f"{prefix}pair{k:03d}_flow_i.evr", est.F_i.dense)
        write_raster(f"{prefix}pair{k:03d}_flow_ip1.evr", est.F_ip1.dense)
        write_raster(f"{prefix}pair{k:03d}_L_i.evr", est.L_i)
        write_raster(f"{prefix}pair{k:03d}_L_ip1.evr", est.L_ip1)
    with open(f"{prefix}trace.txt", "w") as fh:
        fh.write("pair iter total " + " ".join(TERMS) + "\n")
        for k, est in enumerate(estimates):
            for it, row in enumerate(est.trace):
                vals = " ".join(repr(float(row.get(t, 0.0))) for t in ("total", *TERMS))
                fh.write(f"{k} {it} {vals}\n")
    log.info("estimated %d pair(s); final loss of last pair %.6g", len(estimates), estimates[-1].final_loss)


def _single(raster: np.ndarray, what: str) -> np.ndarray:
    if raster.shape[0] != 1:
        raise ValueError(f"{what} raster must have one channel, got {raster.shape[0]}")
    return raster[0].astype(np.float64)


def _flow(raster: np.ndarray, what: str) -> np.ndarray:
    if raster.shape[0] != 2:
        raise ValueError(f"{what} raster must have two channels, got {raster.shape[0]}")
    return raster.astype(np.float64)


def cmd_evaluate(args) -> None:
    if not (args.flow_est or args.intensity_est):
        raise ValueError("nothing to evaluate: give --flow-est and/or --intensity-est")
    events = read_events(args.events) if args.events else None
    mask = None
    if args.mask == "events":
        if events is None:
            raise ValueError("--mask events needs --events")
        mask = events.event_count_image() > 0
    report: dict = {}
    if args.flow_est:
        if not args.flow_gt:
            raise ValueError("--flow-est needs --flow-gt")
        est = _flow(read_raster(args.flow_est), "estimated flow")
        gt = _flow(read_raster(args.flow_gt), "ground-truth flow") * args.gt_scale
        if est.shape != gt.shape:
            raise ValueError(f"shape mismatch: estimate {est.shape[1:]} vs ground truth {gt.shape[1:]}")
        report.update(flow_metrics(est, gt, mask).as_dict())
        if events is not None:
            if events.shape != est.shape[1:]:
                raise ValueError("events and flow rasters have different sizes")
            report["fwl"] = fwl(events, FlowField.from_dense(est))
    if args.intensity_est:
        if not args.intensity_gt:
            raise ValueError("--intensity-est needs --intensity-gt")
        L_est = _single(read_raster(args.intensity_est), "estimated intensity")
        L_gt = _single(read_raster(args.intensity_gt), "ground-truth intensity")
        if L_est.shape != L_gt.shape:
            raise ValueError(f"shape mismatch: estimate {L_est.shape} vs ground truth {L_gt.shape}")
        report.update(image_metrics(normalize_robust(L_est), normalize_robust(L_gt)).as_dict())
        report["corr"] = pearson(L_est, L_gt, mask)
    lines = "".join(f"{k}={v!r}\n" for k, v in report.items())
    sys.stdout.write(lines)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(lines)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")


def cmd_render(args) -> None:
    raster = read_raster(args.raster)
    if args.mode == "flow_wheel":
        img = flow_wheel(_flow(raster, "flow"), args.max_mag)
    else:
        if not 0 <= args.channel < raster.shape[0]:
            raise ValueError(f"channel {args.channel} out of range for {raster.shape[0]} channel(s)")
        img = gray(raster[args.channel].astype(np.float64))
    write_ppm(args.out, img)


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evjoint", description="Joint optical flow and log-intensity "
                                     "estimation from event camera data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--threads", type=_positive(int), default=None,
                        help="pin the numeric library thread count (for bit-stable output)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate events from a translating pattern")
    p.add_argument("--pattern", default="checker:8",
                   help="checker:<period> | noise:<scale>[:<seed>] | step:<position>[:<height>]")
    p.add_argument("--size", type=_size, default=(64, 64), help="sensor size WxH (default 64x64)")
    p.add_argument("--flow", type=_floats(2), default=(3.0, 1.0),
                   help="displacement u,v in pixels over the whole duration (default 3,1)")
    p.add_argument("--duration", type=_positive(float), default=0.1, help="seconds (default 0.1)")
    p.add_argument("--contrast", type=_positive(float), default=0.2, help="contrast threshold C (default 0.2)")
    p.add_argument("--substeps", type=int, default=None, help="time steps (default: 0.05 px of motion per step)")
    p.add_argument("--refractory", type=float, default=0.0, help="refractory period in seconds (default 0)")
    p.add_argument("--jitter", type=float, default=0.0, help="relative per-pixel threshold jitter (default 0)")
    p.add_argument("--seed", type=int, default=0, help="pattern and jitter seed (default 0)")
    p.add_argument("--out-prefix", required=True,
                   help="writes <prefix>events.bin, flow_gt.evr, L_start.evr and L_end.evr")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="jointly estimate flow and log intensity for consecutive slices")
    p.add_argument("--events", required=True, help="event file (text or binary)")
    p.add_argument("--slice", type=_policy, default=None,
                   help="fixed_duration:<seconds> | fixed_count:<n> (default: two equal halves)")
    p.add_argument("--weights", type=_weights, default=DEFAULT_WEIGHTS,
                   help="loss weights phe,cmax,tv_flow,tv_intensity,tc (default 30,1,10,0.001,1)")
    p.add_argument("--contrast", type=_positive(float), default=0.2, help="contrast threshold C (default 0.2)")
    p.add_argument("--iters", type=_positive(int), default=800, help="iterations per pair (default 800)")
    p.add_argument("--lr", type=_positive(float), default=0.05, help="step size (default 0.05)")
    p.add_argument("--stride", type=_positive(int), default=16, help="coarse flow grid stride (default 16)")
    p.add_argument("--seed", type=int, default=0, help="solver seed (default 0)")
    p.add_argument("--warm-start", action="store_true", help="initialize each pair from the previous one")
    p.add_argument("--out-prefix", required=True,
                   help="writes <prefix>pairNNN_{flow_i,flow_ip1,L_i,L_ip1}.evr and <prefix>trace.txt")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="compare estimates with ground truth")
    p.add_argument("--flow-est", help="estimated flow raster (2 channels)")
    p.add_argument("--flow-gt", help="ground-truth flow raster (2 channels)")
    p.add_argument("--gt-scale", type=float, default=1.0,
                   help="factor applied to the ground-truth flow, e.g. slice/simulation duration (default 1)")
    p.add_argument("--intensity-est", help="estimated log-intensity raster (1 channel)")
    p.add_argument("--intensity-gt", help="ground-truth log-intensity raster (1 channel)")
    p.add_argument("--events", help="event slice for the flow warp loss and the event mask")
    p.add_argument("--mask", choices=("all", "events"), default="all",
                   help="pixels to evaluate: all, or those with at least one event (default all)")
    p.add_argument("--report", help="also write the key=value lines to this file")
    p.add_argument("--json", help="write the metrics as JSON to this file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="render a raster as a portable pixmap")
    p.add_argument("--raster", required=True, help="input EVR1 raster")
    p.add_argument("--mode", choices=("flow_wheel", "gray"), required=True)
    p.add_argument("--max-mag", type=_positive(float), default=None,
                   help="flow magnitude at full saturation (default: 99th percentile)")
    p.add_argument("--channel", type=int, default=0, help="channel for gray mode (default 0)")
    p.add_argument("--out", required=True, help="output .ppm (flow_wheel) or .pgm (gray)")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s: %(message)s")
    limits = threadpool_limits(limits=args.threads) if args.threads else nullcontext()
    try:
        with limits:
            args.func(args)
    except (ValueError, OSError) as exc:
        print(f"evjoint {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
