"""Command-line entry point.

Subcommands mirror the pipeline stages so each one is independently
exercisable: simulate, filter, slice, detect, corners, depth, avoid,
pipeline, bench. Chaining the stage subcommands over intermediate files
produces byte-identical JSON artifacts to one `pipeline` run with the same
flags (use --slice-fixed: adaptive slicing needs the detector's feedback, so
the slicing-only subcommand always runs with a fixed N).

Exit codes: 0 success, 2 usage error, 3 missing input, 4 parse/ordering
error in an input file, 5 processing failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import eventio, render
from .avoidance import AvoidanceConfig
from .corners import CornerParams, build_patch, eharris_score, lc_score
from .errors import EvcasError
from .events import Event, SensorGeometry, TimestampSurface
from .filtering import FilterParams, filter_stream
from .hough import HoughConfig
from .metrics import evaluate
from .pipeline import (
    STAGE_ORDER,
    ClosedLoopRunner,
    DepthParams,
    PipelineConfig,
    PipelineEngine,
    PoseTrack,
    TrackingParams,
    config_from_overrides,
    run_pipeline,
)
from .simulate import GroundTruth, SceneSpec, generate, load_scenario, scenario_names
from .slicing import SlicePolicy, slice_stream

log = logging.getLogger("evcas")

EXIT_MISSING_INPUT = 3


def _add_io_args(p: argparse.ArgumentParser, needs_in: bool = True):
    if needs_in:
        p.add_argument("--in", dest="infile", required=True, help="input event stream")
    p.add_argument("--out", dest="outdir", required=True, help="output directory")
    p.add_argument("--format", choices=["text", "binary"], default="binary")
    p.add_argument(
        "--time-unit",
        choices=["seconds", "microseconds"],
        default="seconds",
        help="timestamp unit for the text format",
    )
    p.add_argument("--tolerance-us", type=int, default=0, help="allowed timestamp jitter")


def _add_filter_args(p):
    g = p.add_argument_group("filter")
    g.add_argument("--window", type=int, default=9)
    g.add_argument("--kmin", type=int, default=2)
    g.add_argument("--dtmax-us", type=int, default=5000)


def _add_slice_args(p):
    g = p.add_argument_group("slicing")
    g.add_argument("--slice-n", type=int, default=2000)
    g.add_argument("--slice-nmin", type=int, default=500)
    g.add_argument("--slice-nmax", type=int, default=20000)
    g.add_argument("--slice-dtarget", type=float, default=3.0)
    g.add_argument("--slice-fixed", action="store_true", help="disable adaptation")


def _add_hough_args(p):
    g = p.add_argument_group("detection")
    g.add_argument("--hough-triples", type=int, default=500)
    g.add_argument(
        "--hough-bins",
        type=float,
        nargs=3,
        metavar=("THETA", "PHI", "RHO"),
        default=[0.05, 0.05, 0.5],
    )
    g.add_argument("--hough-eps", type=float, default=1.0)
    g.add_argument("--hough-minvotes", type=int, default=50)
    g.add_argument("--hough-timescale", type=float, default=1000.0)
    g.add_argument("--max-objects", type=int, default=5)


def _add_corner_args(p):
    g = p.add_argument_group("corners")
    g.add_argument("--corner-threshold", type=float, default=8.0)
    g.add_argument("--corner-per-polarity", action="store_true")


def _add_depth_args(p):
    g = p.add_argument_group("depth")
    g.add_argument("--poses", help="pose trajectory (JSON lines)")
    g.add_argument("--intrinsics", help="sensor intrinsics (JSON)")
    g.add_argument("--depth-stride-s", type=float, default=0.45)
    g.add_argument("--depth-max-pixel-dist", type=float, default=14.0)
    g.add_argument("--depth-max-dt-us", type=int, default=700_000)
    g.add_argument("--min-ray-angle-deg", type=float, default=0.5)


def _add_avoid_args(p):
    g = p.add_argument_group("avoidance")
    g.add_argument("--rc", type=float, default=1.5)
    g.add_argument("--poi-tie-eps", type=float, default=0.1)
    g.add_argument("--horizon", type=float, default=3.0)
    g.add_argument("--max-lateral-rate", type=float, default=2.0)
    g.add_argument("--gate-px", type=float, default=20.0)
    g.add_argument("--min-kinematics-dt-s", type=float, default=0.0)


def _geometry(args) -> SensorGeometry:
    if getattr(args, "intrinsics", None):
        return eventio.read_geometry(args.intrinsics)
    return SensorGeometry()


def _config(args, stages: tuple[str, ...]) -> PipelineConfig:
    n = args.slice_n if hasattr(args, "slice_n") else 2000
    return PipelineConfig(
        stages=stages,
        filter_params=FilterParams(
            window=args.window, k_min=args.kmin, dt_max_us=args.dtmax_us
        )
        if hasattr(args, "window")
        else FilterParams(),
        slice_policy=SlicePolicy(
            n_current=n,
            n_min=min(args.slice_nmin, n),
            n_max=max(args.slice_nmax, n),
            d_target=args.slice_dtarget,
            n_default=n,
        )
        if hasattr(args, "slice_n")
        else SlicePolicy(),
        adaptive_slicing=not getattr(args, "slice_fixed", False),
        hough=HoughConfig(
            n_triples=args.hough_triples,
            bin_theta=args.hough_bins[0],
            bin_phi=args.hough_bins[1],
            bin_rho=args.hough_bins[2],
            inlier_eps=args.hough_eps,
            min_votes=args.hough_minvotes,
            time_scale=args.hough_timescale,
            max_objects=args.max_objects,
        )
        if hasattr(args, "hough_triples")
        else HoughConfig(),
        corners=CornerParams(
            score_threshold=args.corner_threshold,
            per_polarity=args.corner_per_polarity,
        )
        if hasattr(args, "corner_threshold")
        else CornerParams(),
        depth=DepthParams(
            stride_s=args.depth_stride_s,
            max_pixel_dist=args.depth_max_pixel_dist,
            max_dt_us=args.depth_max_dt_us,
            min_ray_angle_deg=args.min_ray_angle_deg,
        )
        if hasattr(args, "depth_stride_s")
        else DepthParams(),
        tracking=TrackingParams(
            gate_px=args.gate_px, min_kinematics_dt_s=args.min_kinematics_dt_s
        )
        if hasattr(args, "gate_px")
        else TrackingParams(),
        avoidance=AvoidanceConfig(
            r_c=args.rc,
            poi_tie_eps=args.poi_tie_eps,
            horizon=args.horizon,
            max_lateral_rate=args.max_lateral_rate,
        )
        if hasattr(args, "rc")
        else AvoidanceConfig(),
        geometry=_geometry(args),
        seed=getattr(args, "seed", 0),
    )


def _read_events(args) -> np.ndarray:
    if not os.path.exists(args.infile):
        raise FileNotFoundError(args.infile)
    return eventio.read_events(
        args.infile, fmt=args.format, time_unit=args.time_unit, tolerance_us=args.tolerance_us
    )


def _write_jsonl(path: str, records) -> None:
    with open(path, "w", encoding="ascii") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def _objects_records(engine: PipelineEngine):
    for cycle in engine.cycles:
        for obj in cycle.objects:
            yield {
                "slice_index": cycle.slice_index,
                "id": obj.id,
                "plane": {
                    "theta": obj.plane.theta,
                    "phi": obj.plane.phi,
                    "rho": obj.plane.rho,
                },
                "votes": obj.plane.votes,
                "centroid": list(obj.centroid),
                "bbox": list(obj.bbox),
                "edges": list(obj.edges),
            }


def _corner_records(engine: PipelineEngine):
    for c in engine.outputs.corners:
        yield {"t": c.t, "x": c.x, "y": c.y, "score": c.score}


def _range_records(engine: PipelineEngine):
    for r in engine.outputs.ranges:
        yield {"t_us": r.t_us, "object_bbox": list(r.bbox), "rho": r.rho}


def _slice_records(engine: PipelineEngine):
    for cycle in engine.cycles:
        s = cycle.slice_
        yield {
            "slice_index": s.slice_index,
            "t_start": s.t_start,
            "t_end": s.t_end,
            "n": len(s),
            "n_target": s.n_target,
        }


def _write_stage_artifacts(engine: PipelineEngine, outdir: str, stages, geometry, fmt):
    os.makedirs(outdir, exist_ok=True)
    if "slice" in stages:
        _write_jsonl(os.path.join(outdir, "slices.jsonl"), _slice_records(engine))
        frame_dir = os.path.join(outdir, "frames")
        os.makedirs(frame_dir, exist_ok=True)
        for cycle in engine.cycles:
            img = render.render_event_frame(cycle.slice_.events, geometry.width, geometry.height)
            eventio.write_pgm(img, os.path.join(frame_dir, f"frame_{cycle.slice_index:05d}.pgm"))
    if "detect" in stages:
        _write_jsonl(os.path.join(outdir, "objects.jsonl"), _objects_records(engine))
    if "corners" in stages:
        _write_jsonl(os.path.join(outdir, "corners.jsonl"), _corner_records(engine))
    if "depth" in stages:
        _write_jsonl(os.path.join(outdir, "ranges.jsonl"), _range_records(engine))
    if "avoid" in stages:
        _write_jsonl(os.path.join(outdir, "decisions.jsonl"), engine.outputs.decisions)


def _pose_track(args) -> PoseTrack | None:
    if getattr(args, "poses", None):
        if not os.path.exists(args.poses):
            raise FileNotFoundError(args.poses)
        return PoseTrack(eventio.read_poses(args.poses))
    return None


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec, overrides = load_scenario(args.scenario, seed=args.seed)
    events, poses, truth = generate(spec)
    os.makedirs(args.outdir, exist_ok=True)
    ext = "evs" if args.format == "binary" else "txt"
    eventio.write_events(
        events,
        os.path.join(args.outdir, f"events.{ext}"),
        fmt=args.format,
        time_unit=args.time_unit,
        width=spec.geometry.width,
        height=spec.geometry.height,
    )
    eventio.write_poses(poses, os.path.join(args.outdir, "poses.jsonl"))
    truth.save(os.path.join(args.outdir, "truth.jsonl"))
    with open(os.path.join(args.outdir, "scenario_used.json"), "w") as f:
        json.dump({"scene": spec.to_dict(), "overrides": overrides}, f, indent=2, sort_keys=True)
    log.info("simulated %d events over %.2fs", len(events), spec.duration)
    print(f"wrote {len(events)} events to {args.outdir}")
    return 0


def cmd_filter(args) -> int:
    events = _read_events(args)
    params = FilterParams(window=args.window, k_min=args.kmin, dt_max_us=args.dtmax_us)
    geometry = _geometry(args)
    kept, discarded = filter_stream(events, params, geometry.width, geometry.height)
    os.makedirs(args.outdir, exist_ok=True)
    ext = "evs" if args.format == "binary" else "txt"
    eventio.write_events(
        kept,
        os.path.join(args.outdir, f"filtered.{ext}"),
        fmt=args.format,
        time_unit=args.time_unit,
        width=geometry.width,
        height=geometry.height,
    )
    stats = {"input": int(len(events)), "kept": int(len(kept)), "discarded": int(discarded)}
    with open(os.path.join(args.outdir, "filter_stats.json"), "w") as f:
        json.dump(stats, f, indent=2, sort_keys=True)
    print(f"kept {len(kept)}/{len(events)} events")
    return 0


def _run_stage_chain(args, stages) -> int:
    events = _read_events(args)
    config = _config(args, stages)
    engine = run_pipeline(events, config, poses=None) if not (
        config.has("depth") or config.has("avoid")
    ) else None
    if engine is None:
        track = _pose_track(args)
        if track is None:
            raise EvcasError("depth/avoid stages need --poses")
        engine = PipelineEngine(config, track)
        engine.process(events)
        engine.finish()
    _write_stage_artifacts(engine, args.outdir, stages, config.geometry, args.format)
    print(f"{len(engine.cycles)} slices processed")
    return 0


def cmd_slice(args) -> int:
    args.slice_fixed = True  # adaptation needs the detector; standalone slicing is fixed-N
    return _run_stage_chain(args, ("slice",))


def cmd_detect(args) -> int:
    return _run_stage_chain(args, ("slice", "detect"))


def cmd_corners(args) -> int:
    if args.corner_compare_eharris:
        return _corner_compare(args)
    return _run_stage_chain(args, ("slice", "corners"))


def _corner_compare(args) -> int:
    """Paired LC / Harris scores per event, CSV t,x,y,S,R."""
    events = _read_events(args)
    geometry = _geometry(args)
    params = CornerParams(
        score_threshold=args.corner_threshold, per_polarity=args.corner_per_polarity
    )
    surface = TimestampSurface(geometry.width, geometry.height)
    surface_off = TimestampSurface(geometry.width, geometry.height) if params.per_polarity else None
    os.makedirs(args.outdir, exist_ok=True)
    out_path = os.path.join(args.outdir, "corner_scores.csv")
    with open(out_path, "w", encoding="ascii") as f:
        f.write("t,x,y,S,R\n")
        for t, x, y, p in zip(events["t"], events["x"], events["y"], events["p"]):
            e = Event(int(t), int(x), int(y), int(p))
            surf = surface_off if (surface_off is not None and e.p == 0) else surface
            surf.update(e)
            patch = build_patch(e, surf, params)
            s = lc_score(patch)
            r = eharris_score(patch, params.eharris_k)
            f.write(f"{e.t},{e.x},{e.y},{s},{r}\n")
    print(f"wrote paired scores for {len(events)} events to {out_path}")
    return 0


def cmd_depth(args) -> int:
    return _run_stage_chain(args, ("slice", "detect", "corners", "depth"))


def cmd_avoid(args) -> int:
    return _run_stage_chain(args, ("slice", "detect", "corners", "depth", "avoid"))


def cmd_pipeline(args) -> int:
    if args.scenario and args.closed_loop:
        spec, overrides = load_scenario(args.scenario, seed=args.seed)
        config = config_from_overrides(overrides, geometry=spec.geometry, seed=args.seed)
        runner = ClosedLoopRunner(spec, config)
        outputs, truth, engine = runner.run()
        os.makedirs(args.outdir, exist_ok=True)
        _write_stage_artifacts(engine, args.outdir, config.stages, config.geometry, args.format)
        report = evaluate(outputs, truth)
        with open(os.path.join(args.outdir, "metrics.json"), "w") as f:
            f.write(report.to_json() + "\n")
        with open(os.path.join(args.outdir, "metrics.txt"), "w") as f:
            f.write(report.table() + "\n")
        print(report.table())
        return 0

    stages = STAGE_ORDER[: STAGE_ORDER.index(args.through) + 1] if args.through else STAGE_ORDER
    if args.scenario:
        spec, overrides = load_scenario(args.scenario, seed=args.seed)
        events, poses, truth = generate(spec)
        config = config_from_overrides(
            overrides, stages=stages, geometry=spec.geometry, seed=args.seed
        )
    else:
        events = _read_events(args)
        truth = GroundTruth.load(args.truth) if args.truth else None
        config = _config(args, stages)
        poses = eventio.read_poses(args.poses) if args.poses else None
    if (config.has("depth") or config.has("avoid")) and poses is None:
        raise EvcasError("depth/avoid stages need --poses (or --scenario)")
    engine = run_pipeline(events, config, poses=poses)
    os.makedirs(args.outdir, exist_ok=True)
    ext = "evs" if args.format == "binary" else "txt"
    if config.has("filter"):
        kept = events[engine.outputs.kept_mask]
        eventio.write_events(
            kept,
            os.path.join(args.outdir, f"filtered.{ext}"),
            fmt=args.format,
            time_unit=args.time_unit,
            width=config.geometry.width,
            height=config.geometry.height,
        )
    _write_stage_artifacts(engine, args.outdir, config.stages, config.geometry, args.format)
    if args.scenario or args.truth:
        if args.scenario:
            pass  # truth already in hand
        report = evaluate(engine.outputs, truth)
        with open(os.path.join(args.outdir, "metrics.json"), "w") as f:
            f.write(report.to_json() + "\n")
        with open(os.path.join(args.outdir, "metrics.txt"), "w") as f:
            f.write(report.table() + "\n")
        print(report.table())
    else:
        print(f"{len(engine.cycles)} slices processed")
    return 0


def cmd_bench(args) -> int:
    if args.scenario:
        spec, _ = load_scenario(args.scenario, seed=args.seed)
        events, _, _ = generate(spec)
    else:
        events = _read_events(args)
    if len(events) < 1_000_000:
        raise EvcasError(
            f"bench needs at least 1,000,000 events, got {len(events)}; "
            "use a longer recording or the e_noise_only scenario"
        )
    geometry = _geometry(args)
    params = FilterParams(window=args.window, k_min=args.kmin, dt_max_us=args.dtmax_us)
    results = {}

    # Warm-up compiles the kernel; timing starts on the second pass.
    filter_stream(events[:10_000], params, geometry.width, geometry.height)
    t0 = time.perf_counter()
    kept, _ = filter_stream(events, params, geometry.width, geometry.height)
    dt = time.perf_counter() - t0
    results["filter"] = {"events": int(len(events)), "seconds": dt, "events_per_second": len(events) / dt}

    t0 = time.perf_counter()
    slices = slice_stream(kept, SlicePolicy())
    dt = time.perf_counter() - t0
    results["slice"] = {"events": int(len(kept)), "seconds": dt, "events_per_second": len(kept) / dt if dt > 0 else float("inf")}
    results["slices_emitted"] = len(slices)

    os.makedirs(args.outdir, exist_ok=True)
    with open(os.path.join(args.outdir, "bench.json"), "w") as f:
        json.dump(results, f, indent=2, sort_keys=True)
    for stage in ("filter", "slice"):
        r = results[stage]
        print(f"{stage}: {r['events_per_second']:,.0f} events/s ({r['events']} events in {r['seconds']:.3f}s)")
    return 0


def cmd_scenarios(args) -> int:
    for name in scenario_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evcas",
        description="Event-camera perception and collision-avoidance pipeline",
    )
    parser.add_argument("--log-level", default="warning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scene")
    p.add_argument("--scenario", required=True, help="bundled name or JSON path")
    p.add_argument("--seed", type=int, default=0)
    _add_io_args(p, needs_in=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("filter", help="background-activity noise filter")
    _add_io_args(p)
    _add_filter_args(p)
    p.add_argument("--intrinsics")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("slice", help="count-based slicing (fixed N standalone)")
    _add_io_args(p)
    _add_slice_args(p)
    p.add_argument("--intrinsics")
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("detect", help="plane-voting object detection")
    _add_io_args(p)
    _add_slice_args(p)
    _add_hough_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intrinsics")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("corners", help="corner detection")
    _add_io_args(p)
    _add_slice_args(p)
    _add_corner_args(p)
    p.add_argument("--corner-compare-eharris", action="store_true")
    p.add_argument("--intrinsics")
    p.set_defaults(func=cmd_corners)

    p = sub.add_parser("depth", help="corner triangulation and object ranges")
    _add_io_args(p)
    _add_slice_args(p)
    _add_hough_args(p)
    _add_corner_args(p)
    _add_depth_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("avoid", help="full chain through avoidance decisions")
    _add_io_args(p)
    _add_slice_args(p)
    _add_hough_args(p)
    _add_corner_args(p)
    _add_depth_args(p)
    _add_avoid_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_avoid)

    p = sub.add_parser("pipeline", help="compose stages over one stream")
    p.add_argument("--in", dest="infile", help="input event stream")
    p.add_argument("--out", dest="outdir", required=True)
    p.add_argument("--format", choices=["text", "binary"], default="binary")
    p.add_argument("--time-unit", choices=["seconds", "microseconds"], default="seconds")
    p.add_argument("--tolerance-us", type=int, default=0)
    p.add_argument("--scenario", help="simulate this scenario instead of reading --in")
    p.add_argument("--closed-loop", action="store_true", help="let decisions steer the vehicle")
    p.add_argument("--truth", help="ground-truth JSONL for metrics")
    p.add_argument("--through", choices=STAGE_ORDER, help="run stages up to this one")
    p.add_argument("--all", action="store_true", help="run every stage (default)")
    p.add_argument("--seed", type=int, default=0)
    _add_filter_args(p)
    _add_slice_args(p)
    _add_hough_args(p)
    _add_corner_args(p)
    p.add_argument("--corner-compare-eharris", action="store_true", help=argparse.SUPPRESS)
    _add_depth_args(p)
    _add_avoid_args(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("bench", help="per-stage throughput on a large stream")
    p.add_argument("--in", dest="infile", help="input event stream (>= 1e6 events)")
    p.add_argument("--scenario", help="generate the workload instead")
    p.add_argument("--out", dest="outdir", required=True)
    p.add_argument("--format", choices=["text", "binary"], default="binary")
    p.add_argument("--time-unit", choices=["seconds", "microseconds"], default="seconds")
    p.add_argument("--tolerance-us", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    _add_filter_args(p)
    p.add_argument("--intrinsics")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("scenarios", help="list bundled scenarios")
    p.set_defaults(func=cmd_scenarios)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except EvcasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
