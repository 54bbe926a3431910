"""Command-line front end: simulate, segment, eval, sensitivity, render."""
from __future__ import annotations

import argparse
import json
import os
import sys
import typing
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FlowFormatError, MotionBitsError
from .evaluate import MetricsReport, default_boundary_tol, score_scene
from .flowio import (FLOW_BWD_DIR, FLOW_FWD_DIR, MASK_DIR, _atomic_write_bytes, frame_path,
                     read_flow, read_labels, write_labels)
from .pipeline import MotionBitsSegmenter, PipelineConfig
from .render import (draw_twist_arrows, flow_to_color, gray_background, overlay_labels, save_png)
from .scene import SCENE_FILE, SamplerParams, load_scene_spec, sample_scene, write_scene
from .sensitivity import PRESETS, monte_carlo_sensitivity, preset

CONFIG_ENV = "MOTIONBITS_CONFIG"
CONFIG_FILE = "config.json"

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVALID = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_json(path, obj):
    _atomic_write_bytes(path, _dump(obj).encode())


def _echo_config(out, obj):
    _write_json(Path(out) / CONFIG_FILE, obj)


def _require_seed(args):
    if os.environ.get("CI") and getattr(args, "seed", None) is None:
        raise UsageError("--seed is required when CI is set")


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args):
    _require_seed(args)
    if args.spec:
        spec = load_scene_spec(args.spec)
        echo = {"spec": str(args.spec)}
    else:
        params = SamplerParams(width=args.width, height=args.height, frames=args.frames,
                               bodies=(args.min_bodies, args.max_bodies), noise_sigma=args.noise)
        seed = 0 if args.seed is None else args.seed
        spec = sample_scene(seed, params)
        echo = {"seed": seed, "sampler": {f.name: getattr(params, f.name) for f in fields(params)}}
    write_scene(spec, args.out)
    _echo_config(args.out, echo)
    print(f"wrote {spec.frames} frames with {len(spec.bodies)} bodies to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# segment


def _config_flag(name):
    return "--" + name.replace("_", "-")


def _add_config_flags(p):
    hints = typing.get_type_hints(PipelineConfig)
    for f in fields(PipelineConfig):
        hint = hints[f.name]
        args = typing.get_args(hint)
        base = next((a for a in args if a is not type(None)), hint) if args else hint
        if base is bool:
            p.add_argument(_config_flag(f.name), dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(_config_flag(f.name), dest=f.name, type=base, default=None,
                           help=f"default {f.default!r}")


def resolve_config(args):
    path = args.config or os.environ.get(CONFIG_ENV)
    cfg = PipelineConfig.load(path) if path else PipelineConfig()
    return cfg.override(**{f.name: getattr(args, f.name, None) for f in fields(PipelineConfig)})


def _frame_count(scene):
    if (scene / SCENE_FILE).exists():
        return int(json.loads((scene / SCENE_FILE).read_text())["frames"])
    idx = [int(p.stem) for d in (FLOW_BWD_DIR, FLOW_FWD_DIR) for p in (scene / d).glob("*.flo")
           if p.stem.isdigit()]
    if not idx:
        raise FileNotFoundError(f"{scene}: no flow files found")
    return max(idx) + 1


def _need(path, what, t):
    if not path.exists():
        raise FileNotFoundError(f"missing {what} flow for frame {t}: {path}")
    return read_flow(path)


def cmd_segment(args):
    _require_seed(args)
    cfg = resolve_config(args)
    scene, out = Path(args.scene), Path(args.out)
    if not scene.is_dir():
        raise FileNotFoundError(f"scene directory not found: {scene}")
    T = _frame_count(scene) if args.frames is None else args.frames
    _echo_config(out, cfg.to_dict())
    seg = MotionBitsSegmenter(cfg)
    for t in range(1, T):
        fb = _need(frame_path(scene, FLOW_BWD_DIR, t), "backward", t)
        ff = _need(frame_path(scene, FLOW_FWD_DIR, t - 1), "forward", t - 1)
        res = seg.step(fb, ff)
        write_labels(res.labels, frame_path(out, MASK_DIR, t))
        side = frame_path(out, MASK_DIR, t).with_suffix(".json")
        _atomic_write_bytes(side, (json.dumps(res.sidecar(args.timing), sort_keys=True) + "\n").encode())
        if args.verbose:
            print(f"frame {t}: {len(res.sidecar()['motionbits'])} MotionBits", file=sys.stderr)
    print(f"segmented {T - 1} frames into {out / MASK_DIR}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _mask_dir(d):
    d = Path(d)
    return d / MASK_DIR if (d / MASK_DIR).is_dir() else d


def _last_frame(d):
    idx = sorted(int(p.stem) for p in d.glob("*.png") if p.stem.isdigit())
    if not idx:
        raise FileNotFoundError(f"no label maps in {d}")
    return idx[-1]


def _scene_pairs(pred, gt):
    pred, gt = Path(pred), Path(gt)
    if not gt.is_dir():
        raise FileNotFoundError(f"ground-truth directory not found: {gt}")
    if not pred.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred}")
    subs = sorted(p for p in gt.iterdir() if p.is_dir() and (p / MASK_DIR).is_dir())
    if subs and not (gt / MASK_DIR).is_dir():
        return [(s.name, _mask_dir(pred / s.name), s / MASK_DIR) for s in subs]
    return [(gt.name or "scene", _mask_dir(pred), _mask_dir(gt))]


def cmd_eval(args):
    scores, tol = {}, args.tol
    for name, pdir, gdir in _scene_pairs(args.pred, args.gt):
        t = _last_frame(gdir) if args.frame is None else args.frame
        gt = read_labels(gdir / f"{t:05d}.png")
        ppath = pdir / f"{t:05d}.png"
        if not ppath.exists():
            raise FileNotFoundError(f"missing prediction for scene {name} frame {t}: {ppath}")
        pred = read_labels(ppath)
        tol_s = default_boundary_tol(gt.shape) if tol is None else tol
        scores[name] = score_scene(pred, gt, tol_s)
    report = MetricsReport.from_scores(scores, args.population, tol)
    out = Path(args.out)
    _echo_config(out, {"pred": str(args.pred), "gt": str(args.gt), "tol": tol,
                       "population": args.population, "frame": args.frame})
    _atomic_write_bytes(out / "metrics.json", report.to_json().encode())
    _atomic_write_bytes(out / "metrics.csv", report.to_csv().encode())
    sys.stdout.write(report.to_csv())
    return EXIT_OK


# ---------------------------------------------------------------------------
# sensitivity


def cmd_sensitivity(args):
    _require_seed(args)
    cfg = preset(args.preset, trials=args.trials, seed=args.seed, mode=args.mode,
                 angular_ratio=args.angular_ratio, separation=args.separation)
    summary = monte_carlo_sensitivity(cfg)
    out = Path(args.out)
    _echo_config(out, cfg.to_dict())
    _write_json(out / "sensitivity.json", summary.to_dict())
    if args.histogram:
        _atomic_write_bytes(out / "histogram.csv", summary.histogram_csv(args.bins).encode())
    print(f"{args.preset}: {summary.mean_pct:.3f}% +- {summary.std_pct:.3f}% "
          f"over {summary.trials} trials ({summary.resampled} resampled)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# render


def _background(scene, t, shape):
    for kind in (FLOW_BWD_DIR, FLOW_FWD_DIR):
        p = frame_path(scene, kind, t)
        if p.exists():
            return flow_to_color(read_flow(p))
    return gray_background(*shape)


def cmd_render(args):
    scene, masks, out = Path(args.scene), _mask_dir(args.masks), Path(args.out)
    if not masks.is_dir():
        raise FileNotFoundError(f"mask directory not found: {masks}")
    frames = sorted(int(p.stem) for p in masks.glob("*.png") if p.stem.isdigit())
    _echo_config(out, {"scene": str(args.scene), "masks": str(args.masks), "alpha": args.alpha,
                       "arrow_scale": args.arrow_scale, "stride": args.stride})
    for t in frames:
        labels = read_labels(masks / f"{t:05d}.png")
        bg = _background(scene, t, labels.shape)
        save_png(overlay_labels(bg, labels, args.alpha), out / "overlay" / f"{t:05d}.png")
        side = masks / f"{t:05d}.json"
        if side.exists():
            nodes = json.loads(side.read_text())["nodes"]
            img = draw_twist_arrows(bg, np.array(nodes["positions"]), np.array(nodes["twists"]),
                                    np.array(nodes["cluster"]), args.arrow_scale, args.stride)
            save_png(img, out / "twists" / f"{t:05d}.png")
    print(f"rendered {len(frames)} frames to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="motionbits", description="Motion-based rigid-body segmentation toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic scene with exact flows and masks")
    s.add_argument("--out", required=True)
    s.add_argument("--spec", help="JSON scene description; otherwise a random scene is sampled")
    s.add_argument("--seed", type=int)
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--height", type=int, default=320)
    s.add_argument("--frames", type=int, default=10)
    s.add_argument("--min-bodies", type=int, default=1)
    s.add_argument("--max-bodies", type=int, default=5)
    s.add_argument("--noise", type=float, default=0.0, help="flow noise sigma in pixels")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("segment", help="run online MotionBits segmentation over a scene")
    g.add_argument("scene")
    g.add_argument("--out", required=True)
    g.add_argument("--config", help=f"JSON config (default from ${CONFIG_ENV})")
    g.add_argument("--frames", type=int, help="number of frames to process")
    g.add_argument("--timing", action="store_true", help="include wall-clock timing in sidecars")
    g.add_argument("-v", "--verbose", action="store_true")
    _add_config_flags(g)
    g.set_defaults(func=cmd_segment)

    e = sub.add_parser("eval", help="score predicted masks against ground truth")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("--out", required=True)
    e.add_argument("--tol", type=float, help="boundary tolerance in pixels (default 0.8%% of the diagonal)")
    e.add_argument("--population", choices=("gt", "union"), default="gt")
    e.add_argument("--frame", type=int, help="frame to score (default: last GT frame)")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("sensitivity", help="Monte Carlo check of the planar motion model")
    m.add_argument("--preset", choices=sorted(PRESETS), default="tabletop")
    m.add_argument("--trials", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--mode", choices=("direct", "analytic"))
    m.add_argument("--angular-ratio", type=float)
    m.add_argument("--separation", type=float, help="point separation in metres")
    m.add_argument("--histogram", action="store_true")
    m.add_argument("--bins", type=int, default=50)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_sensitivity)

    r = sub.add_parser("render", help="draw mask overlays and node twist arrows")
    r.add_argument("scene")
    r.add_argument("masks")
    r.add_argument("--out", required=True)
    r.add_argument("--alpha", type=float, default=0.55)
    r.add_argument("--arrow-scale", type=float, default=3.0)
    r.add_argument("--stride", type=int, default=7)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"motionbits: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FlowFormatError, OSError) as exc:
        print(f"motionbits: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (MotionBitsError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"motionbits: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
