"""``clipvis`` command line: synth, propagate, link, eval, render, sweep, init-params.

Every failure exits nonzero after printing exactly one line of the form
``clipvis: error: <kind>: <message>`` to stderr.
"""

import argparse
import logging
import os
import sys

import numpy as np

from clipvis import formats, linking, metrics, propagation, synth
from clipvis.masks import ShapeError, binarize

log = logging.getLogger("clipvis")

PALETTE = (255, 223, 191, 159, 127, 95, 63, 31)


class CliError(Exception):
    def __init__(self, kind, message):
        self.kind = kind
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message.replace("\n", " "))


def _int_range(text):
    values = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            values.extend(range(int(lo), int(hi) + 1))
        else:
            values.append(int(part))
    return values


def _read(path, what):
    try:
        return formats.read_text(path)
    except OSError as exc:
        raise CliError("io", f"cannot read {what} {path}: {exc.strerror}") from None


def cmd_synth(args):
    try:
        config = synth.parse_scene_config(_read(args.config, "config"))
    except synth.ConfigError as exc:
        raise CliError("config", f"{args.config}: {exc}") from None
    seed = config.seed if args.seed is None else args.seed
    T = config.half_window if args.half_window is None else args.half_window
    mode = config.mode if args.mode is None else args.mode
    gt, visibility = synth.generate_scene(config)
    tracks = synth.simulate_clip_tracks(
        gt, visibility, config.detector, T, seed=seed, mode=mode, num_categories=config.num_categories
    )
    dims = (config.num_frames, config.height, config.width, config.num_categories)
    gt_path = os.path.join(args.out, "gt.txt")
    tracks_path = os.path.join(args.out, "tracks.txt")
    formats.write_ground_truth(gt_path, config.name, gt, *dims)
    formats.write_tracks(tracks_path, config.name, tracks, *dims, half_window=T)
    print(f"wrote {gt_path} ({len(gt)} instances) and {tracks_path} ({len(tracks)} tracks)")


def cmd_link(args):
    (name, L, H, W, K), _, tracks = formats.parse_tracks(_read(args.tracks, "track file"), args.tracks)
    instances, state = linking.link_tracks(tracks, L, args.threshold)
    for inst in instances:
        inst.masks = binarize(inst.masks)
    formats.write_results(args.out, name, instances, L, H, W, K)
    print(f"linked {len(tracks)} tracks into {len(instances)} video instances -> {args.out}")


def _format_report(report):
    pct = lambda v: f"{100.0 * v:6.2f}"  # noqa: E731
    rows = [
        f"mAP    {pct(report.mAP)}",
        f"AP@75  {pct(report.AP75)}",
        f"AR@1   {pct(report.AR1)}",
        f"AR@10  {pct(report.AR10)}",
        "",
        "per category AP:",
    ]
    rows += [f"  category {c:<4d} AP {pct(ap)}  (gt={report.num_gt[c]})" for c, ap in sorted(report.per_category_ap.items())]
    rows += ["", "per threshold AP:"]
    rows += [f"  IoU {tau:.2f}  AP {pct(ap)}" for tau, ap in sorted(report.per_threshold_ap.items())]
    return "\n".join(rows) + "\n"


def _format_kv(report):
    rows = [f"{k}={100.0 * v!r}" for k, v in report.summary().items()]
    rows += [f"AP/category/{c}={100.0 * ap!r}" for c, ap in sorted(report.per_category_ap.items())]
    rows += [f"AP/iou/{tau:.2f}={100.0 * ap!r}" for tau, ap in sorted(report.per_threshold_ap.items())]
    return "\n".join(rows) + "\n"


def cmd_eval(args):
    gts = {}
    dims = {}
    for path in args.gt:
        (name, L, H, W, _), gt = formats.parse_ground_truth(_read(path, "ground truth"), path)
        if name in gts:
            raise CliError("input", f"video {name} appears in two ground-truth files")
        gts[name] = gt
        dims[name] = (L, H, W)
    preds = {}
    for path in args.results:
        (name, L, H, W, _), instances = formats.parse_results(_read(path, "results"), path)
        if name not in gts:
            raise CliError("input", f"results for video {name} have no ground truth")
        if (L, H, W) != dims[name]:
            raise CliError("input", f"video {name}: results are {(L, H, W)}, ground truth is {dims[name]}")
        preds.setdefault(name, []).extend(instances)
    report = metrics.evaluate(preds, gts)
    text = _format_report(report)
    sys.stdout.write(text)
    if args.out:
        formats.atomic_write(os.path.join(args.out, "report.txt"), text)
        formats.atomic_write(os.path.join(args.out, "metrics.txt"), _format_kv(report))


def _load_params(args, channels):
    if args.params:
        params = formats.tensors_to_params(formats.parse_tensors(_read(args.params, "parameter file"), args.params))
        if params.channels != channels:
            raise CliError("shape", f"parameters expect {params.channels} channels, features have {channels}")
        return params
    return propagation.init_params(channels, hidden=args.hidden, dilation=args.dilation, seed=args.seed)


def cmd_propagate(args):
    tensors = formats.parse_tensors(_read(args.features, "feature file"), args.features)
    if "features" not in tensors or tensors["features"].ndim != 4:
        raise CliError("input", f"{args.features}: needs a 4-D tensor named 'features' (L, C, H, W)")
    features = tensors["features"]
    (name, L, H, W, K), detections = formats.parse_frame_masks(_read(args.masks, "mask file"), args.masks)
    if (L, H, W) != (features.shape[0],) + features.shape[2:]:
        raise CliError(
            "shape",
            f"masks are (L={L}, H={H}, W={W}) but features are "
            f"(L={features.shape[0]}, H={features.shape[2]}, W={features.shape[3]})",
        )
    params = _load_params(args, features.shape[1])
    frames = list(features)
    tracks = []
    for t in sorted(detections):
        masks = [m for m, _ in detections[t]]
        scores = [s for _, s in detections[t]]
        tracks.extend(propagation.propagate_clip(frames, masks, params, args.half_window, t, scores))
    for trk in tracks:
        trk.masks = binarize(trk.masks)
    formats.write_tracks(args.out, name, tracks, L, H, W, K, half_window=args.half_window)
    print(f"propagated {len(tracks)} instances (T={args.half_window}) -> {args.out}")


def cmd_init_params(args):
    params = propagation.init_params(args.channels, hidden=args.hidden, dilation=args.dilation, seed=args.seed)
    formats.write_tensors(args.out, formats.params_to_tensors(params))
    print(f"wrote seeded parameters (seed={args.seed}) -> {args.out}")


def render_frames(instances, num_frames, height, width):
    """Gray-level frames, one level per instance; higher IDs paint over lower ones."""
    if len(instances) > len(PALETTE):
        log.warning("%d instances exceed the %d-level palette; gray levels are reused", len(instances), len(PALETTE))
    frames = np.zeros((num_frames, height, width), dtype=np.uint8)
    for inst in sorted(instances, key=lambda i: i.id):
        level = PALETTE[(inst.id - 1) % len(PALETTE)]
        frames[inst.masks >= 0.5] = level
    return frames


def pgm_bytes(frame, binary=False):
    h, w = frame.shape
    if binary:
        return f"P5\n{w} {h}\n255\n".encode() + frame.tobytes()
    rows = "\n".join(" ".join(str(v) for v in row) for row in frame)
    return f"P2\n{w} {h}\n255\n{rows}\n".encode()


def cmd_render(args):
    (name, L, H, W, _), instances = formats.parse_results(_read(args.results, "results"), args.results)
    frames = render_frames(instances, L, H, W)
    os.makedirs(args.out, exist_ok=True)
    digits = max(4, len(str(L)))
    for t, frame in enumerate(frames, start=1):
        path = os.path.join(args.out, f"{name}_{t:0{digits}d}.pgm")
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(pgm_bytes(frame, args.binary))
        os.replace(tmp, path)
    print(f"rendered {L} frames -> {args.out}")


def cmd_sweep(args):
    T_values = _int_range(args.t_values)
    g_values = _int_range(args.g_values)
    table = synth.occlusion_sweep(T_values, g_values, threshold=args.threshold)
    rows = ["T\\g " + " ".join(f"{g:>2d}" for g in g_values)]
    mismatches = 0
    for T in T_values:
        cells = []
        for g in g_values:
            ok = table[(T, g)]
            mismatches += ok != (g <= 2 * T - 1)
            cells.append(" L" if ok else " .")
        rows.append(f"{T:>3d} " + " ".join(cells))
    rows.append(f"cells disagreeing with g <= 2T-1: {mismatches}")
    text = "\n".join(rows) + "\n"
    sys.stdout.write(text)
    if args.out:
        formats.atomic_write(args.out, text)


def build_parser():
    parser = _Parser(prog="clipvis", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic video and simulated clip tracks")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--half-window", type=int, help="clip half-length T (default: config, else 6)")
    p.add_argument("--mode", choices=synth.MODES)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("link", help="link clip tracks into video-level instances")
    p.add_argument("tracks")
    p.add_argument("--out", required=True, help="results file")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("eval", help="video AP/AR of results against ground truth")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--out", help="directory for report.txt and metrics.txt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("propagate", help="propagate frame-level masks into clip tracks")
    p.add_argument("--features", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--params", help="parameter tensor file (default: seeded random)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--dilation", type=int, default=3)
    p.add_argument("--half-window", type=int, default=6)
    p.add_argument("--out", required=True, help="track file")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("init-params", help="write seeded random propagation parameters")
    p.add_argument("--channels", type=int, required=True)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--dilation", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_params)

    p = sub.add_parser("render", help="write one PGM image per frame")
    p.add_argument("results")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--binary", action="store_true", help="write P5 instead of P2")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("sweep", help="occlusion-gap linking sweep")
    p.add_argument("--t-values", default="1-8")
    p.add_argument("--g-values", default="1-12")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", help="table file")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="clipvis: warning: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except CliError as exc:
        print(f"clipvis: error: {exc.kind}: {exc}", file=sys.stderr)
        return 2 if exc.kind == "usage" else 1
    except formats.FormatError as exc:
        print(f"clipvis: error: format: {exc}", file=sys.stderr)
        return 1
    except ShapeError as exc:
        print(f"clipvis: error: shape: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"clipvis: error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
