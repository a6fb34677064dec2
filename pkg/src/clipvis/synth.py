"""Synthetic moving-shape videos and a simulated clip-level detector.

Shapes are rasterized by pixel-center inclusion: pixel ``(row i, col j)`` has
center ``(j + 0.5, i + 0.5)``. A rectangle with top-left ``(x, y)`` and size
``w x h`` covers pixels with ``x <= j + 0.5 < x + w`` and
``y <= i + 0.5 < y + h``. A disk with center ``(x, y)`` and radius ``r``
covers pixels whose center lies within distance ``r``. Positions move
linearly: frame ``t`` (1-based) sits at ``(x0 + vx*(t-1), y0 + vy*(t-1))``.

Depth order: later objects are drawn in front of earlier ones, and every
occluder is in front of every object.

Randomness comes from numpy's PCG64 seeded explicitly; the same config and
seed give bit-identical output on every platform.
"""

import re
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from clipvis.tracks import ClipInstanceTrack

SHAPES = ("rect", "disk")
MODES = ("perfect", "strict")


class ConfigError(ValueError):
    """Malformed scene configuration; carries the offending line number."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


@dataclass
class SceneObject:
    category: int
    shape: str
    x0: float
    y0: float
    vx: float = 0.0
    vy: float = 0.0
    w: float = 0.0
    h: float = 0.0
    r: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if self.category < 1:
            raise ValueError(f"category must be >= 1, got {self.category}")
        if self.shape == "rect" and (self.w <= 0 or self.h <= 0):
            raise ValueError(f"degenerate rectangle {self.w}x{self.h}: zero area")
        if self.shape == "disk" and self.r <= 0:
            raise ValueError(f"degenerate disk radius {self.r}: zero area")

    def position(self, t):
        return self.x0 + self.vx * (t - 1), self.y0 + self.vy * (t - 1)


@dataclass
class Occluder:
    """Axis-aligned region ``[x0, x1) x [y0, y1)`` (pixel centers) over frames ``t0..t1``."""

    t0: int
    t1: int
    x0: float
    y0: float
    x1: float
    y1: float

    def active(self, t):
        return self.t0 <= t <= self.t1


@dataclass
class DetectorModel:
    miss_probability: float = 0.0
    boundary_jitter: int = 0
    score_noise: float = 0.0
    # object index (0-based) -> list of inclusive (t0, t1) frame intervals
    forced_miss_intervals: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.miss_probability <= 1.0:
            raise ValueError(f"miss_probability must lie in [0, 1], got {self.miss_probability}")
        if self.boundary_jitter < 0:
            raise ValueError(f"boundary_jitter must be >= 0, got {self.boundary_jitter}")
        if self.score_noise < 0:
            raise ValueError(f"score_noise must be >= 0, got {self.score_noise}")

    def forced_miss(self, obj, t):
        return any(t0 <= t <= t1 for t0, t1 in self.forced_miss_intervals.get(obj, ()))


@dataclass
class SceneConfig:
    num_frames: int
    width: int
    height: int
    num_categories: int
    objects: list = field(default_factory=list)
    occluders: list = field(default_factory=list)
    seed: int = 0
    name: str = "video"
    detector: DetectorModel = field(default_factory=DetectorModel)
    half_window: int = 6
    mode: str = "perfect"

    def __post_init__(self):
        if self.num_frames < 1 or self.width < 1 or self.height < 1:
            raise ValueError(f"video must be at least 1x1x1, got L={self.num_frames} W={self.width} H={self.height}")
        if self.num_categories < 1:
            raise ValueError(f"num_categories must be >= 1, got {self.num_categories}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for obj in self.objects:
            if obj.category > self.num_categories:
                raise ValueError(f"object category {obj.category} exceeds K={self.num_categories}")


def _pixel_centers(height, width):
    ys = np.arange(height, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(width, dtype=np.float64)[None, :] + 0.5
    return ys, xs


def rasterize(obj, t, height, width):
    ys, xs = _pixel_centers(height, width)
    x, y = obj.position(t)
    if obj.shape == "rect":
        return (xs >= x) & (xs < x + obj.w) & (ys >= y) & (ys < y + obj.h)
    return (xs - x) ** 2 + (ys - y) ** 2 <= obj.r**2


def _occluder_mask(occ, height, width):
    ys, xs = _pixel_centers(height, width)
    return (xs >= occ.x0) & (xs < occ.x1) & (ys >= occ.y0) & (ys < occ.y1)


def generate_scene(config):
    """Rasterize a scene.

    Returns ``(gt, visibility)``: ``gt`` is a list of ``(category, masks)``
    with binary ``(L, H, W)`` float masks, one per object; ``visibility`` is
    a boolean ``(num_objects, L)`` array, true where the object has at least
    one pixel.
    """
    L, H, W = config.num_frames, config.height, config.width
    n = len(config.objects)
    masks = np.zeros((n, L, H, W), dtype=bool)
    for t in range(1, L + 1):
        covered = np.zeros((H, W), dtype=bool)
        for occ in config.occluders:
            if occ.active(t):
                covered |= _occluder_mask(occ, H, W)
        for k in range(n - 1, -1, -1):
            m = rasterize(config.objects[k], t, H, W) & ~covered
            masks[k, t - 1] = m
            covered |= m
    visibility = masks.reshape(n, L, -1).any(axis=2)
    gt = [(obj.category, masks[k].astype(np.float64)) for k, obj in enumerate(config.objects)]
    return gt, visibility


def _jitter(mask, amount):
    if amount == 0 or not mask.any():
        return mask
    struct = ndimage.generate_binary_structure(2, 1)
    if amount > 0:
        return ndimage.binary_dilation(mask, struct, iterations=amount)
    return ndimage.binary_erosion(mask, struct, iterations=-amount, border_value=0)


def simulate_clip_tracks(gt, visibility, model, half_window, seed=0, mode="perfect", num_categories=None):
    """Clip tracks a detector with perfect propagation would produce.

    A track is emitted at frame ``t`` for every object visible at ``t`` and
    not missed there. Its masks are the object's ground truth over the clip;
    in ``strict`` mode frames where the object is missed or invisible are
    blanked. Instance indices count detections per frame from 1 in object
    order.
    """
    if half_window < 0:
        raise ValueError(f"half_window must be >= 0, got {half_window}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    visibility = np.asarray(visibility, dtype=bool)
    n_obj = len(gt)
    if n_obj == 0:
        return []
    L = gt[0][1].shape[0]
    K = num_categories or max(int(c) for c, _ in gt)
    rng = np.random.Generator(np.random.PCG64(seed))

    detected = np.zeros((n_obj, L), dtype=bool)
    for t in range(1, L + 1):
        for k in range(n_obj):
            draw = rng.random()
            if not visibility[k, t - 1] or model.forced_miss(k, t):
                continue
            detected[k, t - 1] = draw >= model.miss_probability

    tracks = []
    for t in range(1, L + 1):
        lo, hi = max(1, t - half_window), min(L, t + half_window)
        index = 0
        for k in range(n_obj):
            if not detected[k, t - 1]:
                continue
            index += 1
            category, obj_masks = gt[k]
            clip = obj_masks[lo - 1 : hi].copy()
            if mode == "strict":
                clip[~detected[k, lo - 1 : hi]] = 0.0
            if model.boundary_jitter:
                amounts = rng.integers(-model.boundary_jitter, model.boundary_jitter + 1, size=clip.shape[0])
                for f, a in enumerate(amounts):
                    clip[f] = _jitter(clip[f] > 0.5, int(a))
            scores = np.zeros(K)
            scores[int(category) - 1] = 1.0
            if model.score_noise:
                scores = scores + rng.normal(0.0, model.score_noise, size=K)
            scores = np.clip(scores, 0.0, 1.0)
            tracks.append(ClipInstanceTrack(t, half_window, clip, scores, index))
    return tracks


def _gap_scene(T, g, width=12, height=12):
    pre = post = 2 * T + 2
    L = pre + g + post
    obj = SceneObject(category=1, shape="rect", x0=3, y0=3, vx=0.0, vy=0.0, w=4, h=4)
    config = SceneConfig(num_frames=L, width=width, height=height, num_categories=1, objects=[obj])
    return config, (pre + 1, pre + g)


def occlusion_sweep(T_values, g_values, base_config=None, threshold=0.5, seed=0):
    """Whether a forced ``g``-frame detection gap is bridged, for each ``(T, g)``.

    Each cell simulates one object that is visible throughout but missed by
    the detector on ``g`` consecutive frames, links the perfect-propagation
    tracks, and reports whether a single video-level ID has tracks on both
    sides of the gap. Returns ``{(T, g): bool}``.
    """
    from clipvis.linking import assign_ids

    table = {}
    for T in T_values:
        for g in g_values:
            if base_config is None:
                config, (g0, g1) = _gap_scene(T, g)
            else:
                pre = post = 2 * T + 2
                config = replace(base_config, num_frames=pre + g + post)
                g0, g1 = pre + 1, pre + g
            gt, vis = generate_scene(config)
            model = DetectorModel(forced_miss_intervals={0: [(g0, g1)]})
            tracks = simulate_clip_tracks(gt, vis, model, T, seed=seed, mode="perfect")
            state = assign_ids(tracks, threshold, config.num_frames)
            before = {state.assignments[trk.key] for trk in tracks if trk.center_t < g0}
            after = {state.assignments[trk.key] for trk in tracks if trk.center_t > g1}
            table[(T, g)] = bool(before & after)
    return table


_KV = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)=(\S+)$")


def _parse_kv(tokens, lineno):
    out = {}
    for tok in tokens:
        m = _KV.match(tok)
        if not m:
            raise ConfigError(f"expected key=value, got {tok!r}", lineno)
        if m.group(1) in out:
            raise ConfigError(f"duplicate key {m.group(1)!r}", lineno)
        out[m.group(1)] = m.group(2)
    return out


def _num(kv, key, lineno, cast=float, default=None):
    if key not in kv:
        if default is None:
            raise ConfigError(f"missing required key {key!r}", lineno)
        return default
    try:
        return cast(kv.pop(key))
    except ValueError:
        raise ConfigError(f"bad value for {key!r}", lineno) from None


def _interval(text, lineno):
    m = re.match(r"^(\d+)-(\d+)$", text) or re.match(r"^(\d+)$", text)
    if not m:
        raise ConfigError(f"bad frame interval {text!r}, expected N or N-M", lineno)
    t0 = int(m.group(1))
    t1 = int(m.group(m.lastindex))
    if t1 < t0:
        raise ConfigError(f"empty frame interval {text!r}", lineno)
    return t0, t1


def parse_scene_config(text):
    """Parse the line-oriented scene configuration format (see README)."""
    video = None
    objects = []
    occluders = []
    misses = {}
    extra = {}
    detector_kv = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "video":
                if video is not None:
                    raise ConfigError("duplicate video line", lineno)
                kv = _parse_kv(rest, lineno)
                video = dict(
                    name=kv.pop("name", "video"),
                    num_frames=_num(kv, "L", lineno, int),
                    width=_num(kv, "W", lineno, int),
                    height=_num(kv, "H", lineno, int),
                    num_categories=_num(kv, "K", lineno, int),
                    lineno=lineno,
                )
            elif head == "object":
                kv = _parse_kv(rest, lineno)
                shape = kv.pop("shape", None)
                if shape not in SHAPES:
                    raise ConfigError(f"object shape must be one of {SHAPES}", lineno)
                obj = dict(
                    category=_num(kv, "category", lineno, int),
                    shape=shape,
                    x0=_num(kv, "x", lineno),
                    y0=_num(kv, "y", lineno),
                    vx=_num(kv, "vx", lineno, default=0.0),
                    vy=_num(kv, "vy", lineno, default=0.0),
                )
                if shape == "rect":
                    obj.update(w=_num(kv, "w", lineno), h=_num(kv, "h", lineno))
                else:
                    obj.update(r=_num(kv, "r", lineno))
                objects.append(SceneObject(**obj))
            elif head == "occluder":
                kv = _parse_kv(rest, lineno)
                if "frames" not in kv:
                    raise ConfigError("missing required key 'frames'", lineno)
                t0, t1 = _interval(kv.pop("frames"), lineno)
                occluders.append(
                    Occluder(t0, t1, _num(kv, "x0", lineno), _num(kv, "y0", lineno),
                             _num(kv, "x1", lineno), _num(kv, "y1", lineno))
                )
            elif head == "detector":
                if detector_kv is not None:
                    raise ConfigError("duplicate detector line", lineno)
                kv = _parse_kv(rest, lineno)
                detector_kv = dict(
                    miss_probability=_num(kv, "miss", lineno, default=0.0),
                    boundary_jitter=_num(kv, "jitter", lineno, int, default=0),
                    score_noise=_num(kv, "score_noise", lineno, default=0.0),
                )
            elif head == "miss":
                kv = _parse_kv(rest, lineno)
                obj = _num(kv, "object", lineno, int)
                if not 1 <= obj <= len(objects):
                    raise ConfigError(f"miss refers to undefined object {obj}", lineno)
                if "frames" not in kv:
                    raise ConfigError("missing required key 'frames'", lineno)
                misses.setdefault(obj - 1, []).append(_interval(kv.pop("frames"), lineno))
            elif head in ("seed", "half_window"):
                if len(rest) != 1:
                    raise ConfigError(f"{head} takes exactly one integer", lineno)
                extra[head] = int(rest[0])
                kv = {}
            elif head == "mode":
                if len(rest) != 1 or rest[0] not in MODES:
                    raise ConfigError(f"mode must be one of {MODES}", lineno)
                extra["mode"] = rest[0]
                kv = {}
            else:
                raise ConfigError(f"unknown directive {head!r}", lineno)
            if kv:
                raise ConfigError(f"unknown keys {sorted(kv)}", lineno)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), lineno) from None
    if video is None:
        raise ConfigError("missing 'video' line")
    vline = video.pop("lineno")
    detector = DetectorModel(**(detector_kv or {}), forced_miss_intervals=misses)
    try:
        return SceneConfig(objects=objects, occluders=occluders, detector=detector, **video, **extra)
    except ValueError as exc:
        raise ConfigError(str(exc), vline) from None


def load_scene_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_scene_config(fh.read())
