"""Line-oriented text formats for masks, tracks, results and tensors.

Masks are stored binarized (>= 0.5 is foreground) as row-major run lengths
that alternate 0/1 and start with the count of leading zeros. Each frame line
is ``frame <crc32-hex> <run> <run> ...`` where the checksum covers the run
text, so a corrupted line is caught on load. Floats are written with
``repr`` and round-trip exactly. Every file starts with a
``clipvis-<kind> <version>`` line; the exact layouts are documented in the
README.
"""

import os
import tempfile
import zlib

import numpy as np

from clipvis.tracks import ClipInstanceTrack, VideoInstance

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed or corrupted file content."""


def rle_encode(mask):
    """Run lengths of a binary ``(H, W)`` mask in row-major order."""
    flat = (np.asarray(mask) >= 0.5).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def rle_decode(runs, height, width):
    """Inverse of :func:`rle_encode`; returns a float64 ``(H, W)`` mask of 0/1."""
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise FormatError("negative run length")
    if sum(runs) != height * width:
        raise FormatError(f"run lengths sum to {sum(runs)}, expected {height * width}")
    values = np.arange(len(runs)) % 2
    return np.repeat(values, runs).astype(np.float64).reshape(height, width)


def _frame_line(mask):
    body = " ".join(str(r) for r in rle_encode(mask))
    return f"frame {zlib.crc32(body.encode()):08x} {body}".rstrip()


def _parse_frame(line, height, width, where):
    parts = line.split(" ", 2)
    if len(parts) < 2 or parts[0] != "frame":
        raise FormatError(f"{where}: expected a frame line")
    body = parts[2] if len(parts) == 3 else ""
    if f"{zlib.crc32(body.encode()):08x}" != parts[1]:
        raise FormatError(f"{where}: RLE checksum mismatch")
    try:
        runs = [int(tok) for tok in body.split()]
    except ValueError:
        raise FormatError(f"{where}: non-integer run length") from None
    try:
        return rle_decode(runs, height, width)
    except FormatError as exc:
        raise FormatError(f"{where}: {exc}") from None


def atomic_write(path, text):
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Lines:
    def __init__(self, text, source):
        self.lines = text.splitlines()
        self.pos = 0
        self.source = source

    def where(self):
        return f"{self.source}:{self.pos}"

    def next(self):
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            self.pos += 1
            if line.strip():
                return line.strip()
        raise FormatError(f"{self.source}: unexpected end of file")

    def expect(self, head, nfields=None):
        line = self.next()
        parts = line.split()
        if parts[0] != head or (nfields is not None and len(parts) != nfields + 1):
            raise FormatError(f"{self.where()}: expected '{head}' line, got {line!r}")
        return parts[1:]

    def done(self):
        rest = [ln for ln in self.lines[self.pos :] if ln.strip()]
        if rest:
            raise FormatError(f"{self.source}: trailing content after last record")


def _header(lines, kind):
    parts = lines.expect(f"clipvis-{kind}", 1)
    if parts[0] != str(FORMAT_VERSION):
        raise FormatError(f"{lines.source}: unsupported {kind} format version {parts[0]}")


def _video_line(name, L, H, W, K):
    if not name or any(ch.isspace() for ch in name):
        raise ValueError(f"video name must be a non-empty token without spaces, got {name!r}")
    return f"video {name} {L} {H} {W} {K}"


def _read_video(lines):
    parts = lines.expect("video", 5)
    try:
        L, H, W, K = (int(p) for p in parts[1:])
    except ValueError:
        raise FormatError(f"{lines.where()}: bad video dimensions") from None
    return parts[0], L, H, W, K


def _ints(parts, lines):
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise FormatError(f"{lines.where()}: expected integers, got {parts}") from None


def _floats(parts, lines):
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise FormatError(f"{lines.where()}: expected numbers, got {parts}") from None


def _scores_text(scores):
    return " ".join(repr(float(s)) for s in scores)


# ground truth ---------------------------------------------------------------


def dump_ground_truth(name, gt, num_categories):
    """``gt`` is a list of ``(category, masks (L, H, W))``."""
    L, H, W = gt[0][1].shape if gt else (0, 0, 0)
    return _dump_gt(name, gt, L, H, W, num_categories)


def _dump_gt(name, gt, L, H, W, K):
    out = [f"clipvis-gt {FORMAT_VERSION}", _video_line(name, L, H, W, K), f"count {len(gt)}"]
    for idx, (category, masks) in enumerate(gt, start=1):
        out.append(f"instance {idx} {int(category)}")
        out.extend(_frame_line(m) for m in masks)
    return "\n".join(out) + "\n"


def write_ground_truth(path, name, gt, num_frames, height, width, num_categories):
    atomic_write(path, _dump_gt(name, gt, num_frames, height, width, num_categories))


def parse_ground_truth(text, source="<gt>"):
    """Returns ``(video, gt)`` with ``video = (name, L, H, W, K)``."""
    lines = _Lines(text, source)
    _header(lines, "gt")
    video = _read_video(lines)
    _, L, H, W, _ = video
    (count,) = _ints(lines.expect("count", 1), lines)
    gt = []
    for _ in range(count):
        _, category = _ints(lines.expect("instance", 2), lines)
        where = lines.where()
        masks = np.stack([_parse_frame(lines.next(), H, W, f"{where} frame {f + 1}") for f in range(L)]) \
            if L else np.zeros((0, H, W))
        gt.append((category, masks))
    lines.done()
    return video, gt


# tracks ---------------------------------------------------------------------


def dump_tracks(name, tracks, num_frames, height, width, num_categories, half_window):
    out = [
        f"clipvis-tracks {FORMAT_VERSION}",
        _video_line(name, num_frames, height, width, num_categories),
        f"half_window {half_window}",
        f"count {len(tracks)}",
    ]
    for trk in tracks:
        if len(trk.class_scores) != num_categories:
            raise ValueError(f"track {trk.key} has {len(trk.class_scores)} class scores, expected {num_categories}")
        out.append(
            f"track {trk.center_t} {trk.instance_index} {trk.start} {trk.masks.shape[0]} "
            f"{_scores_text(trk.class_scores)}"
        )
        out.extend(_frame_line(m) for m in trk.masks)
    return "\n".join(out) + "\n"


def write_tracks(path, *args, **kwargs):
    atomic_write(path, dump_tracks(*args, **kwargs))


def parse_tracks(text, source="<tracks>"):
    """Returns ``(video, half_window, tracks)``."""
    lines = _Lines(text, source)
    _header(lines, "tracks")
    video = _read_video(lines)
    _, L, H, W, K = video
    (T,) = _ints(lines.expect("half_window", 1), lines)
    (count,) = _ints(lines.expect("count", 1), lines)
    tracks = []
    for _ in range(count):
        parts = lines.expect("track")
        if len(parts) != 4 + K:
            raise FormatError(f"{lines.where()}: track line needs 4 integers and {K} scores")
        center, index, start, n = _ints(parts[:4], lines)
        scores = _floats(parts[4:], lines)
        record = f"track (t={center}, i={index})"
        masks = np.stack(
            [_parse_frame(lines.next(), H, W, f"{source}: {record} frame {start + f}") for f in range(n)]
        )
        try:
            trk = ClipInstanceTrack(center, T, masks, scores, index)
        except ValueError as exc:
            raise FormatError(f"{source}: {record}: {exc}") from None
        if trk.start != start or trk.end > L:
            raise FormatError(f"{source}: {record}: span [{start}, {start + n - 1}] inconsistent with T={T}, L={L}")
        tracks.append(trk)
    lines.done()
    return video, T, tracks


# results --------------------------------------------------------------------


def dump_results(name, instances, num_frames, height, width, num_categories):
    out = [
        f"clipvis-results {FORMAT_VERSION}",
        _video_line(name, num_frames, height, width, num_categories),
        f"count {len(instances)}",
    ]
    for inst in instances:
        out.append(f"instance {inst.id} {inst.category} {inst.confidence!r}")
        out.extend(_frame_line(m) for m in inst.masks)
    return "\n".join(out) + "\n"


def write_results(path, *args, **kwargs):
    atomic_write(path, dump_results(*args, **kwargs))


def parse_results(text, source="<results>"):
    """Returns ``(video, instances)``."""
    lines = _Lines(text, source)
    _header(lines, "results")
    video = _read_video(lines)
    _, L, H, W, _ = video
    (count,) = _ints(lines.expect("count", 1), lines)
    instances = []
    for _ in range(count):
        parts = lines.expect("instance", 3)
        inst_id, category = _ints(parts[:2], lines)
        (confidence,) = _floats(parts[2:], lines)
        where = f"{source}: instance {inst_id}"
        masks = np.stack([_parse_frame(lines.next(), H, W, f"{where} frame {f + 1}") for f in range(L)])
        try:
            instances.append(VideoInstance(inst_id, masks, category, confidence))
        except ValueError as exc:
            raise FormatError(f"{where}: {exc}") from None
    lines.done()
    return video, instances


# frame-level masks (propagation input) --------------------------------------


def dump_frame_masks(name, detections, num_frames, height, width, num_categories):
    """``detections`` maps frame ``t`` to a list of ``(mask (H, W), class_scores)``."""
    total = sum(len(v) for v in detections.values())
    out = [
        f"clipvis-masks {FORMAT_VERSION}",
        _video_line(name, num_frames, height, width, num_categories),
        f"count {total}",
    ]
    for t in sorted(detections):
        for idx, (mask, scores) in enumerate(detections[t], start=1):
            out.append(f"mask {t} {idx} {_scores_text(scores)}")
            out.append(_frame_line(mask))
    return "\n".join(out) + "\n"


def parse_frame_masks(text, source="<masks>"):
    """Returns ``(video, detections)`` as accepted by :func:`dump_frame_masks`."""
    lines = _Lines(text, source)
    _header(lines, "masks")
    video = _read_video(lines)
    _, L, H, W, K = video
    (count,) = _ints(lines.expect("count", 1), lines)
    detections = {}
    for _ in range(count):
        parts = lines.expect("mask")
        if len(parts) != 2 + K:
            raise FormatError(f"{lines.where()}: mask line needs frame, index and {K} scores")
        t, idx = _ints(parts[:2], lines)
        if not 1 <= t <= L:
            raise FormatError(f"{lines.where()}: frame {t} outside 1..{L}")
        scores = _floats(parts[2:], lines)
        mask = _parse_frame(lines.next(), H, W, f"{source}: mask (t={t}, i={idx})")
        entries = detections.setdefault(t, [])
        if idx != len(entries) + 1:
            raise FormatError(f"{lines.where()}: mask indices for frame {t} must run 1, 2, ...")
        entries.append((mask, np.asarray(scores)))
    lines.done()
    return video, detections


# tensors (parameters and features) ------------------------------------------


def dump_tensors(tensors):
    """Manifest of named row-major tensors: ``tensor <name> <ndim> <dims...>`` then one line of values."""
    out = [f"clipvis-tensors {FORMAT_VERSION}", f"count {len(tensors)}"]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        out.append(" ".join(["tensor", name, str(arr.ndim)] + [str(d) for d in arr.shape]))
        out.append(" ".join(repr(float(v)) for v in arr.ravel()))
    return "\n".join(out) + "\n"


def write_tensors(path, tensors):
    atomic_write(path, dump_tensors(tensors))


def parse_tensors(text, source="<tensors>"):
    lines = _Lines(text, source)
    _header(lines, "tensors")
    (count,) = _ints(lines.expect("count", 1), lines)
    tensors = {}
    for _ in range(count):
        parts = lines.expect("tensor")
        if len(parts) < 2:
            raise FormatError(f"{lines.where()}: tensor line needs a name and ndim")
        name = parts[0]
        ndim, *dims = _ints(parts[1:], lines)
        if len(dims) != ndim:
            raise FormatError(f"{lines.where()}: tensor {name} declares {ndim} dims, lists {len(dims)}")
        size = int(np.prod(dims)) if dims else 1
        values = _floats(lines.next().split(), lines) if size else []
        if len(values) != size:
            raise FormatError(f"{lines.where()}: tensor {name} expects {size} values, got {len(values)}")
        if name in tensors:
            raise FormatError(f"{lines.where()}: duplicate tensor {name}")
        tensors[name] = np.asarray(values, dtype=np.float64).reshape(dims)
    lines.done()
    return tensors


def params_to_tensors(params):
    tensors = {}
    for name, conv in params.named().items():
        tensors[f"{name}.weight"] = conv.weight
        tensors[f"{name}.bias"] = conv.bias
        tensors[f"{name}.dilation"] = np.array([conv.dilation], dtype=np.float64)
    return tensors


def tensors_to_params(tensors):
    from clipvis.propagation import PARAM_NAMES, ConvParams, PropagationParams

    convs = {}
    for name in PARAM_NAMES:
        if f"{name}.weight" not in tensors:
            continue
        try:
            dilation = tensors.get(f"{name}.dilation", np.array([1.0]))
            convs[name] = ConvParams(tensors[f"{name}.weight"], tensors[f"{name}.bias"], int(dilation.ravel()[0]))
        except KeyError as exc:
            raise FormatError(f"parameter {name} is missing {exc}") from None
    missing = [n for n in PARAM_NAMES if n != "skip" and n not in convs]
    if missing:
        raise FormatError(f"parameter file lacks {missing}")
    return PropagationParams(**convs)


def read_text(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()
