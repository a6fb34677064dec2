"""Linking clip-level instance tracks into video-level instances.

Tracks are visited in time order. Each one is compared with every earlier
track whose clip overlaps it in time; the per-ID average of those matching
scores decides whether it joins an existing video-level ID or opens a new one.
"""

from dataclasses import dataclass, field

import numpy as np

from clipvis import kernels
from clipvis.tracks import ClipInstanceTrack, VideoInstance

__all__ = [
    "ClipInstanceTrack",
    "IdAssignmentState",
    "VideoInstance",
    "assemble_video",
    "assign_ids",
    "id_score",
    "match_score",
    "overlap_interval",
    "score_sequence",
]


def clip_span(t, T, L):
    """Inclusive frame span ``(lo, hi)`` of the clip centered at ``t``."""
    return max(1, t - T), min(L, t + T)


def overlap_interval(t, t_prime, T, L):
    """Frames shared by the clips centered at ``t`` and ``t_prime``.

    Returns a (possibly empty) ``range`` of 1-based frame indices.
    """
    lo_a, hi_a = clip_span(t, T, L)
    lo_b, hi_b = clip_span(t_prime, T, L)
    return range(max(lo_a, lo_b), min(hi_a, hi_b) + 1)


def _shared_frames(a, b):
    return max(a.start, b.start), min(a.end, b.end)


def match_score(track_a, track_b):
    """Mean soft IoU of two tracks over the frames both clips cover."""
    lo, hi = _shared_frames(track_a, track_b)
    if lo > hi:
        raise ValueError(
            f"tracks do not overlap: {track_a.key} spans [{track_a.start}, {track_a.end}], "
            f"{track_b.key} spans [{track_b.start}, {track_b.end}]"
        )
    a = track_a.frames(lo, hi)
    b = track_b.frames(lo, hi)
    if a.shape != b.shape:
        raise ValueError(f"track frame shapes differ: {a.shape[1:]} vs {b.shape[1:]}")
    return kernels.soft_iou_mean(a, b)


@dataclass
class IdAssignmentState:
    """Growing set of video-level IDs and the ID given to each processed track."""

    ids: list = field(default_factory=list)
    assignments: dict = field(default_factory=dict)
    processed: list = field(default_factory=list)

    def new_id(self):
        y = len(self.ids) + 1
        self.ids.append(y)
        return y

    def record(self, track, y):
        if y not in self.ids:
            raise ValueError(f"unknown video-level ID {y}")
        self.assignments[track.key] = y
        self.processed.append(track)

    def id_of(self, track):
        return self.assignments[track.key]

    def members(self, y):
        return [trk for trk in self.processed if self.assignments[trk.key] == y]


def _prior_overlapping(candidate, state):
    """Processed tracks from earlier frames whose clips overlap ``candidate``."""
    for prior in state.processed:
        if prior.center_t >= candidate.center_t:
            continue
        lo, hi = _shared_frames(candidate, prior)
        if lo <= hi:
            yield prior


def _id_scores(candidate, state):
    sums = {}
    counts = {}
    for prior in _prior_overlapping(candidate, state):
        y = state.assignments[prior.key]
        m = match_score(candidate, prior)
        sums[y] = sums.get(y, 0.0) + m
        counts[y] = counts.get(y, 0) + 1
    return {y: sums[y] / counts[y] for y in sums}


def id_score(candidate, y, state):
    """Average matching score between ``candidate`` and earlier overlapping tracks with ID ``y``."""
    total = 0.0
    count = 0
    for prior in _prior_overlapping(candidate, state):
        if state.assignments[prior.key] == y:
            total += match_score(candidate, prior)
            count += 1
    if count == 0:
        raise ValueError(f"no processed track overlapping {candidate.key} carries ID {y}")
    return total / count


def assign_ids(tracks, threshold=0.5, L=None):
    """Give every track a video-level ID, visiting tracks in time order.

    Tracks are processed by ``(center_t, instance_index)``. A track joins the
    ID with the highest average matching score (smallest ID on ties) when
    that score is strictly above ``threshold``; otherwise it opens a new ID.
    Tracks centered on the same frame never score against each other.
    """
    ordered = sorted(tracks, key=lambda trk: trk.key)
    seen = set()
    for trk in ordered:
        if trk.key in seen:
            raise ValueError(f"duplicate track key (center_t, instance_index) = {trk.key}")
        seen.add(trk.key)
        if L is not None and trk.end > L:
            raise ValueError(f"track {trk.key} ends at frame {trk.end} beyond video length {L}")

    state = IdAssignmentState()
    for trk in ordered:
        scores = _id_scores(trk, state)
        best_y = None
        best_q = -np.inf
        for y in sorted(scores):
            if scores[y] > best_q:
                best_y, best_q = y, scores[y]
        if best_y is not None and best_q > threshold:
            state.record(trk, best_y)
        else:
            state.record(trk, state.new_id())
    return state


def score_sequence(member_tracks):
    """Category and confidence of a video-level instance from its member tracks.

    Class-score vectors are averaged; the category is the (1-based) argmax,
    smallest index on ties, and the confidence is its averaged score.
    """
    if not member_tracks:
        raise ValueError("cannot score an empty track list")
    scores = np.mean(np.stack([trk.class_scores for trk in member_tracks]), axis=0)
    best = int(np.argmax(scores))
    return best + 1, float(scores[best])


def assemble_video(tracks, state, L):
    """Build one :class:`VideoInstance` per video-level ID.

    Frame ``t`` of instance ``y`` is taken from the track with ID ``y`` whose
    center is nearest ``t`` (smaller center on ties); frames no such track
    covers are empty.
    """
    tracks = list(tracks)
    if not tracks:
        return []
    frame_shape = tracks[0].frame_shape
    by_id = {y: [] for y in state.ids}
    for trk in sorted(tracks, key=lambda trk: trk.key):
        if trk.key not in state.assignments:
            raise ValueError(f"track {trk.key} has no video-level ID")
        by_id[state.assignments[trk.key]].append(trk)

    instances = []
    for y in state.ids:
        members = by_id[y]
        if not members:
            continue
        masks = np.zeros((L,) + tuple(frame_shape), dtype=np.float64)
        for t in range(1, L + 1):
            best = None
            for trk in members:
                if not trk.covers(t):
                    continue
                rank = (abs(trk.center_t - t), trk.center_t, trk.instance_index)
                if best is None or rank < best[0]:
                    best = (rank, trk)
            if best is not None:
                masks[t - 1] = best[1].mask_at(t)
        category, confidence = score_sequence(members)
        instances.append(VideoInstance(y, masks, category, confidence, members=members))
    return instances


def link_tracks(tracks, L, threshold=0.5):
    """Assign IDs and assemble video instances in one call."""
    state = assign_ids(tracks, threshold, L)
    return assemble_video(tracks, state, L), state
