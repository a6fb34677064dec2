import itertools

import numpy as np
import pytest

from clipvis.linking import (
    IdAssignmentState,
    assemble_video,
    assign_ids,
    id_score,
    match_score,
    overlap_interval,
    score_sequence,
)
from clipvis.tracks import ClipInstanceTrack


def box(h=6, w=6, r0=0, c0=0, size=2):
    m = np.zeros((h, w))
    m[r0 : r0 + size, c0 : c0 + size] = 1.0
    return m


def track(t, masks, T, L, index=1, scores=(1.0,)):
    lo, hi = max(1, t - T), min(L, t + T)
    stack = np.stack([masks(f) if callable(masks) else masks for f in range(lo, hi + 1)])
    return ClipInstanceTrack(t, T, stack, np.asarray(scores, dtype=float), index)


def test_overlap_interval_examples():
    assert overlap_interval(5, 10, 3, 20) == range(7, 9)
    assert overlap_interval(4, 4, 3, 20) == range(1, 8)
    assert len(overlap_interval(1, 10, 3, 20)) == 0


def test_overlap_interval_brute_force():
    for T in range(0, 4):
        for L in range(1, 10):
            for t, u in itertools.product(range(1, L + 1), repeat=2):
                a = set(range(max(1, t - T), min(L, t + T) + 1))
                b = set(range(max(1, u - T), min(L, u + T) + 1))
                assert set(overlap_interval(t, u, T, L)) == a & b
                if abs(t - u) >= 2 * T + 1:
                    assert len(overlap_interval(t, u, T, L)) == 0


def test_match_score_examples(backend):
    a = track(3, box(), 2, 10)
    assert match_score(a, a) == 1.0
    b = track(4, lambda f: box() if f == 2 else box(c0=3), 2, 10)
    c = track(6, lambda f: box(c0=3), 2, 10)
    # shared frames 2..5: frame 2 agrees, 3..5 disjoint
    assert match_score(a, b) == pytest.approx(0.25)
    assert match_score(a, track(3, box(r0=3), 2, 10)) == 0.0
    assert match_score(a, c) == 0.0
    # shared frames {3, 4} with sIoU 1.0 and 0.0
    d = track(4, lambda f: box() if f == 3 else box(c0=3), 1, 10)
    e = track(3, box(), 1, 10)
    assert match_score(d, e) == 0.5


def test_match_score_requires_overlap():
    with pytest.raises(ValueError, match="tracks do not overlap"):
        match_score(track(1, box(), 1, 10), track(5, box(), 1, 10))


def test_id_score_examples():
    L, T = 10, 1
    cand = track(3, box(size=4), T, L)
    state = IdAssignmentState()
    y1, y2 = state.new_id(), state.new_id()
    full = box(size=4)
    part = np.zeros((6, 6))
    part[0:4, 0:4] = 1.0
    part[0, 0:4] = 0.0  # 12 of 16 pixels → sIoU 0.75
    p1 = track(2, full, T, L, index=1)          # frames 1..3, overlap {2, 3}: m = 1.0
    p2 = track(2, part, T, L, index=2)          # m = 0.75
    state.record(p1, y1)
    state.record(p2, y1)
    assert id_score(cand, y1, state) == pytest.approx(0.875)
    single = IdAssignmentState()
    single.new_id()
    single.record(p2, 1)
    assert id_score(cand, 1, single) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        id_score(cand, y2, state)


def test_assign_single_track():
    state = assign_ids([track(1, box(), 2, 5)], 0.5, 5)
    assert state.ids == [1]
    assert state.assignments == {(1, 1): 1}


def test_assign_identical_neighbours_share_id():
    state = assign_ids([track(1, box(), 2, 5), track(2, box(), 2, 5)], 0.5, 5)
    assert state.ids == [1]
    assert set(state.assignments.values()) == {1}


def test_assign_disjoint_tracks_get_new_ids():
    state = assign_ids([track(1, box(), 2, 5), track(2, box(r0=3), 2, 5)], 0.5, 5)
    assert state.assignments == {(1, 1): 1, (2, 1): 2}


def test_assign_threshold_is_strict():
    a = track(1, box(size=2), 1, 5)
    half = np.zeros((6, 6))
    half[0:2, 0:1] = 1.0  # sIoU with the 2x2 box = 0.5
    b = track(2, half, 1, 5)
    assert assign_ids([a, b], 0.5, 5).assignments[(2, 1)] == 2
    assert assign_ids([a, b], 0.49, 5).assignments[(2, 1)] == 1


def test_assign_ties_pick_smallest_id():
    L, T = 6, 1
    # two distinct objects seeded at t=1, then a track matching both equally
    a = track(1, box(c0=0), T, L, index=1)
    b = track(1, box(c0=2), T, L, index=2)
    both = np.zeros((6, 6))
    both[0:2, 0:4] = 1.0
    both_track = track(2, lambda f: box(c0=0) if f == 1 else both, T, L)
    state = assign_ids([b, a, both_track], 0.0, L)
    assert state.assignments[(1, 1)] == 1 and state.assignments[(1, 2)] == 2
    assert state.assignments[(2, 1)] == 1


def test_assign_rejects_duplicate_keys():
    with pytest.raises(ValueError, match="duplicate"):
        assign_ids([track(1, box(), 1, 4), track(1, box(), 1, 4)], 0.5, 4)


def test_assign_deterministic():
    rng = np.random.default_rng(0)
    tracks = [track(t, lambda f: (rng.random((6, 6)) > 0.5).astype(float), 2, 8, i)
              for t in range(1, 9) for i in (1, 2)]
    a = assign_ids(tracks, 0.3, 8)
    b = assign_ids(tracks, 0.3, 8)
    assert repr(sorted(a.assignments.items())) == repr(sorted(b.assignments.items()))
    assert a.ids == b.ids


def _partition(tracks, state):
    groups = {}
    for trk in tracks:
        groups.setdefault(state.assignments[trk.key], set()).add(id(trk))
    return {frozenset(g) for g in groups.values()}


def test_id_stability_under_same_frame_permutation():
    L, T = 10, 2
    objs = [box(r0=0, c0=0), box(r0=0, c0=3), box(r0=3, c0=0)]
    rng = np.random.default_rng(1)
    for trial in range(10):
        tracks = []
        for t in range(1, L + 1):
            order = rng.permutation(3)
            for idx, k in enumerate(order, start=1):
                tracks.append(track(t, objs[k], T, L, idx))
        state = assign_ids(tracks, 0.5, L)
        assert len(state.ids) == 3
        groups = _partition(tracks, state)
        by_object = {}
        for trk in tracks:
            k = next(i for i, o in enumerate(objs) if np.array_equal(o, trk.masks[0]))
            by_object.setdefault(k, set()).add(id(trk))
        assert groups == {frozenset(v) for v in by_object.values()}


@pytest.mark.parametrize("threshold", [0.0, 0.5, 0.9, 0.999])
def test_perfect_continuity_single_id(threshold):
    L, T = 12, 3
    moving = lambda f: box(h=8, w=16, c0=f)  # noqa: E731
    tracks = [track(t, moving, T, L) for t in range(1, L + 1)]
    assert assign_ids(tracks, threshold, L).ids == [1]


def test_score_sequence_examples():
    one = track(1, box(), 0, 3, scores=(0.9, 0.1))
    assert score_sequence([one]) == (1, 0.9)
    two = [track(1, box(), 0, 3, scores=(0.8, 0.1)), track(2, box(), 0, 3, scores=(0.6, 0.3))]
    cat, conf = score_sequence(two)
    assert cat == 1 and conf == pytest.approx(0.7)
    tie = track(1, box(), 0, 3, scores=(0.4, 0.4))
    assert score_sequence([tie])[0] == 1
    with pytest.raises(ValueError):
        score_sequence([])


def test_assemble_single_track_verbatim():
    trk = track(2, lambda f: box(c0=f), 1, 3)
    state = assign_ids([trk], 0.5, 3)
    (inst,) = assemble_video([trk], state, 3)
    np.testing.assert_array_equal(inst.masks, trk.masks)
    assert inst.id == 1 and inst.category == 1 and inst.confidence == 1.0


def test_assemble_nearest_center_tie_prefers_smaller_center():
    L, T = 7, 1
    a = track(3, lambda f: box(c0=0), T, L)
    b = track(5, lambda f: box(c0=0) if f != 4 else box(c0=1), T, L)
    state = assign_ids([a, b], 0.1, L)
    assert state.ids == [1]
    (inst,) = assemble_video([a, b], state, L)
    np.testing.assert_array_equal(inst.masks[3], box(c0=0))  # frame 4 from center 3
    np.testing.assert_array_equal(inst.masks[4], b.mask_at(5))
    assert not inst.masks[0].any() and not inst.masks[6].any()  # frames 1 and 7 uncovered


def test_assemble_centre_frames_come_from_own_track():
    L, T = 6, 2
    tracks = [track(t, lambda f, t=t: box(c0=(t + f) % 4), T, L) for t in range(1, L + 1)]
    state = IdAssignmentState()
    y = state.new_id()
    for trk in tracks:
        state.record(trk, y)
    (inst,) = assemble_video(tracks, state, L)
    for trk in tracks:
        np.testing.assert_array_equal(inst.masks[trk.center_t - 1], trk.mask_at(trk.center_t))


def test_track_span_validation():
    with pytest.raises(ValueError):
        ClipInstanceTrack(2, 1, np.zeros((4, 2, 2)), [1.0])
    with pytest.raises(ValueError):
        ClipInstanceTrack(1, 1, np.zeros((1, 2, 2)), [1.5])
