import subprocess
import sys

import numpy as np
import pytest

from clipvis import formats
from clipvis.cli import main, pgm_bytes, render_frames
from clipvis.propagation import zero_params
from clipvis.tracks import ClipInstanceTrack, VideoInstance

ONE_OBJECT = "video name=one L=5 W=6 H=6 K=1\nobject category=1 shape=rect x=1 y=1 w=2 h=2 vx=0.5\n"


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_minimal(tmp_path):
    cfg = tmp_path / "scene.cfg"
    cfg.write_text(ONE_OBJECT)
    assert run("synth", cfg, "--out", tmp_path / "out", "--half-window", 1) == 0
    _, gt = formats.parse_ground_truth((tmp_path / "out" / "gt.txt").read_text())
    _, T, tracks = formats.parse_tracks((tmp_path / "out" / "tracks.txt").read_text())
    assert len(gt) == 1 and len(tracks) == 5 and T == 1


def test_synth_same_seed_byte_identical(tmp_path):
    cfg = tmp_path / "scene.cfg"
    cfg.write_text(ONE_OBJECT + "detector miss=0.3 jitter=1 score_noise=0.2\n")
    for d in ("a", "b"):
        assert run("synth", cfg, "--out", tmp_path / d, "--seed", 42) == 0
    for name in ("gt.txt", "tracks.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_malformed_config(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(ONE_OBJECT + "object category=1 shape=rect x=1\n")
    assert run("synth", cfg, "--out", tmp_path / "out") != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("clipvis: error: config:") and "line 3" in err[0]


def _write_tracks(path, tracks, L=4, H=3, W=3, K=1, T=1):
    formats.write_tracks(str(path), "vid", tracks, L, H, W, K, half_window=T)


def _box():
    m = np.zeros((3, 3))
    m[:2, :2] = 1
    return m


def test_link_single_track(tmp_path):
    _write_tracks(tmp_path / "t.txt", [ClipInstanceTrack(2, 1, np.stack([_box()] * 3), [0.8])])
    assert run("link", tmp_path / "t.txt", "--out", tmp_path / "r.txt") == 0
    _, insts = formats.parse_results((tmp_path / "r.txt").read_text())
    assert len(insts) == 1 and insts[0].confidence == 0.8


def _pair(tmp_path):
    tracks = [ClipInstanceTrack(1, 1, np.stack([_box()] * 2), [1.0]), ClipInstanceTrack(2, 1, np.stack([_box()] * 3), [1.0])]
    _write_tracks(tmp_path / "t.txt", tracks)


def test_link_identical_pair_one_instance(tmp_path):
    _pair(tmp_path)
    assert run("link", tmp_path / "t.txt", "--out", tmp_path / "r.txt") == 0
    _, insts = formats.parse_results((tmp_path / "r.txt").read_text())
    assert len(insts) == 1


def test_link_threshold_above_one_splits_everything(tmp_path):
    _pair(tmp_path)
    assert run("link", tmp_path / "t.txt", "--out", tmp_path / "r.txt", "--threshold", 1.1) == 0
    _, insts = formats.parse_results((tmp_path / "r.txt").read_text())
    assert len(insts) == 2


def test_link_corrupted_file(tmp_path, capsys):
    _pair(tmp_path)
    text = (tmp_path / "t.txt").read_text().replace("frame ", "frame 0", 1)
    (tmp_path / "t.txt").write_text(text)
    assert run("link", tmp_path / "t.txt", "--out", tmp_path / "r.txt") == 1
    err = capsys.readouterr().err
    assert err.startswith("clipvis: error: format:") and "track (t=1, i=1)" in err


def _eval_files(tmp_path, pred, gt):
    formats.write_ground_truth(str(tmp_path / "gt.txt"), "v", [(1, gt)], *gt.shape, 1)
    formats.write_results(str(tmp_path / "res.txt"), "v", [VideoInstance(1, pred, 1, 1.0)], *gt.shape, 1)


def test_eval_results_equal_gt(tmp_path, capsys):
    gt = np.zeros((2, 3, 3))
    gt[:, 0, 0] = 1
    _eval_files(tmp_path, gt, gt)
    assert run("eval", "--results", tmp_path / "res.txt", "--gt", tmp_path / "gt.txt", "--out", tmp_path) == 0
    assert "mAP    100.00" in capsys.readouterr().out
    kv = dict(line.split("=") for line in (tmp_path / "metrics.txt").read_text().splitlines())
    assert float(kv["mAP"]) == 100.0


def test_eval_iou_06_fixture(tmp_path):
    gt = np.zeros((2, 4, 4))
    gt[0, 0, :4] = 1
    gt[1, 1, 0] = 1
    pred = gt.copy()
    pred[0, 0, 3] = 0
    pred[1, 1, 0] = 0
    _eval_files(tmp_path, pred, gt)
    assert run("eval", "--results", tmp_path / "res.txt", "--gt", tmp_path / "gt.txt", "--out", tmp_path) == 0
    kv = dict(line.split("=") for line in (tmp_path / "metrics.txt").read_text().splitlines())
    assert float(kv["mAP"]) == pytest.approx(30.0, abs=1e-12)
    assert float(kv["AP@75"]) == 0.0


def test_eval_missing_gt(tmp_path, capsys):
    gt = np.ones((1, 2, 2))
    _eval_files(tmp_path, gt, gt)
    assert run("eval", "--results", tmp_path / "res.txt", "--gt", tmp_path / "nope.txt") != 0
    assert capsys.readouterr().err.startswith("clipvis: error: io:")


def _propagation_inputs(tmp_path, n_instances, L=4, C=2, H=3, W=3, mask_hw=None):
    rng = np.random.default_rng(0)
    formats.write_tensors(str(tmp_path / "feat.txt"), {"features": rng.normal(size=(L, C, H, W))})
    mh, mw = mask_hw or (H, W)
    det = {2: [((rng.random((mh, mw)) > 0.5).astype(float), [1.0]) for _ in range(n_instances)]}
    (tmp_path / "masks.txt").write_text(formats.dump_frame_masks("v", det, L, mh, mw, 1))
    formats.write_tensors(str(tmp_path / "zero.txt"), formats.params_to_tensors(zero_params(C)))
    return det


def test_propagate_T0_passes_masks_through(tmp_path):
    det = _propagation_inputs(tmp_path, 2)
    args = ["propagate", "--features", tmp_path / "feat.txt", "--masks", tmp_path / "masks.txt",
            "--half-window", 0, "--hidden", 4, "--out", tmp_path / "tr.txt"]
    assert run(*args) == 0
    _, _, tracks = formats.parse_tracks((tmp_path / "tr.txt").read_text())
    for trk, (m, _) in zip(tracks, det[2]):
        np.testing.assert_array_equal(trk.masks, m[None])


@pytest.mark.parametrize("n,level", [(1, 1.0), (2, 0.0)])
def test_propagate_zero_params(tmp_path, n, level):
    # 0.5 / n gated masks, binarized at 0.5 on write
    _propagation_inputs(tmp_path, n)
    args = ["propagate", "--features", tmp_path / "feat.txt", "--masks", tmp_path / "masks.txt",
            "--params", tmp_path / "zero.txt", "--half-window", 1, "--out", tmp_path / "tr.txt"]
    assert run(*args) == 0
    _, _, tracks = formats.parse_tracks((tmp_path / "tr.txt").read_text())
    for trk in tracks:
        for t in (1, 3):
            assert np.all(trk.mask_at(t) == level)


def test_propagate_dimension_mismatch(tmp_path, capsys):
    _propagation_inputs(tmp_path, 1, mask_hw=(4, 3))
    args = ["propagate", "--features", tmp_path / "feat.txt", "--masks", tmp_path / "masks.txt", "--out", tmp_path / "tr.txt"]
    assert run(*args) != 0
    err = capsys.readouterr().err
    assert "H=4" in err and "H=3" in err


def test_render_two_instances(tmp_path):
    a = np.zeros((2, 3, 3))
    a[:, 0, 0] = 1
    b = np.zeros((2, 3, 3))
    b[:, 2, 2] = 1
    formats.write_results(str(tmp_path / "r.txt"), "v", [VideoInstance(1, a, 1, 1.0), VideoInstance(2, b, 1, 0.5)], 2, 3, 3, 1)
    assert run("render", tmp_path / "r.txt", "--out", tmp_path / "img") == 0
    files = sorted(p.name for p in (tmp_path / "img").iterdir())
    assert files == ["v_0001.pgm", "v_0002.pgm"]
    lines = (tmp_path / "img" / "v_0001.pgm").read_text().split("\n")
    assert lines[:3] == ["P2", "3 3", "255"]
    pixels = [list(map(int, row.split())) for row in lines[3:6]]
    assert pixels[0][0] != pixels[2][2] and pixels[0][0] > 0 and pixels[2][2] > 0 and pixels[1][1] == 0


def test_render_empty_results_blank(tmp_path):
    formats.write_results(str(tmp_path / "r.txt"), "v", [], 2, 2, 2, 1)
    assert run("render", tmp_path / "r.txt", "--out", tmp_path / "img", "--binary") == 0
    data = (tmp_path / "img" / "v_0002.pgm").read_bytes()
    assert data == b"P5\n2 2\n255\n" + bytes(4)


def test_render_palette_reuse_warns(caplog):
    insts = [VideoInstance(i, np.eye(12)[None, i - 1 : i, :], 1, 1.0) for i in range(1, 11)]
    frames = render_frames(insts, 1, 1, 12)
    assert "reused" in caplog.text
    assert frames[0, 0, 0] == frames[0, 0, 8]
    assert pgm_bytes(frames[0]) == pgm_bytes(render_frames(insts, 1, 1, 12)[0])


def test_sweep_small(tmp_path, capsys):
    assert run("sweep", "--t-values", "1-2", "--g-values", "1-4", "--out", tmp_path / "sweep.txt") == 0
    assert "disagreeing with g <= 2T-1: 0" in (tmp_path / "sweep.txt").read_text()


def test_console_exit_code_and_single_line_error(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "clipvis.cli", "link", str(tmp_path / "missing.txt"), "--out", "x"],
                          capture_output=True, text=True)
    assert proc.returncode != 0
    assert proc.stderr.count("\n") == 1 and proc.stderr.startswith("clipvis: error:")


def test_usage_errors_are_single_line(capsys):
    assert run("frobnicate") == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and err.startswith("clipvis: error: usage:")
