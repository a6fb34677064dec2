"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each case runs in-process with the kernel functions swapped, so both
backends see identical inputs. Reported times are the best of ``--repeat``.
"""

import argparse
import contextlib
import timeit

import numpy as np

from clipvis import kernels
from clipvis.linking import link_tracks
from clipvis.propagation import init_params, propagate_clip
from clipvis.synth import DetectorModel, SceneConfig, SceneObject, generate_scene, simulate_clip_tracks

NAMES = ("soft_iou_sums", "soft_iou_mean", "soft_iou_grad", "im2col", "deform_im2col")


@contextlib.contextmanager
def backend(module):
    saved = {n: getattr(kernels, n) for n in NAMES}
    for n in NAMES:
        setattr(kernels, n, getattr(module, n))
    try:
        yield
    finally:
        for n, fn in saved.items():
            setattr(kernels, n, fn)


def cases():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 48, 64))
    offsets = rng.normal(scale=2.0, size=(18, 48, 64))
    a = rng.random((13, 96, 128))
    b = rng.random((13, 96, 128))

    objects = [SceneObject(1 + i % 3, "rect", 4 + 18 * i, 6 + 10 * i, 0.5, 0.25, w=10, h=8) for i in range(5)]
    cfg = SceneConfig(60, 128, 96, 3, objects=objects, name="bench")
    gt, vis = generate_scene(cfg)
    tracks = simulate_clip_tracks(gt, vis, DetectorModel(miss_probability=0.1, boundary_jitter=1), 6, num_categories=3)

    feats = rng.normal(size=(13, 8, 32, 40))
    masks_t = [(rng.random((32, 40)) > 0.7).astype(float) for _ in range(3)]
    params = init_params(8, hidden=32, seed=0)

    return {
        "im2col 16x48x64 k3 d3": lambda: kernels.im2col(x, 3, 3),
        "deform_im2col 16x48x64 k3 d3": lambda: kernels.deform_im2col(x, offsets, 3, 3),
        "soft_iou_mean 13x96x128": lambda: kernels.soft_iou_mean(a, b),
        "link 60 frames, 5 objects, T=6": lambda: link_tracks(tracks, cfg.num_frames, 0.5),
        "propagate_clip 3 inst, T=6, 8ch": lambda: propagate_clip(feats, masks_t, params, 6, 7),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    found = kernels.available_backends()
    if "cython" not in found:
        print("compiled backend not built; only the numpy fallback is timed")
    names = sorted(found)
    work = cases()
    print(f"{'case':36s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in work.items():
        times = {}
        for n in names:
            with backend(found[n]):
                fn()
                times[n] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        row = f"{label:36s}" + "".join(f"{times[n] * 1e3:10.2f}ms" for n in names)
        if len(names) > 1:
            row += f"{times['python'] / times['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
