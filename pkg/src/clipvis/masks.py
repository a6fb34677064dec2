"""Mask arithmetic: soft IoU, its gradient, video IoU and the propagation loss.

Masks are plain numpy arrays. A single mask is ``(H, W)`` float64 with values
in ``[0, 1]``; a mask sequence is ``(L, H, W)``.
"""

import numpy as np

from clipvis import kernels


class ShapeError(ValueError):
    """Raised when arrays that must line up do not."""


def as_mask(values, name="mask"):
    """Validate and convert ``values`` to a contiguous float64 ``(H, W)`` mask."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (H, W), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be at least 1x1, got shape {arr.shape}")
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def as_mask_sequence(frames, name="mask sequence"):
    """Validate and convert ``frames`` to a contiguous float64 ``(L, H, W)`` array."""
    arr = np.ascontiguousarray(frames, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be 3-D (L, H, W), got shape {arr.shape}")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ShapeError(f"{name} frames must be at least 1x1, got shape {arr.shape}")
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def binarize(masks, threshold=0.5):
    """Threshold soft masks; values equal to ``threshold`` map to 1."""
    return (np.asarray(masks, dtype=np.float64) >= threshold).astype(np.float64)


def _check_same(a, b, what="masks"):
    if a.shape != b.shape:
        raise ShapeError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def soft_iou(a, b):
    """Soft intersection-over-union of two same-shape masks.

    ``sum(a*b) / sum(a + b - a*b)``. Two all-zero masks score 1.0.
    """
    a = as_mask(a, "a")
    b = as_mask(b, "b")
    _check_same(a, b)
    inter, union = kernels.soft_iou_sums(a, b)
    if union == 0.0:
        return 1.0
    return inter / union


def soft_iou_grad(a, b):
    """Partial derivatives of ``soft_iou(a, b)`` with respect to each entry of ``a``."""
    a = as_mask(a, "a")
    b = as_mask(b, "b")
    _check_same(a, b)
    _, union = kernels.soft_iou_sums(a, b)
    if union == 0.0:
        raise ValueError("gradient undefined at empty masks")
    return kernels.soft_iou_grad(a, b)


def mean_soft_iou(a, b):
    """Mean per-frame soft IoU of two ``(n, H, W)`` stacks."""
    a = as_mask_sequence(a, "a")
    b = as_mask_sequence(b, "b")
    _check_same(a, b)
    return kernels.soft_iou_mean(a, b)


def video_iou(pred, gt):
    """Spatio-temporal IoU of two binary mask sequences.

    Intersections and unions are pooled over all frames before dividing.
    Inputs are binarized at 0.5 first, so soft masks are accepted too.
    Two entirely empty sequences score 1.0.
    """
    pred = as_mask_sequence(pred, "pred")
    gt = as_mask_sequence(gt, "gt")
    _check_same(pred, gt, "sequences")
    p = pred >= 0.5
    g = gt >= 0.5
    inter = int(np.count_nonzero(p & g))
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 1.0
    return inter / union


def _track_masks(track):
    return getattr(track, "masks", track)


def prop_loss(pred_tracks, gt_tracks):
    """Sum over instances and clip frames of ``1 - soft_iou(pred, gt)``.

    Both arguments are lists of clip tracks (or raw ``(n, H, W)`` stacks)
    indexed by the same instances. The loss is not normalized.
    """
    if len(pred_tracks) != len(gt_tracks):
        raise ValueError(
            f"instance count mismatch: {len(pred_tracks)} predicted vs {len(gt_tracks)} ground truth"
        )
    total = 0.0
    for idx, (pt, gt) in enumerate(zip(pred_tracks, gt_tracks)):
        p = as_mask_sequence(_track_masks(pt), f"prediction {idx}")
        g = as_mask_sequence(_track_masks(gt), f"ground truth {idx}")
        _check_same(p, g, f"instance {idx} tracks")
        for frame in range(p.shape[0]):
            total += 1.0 - soft_iou(p[frame], g[frame])
    return total


def prop_loss_grad(pred_tracks, gt_tracks):
    """Gradient of :func:`prop_loss` with respect to every predicted mask.

    Returns one ``(n, H, W)`` array per instance.
    """
    if len(pred_tracks) != len(gt_tracks):
        raise ValueError(
            f"instance count mismatch: {len(pred_tracks)} predicted vs {len(gt_tracks)} ground truth"
        )
    grads = []
    for idx, (pt, gt) in enumerate(zip(pred_tracks, gt_tracks)):
        p = as_mask_sequence(_track_masks(pt), f"prediction {idx}")
        g = as_mask_sequence(_track_masks(gt), f"ground truth {idx}")
        _check_same(p, g, f"instance {idx} tracks")
        grads.append(np.stack([-soft_iou_grad(p[f], g[f]) for f in range(p.shape[0])]))
    return grads
