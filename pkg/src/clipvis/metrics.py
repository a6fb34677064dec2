"""Video-level AP/AR evaluation over ten IoU thresholds.

Predictions and ground truth are dicts keyed by video name. Ground truth per
video is a list of ``(category, masks)`` pairs; predictions per video are
:class:`~clipvis.tracks.VideoInstance` objects (anything with ``masks``,
``category`` and ``confidence`` attributes works).

Matching follows the COCO convention: within a video and category,
predictions are visited by descending confidence and each takes the unmatched
ground truth with the highest video IoU, provided it is at least the
threshold.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from clipvis.masks import video_iou

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
AR_MAX_DETS = (1, 10)


@dataclass
class EvalReport:
    mAP: float
    AP75: float
    AR1: float
    AR10: float
    per_category_ap: dict = field(default_factory=dict)
    per_threshold_ap: dict = field(default_factory=dict)
    per_category_ar: dict = field(default_factory=dict)
    num_gt: dict = field(default_factory=dict)

    def summary(self):
        return {"mAP": self.mAP, "AP@75": self.AP75, "AR@1": self.AR1, "AR@10": self.AR10}


def _gt_category(g):
    return int(g[0]) if isinstance(g, tuple) else int(g.category)


def _gt_masks(g):
    return g[1] if isinstance(g, tuple) else g.masks


def _ranked(preds):
    # stable sort keeps input order on confidence ties
    order = sorted(range(len(preds)), key=lambda k: -float(preds[k].confidence))
    return [preds[k] for k in order]


def _greedy_flags(ranked_preds, gt_masks, iou_threshold, iou_cache):
    matched = [False] * len(gt_masks)
    flags = []
    for p in ranked_preds:
        best_iou = -1.0
        best = -1
        for g, gm in enumerate(gt_masks):
            if matched[g]:
                continue
            key = (id(p), g)
            if key not in iou_cache:
                iou_cache[key] = video_iou(p.masks, gm)
            iou = iou_cache[key]
            if iou >= iou_threshold and iou > best_iou:
                best_iou, best = iou, g
        if best >= 0:
            matched[best] = True
        flags.append(best >= 0)
    return flags


def match_at_threshold(preds, gts, category, iou_threshold, max_dets=None, _cache=None):
    """Greedy matching of one category at one IoU threshold.

    Returns ``(ranked, num_unmatched_gt)`` where ``ranked`` is a list of
    ``(prediction, is_tp)`` over all videos sorted by descending confidence
    (ties keep video then input order). ``max_dets`` keeps only the top-k
    predictions per video.
    """
    cache = {} if _cache is None else _cache
    _check_videos(preds, gts)
    entries = []
    num_gt = 0
    num_tp = 0
    for video in gts:
        gt_masks = [_gt_masks(g) for g in gts[video] if _gt_category(g) == category]
        cat_preds = _ranked([p for p in preds.get(video, []) if int(p.category) == category])
        if max_dets is not None:
            cat_preds = cat_preds[:max_dets]
        flags = _greedy_flags(cat_preds, gt_masks, iou_threshold, cache.setdefault(video, {}))
        num_gt += len(gt_masks)
        num_tp += sum(flags)
        entries.extend(zip(cat_preds, flags))
    order = sorted(range(len(entries)), key=lambda k: -float(entries[k][0].confidence))
    return [entries[k] for k in order], num_gt - num_tp


def average_precision(flags, num_gt):
    """All-point interpolated AP of a ranked TP/FP list.

    Returns ``None`` when there is nothing to score (no ground truth and no
    predictions); 0.0 when there is no ground truth but there are predictions.
    """
    flags = [bool(f) for f in flags]
    if num_gt == 0:
        return None if not flags else 0.0
    if not flags:
        return 0.0
    tp = np.cumsum(flags, dtype=np.float64)
    fp = np.cumsum([not f for f in flags], dtype=np.float64)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return math.fsum((recall - prev_recall) * envelope)


def _mean(values):
    # correctly rounded, so the result does not depend on summation order
    values = list(values)
    return math.fsum(values) / len(values)


def _check_videos(preds, gts):
    extra = set(preds) - set(gts)
    if extra:
        raise ValueError(f"predictions for videos without ground truth: {sorted(extra)}")


def _categories(preds, gts):
    cats = {_gt_category(g) for video in gts for g in gts[video]}
    cats |= {int(p.category) for video in preds for p in preds[video]}
    return sorted(cats)


def evaluate(preds, gts, thresholds=IOU_THRESHOLDS):
    """Compute mAP, AP@75, AR@1 and AR@10.

    Categories with no ground truth anywhere are left out of the means.
    """
    _check_videos(preds, gts)
    cats = _categories(preds, gts)
    per_cat_ap = {}
    per_cat_ar = {}
    per_thr = {}
    num_gt = {}
    caches = {}
    for c in cats:
        cache = caches.setdefault(c, {})
        aps = []
        ars = {k: [] for k in AR_MAX_DETS}
        n_gt = sum(1 for video in gts for g in gts[video] if _gt_category(g) == c)
        num_gt[c] = n_gt
        for tau in thresholds:
            ranked, _ = match_at_threshold(preds, gts, c, tau, _cache=cache)
            ap = average_precision([f for _, f in ranked], n_gt)
            if n_gt == 0:
                continue
            aps.append(ap)
            per_thr.setdefault(tau, {})[c] = ap
            for k in AR_MAX_DETS:
                capped, unmatched = match_at_threshold(preds, gts, c, tau, max_dets=k, _cache=cache)
                ars[k].append((n_gt - unmatched) / n_gt)
        if n_gt == 0:
            continue
        per_cat_ap[c] = _mean(aps)
        per_cat_ar[c] = {k: _mean(v) for k, v in ars.items()}

    scored = sorted(per_cat_ap)
    if not scored:
        return EvalReport(0.0, 0.0, 0.0, 0.0, {}, {}, {}, num_gt)
    m_ap = _mean([per_cat_ap[c] for c in scored])
    ap75 = _mean([per_thr[0.75][c] for c in scored]) if 0.75 in per_thr else 0.0
    ar1 = _mean([per_cat_ar[c][1] for c in scored])
    ar10 = _mean([per_cat_ar[c][10] for c in scored])
    per_thr_mean = {tau: _mean([v[c] for c in scored]) for tau, v in per_thr.items()}
    return EvalReport(m_ap, ap75, ar1, ar10, per_cat_ap, per_thr_mean, per_cat_ar, num_gt)
