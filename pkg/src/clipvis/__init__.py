"""Clip-level mask propagation, track linking and video instance segmentation metrics."""

from clipvis.kernels import BACKEND
from clipvis.masks import binarize, prop_loss, prop_loss_grad, soft_iou, soft_iou_grad, video_iou
from clipvis.tracks import ClipInstanceTrack, VideoInstance

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ClipInstanceTrack",
    "VideoInstance",
    "binarize",
    "prop_loss",
    "prop_loss_grad",
    "soft_iou",
    "soft_iou_grad",
    "video_iou",
]
