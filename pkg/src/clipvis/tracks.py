"""Track containers shared by propagation, linking, synthesis and file I/O."""

from dataclasses import dataclass, field

import numpy as np

from clipvis.masks import as_mask_sequence


@dataclass(eq=False)
class ClipInstanceTrack:
    """Masks of one instance detected at ``center_t``, over its clip window.

    Frames are 1-based. The window is ``[max(1, t - T), min(L, t + T)]``, so
    ``masks[0]`` is frame :attr:`start`.
    """

    center_t: int
    half_window: int
    masks: np.ndarray
    class_scores: np.ndarray
    instance_index: int = 1

    def __post_init__(self):
        self.center_t = int(self.center_t)
        self.half_window = int(self.half_window)
        self.instance_index = int(self.instance_index)
        if self.center_t < 1:
            raise ValueError(f"center_t must be >= 1, got {self.center_t}")
        if self.half_window < 0:
            raise ValueError(f"half_window must be >= 0, got {self.half_window}")
        self.masks = as_mask_sequence(self.masks, "track masks")
        self.class_scores = np.ascontiguousarray(self.class_scores, dtype=np.float64).reshape(-1)
        if self.class_scores.size < 1:
            raise ValueError("class_scores must have at least one category")
        if not np.all((self.class_scores >= 0.0) & (self.class_scores <= 1.0)):
            raise ValueError("class_scores must lie in [0, 1]")
        if not self.start <= self.center_t <= self.end <= self.center_t + self.half_window:
            raise ValueError(
                f"track at t={self.center_t} with T={self.half_window} cannot hold "
                f"{self.masks.shape[0]} frames starting at {self.start}"
            )

    @property
    def start(self):
        return max(1, self.center_t - self.half_window)

    @property
    def end(self):
        return self.start + self.masks.shape[0] - 1

    @property
    def key(self):
        return (self.center_t, self.instance_index)

    @property
    def frame_shape(self):
        return self.masks.shape[1:]

    def covers(self, t):
        return self.start <= t <= self.end

    def mask_at(self, t):
        if not self.covers(t):
            raise IndexError(f"frame {t} outside track span [{self.start}, {self.end}]")
        return self.masks[t - self.start]

    def frames(self, lo, hi):
        """Masks for frames ``lo..hi`` inclusive, as a contiguous view."""
        return self.masks[lo - self.start : hi - self.start + 1]


@dataclass(eq=False)
class VideoInstance:
    """A video-level instance: ``(L, H, W)`` masks, a category and a confidence."""

    id: int
    masks: np.ndarray
    category: int
    confidence: float
    members: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.masks = as_mask_sequence(self.masks, "instance masks")
        self.category = int(self.category)
        self.confidence = float(self.confidence)
        if self.category < 1:
            raise ValueError(f"category must be >= 1, got {self.category}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
