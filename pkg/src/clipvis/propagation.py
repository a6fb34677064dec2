"""Forward pass of the mask propagation branch at toy scale.

Feature tensors are ``(C, H, W)`` float64 arrays. For every instance detected
at frame ``t`` the branch

1. masks the frame features with the instance mask,
2. predicts sampling offsets from ``f_t - f_{t+d}`` with a residual block and
   an offset head, and warps the masked features with a deformable
   convolution,
3. adds the warped features to ``f_{t+d}``, scores every instance with a 1x1
   convolution, normalizes with a softmax over instances and gates the result
   with a sigmoid attention map computed from ``f_{t+d}``.

Offsets use ``2*k*k`` planes: plane ``2n`` is the x (column) displacement of
kernel tap ``n = ky*k + kx`` and plane ``2n + 1`` its y (row) displacement.
"""

from dataclasses import dataclass

import numpy as np

from clipvis import kernels
from clipvis.masks import ShapeError, as_mask
from clipvis.tracks import ClipInstanceTrack

PARAM_NAMES = ("res1", "res2", "skip", "offset", "deform", "seg", "attn")


@dataclass
class ConvParams:
    """Weights ``(out, in, k, k)``, bias ``(out,)`` and dilation of one convolution."""

    weight: np.ndarray
    bias: np.ndarray
    dilation: int = 1

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ShapeError(f"conv weight must be (out, in, k, k), got {self.weight.shape}")
        if self.kernel_size % 2 != 1:
            raise ShapeError(f"kernel size must be odd, got {self.kernel_size}")
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(-1)
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"bias must have {self.out_channels} entries, got {self.bias.shape}")
        self.dilation = int(self.dilation)
        if self.dilation < 1:
            raise ValueError(f"dilation must be a positive integer, got {self.dilation}")

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def kernel_size(self):
        return self.weight.shape[2]

    @classmethod
    def zeros(cls, out_channels, in_channels, k, dilation=1):
        return cls(np.zeros((out_channels, in_channels, k, k)), np.zeros(out_channels), dilation)

    @classmethod
    def delta(cls, channels, k, dilation=1):
        """Per-channel identity kernel: weight 1 at the center tap."""
        w = np.zeros((channels, channels, k, k))
        for c in range(channels):
            w[c, c, k // 2, k // 2] = 1.0
        return cls(w, np.zeros(channels), dilation)


@dataclass
class PropagationParams:
    """All weights of the propagation branch.

    ``skip`` is the 1x1 projection on the residual shortcut and must be given
    exactly when the residual block changes the channel count.
    """

    res1: ConvParams
    res2: ConvParams
    offset: ConvParams
    deform: ConvParams
    seg: ConvParams
    attn: ConvParams
    skip: ConvParams | None = None

    def __post_init__(self):
        c = self.res1.in_channels
        hidden = self.res1.out_channels
        if self.res2.in_channels != hidden:
            raise ShapeError(f"res2 expects {self.res2.in_channels} channels, res1 produces {hidden}")
        out = self.res2.out_channels
        if out != c and self.skip is None:
            raise ShapeError(f"residual block maps {c} -> {out} channels and needs a skip projection")
        if self.skip is not None:
            if self.skip.kernel_size != 1 or self.skip.in_channels != c or self.skip.out_channels != out:
                raise ShapeError(f"skip projection must be 1x1 {c} -> {out}, got {self.skip.weight.shape}")
        if self.offset.in_channels != out:
            raise ShapeError(f"offset head expects {self.offset.in_channels} channels, residual block gives {out}")
        k = self.deform.kernel_size
        if self.offset.out_channels != 2 * k * k:
            raise ShapeError(
                f"offset head must produce 2*k*k = {2 * k * k} planes, got {self.offset.out_channels}"
            )
        if self.deform.in_channels != c or self.deform.out_channels != c:
            raise ShapeError(f"deformable kernel must map {c} -> {c} channels, got {self.deform.weight.shape}")
        if self.seg.kernel_size != 1 or self.seg.in_channels != c or self.seg.out_channels != 1:
            raise ShapeError(f"seg head must be 1x1 {c} -> 1, got {self.seg.weight.shape}")
        if self.attn.in_channels != c or self.attn.out_channels != 1:
            raise ShapeError(f"attention head must map {c} -> 1, got {self.attn.weight.shape}")

    @property
    def channels(self):
        return self.res1.in_channels

    @property
    def dilation(self):
        return self.deform.dilation

    def named(self):
        return {name: getattr(self, name) for name in PARAM_NAMES if getattr(self, name) is not None}


def init_params(channels, hidden=128, k=3, dilation=3, seed=0, offset_scale=0.1):
    """Seeded random parameters (PCG64, He-normal weights, zero biases).

    The offset head is scaled by ``offset_scale`` so initial offsets stay
    within a few pixels.
    """
    rng = np.random.Generator(np.random.PCG64(seed))

    def conv(out_c, in_c, ks, dil=1, scale=1.0):
        std = scale * np.sqrt(2.0 / (in_c * ks * ks))
        return ConvParams(rng.normal(0.0, std, size=(out_c, in_c, ks, ks)), np.zeros(out_c), dil)

    res1 = conv(hidden, channels, 3)
    res2 = conv(hidden, hidden, 3)
    skip = conv(hidden, channels, 1) if hidden != channels else None
    offset = conv(2 * k * k, hidden, 3, scale=offset_scale)
    deform = conv(channels, channels, k, dilation)
    seg = conv(1, channels, 1)
    attn = conv(1, channels, 3)
    return PropagationParams(res1, res2, offset, deform, seg, attn, skip)


def zero_params(channels, hidden=None, k=3, dilation=3):
    hidden = channels if hidden is None else hidden
    return PropagationParams(
        res1=ConvParams.zeros(hidden, channels, 3),
        res2=ConvParams.zeros(hidden, hidden, 3),
        offset=ConvParams.zeros(2 * k * k, hidden, 3),
        deform=ConvParams.zeros(channels, channels, k, dilation),
        seg=ConvParams.zeros(1, channels, 1),
        attn=ConvParams.zeros(1, channels, 3),
        skip=ConvParams.zeros(hidden, channels, 1) if hidden != channels else None,
    )


def as_features(values, name="features"):
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] < 1:
        raise ShapeError(f"{name} must be (C, H, W) with C >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def conv2d(x, conv):
    """Dilated 'same' convolution (cross-correlation) with zero padding."""
    x = as_features(x)
    if x.shape[0] != conv.in_channels:
        raise ShapeError(f"conv expects {conv.in_channels} input channels, got {x.shape[0]}")
    _, h, w = x.shape
    cols = kernels.im2col(x, conv.kernel_size, conv.dilation)
    out = conv.weight.reshape(conv.out_channels, -1) @ cols.reshape(cols.shape[0], -1)
    out += conv.bias[:, None]
    return out.reshape(conv.out_channels, h, w)


def deformable_conv(src, offsets, kernel):
    """Deformable convolution with bilinear sampling and zero padding.

    Output location ``p`` with tap ``p_k`` (spaced by the kernel dilation)
    reads ``src`` at ``p + p_k + offset_k(p)``.
    """
    src = as_features(src, "src")
    offsets = np.ascontiguousarray(offsets, dtype=np.float64)
    k = kernel.kernel_size
    if src.shape[0] != kernel.in_channels:
        raise ShapeError(f"kernel expects {kernel.in_channels} channels, src has {src.shape[0]}")
    if offsets.shape != (2 * k * k,) + src.shape[1:]:
        raise ShapeError(
            f"offsets must have shape {(2 * k * k,) + src.shape[1:]} for src {src.shape}, got {offsets.shape}"
        )
    _, h, w = src.shape
    cols = kernels.deform_im2col(src, offsets, k, kernel.dilation)
    out = kernel.weight.reshape(kernel.out_channels, -1) @ cols.reshape(cols.shape[0], -1)
    out += kernel.bias[:, None]
    return out.reshape(kernel.out_channels, h, w)


def instance_features(f_t, mask):
    """Features of one instance: every channel multiplied by the mask."""
    f_t = as_features(f_t, "f_t")
    mask = as_mask(mask)
    if mask.shape != f_t.shape[1:]:
        raise ShapeError(f"mask shape {mask.shape} does not match feature grid {f_t.shape[1:]}")
    return f_t * mask[None]


def predict_offsets(f_t, f_next, params):
    """Offsets ``(2k^2, H, W)`` from the feature difference ``f_t - f_next``."""
    f_t = as_features(f_t, "f_t")
    f_next = as_features(f_next, "f_next")
    if f_t.shape != f_next.shape:
        raise ShapeError(f"feature shapes differ: {f_t.shape} vs {f_next.shape}")
    d = f_t - f_next
    hidden = np.maximum(conv2d(d, params.res1), 0.0)
    shortcut = d if params.skip is None else conv2d(d, params.skip)
    res = conv2d(hidden, params.res2) + shortcut
    return conv2d(res, params.offset)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def attention_map(f_next, params):
    return _sigmoid(conv2d(f_next, params.attn)[0])


def segment_propagated(g_list, f_next, params, return_logits=False):
    """Per-instance soft masks at the target frame.

    Scores ``g + f_next`` with the 1x1 head, takes a softmax over instances
    at every pixel and multiplies by the sigmoid attention map.
    """
    if len(g_list) == 0:
        raise ValueError("segment_propagated needs at least one instance")
    f_next = as_features(f_next, "f_next")
    logits = []
    for idx, g in enumerate(g_list):
        g = as_features(g, f"g[{idx}]")
        if g.shape != f_next.shape:
            raise ShapeError(f"g[{idx}] shape {g.shape} does not match f_next {f_next.shape}")
        logits.append(conv2d(g + f_next, params.seg)[0])
    logits = np.stack(logits)
    shifted = np.exp(logits - logits.max(axis=0, keepdims=True))
    probs = shifted / shifted.sum(axis=0, keepdims=True)
    masks = probs * attention_map(f_next, params)[None]
    masks = np.clip(masks, 0.0, 1.0)
    if return_logits:
        return list(masks), logits
    return list(masks)


def propagate_step(f_t, f_next, masks_at_t, params, return_logits=False):
    """Propagate all instance masks of frame ``t`` to one other frame."""
    offsets = predict_offsets(f_t, f_next, params)
    g_list = [deformable_conv(instance_features(f_t, m), offsets, params.deform) for m in masks_at_t]
    return segment_propagated(g_list, f_next, params, return_logits=return_logits)


def propagate_clip(frame_features, masks_at_t, params, half_window, center_t, class_scores=None):
    """Clip tracks for every instance detected at ``center_t``.

    ``frame_features`` holds the features of the whole video (index 0 is
    frame 1); the clip is truncated at the video boundaries. The masks at
    ``center_t`` are passed through unchanged.
    """
    L = len(frame_features)
    if not 1 <= center_t <= L:
        raise ValueError(f"center_t {center_t} outside video of {L} frames")
    if half_window < 0:
        raise ValueError(f"half_window must be >= 0, got {half_window}")
    n = len(masks_at_t)
    if n == 0:
        return []
    f_t = as_features(frame_features[center_t - 1], f"features[{center_t}]")
    masks_at_t = [as_mask(m, f"mask {i + 1}") for i, m in enumerate(masks_at_t)]
    for i, m in enumerate(masks_at_t):
        if m.shape != f_t.shape[1:]:
            raise ShapeError(f"mask {i + 1} shape {m.shape} does not match feature grid {f_t.shape[1:]}")
    if class_scores is None:
        class_scores = [np.ones(1)] * n
    if len(class_scores) != n:
        raise ValueError(f"{len(class_scores)} class score vectors for {n} instances")

    lo, hi = max(1, center_t - half_window), min(L, center_t + half_window)
    per_frame = []
    for t in range(lo, hi + 1):
        if t == center_t:
            per_frame.append(masks_at_t)
        else:
            per_frame.append(propagate_step(f_t, frame_features[t - 1], masks_at_t, params))
    return [
        ClipInstanceTrack(
            center_t=center_t,
            half_window=half_window,
            masks=np.stack([frame[i] for frame in per_frame]),
            class_scores=class_scores[i],
            instance_index=i + 1,
        )
        for i in range(n)
    ]
