"""Square-root Hann STFT analysis, overlap-add synthesis and per-bin filtering.

Shapes: a multichannel signal is ``(n_samples, n_channels)``; its STFT is
``(n_frames, n_bins, n_channels)``. One-dimensional signals map to
``(n_frames, n_bins)`` and back.

Edge convention: the signal is zero-padded by one window at the front and by
at least one window at the back, so every original sample is covered by a
full set of overlapping frames and the round trip is exact.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class WindowSpec:
    length: int = 512
    hop: int = 256

    def __post_init__(self):
        if self.length <= 0 or self.length & (self.length - 1):
            raise ValueError(f"window length must be a power of two, got {self.length}")
        if self.hop * 2 != self.length:
            raise ValueError("only 50% overlap is supported (hop = length / 2)")

    @cached_property
    def window(self):
        n = np.arange(self.length)
        return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * n / self.length))

    @property
    def n_bins(self):
        return self.length // 2 + 1

    def n_frames(self, n_samples):
        return -(-(n_samples + self.length) // self.hop) + 1

    def frequencies(self, fs):
        return np.arange(self.n_bins) * fs / self.length


def analyze(signal, w=WindowSpec()):
    """STFT of a (multichannel) signal; frame ``k`` starts at padded sample ``k * hop``."""
    x = np.asarray(signal, dtype=float)
    if x.size == 0 or x.shape[0] == 0:
        raise ValueError("empty signal")
    mono = x.ndim == 1
    if mono:
        x = x[:, None]
    n, ch = x.shape
    N, H = w.length, w.hop
    K = w.n_frames(n)
    padded = np.zeros(((K - 1) * H + N, ch))
    padded[N:N + n] = x
    idx = np.arange(K)[:, None] * H + np.arange(N)[None, :]
    frames = padded[idx] * w.window[None, :, None]
    X = np.fft.rfft(frames, axis=1)
    return X[..., 0] if mono else X


def synthesize(X, w=WindowSpec(), length=None):
    """Weighted overlap-add inverse of :func:`analyze`."""
    X = np.asarray(X)
    mono = X.ndim == 2
    if mono:
        X = X[..., None]
    if X.ndim != 3 or X.shape[1] != w.n_bins:
        raise ValueError(f"expected (frames, {w.n_bins}, channels), got {X.shape}")
    K, _, ch = X.shape
    N, H = w.length, w.hop
    frames = np.fft.irfft(X, n=N, axis=1) * w.window[None, :, None]
    out = np.zeros(((K - 1) * H + N, ch))
    for k in range(K):
        out[k * H:k * H + N] += frames[k]
    if length is None:
        length = out.shape[0] - 2 * N
    out = out[N:N + length]
    return out[:, 0] if mono else out


def apply_filterbank(X, W):
    """Filter output ``w^H m`` for every frame and bin.

    ``X`` is ``(frames, bins, D)``; ``W`` is a static per-bin filter
    ``(bins, D)`` or a per-frame sequence ``(frames, bins, D)``.
    """
    X = np.asarray(X)
    W = np.asarray(W)
    if X.shape[-1] != W.shape[-1]:
        raise ValueError(f"channel mismatch: signal has {X.shape[-1]}, filter has {W.shape[-1]}")
    if W.ndim == 2:
        return np.einsum("fd,kfd->kf", W.conj(), X)
    return np.einsum("kfd,kfd->kf", W.conj(), X)


def frame_activity(mask, w=WindowSpec(), threshold=0.0):
    """Per-frame label from a per-sample boolean mask.

    A frame is active when the fraction of active samples under its window
    exceeds ``threshold``; the default marks every frame touching an active
    sample, so inactive frames are free of the component.
    """
    mask = np.asarray(mask, dtype=float)
    n = mask.shape[0]
    K = w.n_frames(n)
    padded = np.zeros((K - 1) * w.hop + w.length)
    padded[w.length:w.length + n] = mask
    idx = np.arange(K)[:, None] * w.hop + np.arange(w.length)[None, :]
    return padded[idx].mean(axis=1) > threshold
