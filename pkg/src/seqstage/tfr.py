"""Log-power time-frequency images from raw multichannel epoch signals.

Each 30-second epoch channel is short-time Fourier transformed with a
Hamming window (2 s, 50% overlap by default), squared to power, and mapped
through a floored natural log. The default configuration yields a 129x29
image per channel; channels stack along the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import EPS_FLOOR


@dataclass(frozen=True)
class StftConfig:
    win_seconds: float = 2.0
    overlap_fraction: float = 0.5
    nfft: int = 256


@dataclass
class EpochSignal:
    """One multichannel raw-signal epoch: samples[channel][sample]."""

    samples: np.ndarray
    sample_rate: int = 100
    duration: float = 30.0

    def __post_init__(self):
        if isinstance(self.samples, (list, tuple)):
            lengths = {np.asarray(ch).size for ch in self.samples}
            if len(lengths) > 1:
                raise ValueError("channel length mismatch")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError(f"samples must be [channels][samples], got shape {self.samples.shape}")
        expected = int(round(self.sample_rate * self.duration))
        if self.samples.shape[1] != expected:
            raise ValueError(f"expected {expected} samples per channel, got {self.samples.shape[1]}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("epoch contains non-finite samples")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]


def hamming_window(n: int) -> np.ndarray:
    """w[k] = 0.54 - 0.46*cos(2*pi*k/(n-1)), k = 0..n-1."""
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft_real(frames: np.ndarray, nfft: int) -> np.ndarray:
    """One-sided DFT of real frames via an iterative radix-2 FFT.

    ``frames`` is [..., n] with n <= nfft (zero padded up to nfft, which must
    be a power of two). Returns complex bins [..., nfft//2 + 1]. Vectorized
    over the leading axes so a whole spectrogram transforms in one call.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if nfft < 2 or nfft & (nfft - 1):
        raise ValueError(f"nfft must be a power of two, got {nfft}")
    if frames.shape[-1] > nfft:
        raise ValueError(f"frame length {frames.shape[-1]} exceeds nfft {nfft}")
    if frames.shape[-1] < nfft:
        pad = [(0, 0)] * (frames.ndim - 1) + [(0, nfft - frames.shape[-1])]
        frames = np.pad(frames, pad)
    a = frames[..., _bit_reverse_indices(nfft)].astype(np.complex128)
    lead = a.shape[:-1]
    size = 2
    while size <= nfft:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        a = a.reshape(*lead, nfft // size, size)
        upper = a[..., :half]
        lower = a[..., half:] * twiddle
        a = np.concatenate([upper + lower, upper - lower], axis=-1).reshape(*lead, nfft)
        size *= 2
    return a[..., :nfft // 2 + 1]


def _frame_geometry(n_samples: int, sample_rate: int, win_seconds: float,
                    overlap_fraction: float, nfft: int) -> tuple[int, int, int]:
    win_f = win_seconds * sample_rate
    win = int(round(win_f))
    if abs(win_f - win) > 1e-9 or win < 2:
        raise ValueError(f"window of {win_seconds} s at {sample_rate} Hz is not a whole sample count")
    hop_f = win * (1.0 - overlap_fraction)
    hop = int(round(hop_f))
    if abs(hop_f - hop) > 1e-9 or hop < 1:
        raise ValueError(f"overlap {overlap_fraction} gives a non-integer hop for window {win}")
    if nfft < win:
        raise ValueError(f"nfft {nfft} is smaller than the window length {win}")
    if n_samples < win:
        raise ValueError(f"epoch too short: {n_samples} samples < one window of {win}")
    n_frames = (n_samples - win) // hop + 1
    return win, hop, n_frames


def log_spectrogram_batch(signals: np.ndarray, sample_rate: int = 100,
                          win_seconds: float = 2.0, overlap_fraction: float = 0.5,
                          nfft: int = 256) -> np.ndarray:
    """Floored log-power spectrograms for a stack of channels.

    ``signals`` is [..., n_samples]; returns [..., nfft//2+1, n_frames].
    """
    signals = np.asarray(signals, dtype=np.float64)
    if not np.all(np.isfinite(signals)):
        raise ValueError("signal contains non-finite samples")
    win, hop, n_frames = _frame_geometry(signals.shape[-1], sample_rate, win_seconds,
                                         overlap_fraction, nfft)
    idx = np.arange(n_frames)[:, None] * hop + np.arange(win)[None, :]
    frames = signals[..., idx] * hamming_window(win)
    spectrum = fft_real(frames, nfft)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    return np.swapaxes(np.log(power + EPS_FLOOR), -1, -2)


def compute_log_spectrogram(signal: np.ndarray, sample_rate: int = 100,
                            win_seconds: float = 2.0, overlap_fraction: float = 0.5,
                            nfft: int = 256) -> np.ndarray:
    """Floored log-power spectrogram of one channel, shape [nfft//2+1][n_frames]."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ValueError(f"signal must be 1-D, got shape {signal.shape}")
    return log_spectrogram_batch(signal, sample_rate, win_seconds, overlap_fraction, nfft)


def epoch_to_image(epoch: EpochSignal, stft: StftConfig = StftConfig()) -> np.ndarray:
    """Stack per-channel log spectrograms into an [F][T][C] image."""
    channels = [
        compute_log_spectrogram(epoch.samples[c], epoch.sample_rate,
                                stft.win_seconds, stft.overlap_fraction, stft.nfft)
        for c in range(epoch.n_channels)
    ]
    return np.stack(channels, axis=2)
