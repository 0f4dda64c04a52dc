"""Time-frequency conversion for multichannel audio.

Shapes follow a frames-first convention: waveforms are ``(M, N)`` and
spectrograms are ``(T, F, M)``.  Everything is computed in float64 /
complex128.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "WaveBuffer",
    "StftConfig",
    "ComplexSpectrogram",
    "SignalError",
    "hann_window",
    "stft",
    "istft",
    "num_frames",
]


class SignalError(ValueError):
    """Raised for invalid signals, configs or shape mismatches."""


@dataclass
class WaveBuffer:
    """Multichannel waveform, ``samples`` shaped (channels, length)."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise SignalError(f"expected (channels, length) samples, got {samples.shape}")
        if self.sample_rate <= 0:
            raise SignalError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = samples

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    def channel(self, index: int) -> "WaveBuffer":
        return WaveBuffer(self.samples[index : index + 1].copy(), self.sample_rate)


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters; defaults are 512-point, 32 ms Hann, 50% overlap."""

    fft_size: int = 512
    window_length: int = 512
    hop: int = 256
    window: str = "hann"
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window != "hann":
            raise SignalError(f"unsupported window {self.window!r}")
        if min(self.fft_size, self.window_length, self.hop) <= 0:
            raise SignalError("fft_size, window_length and hop must be positive")
        if self.window_length % self.hop:
            raise SignalError("hop must divide window_length")
        if self.fft_size < self.window_length:
            raise SignalError("fft_size must be >= window_length")
        if self.fft_size % 2:
            raise SignalError("fft_size must be even")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.window_length // 2

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.num_bins) * self.sample_rate / self.fft_size


@dataclass
class ComplexSpectrogram:
    """One-sided STFT, ``data`` shaped (T, F, M).

    ``length`` is the number of time samples the spectrogram was computed
    from, so that :func:`istft` can trim the padding back off.
    """

    data: np.ndarray
    length: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise SignalError(f"expected (T, F, M) spectrogram, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise SignalError("spectrogram contains non-finite values")
        self.data = data.astype(np.complex128, copy=False)

    @property
    def shape(self):
        return self.data.shape

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window (COLA at 50% overlap)."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2 * np.pi * n / length)


def _padding(length: int, cfg: StftConfig) -> tuple[int, int]:
    # pad window_length/2 at the front; pad the back so the final frame ends
    # exactly on the padded signal and every input sample is covered by at
    # least two windows
    front = cfg.pad
    total = length + 2 * cfg.pad
    rem = (total - cfg.window_length) % cfg.hop
    back = cfg.pad + (cfg.hop - rem if rem else 0)
    return front, back


def num_frames(length: int, cfg: StftConfig) -> int:
    """T = floor((padded_length - window_length) / hop) + 1."""
    front, back = _padding(length, cfg)
    return (length + front + back - cfg.window_length) // cfg.hop + 1


def stft(wave: WaveBuffer | np.ndarray, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """Per-channel one-sided STFT of Hann-windowed, zero-padded frames.

    The signal is zero-padded with ``window_length // 2`` samples at the
    front and at least as many at the back; the frame count is
    ``floor((padded - window_length) / hop) + 1``.
    """
    samples = wave.samples if isinstance(wave, WaveBuffer) else np.atleast_2d(np.asarray(wave, dtype=np.float64))
    length = samples.shape[1]
    if length < cfg.window_length:
        raise SignalError(
            f"signal of {length} samples is shorter than one window ({cfg.window_length})"
        )
    front, back = _padding(length, cfg)
    padded = np.pad(samples, ((0, 0), (front, back)))
    T = (padded.shape[1] - cfg.window_length) // cfg.hop + 1
    idx = np.arange(T)[:, None] * cfg.hop + np.arange(cfg.window_length)[None, :]
    # (M, T, W)
    frames = padded[:, idx] * hann_window(cfg.window_length)
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    return ComplexSpectrogram(np.transpose(spec, (1, 2, 0)), length=length)


def window_power(T: int, cfg: StftConfig) -> np.ndarray:
    """Overlap-added squared window for T frames (padded-signal coordinates)."""
    win = hann_window(cfg.window_length)
    total = (T - 1) * cfg.hop + cfg.window_length
    norm = np.zeros(total)
    for t in range(T):
        norm[t * cfg.hop : t * cfg.hop + cfg.window_length] += win**2
    return norm


def istft(spec: ComplexSpectrogram | np.ndarray, cfg: StftConfig = StftConfig(), length: int | None = None) -> WaveBuffer:
    """Weighted overlap-add inverse of :func:`stft`.

    Synthesis uses the analysis window and divides by the overlap-added
    squared window, which gives perfect reconstruction for COLA configs.
    """
    if not isinstance(spec, ComplexSpectrogram):
        spec = ComplexSpectrogram(spec)
    if spec.num_bins != cfg.num_bins:
        raise SignalError(f"spectrogram has {spec.num_bins} bins, config expects {cfg.num_bins}")
    if length is None:
        length = spec.length
    T = spec.num_frames
    win = hann_window(cfg.window_length)
    # (M, T, W)
    frames = np.fft.irfft(np.transpose(spec.data, (2, 0, 1)), n=cfg.fft_size, axis=-1)
    frames = frames[..., : cfg.window_length] * win
    total = (T - 1) * cfg.hop + cfg.window_length
    out = np.zeros((spec.num_channels, total))
    for t in range(T):
        out[:, t * cfg.hop : t * cfg.hop + cfg.window_length] += frames[:, t]
    norm = window_power(T, cfg)
    nz = norm > 1e-10
    out[:, nz] /= norm[nz]
    start = cfg.pad
    if length is None:
        length = total - 2 * cfg.pad
    if start + length > total:
        raise SignalError(f"requested length {length} exceeds the {T}-frame support")
    return WaveBuffer(out[:, start : start + length], cfg.sample_rate)
