"""Waveforms to stacked log-mel feature sequences, plus WAV and feature I/O.

Pipeline: Hann-windowed power spectrum every hop, mel-warped triangular
filter energies, log with a floor, then frame stacking that trades frame
rate for feature width (80 mel bins stacked by 3 gives 240-dim vectors at
a third of the hop rate).
"""

from __future__ import annotations

import json
import wave as wave_io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FrontendError(ValueError):
    pass


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 8000
    window_ms: float = 25.0
    hop_ms: float = 10.0
    mel_bins: int = 80
    fmin_hz: float = 125.0
    fmax_hz: float | None = None  # None = Nyquist
    floor_epsilon: float = 1e-10
    stack_factor: int = 3

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def nfft(self) -> int:
        n = 1
        while n < self.window_samples:
            n *= 2
        return n

    @property
    def frame_rate(self) -> float:
        """Unstacked frames per second."""
        return 1000.0 / self.hop_ms

    @property
    def stacked_frame_rate(self) -> float:
        return 1000.0 / (self.hop_ms * self.stack_factor)

    @property
    def feature_dim(self) -> int:
        return self.mel_bins * self.stack_factor

    def validate(self):
        if self.mel_bins < 1:
            raise FrontendError("invalid frontend config: mel_bins must be >= 1")
        if self.sample_rate <= 0:
            raise FrontendError("invalid frontend config: sample_rate must be positive")
        fmax = self.fmax_hz if self.fmax_hz is not None else self.sample_rate / 2.0
        if fmax > self.sample_rate / 2.0:
            raise FrontendError(
                "invalid frontend config: mel edge above Nyquist "
                f"({fmax} Hz > {self.sample_rate / 2.0} Hz)"
            )
        if self.fmin_hz < 0 or self.fmin_hz >= fmax:
            raise FrontendError("invalid frontend config: bad mel edges")
        if abs(self.sample_rate * self.hop_ms / 1000.0 - self.hop_samples) > 1e-9:
            raise FrontendError("invalid frontend config: hop does not align to samples")
        if self.stack_factor < 1:
            raise FrontendError("invalid frontend config: stack_factor must be >= 1")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise FrontendError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size and not np.isfinite(self.samples).all():
            raise FrontendError("waveform contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FeatureSequence:
    """Time-major (T, D) feature matrix with its rate and geometry."""

    frames: np.ndarray
    frame_rate: float
    mel_bins: int
    stack_factor: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2:
            raise FrontendError(f"frames must be 2-D, got shape {self.frames.shape}")
        if self.frames.shape[1] != self.mel_bins * self.stack_factor:
            raise FrontendError(
                f"feature dim {self.frames.shape[1]} != mel_bins*stack "
                f"({self.mel_bins}*{self.stack_factor})"
            )
        if self.frames.size and not np.isfinite(self.frames).all():
            raise FrontendError("features contain non-finite values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FrontendConfig):
    """Triangular filters (mel_bins, nfft//2+1), peak height 1."""
    fmax = cfg.fmax_hz if cfg.fmax_hz is not None else cfg.sample_rate / 2.0
    edges_mel = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(fmax), cfg.mel_bins + 2)
    edges_hz = mel_to_hz(edges_mel)
    fft_freqs = np.arange(cfg.nfft // 2 + 1) * (cfg.sample_rate / cfg.nfft)
    fb = np.zeros((cfg.mel_bins, fft_freqs.size))
    for m in range(cfg.mel_bins):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rising = (fft_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - center, 1e-12)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def mel_center_frequencies(cfg: FrontendConfig):
    """Peak frequency of each triangular filter, in Hz."""
    fmax = cfg.fmax_hz if cfg.fmax_hz is not None else cfg.sample_rate / 2.0
    edges_mel = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(fmax), cfg.mel_bins + 2)
    return mel_to_hz(edges_mel[1:-1])


def frame_count(n_samples: int, hop_samples: int) -> int:
    """One frame per hop: ceil(n / hop)."""
    return -(-n_samples // hop_samples)


def log_mel(wave: Waveform, cfg: FrontendConfig) -> FeatureSequence:
    """Unstacked log-mel energies, one frame per hop.

    Frames start on hop boundaries; the tail window is zero-padded so the
    frame count is exactly ceil(len / hop).
    """
    cfg.validate()
    if wave.samples.size == 0:
        raise FrontendError("empty input")
    if wave.sample_rate != cfg.sample_rate:
        raise FrontendError(
            f"waveform rate {wave.sample_rate} != frontend rate {cfg.sample_rate}"
        )
    hop, win, nfft = cfg.hop_samples, cfg.window_samples, cfg.nfft
    n = wave.samples.size
    T = frame_count(n, hop)
    padded = np.zeros((T - 1) * hop + win)
    padded[:n] = wave.samples
    idx = np.arange(win)[None, :] + hop * np.arange(T)[:, None]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)  # periodic Hann
    frames = padded[idx] * window
    spectrum = np.fft.rfft(frames, n=nfft, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    mel_energy = power @ mel_filterbank(cfg).T
    feats = np.log(mel_energy + cfg.floor_epsilon)
    return FeatureSequence(feats, frame_rate=cfg.frame_rate, mel_bins=cfg.mel_bins,
                           stack_factor=1)


def stack_frames(feat: FeatureSequence, stack_factor: int) -> FeatureSequence:
    """Concatenate consecutive frames; tail padded by repeating the last frame."""
    if stack_factor < 1:
        raise FrontendError(f"stack_factor must be >= 1, got {stack_factor}")
    if stack_factor == 1:
        return FeatureSequence(feat.frames.copy(), feat.frame_rate, feat.mel_bins,
                               feat.stack_factor)
    T, D = feat.frames.shape
    T_out = -(-T // stack_factor)
    padded = np.concatenate(
        [feat.frames, np.repeat(feat.frames[-1:], T_out * stack_factor - T, axis=0)],
        axis=0,
    )
    stacked = padded.reshape(T_out, D * stack_factor)
    return FeatureSequence(stacked, frame_rate=feat.frame_rate / stack_factor,
                           mel_bins=feat.mel_bins,
                           stack_factor=feat.stack_factor * stack_factor)


def featurize(wave: Waveform, cfg: FrontendConfig) -> FeatureSequence:
    """log_mel followed by the configured frame stacking."""
    return stack_frames(log_mel(wave, cfg), cfg.stack_factor)


def stacked_frame_count(n_samples: int, cfg: FrontendConfig) -> int:
    return -(-frame_count(n_samples, cfg.hop_samples) // cfg.stack_factor)


def write_wav(path, wave: Waveform):
    """Single-channel 16-bit PCM, clipping in float before quantization."""
    clipped = np.clip(wave.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave_io.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(wave.sample_rate)
        f.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    with wave_io.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise FrontendError(f"expected mono WAV, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise FrontendError(f"expected 16-bit WAV, got {8 * f.getsampwidth()}-bit")
        rate = f.getframerate()
        pcm = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def write_features(path, feat: FeatureSequence):
    """Raw little-endian float32, row-major (T, D), with a JSON sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(feat.frames, dtype="<f4")
    path.write_bytes(arr.tobytes())
    sidecar = {
        "T": int(feat.num_frames),
        "D": int(feat.dim),
        "frame_rate": feat.frame_rate,
        "mel_bins": feat.mel_bins,
        "stack_factor": feat.stack_factor,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar) + "\n")


def read_features(path) -> FeatureSequence:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(sidecar["T"], sidecar["D"])
    return FeatureSequence(arr.astype(np.float32), frame_rate=sidecar["frame_rate"],
                           mel_bins=sidecar["mel_bins"], stack_factor=sidecar["stack_factor"])
