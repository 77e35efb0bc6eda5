"""MFCC frontend: 25 ms frames every 10 ms, 13 coefficients per frame.

Parametrization (fixed, no options beyond the frame geometry):
per-frame pre-emphasis 0.97, Hamming window, 23 triangular mel filters
between 20 Hz and ``min(7800, rate / 2 - 100)`` Hz, log floored at 1e-10,
orthonormal DCT-II truncated to 13 terms, sinusoidal liftering with
L = 22, and C0 replaced by the raw log frame energy. No dithering, no
mean normalization.
"""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SUPPORTED_RATES = (8000, 16000)
N_CEPS = 13
N_MEL = 23
PREEMPH = 0.97
LIFTER = 22
LOG_FLOOR = 1e-10
LOW_FREQ = 20.0
HIGH_FREQ = 7800.0

FEATURE_MAGIC = b"AWEF"


class FrontendError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise FrontendError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    @property
    def duration_ms(self) -> float:
        return 1000.0 * len(self.samples) / self.sample_rate


def _window_params(sample_rate, frame_length_ms, frame_shift_ms):
    # half a sample rounds up (e.g. 1102.5 -> 1103 at 44.1 kHz), not to even
    window = math.floor(sample_rate * frame_length_ms / 1000.0 + 0.5)
    shift = math.floor(sample_rate * frame_shift_ms / 1000.0 + 0.5)
    return window, shift


def num_frames(num_samples: int, sample_rate: int, frame_length_ms: float = 25,
               frame_shift_ms: float = 10) -> int:
    """Frame count with partial trailing frames dropped (0 if shorter than a window)."""
    window, shift = _window_params(sample_rate, frame_length_ms, frame_shift_ms)
    if num_samples < window:
        return 0
    return (num_samples - window) // shift + 1


def _raw_frames(w: Waveform, frame_length_ms, frame_shift_ms):
    window, shift = _window_params(w.sample_rate, frame_length_ms, frame_shift_ms)
    n = num_frames(len(w.samples), w.sample_rate, frame_length_ms, frame_shift_ms)
    if n == 0:
        raise FrontendError(
            f"signal has {len(w.samples)} samples, shorter than one "
            f"{frame_length_ms} ms window ({window} samples at {w.sample_rate} Hz)")
    idx = np.arange(window)[None, :] + shift * np.arange(n)[:, None]
    return w.samples[idx]


def _preemphasize_and_window(frames):
    out = frames.copy()
    out[:, 1:] -= PREEMPH * frames[:, :-1]
    out[:, 0] -= PREEMPH * frames[:, 0]
    return out * np.hamming(frames.shape[1])[None, :]


def frame_signal(w: Waveform, frame_length_ms: float = 25,
                 frame_shift_ms: float = 10) -> np.ndarray:
    """Slice ``w`` into overlapping blocks, pre-emphasized and Hamming-windowed.

    Returns an array of shape ``(n_frames, window_samples)``. Frames running
    past the end of the signal are dropped rather than padded.
    """
    return _preemphasize_and_window(_raw_frames(w, frame_length_ms, frame_shift_ms))


def _mel(f):
    return 1127.0 * np.log(1.0 + np.asarray(f) / 700.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_filters: int = N_MEL) -> np.ndarray:
    """Triangular filters, equally spaced on the mel scale, shape (n_filters, n_fft//2+1)."""
    high = min(HIGH_FREQ, sample_rate / 2.0 - 100.0)
    edges = np.linspace(_mel(LOW_FREQ), _mel(high), n_filters + 2)
    bin_mel = _mel(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bin_mel[None, :] - left) / (center - left)
    down = (right - bin_mel[None, :]) / (right - center)
    return np.clip(np.minimum(up, down), 0.0, None)


def dct_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II basis as an (n_out, n_in) matrix."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    basis = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    basis[0] /= np.sqrt(2.0)
    return basis


def lifter_coefficients(n_ceps: int = N_CEPS, lifter: int = LIFTER) -> np.ndarray:
    n = np.arange(n_ceps)
    return 1.0 + 0.5 * lifter * np.sin(np.pi * n / lifter)


def compute_mfcc(w: Waveform) -> np.ndarray:
    """13-dim MFCCs, one row per 10 ms frame.

    Raises FrontendError for sample rates outside ``SUPPORTED_RATES`` or
    signals shorter than one window.
    """
    if w.sample_rate not in SUPPORTED_RATES:
        raise FrontendError(
            f"unsupported sample rate {w.sample_rate} Hz; supported rates: "
            + ", ".join(str(r) for r in SUPPORTED_RATES))
    raw = _raw_frames(w, 25, 10)
    energy = np.log(np.maximum(np.sum(raw ** 2, axis=1), LOG_FLOOR))
    frames = _preemphasize_and_window(raw)
    n_fft = 1 << int(np.ceil(np.log2(frames.shape[1])))
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    fbank = power @ mel_filterbank(w.sample_rate, n_fft).T
    logmel = np.log(np.maximum(fbank, LOG_FLOOR))
    ceps = logmel @ dct_matrix(N_MEL, N_CEPS).T
    ceps *= lifter_coefficients()[None, :]
    ceps[:, 0] = energy
    return ceps


def validate_features(x, dim: int | None = N_CEPS) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] < 1:
        raise FrontendError(f"feature matrix must be (T>=1, dim), got shape {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise FrontendError(f"expected {dim} coefficients per frame, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise FrontendError("feature matrix contains non-finite values")
    return x


def read_wav(path) -> Waveform:
    """Read a 16-bit signed mono PCM WAV file, scaled to [-1, 1)."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise FrontendError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise FrontendError(f"{path}: expected 16-bit samples, got {8 * fh.getsampwidth()}-bit")
        rate = fh.getframerate()
        data = fh.readframes(fh.getnframes())
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def write_features(path, x) -> None:
    """Write an AWEF container: magic, u32 frames, u32 dim, row-major <f4 data."""
    x = np.ascontiguousarray(x, dtype="<f4")
    if x.ndim != 2:
        raise FrontendError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", *x.shape))
        fh.write(x.tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise FrontendError(f"{path}: not an AWEF feature file")
    n, dim = struct.unpack("<II", raw[4:12])
    data = np.frombuffer(raw, dtype="<f4", offset=12)
    if data.size != n * dim:
        raise FrontendError(f"{path}: header says {n}x{dim}, payload has {data.size} values")
    return data.reshape(n, dim).astype(np.float64)
