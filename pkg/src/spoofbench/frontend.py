"""Waveform to model-input signal path.

    load_and_resample -> fix_duration -> mel_spectrogram -> to_db_and_normalize
        -> to_image | window_sequence

Every step is a pure numpy function; nothing mutates its input.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

IMAGE_SIZE = 224
DB_RANGE = 80.0
POWER_FLOOR = 1e-10


class FrontendError(Exception):
    pass


class Scale(enum.Enum):
    POWER = "power"
    DB = "db"
    DB_NORMALIZED = "db_normalized"


@dataclass(frozen=True)
class FrontendConfig:
    target_hz: int = 16000
    duration_s: float = 5.0
    n_mels: int = 64
    n_fft: int = 1024
    hop: int = 512
    win_frames: int = 64
    stride_frames: int = 32


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim != 1 or x.size == 0:
            raise FrontendError("audio clip must be a non-empty mono array")
        if not np.all(np.isfinite(x)):
            raise FrontendError("audio clip contains non-finite samples")
        if np.max(np.abs(x)) > 1 + 1e-6:
            raise FrontendError("audio samples must lie in [-1, 1]")
        if self.sample_rate_hz <= 0:
            raise FrontendError("sample rate must be positive")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # [n_mels, n_frames]
    frame_hop_s: float
    scale: Scale

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a WAV file as float64 in [-1, 1], downmixing stereo by channel mean."""
    try:
        rate, data = wavfile.read(str(path))
    except (OSError, ValueError, EOFError) as exc:
        raise FrontendError(f"cannot read {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise FrontendError(f"{path}: unsupported sample format {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise FrontendError(f"{path}: zero-length audio")
    return x, int(rate)


def resample(x: np.ndarray, orig_hz: int, target_hz: int) -> np.ndarray:
    if orig_hz == target_hz:
        return x.copy()
    ratio = Fraction(target_hz, orig_hz)
    y = signal.resample_poly(x, ratio.numerator, ratio.denominator)
    # the polyphase filter can overshoot slightly on full-scale input
    return np.clip(y, -1.0, 1.0)


def load_and_resample(path: str | Path, target_hz: int = 16000) -> AudioClip:
    x, rate = read_wav(path)
    return AudioClip(resample(x, rate, target_hz), target_hz)


def fix_duration(clip: AudioClip, seconds: float = 5.0) -> AudioClip:
    """Keep the first ``seconds`` of audio, zero-padding at the end if short."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    n = int(round(seconds * clip.sample_rate_hz))
    x = clip.samples[:n]
    if x.shape[0] < n:
        x = np.concatenate([x, np.zeros(n - x.shape[0], dtype=x.dtype)])
    return AudioClip(x, clip.sample_rate_hz)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, sample_rate: int) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Unit-peak triangular filters equally spaced on the HTK mel scale, 0 to Nyquist.

    Returns a [n_mels, n_fft // 2 + 1] matrix.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def power_stft(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centered (zero-padded by n_fft // 2) Hann-window power STFT, [bins, frames]."""
    pad = n_fft // 2
    xp = np.pad(x, (pad, pad))
    n_frames = 1 + (xp.shape[0] - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop][:n_frames]
    window = signal.get_window("hann", n_fft, fftbins=True)
    spec = np.fft.rfft(frames * window, axis=1)
    return (spec.real**2 + spec.imag**2).T


def mel_spectrogram(clip: AudioClip, n_mels: int = 64, n_fft: int = 1024, hop: int = 512) -> MelSpectrogram:
    if not 64 <= n_mels <= 128:
        raise ValueError(f"n_mels must be in [64, 128], got {n_mels}")
    if n_fft <= 0 or n_fft & (n_fft - 1):
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise ValueError("hop must be in (0, n_fft]")
    if len(clip) < n_fft:
        raise FrontendError(f"clip of {len(clip)} samples is shorter than one {n_fft}-sample window")
    power = power_stft(np.asarray(clip.samples, dtype=np.float64), n_fft, hop)
    mel = mel_filterbank(n_mels, n_fft, clip.sample_rate_hz) @ power
    return MelSpectrogram(np.maximum(mel, 0.0), hop / clip.sample_rate_hz, Scale.POWER)


def to_db_and_normalize(mel: MelSpectrogram) -> MelSpectrogram:
    """Power -> dB with an 80 dB floor under the clip maximum -> per-clip [0, 1].

    A constant matrix (including silence) has no range and maps to all zeros.
    """
    if mel.scale is not Scale.POWER:
        raise ValueError(f"expected POWER scale, got {mel.scale}")
    db = 10.0 * np.log10(np.maximum(mel.values, POWER_FLOOR))
    ref = db.max()
    db = np.clip(db, ref - DB_RANGE, ref)
    lo = db.min()
    span = ref - lo
    if span <= 0:
        out = np.zeros_like(db)
    else:
        out = (db - lo) / span
    return replace(mel, values=out, scale=Scale.DB_NORMALIZED)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # align-corners linear interpolation: output endpoints sit exactly on input endpoints
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    pos = np.linspace(0.0, n_in - 1, n_out)
    i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - i0
    rows = np.arange(n_out)
    m[rows, i0] = 1.0 - frac
    m[rows, i0 + 1] += frac
    return m


def resize_bilinear(values: np.ndarray, height: int, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return _interp_matrix(values.shape[0], height) @ values @ _interp_matrix(values.shape[1], width).T


def to_image(mel: MelSpectrogram, size: int = IMAGE_SIZE) -> np.ndarray:
    """Render a normalized mel matrix as a [3, size, size] float32 image."""
    if mel.scale is not Scale.DB_NORMALIZED:
        raise ValueError(f"expected DB_NORMALIZED scale, got {mel.scale}")
    img = np.clip(resize_bilinear(mel.values, size, size), 0.0, 1.0).astype(np.float32)
    return np.repeat(img[None], 3, axis=0)


def window_offsets(n_frames: int, win_frames: int, stride_frames: int) -> list[int]:
    if win_frames <= 0 or stride_frames <= 0:
        raise ValueError("window and stride must be positive")
    if win_frames >= n_frames:
        return [0]
    return list(range(0, n_frames - stride_frames + 1, stride_frames))


def window_sequence(mel: MelSpectrogram, win_frames: int, stride_frames: int) -> list[np.ndarray]:
    """Cut the mel matrix into time windows and render each one as an image.

    Windows start at 0, stride, 2*stride, ... while the start is at most
    ``n_frames - stride``; windows running past the end are zero-padded.
    """
    if stride_frames > win_frames:
        raise ValueError("stride_frames must not exceed win_frames")
    images = []
    for off in window_offsets(mel.n_frames, win_frames, stride_frames):
        chunk = mel.values[:, off : off + win_frames]
        if chunk.shape[1] < win_frames:
            chunk = np.pad(chunk, ((0, 0), (0, win_frames - chunk.shape[1])))
        images.append(to_image(replace(mel, values=chunk)))
    return images


def normalized_mel(path: str | Path, cfg: FrontendConfig = FrontendConfig()) -> MelSpectrogram:
    clip = fix_duration(load_and_resample(path, cfg.target_hz), cfg.duration_s)
    return to_db_and_normalize(mel_spectrogram(clip, cfg.n_mels, cfg.n_fft, cfg.hop))


# ---------------------------------------------------------------------------
# on-disk cache of normalized mel matrices

CACHE_MAGIC = b"SBML"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sHHII")


def save_mel_cache(path: str | Path, mel: MelSpectrogram, hop: int) -> None:
    """Store a DB_NORMALIZED matrix: header then little-endian float32, row-major."""
    if mel.scale is not Scale.DB_NORMALIZED:
        raise ValueError("only DB_NORMALIZED matrices are cached")
    header = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, mel.n_mels, mel.n_frames, hop)
    body = np.ascontiguousarray(mel.values, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def load_mel_cache(path: str | Path, sample_rate_hz: int = 16000) -> MelSpectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FrontendError(f"{path}: truncated cache header")
    magic, version, n_mels, n_frames, hop = _HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise FrontendError(f"{path}: not a mel cache file (magic={magic!r}, version={version})")
    body = raw[_HEADER.size :]
    if len(body) != 4 * n_mels * n_frames:
        raise FrontendError(f"{path}: expected {4 * n_mels * n_frames} data bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f4").reshape(n_mels, n_frames).astype(np.float64)
    return MelSpectrogram(values, hop / sample_rate_hz, Scale.DB_NORMALIZED)
