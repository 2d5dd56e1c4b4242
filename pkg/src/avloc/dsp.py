"""Network input preprocessing: spectrograms, averaged body and face images.

One stimulus becomes two 512x26 log filterbank spectrograms (one per ear), a
temporally averaged 80x60 scene image, and four temporally averaged 120x120
face crops. All operations are pure functions of the stimulus bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .render import FrameSequence, StimulusBundle

N_FRAMES = 512
N_DESCRIPTORS = 26
STFT_WINDOW = 62
STFT_HOP = 31
FMAX_HZ = 8000.0
LOG_FLOOR = np.log(1e-10)

BODY_SHAPE = (60, 80)   # rows x cols, a 4x area reduction of the 240x320 scene
FACE_SHAPE = (120, 120)

XMI_MAGIC = b"XMI1"


@dataclass
class Spectrogram:
    values: np.ndarray  # (512, 26) log filterbank energies

    def __post_init__(self):
        if self.values.shape != (N_FRAMES, N_DESCRIPTORS):
            raise ValueError(f"bad spectrogram shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite spectrogram values")


@dataclass
class ModelInput:
    spec_left: Spectrogram
    spec_right: Spectrogram
    body: np.ndarray        # (60, 80) in [0, 1]
    faces: np.ndarray       # (4, 120, 120) in [0, 1], ordered by avatar index

    def __post_init__(self):
        if self.body.shape != BODY_SHAPE:
            raise ValueError(f"bad body shape {self.body.shape}")
        if self.faces.shape != (4, *FACE_SHAPE):
            raise ValueError(f"bad faces shape {self.faces.shape}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int = STFT_WINDOW,
                   n_filters: int = N_DESCRIPTORS, fmax: float = FMAX_HZ) -> np.ndarray:
    """Triangular mel filters sampled on the rfft bin frequencies.

    The lowest filters can be narrower than one bin at this window size and
    then stay at the log floor; that keeps the filter placement honest rather
    than warping the low end.
    """
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(fmax), n_filters + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    filters = np.zeros((n_filters, len(bin_freqs)))
    for m in range(n_filters):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rise = (bin_freqs - lo) / (center - lo)
        fall = (hi - bin_freqs) / (hi - center)
        filters[m] = np.clip(np.minimum(rise, fall), 0.0, None)
    return filters


def linear_filterbank(sample_rate: int, n_fft: int = STFT_WINDOW,
                      n_filters: int = N_DESCRIPTORS, fmax: float = FMAX_HZ) -> np.ndarray:
    """26 equal-width rectangular bands over 0..fmax (alternate descriptor set)."""
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = np.linspace(0.0, fmax, n_filters + 1)
    filters = np.zeros((n_filters, len(bin_freqs)))
    for m in range(n_filters):
        filters[m] = (bin_freqs >= edges[m]) & (bin_freqs < edges[m + 1])
    filters[-1, bin_freqs == fmax] = 1.0
    return filters


def stft_descriptors(channel: np.ndarray, sample_rate: int = 16000,
                     mode: str = "mel26") -> Spectrogram:
    """512-frame log filterbank spectrogram of one 16000-sample channel.

    Sliding analysis with a 62-sample Hann window and hop 31; any frame
    running past the signal end is completed by reflection (never needed at
    the 16000-sample contract length) and the frame list is truncated to
    exactly 512. Energies are floored at 1e-10 before the log.
    """
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != 1 or len(channel) != 16000:
        raise ValueError(f"expected 16000-sample channel, got shape {channel.shape}")
    needed = STFT_HOP * (N_FRAMES - 1) + STFT_WINDOW
    if needed > len(channel):
        pad = needed - len(channel)
        channel = np.concatenate([channel, channel[-2:-2 - pad:-1]])
    starts = np.arange(N_FRAMES) * STFT_HOP
    idx = starts[:, None] + np.arange(STFT_WINDOW)[None, :]
    frames = channel[idx] * np.hanning(STFT_WINDOW)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    if mode == "mel26":
        filters = mel_filterbank(sample_rate)
    elif mode == "linear26":
        filters = linear_filterbank(sample_rate)
    else:
        raise ValueError(f"unknown descriptor mode: {mode}")
    energies = power @ filters.T
    return Spectrogram(values=np.log(np.maximum(energies, 1e-10)))


def downscale_area(img: np.ndarray, factor: int = 4) -> np.ndarray:
    """Area-average downscale by an integer factor (mean-preserving)."""
    h, w = img.shape
    if h % factor or w % factor:
        raise ValueError(f"shape {img.shape} not divisible by {factor}")
    return img.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def bilinear_resize(img: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resample with half-pixel-centre alignment."""
    in_h, in_w = img.shape
    out_h, out_w = out_shape
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def average_body(video: FrameSequence) -> np.ndarray:
    """Temporal mean of the full scene, downscaled 320x240 -> 80x60."""
    if len(video.frames) == 0:
        raise ValueError("empty frame sequence")
    mean = video.frames.mean(axis=0)
    return downscale_area(mean, 4)


def average_faces(video: FrameSequence) -> np.ndarray:
    """Per-avatar temporal mean of the face crop, resized to 120x120."""
    if not video.face_regions:
        raise ValueError("frame sequence carries no face regions")
    out = np.zeros((4, *FACE_SHAPE))
    for i, (x0, y0, x1, y1) in enumerate(video.face_regions):
        crop_mean = video.frames[:, y0:y1, x0:x1].mean(axis=0)
        out[i] = bilinear_resize(crop_mean, FACE_SHAPE)
    return out


def preprocess(bundle: StimulusBundle, mode: str = "mel26") -> ModelInput:
    """ModelInput for one stimulus bundle; deterministic."""
    return ModelInput(
        spec_left=stft_descriptors(bundle.audio.left, bundle.audio.sample_rate, mode),
        spec_right=stft_descriptors(bundle.audio.right, bundle.audio.sample_rate, mode),
        body=average_body(bundle.video),
        faces=average_faces(bundle.video),
    )


# --- binary tensor container -------------------------------------------------
# Layout: magic "XMI1", then a sequence of tensors until EOF, each encoded as
# uint32 rank, rank x uint32 dims, then row-major little-endian float32 data.

def _write_tensor(parts: list[bytes], arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    parts.append(struct.pack("<I", arr.ndim))
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(arr.tobytes())


def _read_tensor(buf: memoryview, offset: int) -> tuple[np.ndarray, int]:
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    offset += 4 * count
    return arr.reshape(dims).astype(np.float64), offset


def model_input_to_bytes(mi: ModelInput) -> bytes:
    parts = [XMI_MAGIC]
    _write_tensor(parts, mi.spec_left.values)
    _write_tensor(parts, mi.spec_right.values)
    _write_tensor(parts, mi.body)
    for f in mi.faces:
        _write_tensor(parts, f)
    return b"".join(parts)


def model_input_from_bytes(data: bytes) -> ModelInput:
    if data[:4] != XMI_MAGIC:
        raise ValueError("bad magic, not an XMI1 container")
    buf = memoryview(data)
    offset = 4
    tensors = []
    while offset < len(data):
        arr, offset = _read_tensor(buf, offset)
        tensors.append(arr)
    if len(tensors) != 7:
        raise ValueError(f"expected 7 tensors, got {len(tensors)}")
    return ModelInput(
        spec_left=Spectrogram(tensors[0]),
        spec_right=Spectrogram(tensors[1]),
        body=tensors[2],
        faces=np.stack(tensors[3:7]),
    )
