"""Stimulus synthesis: binaural syllable audio and procedural avatar frames.

Audio is positioned with a spherical-head interaural model (Woodworth time
difference plus a linear-in-angle level difference) standing in for the
free-field speaker array. Visuals are deterministic raster avatars at
320x240, one per azimuth, with parametric lip and arm animation.
"""

from __future__ import annotations

import io
import math
import wave
from dataclasses import dataclass

import numpy as np

from .trials import TrialSpec, azimuth_of

SAMPLE_RATE = 16000
DURATION_MS = 1000
FRAME_RATE = 25
SCENE_W = 320
SCENE_H = 240

HEAD_RADIUS_M = 0.0875
SPEED_OF_SOUND = 343.0
ILD_DB_PER_10DEG = 1.5

# Per-syllable voicing: fundamental and the spectral band emphasised by the
# harmonic weighting. Bands are far enough apart that each syllable has a
# distinct dominant frequency after the analysis filterbank.
SYLLABLE_VOICES = {
    "ha": (150.0, 2400.0),
    "wa": (125.0, 650.0),
    "ba": (105.0, 1450.0),
}

ANIMATION_CYCLES = 3  # lip/arm cycles per stimulus, one per syllable

# Avatar geometry (pixel units in the 320x240 scene).
AVATAR_CENTERS_X = (40, 120, 200, 280)
FACE_BOX = (-30, 20, 30, 80)  # (x0, y0, x1, y1) offsets around center x
BODY_BOX = (-38, 82, 38, 238)
HEAD_CENTER_Y = 50
HEAD_RADIUS = 22
MOUTH_CENTER_Y = 62
MOUTH_RX = 10
MOUTH_APERTURE_CLOSED = 1.5
MOUTH_APERTURE_OPEN = 8.0
TORSO = (-14, 100, 14, 170)
SHOULDER_OFFSET = (10, 105)
ARM_LENGTH = 26.0
ARM_REST_DEG = 40.0
ARM_SWEEP_DEG = 30.0
ARM_HALF_WIDTH = 2.0

BG_LEVEL = 0.0
HEAD_LEVEL = 0.55
MOUTH_LEVEL = 0.05
TORSO_LEVEL = 0.45
ARM_LEVEL = 0.8


@dataclass
class StereoWaveform:
    left: np.ndarray
    right: np.ndarray
    sample_rate: int = SAMPLE_RATE
    duration_ms: int = DURATION_MS

    def __post_init__(self):
        n = self.sample_rate * self.duration_ms // 1000
        if len(self.left) != n or len(self.right) != n:
            raise ValueError(
                f"channel length {len(self.left)}/{len(self.right)} != {n}"
            )


@dataclass
class FrameSequence:
    frames: np.ndarray  # (n_frames, SCENE_H, SCENE_W) in [0, 1]
    frame_rate: int = FRAME_RATE
    face_regions: tuple = ()
    body_regions: tuple = ()

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.shape[1:] != (SCENE_H, SCENE_W):
            raise ValueError(f"bad frame shape {self.frames.shape}")
        for box in list(self.face_regions) + list(self.body_regions):
            x0, y0, x1, y1 = box
            if not (0 <= x0 < x1 <= SCENE_W and 0 <= y0 < y1 <= SCENE_H):
                raise ValueError(f"region out of bounds: {box}")


@dataclass
class StimulusBundle:
    trial: TrialSpec
    audio: StereoWaveform
    video: FrameSequence

    def __post_init__(self):
        audio_s = len(self.audio.left) / self.audio.sample_rate
        video_s = len(self.video.frames) / self.video.frame_rate
        if abs(audio_s - video_s) > 1e-9:
            raise ValueError(f"audio {audio_s}s / video {video_s}s span mismatch")


def avatar_regions() -> tuple[tuple, tuple]:
    """(face_regions, body_regions) as 4 + 4 (x0, y0, x1, y1) boxes."""
    faces = tuple(
        (cx + FACE_BOX[0], FACE_BOX[1], cx + FACE_BOX[2], FACE_BOX[3])
        for cx in AVATAR_CENTERS_X
    )
    bodies = tuple(
        (cx + BODY_BOX[0], BODY_BOX[1], cx + BODY_BOX[2], BODY_BOX[3])
        for cx in AVATAR_CENTERS_X
    )
    return faces, bodies


def synth_syllables(syllables, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """1000 ms mono waveform of three consecutive syllable bursts.

    Each syllable is a harmonic series on its fundamental, weighted toward
    its formant band, with raised-cosine on/off ramps. Peak amplitude is
    normalized to 0.85.
    """
    if sample_rate < 8000:
        raise ValueError(f"sample rate too low: {sample_rate}")
    for s in syllables:
        if s not in SYLLABLE_VOICES:
            raise ValueError(f"unknown syllable: {s}")
    n_total = sample_rate * DURATION_MS // 1000
    bounds = [0, n_total // 3, 2 * n_total // 3, n_total]
    out = np.zeros(n_total)
    ramp_n = int(0.025 * sample_rate)
    for k, syll in enumerate(syllables):
        f0, formant = SYLLABLE_VOICES[syll]
        n = bounds[k + 1] - bounds[k]
        t = np.arange(n) / sample_rate
        seg = np.zeros(n)
        h = 1
        while h * f0 < sample_rate / 2 * 0.95:
            fh = h * f0
            # Gaussian emphasis around the formant plus a mild 1/h rolloff.
            w = math.exp(-0.5 * ((fh - formant) / 420.0) ** 2) + 0.08 / h
            seg += w * np.sin(2 * math.pi * fh * t)
            h += 1
        env = np.ones(n)
        ramp = 0.5 - 0.5 * np.cos(np.linspace(0, math.pi, ramp_n))
        env[:ramp_n] = ramp
        env[-ramp_n:] = ramp[::-1]
        out[bounds[k]:bounds[k + 1]] = seg * env
    out *= 0.85 / np.max(np.abs(out))
    return out


def woodworth_itd(azimuth_deg: float, head_radius: float = HEAD_RADIUS_M,
                  c: float = SPEED_OF_SOUND) -> float:
    """Interaural time difference in seconds; positive when right ear leads."""
    theta = math.radians(azimuth_deg)
    return (head_radius / c) * (theta + math.sin(theta))


def binauralize(mono: np.ndarray, azimuth_deg: float,
                head_radius: float = HEAD_RADIUS_M, c: float = SPEED_OF_SOUND,
                sample_rate: int = SAMPLE_RATE) -> StereoWaveform:
    """Position a mono waveform at an azimuth via ITD delay + ILD attenuation.

    The contralateral ear (away from the source) is delayed by the Woodworth
    ITD rounded to whole samples and attenuated 1.5 dB per 10 degrees.
    """
    if abs(azimuth_deg) > 90:
        raise ValueError(f"azimuth out of range: {azimuth_deg}")
    itd = woodworth_itd(abs(azimuth_deg), head_radius, c)
    delay = int(round(itd * sample_rate))
    gain = 10.0 ** (-(ILD_DB_PER_10DEG * abs(azimuth_deg) / 10.0) / 20.0)
    delayed = np.concatenate([np.zeros(delay), mono[:len(mono) - delay]]) * gain
    near = mono.copy()
    if azimuth_deg >= 0:
        left, right = delayed, near
    else:
        left, right = near, delayed
    duration_ms = int(round(1000 * len(mono) / sample_rate))
    return StereoWaveform(left=left, right=right, sample_rate=sample_rate,
                          duration_ms=duration_ms)


def _disc_mask(yy, xx, cx, cy, r):
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _ellipse_mask(yy, xx, cx, cy, rx, ry):
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def _segment_mask(yy, xx, x0, y0, x1, y1, half_width):
    dx, dy = x1 - x0, y1 - y0
    length_sq = dx * dx + dy * dy
    t = ((xx - x0) * dx + (yy - y0) * dy) / length_sq
    t = np.clip(t, 0.0, 1.0)
    px, py = x0 + t * dx, y0 + t * dy
    return (xx - px) ** 2 + (yy - py) ** 2 <= half_width ** 2


def _mouth_aperture(t_s: float, animated: bool) -> float:
    if not animated:
        return MOUTH_APERTURE_CLOSED
    phase = 0.5 - 0.5 * math.cos(2 * math.pi * ANIMATION_CYCLES * t_s)
    return MOUTH_APERTURE_CLOSED + (MOUTH_APERTURE_OPEN - MOUTH_APERTURE_CLOSED) * phase


def _arm_angle(t_s: float, animated: bool) -> float:
    if not animated:
        return ARM_REST_DEG
    return ARM_REST_DEG + ARM_SWEEP_DEG * math.sin(2 * math.pi * ANIMATION_CYCLES * t_s)


def _draw_avatar(img, yy, xx, avatar: int, mouth_aperture: float, arm_deg: float):
    cx = AVATAR_CENTERS_X[avatar]
    img[_disc_mask(yy, xx, cx, HEAD_CENTER_Y, HEAD_RADIUS)] = HEAD_LEVEL
    img[_ellipse_mask(yy, xx, cx, MOUTH_CENTER_Y, MOUTH_RX, mouth_aperture)] = MOUTH_LEVEL
    tx0, ty0, tx1, ty1 = TORSO
    img[(yy >= ty0) & (yy <= ty1) & (xx >= cx + tx0) & (xx <= cx + tx1)] = TORSO_LEVEL
    sx, sy = cx + SHOULDER_OFFSET[0], SHOULDER_OFFSET[1]
    ang = math.radians(arm_deg)
    ex = sx + ARM_LENGTH * math.sin(ang)
    ey = sy + ARM_LENGTH * math.cos(ang)
    img[_segment_mask(yy, xx, sx, sy, ex, ey, ARM_HALF_WIDTH)] = ARM_LEVEL


def render_frames(trial: TrialSpec) -> FrameSequence:
    """Render the 25-frame scene for a trial; deterministic per spec.

    Only the avatar named by lips_pos animates its mouth and only the avatar
    named by arm_pos sweeps its arm; everything else is static, so the static
    background is drawn once and animated regions are patched per frame.
    """
    yy, xx = np.mgrid[0:SCENE_H, 0:SCENE_W]
    static = np.full((SCENE_H, SCENE_W), BG_LEVEL)
    for a in range(4):
        _draw_avatar(static, yy, xx, a, MOUTH_APERTURE_CLOSED, ARM_REST_DEG)

    faces, bodies = avatar_regions()
    n_frames = FRAME_RATE * DURATION_MS // 1000
    frames = np.repeat(static[None, :, :], n_frames, axis=0)

    def patch(frame_img, box, avatar, aperture, arm_deg):
        x0, y0, x1, y1 = box
        sub_yy, sub_xx = yy[y0:y1, x0:x1], xx[y0:y1, x0:x1]
        region = np.full((y1 - y0, x1 - x0), BG_LEVEL)
        _draw_avatar(region, sub_yy, sub_xx, avatar, aperture, arm_deg)
        frame_img[y0:y1, x0:x1] = region

    for f in range(n_frames):
        t_s = f / FRAME_RATE
        if trial.lips_pos is not None:
            aperture = _mouth_aperture(t_s, animated=True)
            patch(frames[f], faces[trial.lips_pos], trial.lips_pos,
                  aperture, ARM_REST_DEG)
        if trial.arm_pos is not None:
            arm_deg = _arm_angle(t_s, animated=True)
            patch(frames[f], bodies[trial.arm_pos], trial.arm_pos,
                  MOUTH_APERTURE_CLOSED, arm_deg)
    return FrameSequence(frames=frames, frame_rate=FRAME_RATE,
                         face_regions=faces, body_regions=bodies)


def render_bundle(trial: TrialSpec, jitter_ms: float = 0.0,
                  sample_rate: int = SAMPLE_RATE) -> StimulusBundle:
    """Full audio-visual stimulus for a trial with optional audio onset shift."""
    if abs(jitter_ms) > 100:
        raise ValueError(f"jitter out of range: {jitter_ms}")
    mono = synth_syllables(trial.syllables, sample_rate)
    shift = int(round(jitter_ms * sample_rate / 1000.0))
    if shift > 0:
        mono = np.concatenate([np.zeros(shift), mono[:len(mono) - shift]])
    elif shift < 0:
        mono = np.concatenate([mono[-shift:], np.zeros(-shift)])
    audio = binauralize(mono, azimuth_of(trial.audio_pos), sample_rate=sample_rate)
    video = render_frames(trial)
    return StimulusBundle(trial=trial, audio=audio, video=video)


def wav_bytes(audio: StereoWaveform) -> bytes:
    """16-bit PCM stereo RIFF WAV (little-endian)."""
    pcm = np.stack([audio.left, audio.right], axis=1)
    pcm = np.clip(pcm, -1.0, 1.0)
    ints = np.round(pcm * 32767.0).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(ints.tobytes())
    return buf.getvalue()


def wav_read(data: bytes) -> StereoWaveform:
    with wave.open(io.BytesIO(data), "rb") as w:
        n = w.getnframes()
        rate = w.getframerate()
        raw = np.frombuffer(w.readframes(n), dtype="<i2").reshape(n, 2)
    samples = raw.astype(np.float64) / 32767.0
    return StereoWaveform(left=samples[:, 0], right=samples[:, 1],
                          sample_rate=rate,
                          duration_ms=int(round(1000 * n / rate)))


def pgm_bytes(frame: np.ndarray) -> bytes:
    """Binary PGM (P5, maxval 255) of one grayscale frame."""
    h, w = frame.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    body = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8).tobytes()
    return header + body


def pgm_read(data: bytes) -> np.ndarray:
    if not data.startswith(b"P5"):
        raise ValueError("not a P5 PGM")
    parts = data.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=w * h)
    return pixels.reshape(h, w).astype(np.float64) / maxval
