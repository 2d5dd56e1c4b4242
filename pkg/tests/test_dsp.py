import numpy as np
import pytest

from avloc.dsp import (
    LOG_FLOOR,
    average_body,
    average_faces,
    bilinear_resize,
    downscale_area,
    hz_to_mel,
    mel_to_hz,
    model_input_from_bytes,
    model_input_to_bytes,
    preprocess,
    stft_descriptors,
)
from avloc.render import FrameSequence, render_bundle, render_frames
from avloc.trials import Condition, TrialSpec

SYL = ("ha", "wa", "ba")


def make_trial(cond, audio=0, lips=None, arm=None):
    return TrialSpec(0, cond, audio, lips_pos=lips, arm_pos=arm, syllables=SYL)


# --- spectrograms ------------------------------------------------------------

def test_stft_shape():
    spec = stft_descriptors(np.random.default_rng(0).normal(size=16000))
    assert spec.values.shape == (512, 26)
    assert np.all(np.isfinite(spec.values))


def test_stft_silence_floor():
    spec = stft_descriptors(np.zeros(16000))
    assert np.all(spec.values == LOG_FLOOR)


def test_stft_rejects_wrong_length():
    with pytest.raises(ValueError):
        stft_descriptors(np.zeros(8000))


def test_stft_tone_band():
    # Independent oracle: mel band edges recomputed here; the band containing
    # 1 kHz is the filter with the largest triangular gain in mel space.
    edges_mel = np.linspace(hz_to_mel(0.0), hz_to_mel(8000.0), 28)
    tone_mel = hz_to_mel(1000.0)
    gains = np.minimum(
        (tone_mel - edges_mel[:-2]) / (edges_mel[1:-1] - edges_mel[:-2]),
        (edges_mel[2:] - tone_mel) / (edges_mel[2:] - edges_mel[1:-1]),
    )
    expected_band = int(np.argmax(gains))

    t = np.arange(16000) / 16000.0
    spec = stft_descriptors(0.8 * np.sin(2 * np.pi * 1000.0 * t))
    argmax = spec.values.argmax(axis=1)
    assert len(np.unique(argmax)) == 1
    assert argmax[0] == expected_band


def test_stft_energy_scales_with_tone_coverage():
    # A tone over half the window should carry about half the total linear
    # filterbank energy of the full-duration tone.
    t = np.arange(16000) / 16000.0
    tone = np.sin(2 * np.pi * 1000.0 * t)
    half = tone.copy()
    half[8000:] = 0.0
    e_full = np.exp(stft_descriptors(tone).values).sum()
    e_half = np.exp(stft_descriptors(half).values).sum()
    assert abs(e_full / e_half - 2.0) < 0.1  # within 5% of the 2x ratio


def test_stft_linear_mode():
    t = np.arange(16000) / 16000.0
    spec = stft_descriptors(np.sin(2 * np.pi * 1000.0 * t), mode="linear26")
    assert spec.values.shape == (512, 26)
    # 26 equal bands over 0..8000: 1 kHz falls in band floor(1000/307.7) = 3.
    argmax = np.unique(spec.values.argmax(axis=1))
    assert list(argmax) == [3]
    with pytest.raises(ValueError):
        stft_descriptors(np.zeros(16000), mode="cepstra")


# --- image averaging ---------------------------------------------------------

def test_average_body_static_equals_downscale():
    seq = render_frames(make_trial(Condition.BASELINE))
    body = average_body(seq)
    assert body.shape == (60, 80)
    assert np.allclose(body, downscale_area(seq.frames[0], 4))


def test_average_body_two_frame_mean():
    frames = np.stack([np.zeros((240, 320)), np.ones((240, 320))])
    seq = FrameSequence(frames=frames)
    assert np.allclose(average_body(seq), 0.5)


def test_downscale_preserves_mean():
    rng = np.random.default_rng(1)
    img = rng.uniform(size=(240, 320))
    assert abs(downscale_area(img, 4).mean() - img.mean()) < 1e-6


def test_average_faces_shapes_and_static_crop():
    seq = render_frames(make_trial(Condition.BASELINE))
    faces = average_faces(seq)
    assert faces.shape == (4, 120, 120)
    x0, y0, x1, y1 = seq.face_regions[1]
    expected = bilinear_resize(seq.frames[0, y0:y1, x0:x1], (120, 120))
    assert np.allclose(faces[1], expected)


def test_average_faces_lips_trial_differs():
    static = average_faces(render_frames(make_trial(Condition.BASELINE)))
    lipped = average_faces(render_frames(make_trial(Condition.LIPS, lips=2)))
    assert np.abs(lipped[2] - static[2]).max() > 0.01
    for i in (0, 1, 3):
        assert np.allclose(lipped[i], static[i])


def test_average_body_rejects_empty():
    seq = render_frames(make_trial(Condition.BASELINE))
    empty = FrameSequence(frames=seq.frames[:0], face_regions=seq.face_regions,
                          body_regions=seq.body_regions)
    with pytest.raises(ValueError):
        average_body(empty)


def test_bilinear_resize_constant_image():
    img = np.full((60, 60), 0.37)
    out = bilinear_resize(img, (120, 120))
    assert np.allclose(out, 0.37)


# --- full preprocessing ------------------------------------------------------

def test_preprocess_invariants_and_determinism():
    bundle = render_bundle(make_trial(Condition.LIPS_ARM, audio=2, lips=1, arm=1))
    a = preprocess(bundle)
    b = preprocess(bundle)
    assert np.array_equal(a.spec_left.values, b.spec_left.values)
    assert np.array_equal(a.body, b.body)
    assert np.array_equal(a.faces, b.faces)
    assert a.body.min() >= 0.0 and a.body.max() <= 1.0
    assert a.faces.min() >= 0.0 and a.faces.max() <= 1.0


def test_preprocess_ild_sign():
    # Audio at +33 degrees: the right ear is ipsilateral, so the right
    # spectrogram should carry more energy than the left.
    bundle = render_bundle(make_trial(Condition.BASELINE, audio=3))
    mi = preprocess(bundle)
    right = np.exp(mi.spec_right.values).sum()
    left = np.exp(mi.spec_left.values).sum()
    assert right > left
    # And mirrored for the leftmost position.
    mi0 = preprocess(render_bundle(make_trial(Condition.BASELINE, audio=0)))
    assert np.exp(mi0.spec_left.values).sum() > np.exp(mi0.spec_right.values).sum()


def test_model_input_container_roundtrip():
    bundle = render_bundle(make_trial(Condition.LIPS, audio=1, lips=3))
    mi = preprocess(bundle)
    blob = model_input_to_bytes(mi)
    assert blob[:4] == b"XMI1"
    back = model_input_from_bytes(blob)
    # float32 serialization quantizes; roundtrip is exact at float32.
    assert np.array_equal(back.spec_left.values,
                          mi.spec_left.values.astype(np.float32).astype(np.float64))
    assert np.array_equal(back.faces,
                          mi.faces.astype(np.float32).astype(np.float64))
    assert model_input_to_bytes(back) == blob


def test_mel_hz_roundtrip():
    f = np.array([100.0, 1000.0, 4000.0, 8000.0])
    assert np.allclose(mel_to_hz(hz_to_mel(f)), f)
