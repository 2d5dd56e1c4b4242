"""Acceptance suite: one test per primary criterion, each printing a
PASS/FAIL line. Heavy artifacts (pretrained channels, the LOOCV run) are
module-scoped fixtures shared across criteria."""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from avloc import analysis, dsp, model, oracle, render, trials
from avloc.autodiff import (
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    LayerGraph,
    MaxPool2x2,
    ReLU,
    Softmax,
    gradient_check,
)
from avloc.cli import main as cli_main
from avloc.render import HEAD_RADIUS_M, SAMPLE_RATE, SPEED_OF_SOUND
from avloc.trials import DistanceCategory


def report(name: str, ok: bool, detail: str = ""):
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


def seeded(s):
    return np.random.default_rng(s)


# --- shared heavy fixtures -----------------------------------------------------

@pytest.fixture(scope="module")
def pretrained_channels():
    """Criterion artifact: three channels pretrained on 1000 synthetic trials."""
    makers = {
        "audio": model.make_audio_pretrain_set,
        "face": model.make_face_pretrain_set,
        "body": model.make_body_pretrain_set,
    }
    channels, accs, seconds = {}, {}, {}
    for i, (name, maker) in enumerate(makers.items()):
        data = maker(1000, seed=i)
        net = model.build_channel(name, seed=100 + i)
        t0 = time.time()
        accs[name] = model.pretrain_channel(net, data, epochs=30, seed=200 + i)
        seconds[name] = time.time() - t0
        channels[name] = net
    return channels, accs, seconds


@pytest.fixture(scope="module")
def e2e(pretrained_channels, oracle_dataset):
    """End-to-end artifacts: model inputs and LOOCV fold records against the
    session's 33-subject oracle dataset (seed 11)."""
    channels, _, _ = pretrained_channels
    base = trials.enumerate_trials(seed=11)
    inputs = {t.trial_id: dsp.preprocess(render.render_bundle(t)) for t in base}
    features = model.feature_table(channels, inputs)
    results = model.loocv(oracle_dataset, channels, inputs, epochs=20, seed=11,
                          fold_cap=8, features=features)
    by_id = {t.trial_id: t for t in base}
    model_records = model.model_response_records(results, by_id)
    return oracle_dataset, model_records, results


# --- criteria --------------------------------------------------------------------

def test_gradient_correctness():
    t0 = time.time()
    toy = LayerGraph([
        Dense(12, 8, rng=seeded(0)), ReLU(),
        Dense(8, 4, rng=seeded(1)), Softmax(),
    ])
    err_a = gradient_check(toy, seeded(2).normal(size=12), target=1)

    conv_net = LayerGraph([
        Conv2d(1, 4, rng=seeded(3)), ReLU(),
        MaxPool2x2(), Flatten(),
        Dense(4 * 5 * 5, 4, rng=seeded(4)),
    ])
    err_b = gradient_check(conv_net, seeded(5).normal(size=(1, 12, 12)), target=2)

    # Full face channel at reduced 40x40 input: conv16, conv16, pool, dropout,
    # then the learned feature projection and a 5-class head.
    face = model.build_channel("face", seed=6, feature_dim=2,
                               input_shape=(1, 40, 40))
    graph = LayerGraph(face.trunk.layers + face.feature.layers
                       + [Dense(2, 5, rng=seeded(7))])
    err_c = gradient_check(graph, seeded(8).normal(size=(1, 40, 40)), target=3,
                           training=True)
    elapsed = time.time() - t0
    ok = err_a < 1e-4 and err_b < 1e-4 and err_c < 1e-4 and elapsed < 120
    report("gradient-correctness", ok,
           f"dense+softmax {err_a:.2e}, conv+pool+dense {err_b:.2e}, "
           f"face-channel {err_c:.2e}, {elapsed:.0f}s")


def test_shape_fidelity():
    audio = model.build_channel("audio", seed=0)
    convs = [l for l in audio.trunk.layers if isinstance(l, Conv2d)]
    filters_ok = tuple(c.out_channels for c in convs) == (8, 8, 16, 16, 24, 24, 32, 32)
    strides_ok = tuple(c.stride for c in convs) == (1, 2, 1, 2, 1, 2, 1, 2)
    trace = audio.trunk.shape_trace((1, 512, 26))
    # shape propagation must match a live forward pass
    x = seeded(1).normal(size=(1, 1, 512, 26)).astype(np.float32)
    run_ok = audio.trunk.forward(x).shape[1:] == trace[-1]
    # the stride-2 layer of each conv+relu pair halves the time axis
    halves_ok = [trace[4 * i][1] for i in range(5)] == [512, 256, 128, 64, 32]

    face = model.build_channel("face", seed=0)
    face_kinds = [type(l).__name__ for l in face.trunk.layers]
    face_arch_ok = face_kinds == ["Conv2d", "ReLU", "Conv2d", "ReLU",
                                  "MaxPool2x2", "Dropout"]
    face_convs = [l for l in face.trunk.layers if isinstance(l, Conv2d)]
    face_filters_ok = all(c.out_channels == 16 for c in face_convs)
    face_shape_ok = face.trunk.out_shape((1, 120, 120)) == (16, 58, 58)

    body = model.build_channel("body", seed=0)
    body_shape_ok = body.trunk.out_shape((1, 60, 80)) == (16, 28, 38)
    body_run_ok = body.trunk.forward(
        seeded(2).normal(size=(1, 1, 60, 80)).astype(np.float32)).shape[1:] \
        == (16, 28, 38)

    ok = all([len(convs) == 8, filters_ok, strides_ok, run_ok, halves_ok,
              face_arch_ok, face_filters_ok, face_shape_ok, body_shape_ok,
              body_run_ok])
    report("shape-fidelity", ok)


def test_unisensory_pretraining(pretrained_channels):
    channels, accs, seconds = pretrained_channels
    total = sum(seconds.values())

    # A trained face channel must call a static (baseline) scene "absent".
    baseline = trials.TrialSpec(0, trials.Condition.BASELINE, 1, None, None,
                                ("ha", "wa", "ba"))
    faces = model.normalize_image(
        dsp.average_faces(render.render_frames(baseline)))
    face = channels["face"]
    feats = face.extract(faces[:, None].astype(np.float32))
    logits = face.head.forward(feats.reshape(1, -1))
    absent_ok = int(logits.argmax()) == model.ABSENT_CLASS

    ok = all(a >= 0.95 for a in accs.values()) and total < 600 and absent_ok
    report("unisensory-pretraining", ok,
           ", ".join(f"{k} {v:.3f} in {seconds[k]:.0f}s" for k, v in accs.items())
           + f"; total {total:.0f}s; baseline->absent {absent_ok}")


def test_oracle_calibration(oracle_dataset):
    cat = analysis.error_rates(oracle_dataset.records, "category")
    strat = analysis.error_rates(oracle_dataset.records, "strategy")
    targets_cat = {"congruent": 0.07, "central": 0.64, "one_gap": 0.59,
                   "lateral": 0.59, "two_gap": 0.56}
    targets_strat = {"auditory": 0.20, "visual": 0.54, "mixed": 0.43}
    cat_ok = all(abs(cat[k] - v) <= 0.03 for k, v in targets_cat.items())
    strat_ok = all(abs(strat[k] - v) <= 0.03 for k, v in targets_strat.items())
    report("oracle-calibration", cat_ok and strat_ok,
           "ER " + ", ".join(f"{k}={cat[k]:.3f}" for k in targets_cat)
           + "; " + ", ".join(f"{k}={strat[k]:.3f}" for k in targets_strat))


def test_end_to_end_reproduction(e2e):
    dataset, model_records, results = e2e
    # LOOCV bookkeeping: 33 subjects x 600 records; every fold trains on
    # 32 x 600 = 19200 records and emits 600 held-out responses.
    assert len(dataset.subjects()) == 33
    assert len(dataset.records) == 33 * 600
    assert len(dataset.trainable()) - 600 == 19200
    assert all(len(fr.responses) == 600 for fr in results)

    fold_subjects = {r.subject_id for r in model_records}
    oracle_records = [r for r in dataset.records if r.subject_id in fold_subjects]

    comp = analysis.compare_human_model(oracle_records, model_records)
    p_ok = comp.p > 0.05

    bias = analysis.ventriloquism_bias(model_records)
    order_ok = (bias["lips_arm"] >= bias["lips"]
                > bias["lips_vs_arm_lips"] > bias["arm"])

    congruent = [r for r in model_records
                 if r.trial.category() is DistanceCategory.CONGRUENT]
    congruent_acc = float(np.mean([r.response == r.trial.audio_pos
                                   for r in congruent]))
    cong_ok = congruent_acc >= 0.9

    report("end-to-end-reproduction", p_ok and order_ok and cong_ok,
           f"F={comp.F:.3f} p={comp.p:.3f}; model bias "
           f"LA={bias['lips_arm']:.2f} L={bias['lips']:.2f} "
           f"LVAl={bias['lips_vs_arm_lips']:.2f} A={bias['arm']:.2f}; "
           f"congruent acc {congruent_acc:.3f}")


def test_statistics_correctness():
    # Hand-computed rational fixtures.
    r = analysis.rm_anova([[1.0, 2.0], [2.0, 3.0], [3.0, 4.0]])
    fixture_ok = r.degenerate and r.p < 1e-300  # SS_treat=3/2, SS_resid=0
    t = analysis.paired_t([1.0, 2.0, 3.0, 4.0, 5.0], [0.0] * 5)
    t_expected = 3.0 / (math.sqrt(2.5) / math.sqrt(5.0))
    t_ok = abs(t.t - t_expected) < 1e-12

    # Monte-Carlo p-value agreement within 0.005 at three probe points.
    rng = seeded(42)
    mc_ok = True
    for F0, d1, d2 in [(1.0, 2, 10), (2.5, 4, 64), (0.7, 1, 32)]:
        num = rng.chisquare(d1, size=1_000_000) / d1
        den = rng.chisquare(d2, size=1_000_000) / d2
        mc = float(np.mean(num / den > F0))
        mc_ok &= abs(analysis.f_sf(F0, d1, d2) - mc) < 0.005

    # Null calibration: false-positive rate at alpha=0.05.
    rng = seeded(123)
    hits = sum(analysis.rm_anova(rng.normal(size=(20, 5))).p < 0.05
               for _ in range(1000))
    fpr = hits / 1000
    fpr_ok = 0.03 <= fpr <= 0.07

    report("statistics-correctness", fixture_ok and t_ok and mc_ok and fpr_ok,
           f"t={t.t:.6f}, null FPR={fpr:.3f}")


@pytest.mark.slow
def test_pipeline_determinism(tmp_path):
    runner = CliRunner()
    outputs = []
    for run_dir in ("run_a", "run_b"):
        out = tmp_path / run_dir
        args = ["pipeline", "--seed", "123", "--out", str(out), "--folds", "2",
                "--epochs-pretrain", "3", "--epochs-fusion", "2",
                "--pretrain-trials", "60"]
        cfg = tmp_path / "det.ini"
        cfg.write_text("[run]\nsubjects = 6\nreplication = 1\n")
        result = runner.invoke(cli_main, args + ["--config", str(cfg)])
        assert result.exit_code == 0, result.output
        outputs.append(out)

    mismatches = []
    a_files = sorted(p.relative_to(outputs[0]) for p in outputs[0].rglob("*")
                     if p.is_file() and p.name != "manifest.json")
    b_files = sorted(p.relative_to(outputs[1]) for p in outputs[1].rglob("*")
                     if p.is_file() and p.name != "manifest.json")
    if a_files != b_files:
        mismatches.append("file lists differ")
    for rel in a_files:
        if (outputs[0] / rel).read_bytes() != (outputs[1] / rel).read_bytes():
            mismatches.append(str(rel))
    report("pipeline-determinism", not mismatches,
           f"{len(a_files)} artifacts compared"
           + (f"; mismatches: {mismatches[:4]}" if mismatches else ""))


def test_binaural_sanity():
    # Independent Woodworth evaluation.
    def itd_samples(az):
        theta = math.radians(abs(az))
        itd = (HEAD_RADIUS_M / SPEED_OF_SOUND) * (theta + math.sin(theta))
        return int(round(itd * SAMPLE_RATE)) * (1 if az >= 0 else -1)

    ok = itd_samples(33.0) == 5 and itd_samples(-33.0) == -5 \
        and itd_samples(0.0) == 0

    # And the rendered waveforms realize exactly that delay.
    mono = render.synth_syllables(("ha", "wa", "ba"))
    st = render.binauralize(mono, 33.0)
    gain = 10 ** (-(render.ILD_DB_PER_10DEG * 33 / 10) / 20)
    delay_ok = np.allclose(st.left[5:], mono[:-5] * gain) \
        and np.array_equal(st.right, mono)
    zero = render.binauralize(mono, 0.0)
    center_ok = np.array_equal(zero.left, zero.right)
    report("binaural-sanity", ok and delay_ok and center_ok)
