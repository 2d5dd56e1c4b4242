"""Multichannel network: per-modality channels, fusion head, and LOOCV.

Stage 1 pretrains each modality channel on its own localization task (audio:
sound-source position; face: moving-lips position or absent; body: moving-arm
position or absent). Stage 2 freezes the channels and trains a fusion head on
behavioural responses. Channels expose a compact learned feature vector; the
fusion input concatenates audio(left) + audio(right) + 4 faces + body.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import dsp, render
from .autodiff import (
    Adam,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    LayerGraph,
    MaxPool2x2,
    ReLU,
    load_checkpoint,
    save_checkpoint,
    softmax_cross_entropy,
)
from .dsp import ModelInput
from .trials import (
    SYLLABLE_PERMUTATIONS,
    Condition,
    TrialSpec,
    azimuth_of,
    trial_from_dict,
    trial_to_dict,
)

AUDIO_INPUT_SHAPE = (1, 512, 26)
FACE_INPUT_SHAPE = (1, 120, 120)
BODY_INPUT_SHAPE = (1, 60, 80)

AUDIO_FILTERS = (8, 8, 16, 16, 24, 24, 32, 32)
AUDIO_STRIDES = (1, 2, 1, 2, 1, 2, 1, 2)

# Views concatenated before the pretraining head / fusion input.
MODALITY_VIEWS = {"audio": 2, "face": 4, "body": 1}
MODALITY_CLASSES = {"audio": 4, "face": 5, "body": 5}
ABSENT_CLASS = 4  # "no moving cue" label for the visual channels

DEFAULT_FEATURE_DIM = 64

# Input conditioning: log filterbank values span roughly [-23, +3] and the
# scene rasters sit in [0, 1] with a dark background; recentring both keeps
# first-layer activations O(1).
AUDIO_OFFSET = 15.0
AUDIO_SCALE = 8.0
IMAGE_OFFSET = 0.25


def normalize_audio(values: np.ndarray) -> np.ndarray:
    return (values + AUDIO_OFFSET) / AUDIO_SCALE


def normalize_image(img: np.ndarray) -> np.ndarray:
    return img - IMAGE_OFFSET


@dataclass
class ChannelNet:
    modality: str
    trunk: LayerGraph
    feature: LayerGraph   # Flatten + Dense(feature_dim) + ReLU
    head: LayerGraph      # Dense(views * feature_dim -> classes)
    feature_dim: int
    input_shape: tuple
    pretrained: bool = False

    def extract(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Per-view features: (N, 1, H, W) -> (N, feature_dim)."""
        h = self.trunk.forward(x, training=training)
        return self.feature.forward(h, training=training)

    def parameters(self):
        return self.trunk.params() + self.feature.params() + self.head.params()

    def combined_graph(self) -> LayerGraph:
        return LayerGraph(self.trunk.layers + self.feature.layers + self.head.layers)


def _audio_trunk(rng, dtype) -> LayerGraph:
    layers = []
    in_ch = 1
    for out_ch, stride in zip(AUDIO_FILTERS, AUDIO_STRIDES):
        # padding 1 keeps the 26-wide descriptor axis alive across all four
        # pairs; stride-2 layers halve both spatial dims.
        layers.append(Conv2d(in_ch, out_ch, stride=stride, padding=1,
                             rng=rng, dtype=dtype))
        layers.append(ReLU(inplace=True))
        in_ch = out_ch
    return LayerGraph(layers)


def _visual_trunk(rng, dtype) -> LayerGraph:
    return LayerGraph([
        Conv2d(1, 16, stride=1, padding=0, rng=rng, dtype=dtype),
        ReLU(inplace=True),
        Conv2d(16, 16, stride=1, padding=0, rng=rng, dtype=dtype),
        ReLU(inplace=True),
        MaxPool2x2(),
        Dropout(0.5, rng=np.random.default_rng(rng.integers(2**32))),
    ])


def build_channel(modality: str, seed: int = 0,
                  feature_dim: int = DEFAULT_FEATURE_DIM,
                  input_shape: Optional[tuple] = None,
                  dtype=np.float32) -> ChannelNet:
    """Construct a modality channel with He-uniform seeded weights."""
    if modality not in MODALITY_VIEWS:
        raise ValueError(f"unknown modality: {modality}")
    rng = np.random.default_rng(seed)
    if input_shape is None:
        input_shape = {"audio": AUDIO_INPUT_SHAPE, "face": FACE_INPUT_SHAPE,
                       "body": BODY_INPUT_SHAPE}[modality]
    trunk = _audio_trunk(rng, dtype) if modality == "audio" else _visual_trunk(rng, dtype)
    flat = int(np.prod(trunk.out_shape(input_shape)))
    feature = LayerGraph([
        Flatten(),
        Dense(flat, feature_dim, rng=rng, dtype=dtype),
        ReLU(),
    ])
    head = LayerGraph([
        Dense(MODALITY_VIEWS[modality] * feature_dim, MODALITY_CLASSES[modality],
              rng=rng, dtype=dtype, init_scale=0.0),
    ])
    return ChannelNet(modality=modality, trunk=trunk, feature=feature, head=head,
                      feature_dim=feature_dim, input_shape=tuple(input_shape))


@dataclass
class UnisensorySet:
    """Labeled single-modality examples: inputs (N, views, H, W), labels (N,)."""
    modality: str
    inputs: np.ndarray
    labels: np.ndarray


def _balanced_positions(n: int, classes: int, rng) -> np.ndarray:
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    return labels


def make_audio_pretrain_set(n: int, seed: int = 0) -> UnisensorySet:
    """Clean binaural localization set: (N, 2, 512, 26) spectrogram pairs."""
    rng = np.random.default_rng(seed)
    labels = _balanced_positions(n, 4, rng)
    x = np.zeros((n, 2, 512, 26), dtype=np.float32)
    for i, pos in enumerate(labels):
        syll = SYLLABLE_PERMUTATIONS[rng.integers(len(SYLLABLE_PERMUTATIONS))]
        mono = render.synth_syllables(syll)
        stereo = render.binauralize(mono, azimuth_of(int(pos)))
        x[i, 0] = normalize_audio(dsp.stft_descriptors(stereo.left).values)
        x[i, 1] = normalize_audio(dsp.stft_descriptors(stereo.right).values)
    return UnisensorySet("audio", x, labels.astype(np.int64))


def make_face_pretrain_set(n: int, seed: int = 0) -> UnisensorySet:
    """Face localization set: (N, 4, 120, 120) crops, label = lips pos or 4."""
    rng = np.random.default_rng(seed)
    labels = _balanced_positions(n, 5, rng)
    x = np.zeros((n, 4, 120, 120), dtype=np.float32)
    for i, label in enumerate(labels):
        trial = _visual_trial(int(label), None, rng)
        x[i] = normalize_image(dsp.average_faces(render.render_frames(trial)))
    return UnisensorySet("face", x, labels.astype(np.int64))


def make_body_pretrain_set(n: int, seed: int = 0) -> UnisensorySet:
    """Body localization set: (N, 1, 60, 80) scenes, label = arm pos or 4."""
    rng = np.random.default_rng(seed)
    labels = _balanced_positions(n, 5, rng)
    x = np.zeros((n, 1, 60, 80), dtype=np.float32)
    for i, label in enumerate(labels):
        trial = _visual_trial(None, int(label), rng)
        x[i, 0] = normalize_image(dsp.average_body(render.render_frames(trial)))
    return UnisensorySet("body", x, labels.astype(np.int64))


def _visual_trial(lips_label: Optional[int], arm_label: Optional[int], rng) -> TrialSpec:
    lips = None if lips_label in (None, ABSENT_CLASS) else lips_label
    arm = None if arm_label in (None, ABSENT_CLASS) else arm_label
    if lips is not None and arm is None:
        cond = Condition.LIPS
    elif arm is not None and lips is None:
        cond = Condition.ARM
    else:
        cond = Condition.BASELINE
    return TrialSpec(
        trial_id=0, condition=cond, audio_pos=int(rng.integers(4)),
        lips_pos=lips, arm_pos=arm,
        syllables=SYLLABLE_PERMUTATIONS[rng.integers(6)],
    )


def pretrain_channel(net: ChannelNet, data: UnisensorySet, epochs: int = 30,
                     seed: int = 0, batch_size: int = 32, lr: float = 2e-3,
                     val_fraction: float = 0.2, target_acc: float = 0.97,
                     log: Optional[Callable[[str], None]] = None) -> float:
    """Train trunk+feature+head on a unisensory set; returns held-out accuracy.

    Stops early once the held-out accuracy reaches ``target_acc`` (always at
    least one epoch); ``epochs`` caps the budget either way.
    """
    if len(data.inputs) == 0:
        raise ValueError("empty pretraining dataset")
    if data.modality != net.modality:
        raise ValueError(f"dataset modality {data.modality} != net {net.modality}")
    rng = np.random.default_rng(seed)
    n = len(data.inputs)
    order = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    views = MODALITY_VIEWS[net.modality]

    params = net.parameters()
    opt = Adam(params, lr=lr)

    def run_batch(idx, training):
        xb = data.inputs[idx]
        flat = xb.reshape(len(idx) * views, 1, *xb.shape[2:])
        feats = net.extract(flat, training=training)
        return net.head.forward(feats.reshape(len(idx), views * net.feature_dim),
                                training=training)

    def val_accuracy():
        preds = []
        for i in range(0, len(val_idx), batch_size):
            logits = run_batch(val_idx[i:i + batch_size], training=False)
            preds.append(logits.argmax(axis=1))
        return float(np.mean(np.concatenate(preds) == data.labels[val_idx]))

    acc = 0.0
    for epoch in range(epochs):
        epoch_order = rng.permutation(train_idx)
        losses = []
        for i in range(0, len(epoch_order), batch_size):
            idx = epoch_order[i:i + batch_size]
            logits = run_batch(idx, training=True)
            loss, dlogits = softmax_cross_entropy(logits, data.labels[idx])
            opt.zero_grad()
            dfeats = net.head.backward(dlogits.astype(logits.dtype))
            dview = dfeats.reshape(len(idx) * views, net.feature_dim)
            net.trunk.backward(net.feature.backward(dview))
            opt.step()
            losses.append(loss)
        acc = val_accuracy()
        if log:
            log(f"{net.modality} epoch {epoch}: loss {np.mean(losses):.4f} "
                f"val_acc {acc:.3f}")
        if acc >= target_acc:
            break
    net.pretrained = True
    return acc


def training_loss(net: ChannelNet, data: UnisensorySet, batch_size: int = 64) -> float:
    """Mean cross-entropy of a channel over a unisensory set (no updates)."""
    views = MODALITY_VIEWS[net.modality]
    losses = []
    for i in range(0, len(data.inputs), batch_size):
        xb = data.inputs[i:i + batch_size]
        flat = xb.reshape(len(xb) * views, 1, *xb.shape[2:])
        feats = net.extract(flat, training=False)
        logits = net.head.forward(feats.reshape(len(xb), views * net.feature_dim))
        loss, _ = softmax_cross_entropy(logits, data.labels[i:i + batch_size])
        losses.append(loss)
    return float(np.mean(losses))


# --- fusion -------------------------------------------------------------------

def fusion_input_dim(channels: dict) -> int:
    return sum(MODALITY_VIEWS[m] * channels[m].feature_dim for m in ("audio", "face", "body"))


def fuse_features(channels: dict, mi: ModelInput) -> np.ndarray:
    """Frozen-channel feature vector: audio L, audio R, faces 0-3, body."""
    for m in ("audio", "face", "body"):
        if not channels[m].pretrained:
            raise ValueError(f"{m} channel is not pretrained")
    audio_in = normalize_audio(
        np.stack([mi.spec_left.values, mi.spec_right.values]))[:, None] \
        .astype(np.float32)
    faces_in = normalize_image(mi.faces)[:, None].astype(np.float32)
    body_in = normalize_image(mi.body)[None, None].astype(np.float32)
    parts = [
        channels["audio"].extract(audio_in).reshape(-1),
        channels["face"].extract(faces_in).reshape(-1),
        channels["body"].extract(body_in).reshape(-1),
    ]
    return np.concatenate(parts)


@dataclass
class FusionNet:
    graph: LayerGraph
    in_dim: int

    def logits(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        return self.graph.forward(x, training=training)

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        logits = self.logits(x)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)


def build_fusion(in_dim: int, seed: int = 0, hidden: int = 128,
                 dropout_rate: float = 0.5, dtype=np.float32) -> FusionNet:
    rng = np.random.default_rng(seed)
    graph = LayerGraph([
        Dense(in_dim, hidden, rng=rng, dtype=dtype),
        ReLU(),
        Dropout(dropout_rate, rng=np.random.default_rng(rng.integers(2**32))),
        Dense(hidden, 4, rng=rng, dtype=dtype),
    ])
    return FusionNet(graph=graph, in_dim=in_dim)


# --- behavioural data ----------------------------------------------------------

@dataclass
class BehavioralRecord:
    subject_id: str
    trial: TrialSpec
    response: int              # avatar index 0..3, or -1 for a timeout
    source: str                # "human" | "oracle" | "model"
    strategy: Optional[str] = None
    reaction_ms: Optional[float] = None
    timeout: bool = False

    def to_dict(self) -> dict:
        d = trial_to_dict(self.trial)
        d.update({
            "subject_id": self.subject_id,
            "response": self.response,
            "source": self.source,
            "strategy": self.strategy,
            "reaction_ms": self.reaction_ms,
            "timeout": self.timeout,
        })
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BehavioralRecord":
        return cls(
            subject_id=str(d["subject_id"]),
            trial=trial_from_dict(d),
            response=int(d["response"]),
            source=str(d["source"]),
            strategy=d.get("strategy"),
            reaction_ms=d.get("reaction_ms"),
            timeout=bool(d.get("timeout", False)),
        )


@dataclass
class BehavioralDataset:
    records: list
    header: dict = field(default_factory=dict)

    def subjects(self) -> list[str]:
        seen = dict.fromkeys(r.subject_id for r in self.records)
        return list(seen)

    def by_subject(self, subject_id: str) -> list:
        return [r for r in self.records if r.subject_id == subject_id]

    def trainable(self) -> list:
        return [r for r in self.records if not r.timeout and 0 <= r.response <= 3]


def record_to_line(r: BehavioralRecord) -> str:
    return json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":"))


def dump_dataset(ds: BehavioralDataset) -> str:
    header = dict(ds.header)
    header.setdefault("kind", "behavioral-dataset")
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    lines.extend(record_to_line(r) for r in ds.records)
    return "\n".join(lines) + "\n"


def load_dataset(text: str) -> BehavioralDataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty dataset file")
    header = json.loads(lines[0])
    if header.get("kind") != "behavioral-dataset":
        raise ValueError("missing behavioral-dataset header")
    records = [BehavioralRecord.from_dict(json.loads(ln)) for ln in lines[1:]]
    return BehavioralDataset(records=records, header=header)


# --- stage-2 training -----------------------------------------------------------

def feature_table(channels: dict, inputs_by_trial: dict) -> dict:
    """Feature vector per unique trial_id (channels frozen, dropout off)."""
    return {tid: fuse_features(channels, mi) for tid, mi in inputs_by_trial.items()}


def train_fusion(fusion: FusionNet, channels: dict, records: Iterable,
                 inputs_by_trial: dict, epochs: int = 20, seed: int = 0,
                 batch_size: int = 32, lr: float = 1e-3,
                 features: Optional[dict] = None) -> list[float]:
    """Train the fusion head on recorded responses; channels stay frozen.

    Returns the per-epoch mean training loss. ``features`` may carry a
    precomputed trial_id -> vector table to share across folds.
    """
    records = list(records)
    if not records:
        raise ValueError("empty training data")
    feats = features if features is not None else feature_table(channels, inputs_by_trial)
    x = np.stack([feats[r.trial.trial_id] for r in records]).astype(np.float32)
    y = np.array([r.response for r in records], dtype=np.int64)
    if np.any(y < 0) or np.any(y > 3):
        raise ValueError("responses out of range; filter timeouts first")

    rng = np.random.default_rng(seed)
    opt = Adam(fusion.graph.params(), lr=lr)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(records))
        losses = []
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            logits = fusion.logits(x[idx], training=True)
            loss, dlogits = softmax_cross_entropy(logits, y[idx])
            opt.zero_grad()
            fusion.graph.backward(dlogits.astype(np.float32))
            opt.step()
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def infer(fusion: FusionNet, channels: dict, mi: ModelInput) -> np.ndarray:
    """Response distribution over the 4 avatars; argmax is the response."""
    feats = fuse_features(channels, mi).astype(np.float32)
    return fusion.probabilities(feats[None])[0].astype(np.float64)


@dataclass
class FoldResult:
    subject_id: str
    responses: list  # (trial_id, session, response, probs) per held-out record


def loocv(dataset: BehavioralDataset, channels: dict, inputs_by_trial: dict,
          epochs: int = 20, seed: int = 0, fold_cap: Optional[int] = None,
          batch_size: int = 32, lr: float = 1e-3,
          features: Optional[dict] = None,
          log: Optional[Callable[[str], None]] = None) -> list[FoldResult]:
    """Leave-one-subject-out evaluation.

    Every fold starts from a freshly initialized fusion head (seed+fold) and
    trains on all remaining subjects' non-timeout records, then responds to
    the held-out subject's full schedule.
    """
    subjects = dataset.subjects()
    if fold_cap is not None:
        subjects = subjects[:fold_cap]
    feats = features if features is not None else feature_table(channels, inputs_by_trial)
    feats32 = {tid: v.astype(np.float32) for tid, v in feats.items()}
    in_dim = len(next(iter(feats32.values())))
    results = []
    for fold, held_out in enumerate(subjects):
        train_records = [r for r in dataset.trainable() if r.subject_id != held_out]
        fusion = build_fusion(in_dim, seed=seed + fold)
        train_fusion(fusion, channels, train_records, inputs_by_trial,
                     epochs=epochs, seed=seed + fold, batch_size=batch_size,
                     lr=lr, features=feats32)
        held_records = dataset.by_subject(held_out)
        xs = np.stack([feats32[r.trial.trial_id] for r in held_records])
        probs = fusion.probabilities(xs)
        responses = [
            (r.trial.trial_id, r.trial.session, int(p.argmax()),
             [float(v) for v in p])
            for r, p in zip(held_records, probs)
        ]
        results.append(FoldResult(subject_id=held_out, responses=responses))
        if log:
            log(f"fold {fold} ({held_out}): {len(train_records)} train records")
    return results


def fold_results_to_jsonl(results: list[FoldResult]) -> str:
    lines = []
    for fr in results:
        for trial_id, session, response, probs in fr.responses:
            lines.append(json.dumps({
                "subject_id": fr.subject_id,
                "trial_id": trial_id,
                "session": session,
                "response": response,
                "probs": [round(p, 8) for p in probs],
            }, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def model_response_records(results: list[FoldResult],
                           trials_by_id: dict) -> list[BehavioralRecord]:
    """FoldResults as behavioural records (source = model) for analysis."""
    out = []
    for fr in results:
        for trial_id, session, response, _ in fr.responses:
            base = trials_by_id[trial_id]
            trial = TrialSpec(
                trial_id=base.trial_id, condition=base.condition,
                audio_pos=base.audio_pos, lips_pos=base.lips_pos,
                arm_pos=base.arm_pos, syllables=base.syllables, session=session,
            )
            out.append(BehavioralRecord(
                subject_id=fr.subject_id, trial=trial, response=response,
                source="model",
            ))
    return out


def save_channel(net: ChannelNet) -> bytes:
    return save_checkpoint(net.combined_graph())


def load_channel(net: ChannelNet, blob: bytes):
    load_checkpoint(net.combined_graph(), blob)
    net.pretrained = True
