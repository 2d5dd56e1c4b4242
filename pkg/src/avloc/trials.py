"""Trial enumeration, spatial categorization, and session scheduling.

The scene holds 4 avatars at fixed azimuths; a trial pairs one auditory cue
with zero, one, or two visual cues (moving lips and/or a moving arm) under
five conditions. The full set of spatial combinations yields 100 unique
layouts, each replicated with two syllable permutations for 200 trials.
"""

from __future__ import annotations

import enum
import itertools
import json
import random
from dataclasses import dataclass, replace
from typing import Iterable, Optional

AVATAR_AZIMUTHS = {0: -33.0, 1: -11.0, 2: 11.0, 3: 33.0}

SYLLABLES = ("ha", "wa", "ba")
SYLLABLE_PERMUTATIONS = tuple(itertools.permutations(SYLLABLES))

N_UNIQUE_COMBINATIONS = 100
N_TRIALS = 200
N_SESSIONS = 3
N_PRACTICE = 12


def azimuth_of(index: int) -> float:
    """Azimuth in degrees of an avatar index (0..3, left to right)."""
    return AVATAR_AZIMUTHS[index]


class Condition(enum.Enum):
    BASELINE = "baseline"
    LIPS = "lips"
    ARM = "arm"
    LIPS_ARM = "lips_arm"
    LIPS_VS_ARM = "lips_vs_arm"


class DistanceCategory(enum.Enum):
    CONGRUENT = "congruent"
    CENTRAL = "central"
    LATERAL = "lateral"
    ONE_GAP = "one_gap"
    TWO_GAP = "two_gap"


def categorize(audio_pos: int, visual_pos: int) -> DistanceCategory:
    """Spatial relationship class of an audio/visual avatar pair.

    Total and symmetric over 0..3 x 0..3: identical positions are congruent;
    the center pair {1,2} is central; {0,1} and {2,3} are lateral; a distance
    of two indices is a one-avatar gap and {0,3} is the two-avatar gap.
    """
    for pos in (audio_pos, visual_pos):
        if pos not in AVATAR_AZIMUTHS:
            raise ValueError(f"avatar index out of range: {pos}")
    if audio_pos == visual_pos:
        return DistanceCategory.CONGRUENT
    pair = {audio_pos, visual_pos}
    if pair == {1, 2}:
        return DistanceCategory.CENTRAL
    if pair in ({0, 1}, {2, 3}):
        return DistanceCategory.LATERAL
    gap = abs(audio_pos - visual_pos)
    if gap == 2:
        return DistanceCategory.ONE_GAP
    return DistanceCategory.TWO_GAP


@dataclass(frozen=True)
class TrialSpec:
    """One experimental trial.

    ``session`` is 0 for trials that have not been scheduled yet (the base
    enumeration and practice trials); the session scheduler stamps 1..3.
    """

    trial_id: int
    condition: Condition
    audio_pos: int
    lips_pos: Optional[int]
    arm_pos: Optional[int]
    syllables: tuple[str, str, str]
    session: int = 0

    def __post_init__(self):
        if self.audio_pos not in AVATAR_AZIMUTHS:
            raise ValueError(f"audio_pos out of range: {self.audio_pos}")
        for name, pos in (("lips_pos", self.lips_pos), ("arm_pos", self.arm_pos)):
            if pos is not None and pos not in AVATAR_AZIMUTHS:
                raise ValueError(f"{name} out of range: {pos}")
        if self.session not in (0, 1, 2, 3):
            raise ValueError(f"session out of range: {self.session}")
        if tuple(self.syllables) not in SYLLABLE_PERMUTATIONS:
            raise ValueError(f"invalid syllable triple: {self.syllables}")
        cond = self.condition
        if cond is Condition.BASELINE:
            ok = self.lips_pos is None and self.arm_pos is None
        elif cond is Condition.LIPS:
            ok = self.lips_pos is not None and self.arm_pos is None
        elif cond is Condition.ARM:
            ok = self.arm_pos is not None and self.lips_pos is None
        elif cond is Condition.LIPS_ARM:
            ok = (
                self.lips_pos is not None
                and self.arm_pos is not None
                and self.lips_pos == self.arm_pos
            )
        else:  # LIPS_VS_ARM
            ok = (
                self.lips_pos is not None
                and self.arm_pos is not None
                and self.lips_pos != self.arm_pos
            )
        if not ok:
            raise ValueError(f"visual positions inconsistent with {cond}")

    @property
    def spatial_signature(self) -> tuple:
        return (self.condition.value, self.audio_pos, self.lips_pos, self.arm_pos)

    def category(self) -> Optional[DistanceCategory]:
        """Distance category of the trial, or None where undefined.

        Baseline trials carry no conflicting cue and count as congruent.
        Lips-vs-arm trials contain two audio-visual pairs and have no single
        pair category; they are reported per-condition instead.
        """
        if self.condition is Condition.BASELINE:
            return DistanceCategory.CONGRUENT
        if self.condition is Condition.LIPS_VS_ARM:
            return None
        visual = self.lips_pos if self.lips_pos is not None else self.arm_pos
        return categorize(self.audio_pos, visual)


def _spatial_combinations() -> list[tuple[Condition, int, Optional[int], Optional[int]]]:
    combos = []
    for audio in range(4):
        combos.append((Condition.BASELINE, audio, None, None))
    for audio in range(4):
        for vis in range(4):
            combos.append((Condition.LIPS, audio, vis, None))
    for audio in range(4):
        for vis in range(4):
            combos.append((Condition.ARM, audio, None, vis))
    for audio in range(4):
        for vis in range(4):
            combos.append((Condition.LIPS_ARM, audio, vis, vis))
    for audio in range(4):
        for lips in range(4):
            for arm in range(4):
                if arm != lips:
                    combos.append((Condition.LIPS_VS_ARM, audio, lips, arm))
    return combos


def enumerate_trials(seed: int, replication: int = 2) -> list[TrialSpec]:
    """Enumerate the base trial set (200 trials at the default replication).

    Each of the 100 unique spatial combinations appears ``replication`` times
    with distinct syllable permutations assigned round-robin from a seeded
    shuffle of the 6 permutations, keeping syllable use balanced across the
    set. ``replication`` may be 1 for the bare 100-combination set.
    """
    if replication not in (1, 2):
        raise ValueError("replication must be 1 or 2")
    combos = _spatial_combinations()
    assert len(combos) == N_UNIQUE_COMBINATIONS
    rng = random.Random(seed)
    perm_order = rng.sample(SYLLABLE_PERMUTATIONS, len(SYLLABLE_PERMUTATIONS))
    trials = []
    trial_id = 0
    for i, (cond, audio, lips, arm) in enumerate(combos):
        for r in range(replication):
            syll = perm_order[(replication * i + r) % len(perm_order)]
            trials.append(
                TrialSpec(
                    trial_id=trial_id,
                    condition=cond,
                    audio_pos=audio,
                    lips_pos=lips,
                    arm_pos=arm,
                    syllables=syll,
                )
            )
            trial_id += 1
    return trials


def session_schedule(trials: list[TrialSpec], seed: int,
                     expected: Optional[int] = None) -> list[TrialSpec]:
    """Concatenate 3 seeded random permutations of the base set (600 trials).

    Each session presents every base trial exactly once; the session field is
    stamped 1..3. Deterministic for a fixed seed. ``expected`` overrides the
    200-trial length contract for reduced-replication sets.
    """
    expected = N_TRIALS if expected is None else expected
    if len(trials) != expected:
        raise ValueError(f"expected {expected} trials, got {len(trials)}")
    rng = random.Random(seed)
    schedule = []
    for session in range(1, N_SESSIONS + 1):
        order = list(trials)
        rng.shuffle(order)
        schedule.extend(replace(t, session=session) for t in order)
    return schedule


def practice_block(seed: int) -> list[TrialSpec]:
    """12 congruent practice trials over the three animated conditions.

    All 12 (condition, position) combinations appear once, in seeded order,
    with seeded syllable permutations; every trial is spatially congruent.
    """
    rng = random.Random(seed)
    cells = [
        (cond, pos)
        for cond in (Condition.LIPS, Condition.ARM, Condition.LIPS_ARM)
        for pos in range(4)
    ]
    rng.shuffle(cells)
    trials = []
    for i, (cond, pos) in enumerate(cells):
        lips = pos if cond in (Condition.LIPS, Condition.LIPS_ARM) else None
        arm = pos if cond in (Condition.ARM, Condition.LIPS_ARM) else None
        syll = SYLLABLE_PERMUTATIONS[rng.randrange(len(SYLLABLE_PERMUTATIONS))]
        trials.append(
            TrialSpec(
                trial_id=-(i + 1),  # negative ids keep practice out of the main set
                condition=cond,
                audio_pos=pos,
                lips_pos=lips,
                arm_pos=arm,
                syllables=syll,
            )
        )
    return trials


def trial_to_dict(t: TrialSpec) -> dict:
    return {
        "trial_id": t.trial_id,
        "session": t.session,
        "condition": t.condition.value,
        "audio_pos": t.audio_pos,
        "lips_pos": t.lips_pos,
        "arm_pos": t.arm_pos,
        "syllables": list(t.syllables),
    }


def trial_from_dict(d: dict) -> TrialSpec:
    return TrialSpec(
        trial_id=int(d["trial_id"]),
        condition=Condition(d["condition"]),
        audio_pos=int(d["audio_pos"]),
        lips_pos=None if d["lips_pos"] is None else int(d["lips_pos"]),
        arm_pos=None if d["arm_pos"] is None else int(d["arm_pos"]),
        syllables=tuple(d["syllables"]),
        session=int(d.get("session", 0)),
    )


def dump_manifest(trials: Iterable[TrialSpec]) -> str:
    """Line-delimited JSON manifest, one trial per line, canonical key order."""
    lines = [
        json.dumps(trial_to_dict(t), sort_keys=True, separators=(",", ":"))
        for t in trials
    ]
    return "\n".join(lines) + "\n"


def load_manifest(text: str) -> list[TrialSpec]:
    return [trial_from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
