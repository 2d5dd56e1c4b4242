"""HTTP service for human sessions: serves trial stimuli, enforces the
session structure (12 practice + 600 main trials, strict sequential access),
and persists responses in the behavioural-dataset schema.

Stimulus audio is rendered server-side so human sessions hear bit-identical
waveforms to the training pipeline; visuals are animated client-side from the
parametric animation spec carried by each trial payload.
"""

from __future__ import annotations

import json
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .model import BehavioralDataset, BehavioralRecord, dump_dataset
from .render import render_bundle, wav_bytes
from .trials import (
    AVATAR_AZIMUTHS,
    TrialSpec,
    enumerate_trials,
    practice_block,
    session_schedule,
)

N_PRACTICE = 12
N_MAIN = 600
N_TOTAL = N_PRACTICE + N_MAIN

TIMING_MS = {"fixation": 500, "stimulus": 1000, "post": 1000,
             "response_window": 2000}

STRATEGIES = ("auditory", "visual", "mixed")
TIMEOUT_CHOICE = -1


@dataclass
class Session:
    session_id: str
    subject: str
    seed: int
    schedule: list            # 612 TrialSpecs: 12 practice then 600 main
    cursor: int = 0
    responses: list = field(default_factory=list)
    strategy: Optional[str] = None
    created_at: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def complete(self) -> bool:
        return self.cursor >= N_TOTAL and self.strategy is not None


def build_schedule(seed: int) -> list:
    return practice_block(seed) + session_schedule(enumerate_trials(seed), seed)


def trial_payload(session: Session, index: int) -> dict:
    trial = session.schedule[index]
    avatars = [
        {
            "index": i,
            "azimuth": AVATAR_AZIMUTHS[i],
            "lips_animated": trial.lips_pos == i,
            "arm_animated": trial.arm_pos == i,
        }
        for i in range(4)
    ]
    return {
        "index": index,
        "is_practice": index < N_PRACTICE,
        "timing_ms": dict(TIMING_MS),
        "avatars": avatars,
        "audio_url": f"/api/session/{session.session_id}/trial/{index}/audio",
    }


def create_app(data_dir: Optional[str] = None, cors_origin: str = "*") -> FastAPI:
    app = FastAPI(title="avloc trial service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[cors_origin] if cors_origin != "*" else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, Session] = {}
    audio_cache: dict[tuple, bytes] = {}
    journal_dir = Path(data_dir) / "sessions" if data_dir else None
    if journal_dir:
        journal_dir.mkdir(parents=True, exist_ok=True)

    def journal(session: Session, event: dict):
        if journal_dir is None:
            return
        line = json.dumps({"t": round(time.time(), 3), **event},
                          sort_keys=True, separators=(",", ":"))
        with open(journal_dir / f"{session.session_id}.jsonl", "a") as fh:
            fh.write(line + "\n")

    def error(status: int, message: str):
        return JSONResponse(status_code=status, content={"error": message})

    @app.post("/api/session", status_code=201)
    def create_session(body: dict):
        subject = body.get("subject")
        if not isinstance(subject, str) or not subject.strip():
            return error(400, "subject label required")
        seed = body.get("seed")
        if seed is None:
            seed = secrets.randbits(31)
        if not isinstance(seed, int) or seed < 0:
            return error(400, "seed must be a non-negative integer")
        session_id = secrets.token_hex(8)
        session = Session(session_id=session_id, subject=subject.strip(),
                          seed=seed, schedule=build_schedule(seed))
        sessions[session_id] = session
        journal(session, {"event": "created", "subject": session.subject,
                          "seed": seed})
        return {
            "session_id": session_id,
            "subject": session.subject,
            "trial_count": N_TOTAL,
            "practice_count": N_PRACTICE,
            "timing_ms": dict(TIMING_MS),
        }

    @app.get("/api/session/{session_id}/trial/{index}")
    def get_trial(session_id: str, index: int):
        session = sessions.get(session_id)
        if session is None:
            return error(404, "unknown session")
        with session.lock:
            if index != session.cursor:
                return error(409, f"out-of-order access: cursor is {session.cursor}")
            if index >= N_TOTAL:
                return error(409, "session already complete")
            return trial_payload(session, index)

    @app.get("/api/session/{session_id}/trial/{index}/audio")
    def get_trial_audio(session_id: str, index: int):
        session = sessions.get(session_id)
        if session is None:
            return error(404, "unknown session")
        with session.lock:
            if index != session.cursor:
                return error(409, f"out-of-order access: cursor is {session.cursor}")
            trial = session.schedule[index]
        key = (trial.condition.value, trial.audio_pos, trial.lips_pos,
               trial.arm_pos, trial.syllables)
        if key not in audio_cache:
            audio_cache[key] = wav_bytes(render_bundle(trial).audio)
        return Response(content=audio_cache[key], media_type="audio/wav")

    @app.post("/api/session/{session_id}/response")
    def post_response(session_id: str, body: dict):
        session = sessions.get(session_id)
        if session is None:
            return error(404, "unknown session")
        index = body.get("index")
        choice = body.get("choice")
        reaction_ms = body.get("reaction_ms")
        if not isinstance(index, int):
            return error(422, "index required")
        if not (isinstance(choice, int) and (0 <= choice <= 3 or
                                             choice == TIMEOUT_CHOICE)):
            return error(422, "choice must be 0..3 or the timeout marker -1")
        with session.lock:
            if index < session.cursor:
                return error(409, "duplicate submission")
            if index != session.cursor:
                return error(409, f"out-of-order submission: cursor is {session.cursor}")
            timeout = choice == TIMEOUT_CHOICE or (
                reaction_ms is not None
                and reaction_ms > TIMING_MS["response_window"])
            session.responses.append({
                "index": index,
                "choice": TIMEOUT_CHOICE if timeout else choice,
                "reaction_ms": reaction_ms,
                "timeout": timeout,
                "is_practice": index < N_PRACTICE,
            })
            session.cursor += 1
            journal(session, {"event": "response", "index": index,
                              "choice": choice, "reaction_ms": reaction_ms,
                              "timeout": timeout})
            done = session.cursor >= N_TOTAL
            return {"recorded": True, "timeout": timeout,
                    "next_index": None if done else session.cursor,
                    "awaiting_strategy": done and session.strategy is None}

    @app.post("/api/session/{session_id}/strategy")
    def post_strategy(session_id: str, body: dict):
        session = sessions.get(session_id)
        if session is None:
            return error(404, "unknown session")
        strategy = body.get("strategy")
        if strategy not in STRATEGIES:
            return error(422, f"strategy must be one of {STRATEGIES}")
        with session.lock:
            if session.cursor < N_TOTAL:
                return error(409, "strategy is asked after the last trial")
            if session.strategy is not None:
                return error(409, "strategy already recorded")
            session.strategy = strategy
            journal(session, {"event": "strategy", "strategy": strategy})
        return {"recorded": True}

    @app.get("/api/session/{session_id}/export")
    def export_session(session_id: str):
        session = sessions.get(session_id)
        if session is None:
            return error(404, "unknown session")
        with session.lock:
            if not session.complete:
                return error(409, "session incomplete")
            text = export_dataset_text(session)
        return Response(content=text, media_type="application/x-ndjson")

    app.state.sessions = sessions
    return app


def export_dataset_text(session: Session) -> str:
    """Main-trial responses as a behavioural dataset (practice excluded)."""
    records = []
    for entry in session.responses:
        if entry["is_practice"]:
            continue
        trial: TrialSpec = session.schedule[entry["index"]]
        records.append(BehavioralRecord(
            subject_id=session.subject,
            trial=trial,
            response=entry["choice"],
            source="human",
            strategy=session.strategy,
            reaction_ms=entry["reaction_ms"],
            timeout=entry["timeout"],
        ))
    ds = BehavioralDataset(records=records, header={
        "kind": "behavioral-dataset",
        "seed": session.seed,
        "subject": session.subject,
        "session_id": session.session_id,
        "source": "human",
    })
    return dump_dataset(ds)
