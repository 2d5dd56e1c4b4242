/** Trial phase machine: Fixation 500 ms, Stimulus 1000 ms, Post 1000 ms;
 * responses are accepted within 2000 ms of stimulus onset (exactly the
 * stimulus plus post span). Phases only move forward. */

import type { TimingMs } from "./types.js";

export enum Phase {
  Fixation = "fixation",
  Stimulus = "stimulus",
  Post = "post",
  Done = "done",
}

export interface PhaseLogEntry {
  fixation_ms: number;
  stimulus_ms: number;
  post_ms: number;
}

export class TrialClock {
  private readonly timing: TimingMs;
  private readonly startMs: number;
  private transitions: Map<Phase, number> = new Map();
  private current: Phase = Phase.Fixation;

  constructor(timing: TimingMs, startMs: number) {
    this.timing = timing;
    this.startMs = startMs;
    this.transitions.set(Phase.Fixation, startMs);
  }

  get phase(): Phase {
    return this.current;
  }

  get stimulusOnsetMs(): number | null {
    return this.transitions.get(Phase.Stimulus) ?? null;
  }

  /** Phase that should be active at time t (forward transitions only). */
  advance(nowMs: number): Phase {
    const target = this.phaseAt(nowMs);
    while (ORDER[this.current] < ORDER[target]) {
      const next = NEXT[this.current];
      if (next === undefined) break;
      this.current = next;
      if (!this.transitions.has(next)) this.transitions.set(next, nowMs);
    }
    return this.current;
  }

  private phaseAt(nowMs: number): Phase {
    const e = nowMs - this.startMs;
    if (e < this.timing.fixation) return Phase.Fixation;
    if (e < this.timing.fixation + this.timing.stimulus) return Phase.Stimulus;
    if (e < this.timing.fixation + this.timing.stimulus + this.timing.post) {
      return Phase.Post;
    }
    return Phase.Done;
  }

  /** Milliseconds since stimulus onset, or null before it. */
  sinceOnset(nowMs: number): number | null {
    const onset = this.transitions.get(Phase.Stimulus);
    return onset === undefined ? null : nowMs - onset;
  }

  acceptsResponse(nowMs: number): boolean {
    const since = this.sinceOnset(nowMs);
    return since !== null && since >= 0 && since <= this.timing.response_window;
  }

  /** Measured durations once the trial is done. */
  log(): PhaseLogEntry {
    const fx = this.transitions.get(Phase.Fixation);
    const st = this.transitions.get(Phase.Stimulus);
    const po = this.transitions.get(Phase.Post);
    const done = this.transitions.get(Phase.Done);
    if (fx === undefined || st === undefined || po === undefined ||
        done === undefined) {
      throw new Error("trial did not finish");
    }
    return {
      fixation_ms: st - fx,
      stimulus_ms: po - st,
      post_ms: done - po,
    };
  }
}

const NEXT: Record<Phase, Phase | undefined> = {
  [Phase.Fixation]: Phase.Stimulus,
  [Phase.Stimulus]: Phase.Post,
  [Phase.Post]: Phase.Done,
  [Phase.Done]: undefined,
};

const ORDER: Record<Phase, number> = {
  [Phase.Fixation]: 0,
  [Phase.Stimulus]: 1,
  [Phase.Post]: 2,
  [Phase.Done]: 3,
};
