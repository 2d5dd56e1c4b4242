/** Session runner: drives fixation/stimulus/post phases per trial, plays the
 * stimulus audio at onset, maps keys 1-4 to avatars left-to-right, records a
 * timeout when no key lands inside the response window, and posts every
 * response to the service. Clock, audio, input, and drawing are injected so
 * tests can run the whole session headlessly on a simulated frame clock. */

import { ServiceClient } from "./api.js";
import { Phase, PhaseLogEntry, TrialClock } from "./timing.js";
import type { Strategy, TrialPayload } from "./types.js";

export interface Scheduler {
  now(): number;
  /** Resolves at the next display frame with its timestamp. */
  nextFrame(): Promise<number>;
}

export interface AudioSink {
  /** Load the stimulus so playback can start with minimal latency. */
  load(data: ArrayBuffer): Promise<void>;
  /** Start playback; returns the clock time at which audio actually began. */
  start(): number;
  stop(): void;
}

export interface InputSource {
  /** Register a key handler; returns an unsubscribe function. */
  onKey(handler: (key: string, tMs: number) => void): () => void;
}

export interface SceneSink {
  drawFixation(): void;
  drawStimulus(payload: TrialPayload, sinceOnsetMs: number): void;
  drawStatic(payload: TrialPayload): void;
  drawMessage(text: string): void;
}

export interface TrialOutcome {
  index: number;
  choice: number; // 0..3, or -1 for timeout
  reactionMs: number | null;
  phases: PhaseLogEntry;
  audioOnsetDeltaMs: number | null;
}

export interface SessionHooks {
  askStrategy(): Promise<Strategy>;
  onTrialDone?(outcome: TrialOutcome): void;
}

export const KEY_TO_AVATAR: Record<string, number> = {
  "1": 0,
  "2": 1,
  "3": 2,
  "4": 3,
};

export class SessionRunner {
  readonly phaseLog: TrialOutcome[] = [];

  constructor(
    private readonly client: ServiceClient,
    private readonly scheduler: Scheduler,
    private readonly audio: AudioSink,
    private readonly input: InputSource,
    private readonly scene: SceneSink,
    private readonly hooks: SessionHooks,
  ) {}

  /** Run trials [0, trialCount) of an existing session, then the strategy
   * questionnaire; resolves once the session is complete server-side. */
  async run(sessionId: string, trialCount: number): Promise<void> {
    for (let index = 0; index < trialCount; index++) {
      const payload = await this.client.getTrial(sessionId, index);
      const audioData = await this.client.getAudio(sessionId, payload);
      await this.audio.load(audioData);
      const outcome = await this.runTrial(payload);
      await this.client.postResponse(sessionId, {
        index,
        choice: outcome.choice,
        reaction_ms: outcome.reactionMs,
      });
      this.phaseLog.push(outcome);
      this.hooks.onTrialDone?.(outcome);
    }
    const strategy = await this.hooks.askStrategy();
    await this.client.postStrategy(sessionId, strategy);
    this.scene.drawMessage("session complete");
  }

  private async runTrial(payload: TrialPayload): Promise<TrialOutcome> {
    const clock = new TrialClock(payload.timing_ms, this.scheduler.now());
    let choice = -1;
    let reactionMs: number | null = null;
    let audioStartedAt: number | null = null;
    let responded = false;

    const offKey = this.input.onKey((key, tMs) => {
      const avatar = KEY_TO_AVATAR[key];
      if (avatar === undefined || responded) return;
      if (!clock.acceptsResponse(tMs)) return; // late or early: ignored
      responded = true;
      choice = avatar;
      reactionMs = tMs - (clock.stimulusOnsetMs ?? tMs);
    });

    try {
      for (;;) {
        const t = await this.scheduler.nextFrame();
        const before = clock.phase;
        const phase = clock.advance(t);
        if (phase === Phase.Fixation) {
          this.scene.drawFixation();
        } else if (phase === Phase.Stimulus) {
          if (before === Phase.Fixation) {
            audioStartedAt = this.audio.start();
          }
          this.scene.drawStimulus(payload, clock.sinceOnset(t) ?? 0);
        } else if (phase === Phase.Post) {
          this.scene.drawStatic(payload);
        } else {
          this.audio.stop();
          break;
        }
      }
    } finally {
      offKey();
    }

    const onset = clock.stimulusOnsetMs;
    return {
      index: payload.index,
      choice,
      reactionMs,
      phases: clock.log(),
      audioOnsetDeltaMs:
        audioStartedAt !== null && onset !== null ? audioStartedAt - onset : null,
    };
  }
}
