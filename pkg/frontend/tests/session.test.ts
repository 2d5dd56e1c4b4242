import { describe, expect, it } from "vitest";

import { ServiceClient } from "../src/api.js";
import { SessionRunner } from "../src/session.js";
import { parseExport } from "../src/types.js";
import { FakeAudio, FakeClock, FakeScene } from "./fakes.js";
import { MockService } from "./mock_service.js";

function harness(mainCount: number) {
  const service = new MockService(mainCount);
  const clock = new FakeClock();
  const audio = new FakeAudio(clock);
  const scene = new FakeScene(clock);
  const client = new ServiceClient("", service.fetch);
  const runner = new SessionRunner(client, clock, audio, clock, scene, {
    askStrategy: async () => "mixed",
  });
  return { service, clock, audio, scene, client, runner };
}

describe("headless session run", () => {
  it("runs 20 trials with phase durations within one frame", async () => {
    const { service, clock, scene, runner } = harness(8);
    expect(service.trialCount).toBe(20);
    // Respond mid-window on every trial so nothing times out.
    scene.onStimulusStart = (now) => clock.pressAt(now + 700, "2");
    await runner.run("mock-session", service.trialCount);

    expect(runner.phaseLog).toHaveLength(20);
    for (const outcome of runner.phaseLog) {
      expect(Math.abs(outcome.phases.fixation_ms - 500)).toBeLessThanOrEqual(17);
      expect(Math.abs(outcome.phases.stimulus_ms - 1000)).toBeLessThanOrEqual(17);
      expect(Math.abs(outcome.phases.post_ms - 1000)).toBeLessThanOrEqual(17);
      expect(outcome.choice).toBe(1); // key "2" -> avatar index 1
      expect(outcome.reactionMs).toBeGreaterThan(680);
      expect(outcome.reactionMs).toBeLessThan(720);
    }
    expect(service.responses).toHaveLength(20);
    expect(service.responses.every((r) => !r.timeout)).toBe(true);
  });

  it("aligns audio onset with the first animated frame", async () => {
    const { service, clock, scene, audio, runner } = harness(2);
    scene.onStimulusStart = (now) => clock.pressAt(now + 400, "1");
    await runner.run("mock-session", service.trialCount);
    expect(audio.loads).toBe(service.trialCount);
    for (const outcome of runner.phaseLog) {
      expect(outcome.audioOnsetDeltaMs).not.toBeNull();
      expect(Math.abs(outcome.audioOnsetDeltaMs!)).toBeLessThanOrEqual(50);
    }
  });

  it("records a keypress 2100 ms after onset as a timeout", async () => {
    const { service, clock, scene, runner } = harness(1);
    let trialNo = 0;
    scene.onStimulusStart = (now) => {
      trialNo += 1;
      if (trialNo === 1) {
        clock.pressAt(now + 2100, "3"); // past the 2000 ms window
      } else {
        clock.pressAt(now + 500, "3");
      }
    };
    await runner.run("mock-session", service.trialCount);
    const first = runner.phaseLog[0];
    expect(first.choice).toBe(-1);
    expect(first.reactionMs).toBeNull();
    expect(service.responses[0].timeout).toBe(true);
    // Later trials answered normally.
    expect(service.responses[1].timeout).toBe(false);
  });

  it("ignores keys outside 1-4 and before stimulus onset", async () => {
    const { service, clock, scene, runner } = harness(1);
    let scheduledEarly = false;
    scene.onStimulusStart = (now) => {
      clock.pressAt(now + 900, "x");     // not a response key
      clock.pressAt(now + 950, "4");     // the real answer
      if (!scheduledEarly) {
        scheduledEarly = true;
      }
    };
    clock.pressAt(100, "1"); // during fixation of the first trial: ignored
    await runner.run("mock-session", service.trialCount);
    expect(runner.phaseLog[0].choice).toBe(3);
  });

  it("completes a full 612-trial session and exports 600 valid records", async () => {
    const { service, clock, scene, client, runner } = harness(600);
    const summary = await client.createSession("tester-01");
    expect(summary.trial_count).toBe(612);
    expect(service.trialCount).toBe(612);
    let n = 0;
    scene.onStimulusStart = (now) => {
      n += 1;
      // A few deliberate timeouts sprinkled in; others answered in time.
      if (n % 97 !== 0) clock.pressAt(now + 300 + (n % 4) * 250, String((n % 4) + 1));
    };
    await runner.run("mock-session", service.trialCount);

    expect(service.strategy).toBe("mixed");
    const text = await client.exportSession("mock-session");
    const records = parseExport(text);   // throws on any schema violation
    expect(records).toHaveLength(600);
    expect(records.every((r) => r.session >= 1 && r.session <= 3)).toBe(true);
    expect(records.every((r) => r.strategy === "mixed")).toBe(true);
    const timeouts = records.filter((r) => r.timeout);
    expect(timeouts.length).toBeGreaterThan(0);
    expect(timeouts.every((r) => r.response === -1)).toBe(true);
    expect(scene.messages).toContain("session complete");
  }, 30_000);

  it("retries transient network failures", async () => {
    const { service, clock, scene, runner } = harness(1);
    const issues: number[] = [];
    const client = new ServiceClient("", service.fetch, {
      onNetworkIssue: async (attempt) => {
        issues.push(attempt);
      },
    });
    const retryRunner = new SessionRunner(client, clock, new FakeAudio(clock),
      clock, scene, { askStrategy: async () => "auditory" });
    scene.onStimulusStart = (now) => clock.pressAt(now + 600, "1");
    service.failNext = 2;
    await retryRunner.run("mock-session", service.trialCount);
    expect(issues).toEqual([1, 2]);
    expect(service.responses).toHaveLength(service.trialCount);
  });
});
