/** Browser shell: wires the session runner to the real canvas, Web Audio,
 * keyboard, and requestAnimationFrame. Configuration via query parameters:
 * ?server=http://host:port&subject=NAME[&seed=N]. Audio playback needs a
 * user gesture, so the session starts from a click. */

import { ServiceClient } from "./api.js";
import { CanvasScene } from "./scene.js";
import {
  AudioSink,
  InputSource,
  Scheduler,
  SessionRunner,
} from "./session.js";
import type { Strategy } from "./types.js";

class FrameScheduler implements Scheduler {
  now(): number {
    return performance.now();
  }

  nextFrame(): Promise<number> {
    return new Promise((resolve) => requestAnimationFrame((t) => resolve(t)));
  }
}

class WebAudioSink implements AudioSink {
  private ctx: AudioContext;
  private buffer: AudioBuffer | null = null;
  private source: AudioBufferSourceNode | null = null;

  constructor() {
    this.ctx = new AudioContext();
  }

  async prime(): Promise<void> {
    if (this.ctx.state === "suspended") await this.ctx.resume();
  }

  async load(data: ArrayBuffer): Promise<void> {
    this.buffer = await this.ctx.decodeAudioData(data.slice(0));
  }

  start(): number {
    if (!this.buffer) throw new Error("no stimulus loaded");
    this.source = this.ctx.createBufferSource();
    this.source.buffer = this.buffer;
    this.source.connect(this.ctx.destination);
    this.source.start();
    return performance.now();
  }

  stop(): void {
    try {
      this.source?.stop();
    } catch {
      // already ended
    }
    this.source = null;
  }
}

class KeyboardInput implements InputSource {
  onKey(handler: (key: string, tMs: number) => void): () => void {
    const listener = (ev: KeyboardEvent) => handler(ev.key, performance.now());
    window.addEventListener("keydown", listener);
    return () => window.removeEventListener("keydown", listener);
  }
}

function overlay(text: string, button?: string): Promise<void> {
  const el = document.getElementById("overlay")!;
  el.innerHTML = "";
  const msg = document.createElement("p");
  msg.textContent = text;
  el.appendChild(msg);
  el.style.display = "flex";
  if (!button) {
    return new Promise(() => undefined); // stays until replaced
  }
  return new Promise((resolve) => {
    const btn = document.createElement("button");
    btn.textContent = button;
    btn.onclick = () => {
      el.style.display = "none";
      resolve();
    };
    el.appendChild(btn);
  });
}

function askStrategy(): Promise<Strategy> {
  const el = document.getElementById("overlay")!;
  el.innerHTML = "";
  const msg = document.createElement("p");
  msg.textContent =
    "Which strategy do you believe you adopted to locate the sounds?";
  el.appendChild(msg);
  el.style.display = "flex";
  return new Promise((resolve) => {
    const options: [Strategy, string][] = [
      ["auditory", "Mostly auditory"],
      ["visual", "Mostly visual"],
      ["mixed", "Mixed"],
    ];
    for (const [value, label] of options) {
      const btn = document.createElement("button");
      btn.textContent = label;
      btn.onclick = () => {
        el.style.display = "none";
        resolve(value);
      };
      el.appendChild(btn);
    }
  });
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const server = params.get("server") ?? "";
  const subject = params.get("subject") ?? "anonymous";
  const seedRaw = params.get("seed");
  const seed = seedRaw === null ? undefined : Number(seedRaw);

  const canvas = document.getElementById("scene") as HTMLCanvasElement;
  const scene = new CanvasScene(canvas);
  const audio = new WebAudioSink();
  const client = new ServiceClient(server, fetch.bind(window), {
    onNetworkIssue: async (attempt) => {
      await overlay(`Connection lost (attempt ${attempt}). Retrying...`,
        "Retry now");
    },
  });

  await overlay(
    "You will see four avatars and hear one of them vocalize. " +
      "Press 1-4 (left to right) to pick where the sound came from. " +
      "Respond within 2 seconds of the movement starting.",
    "Start (enables audio)");
  await audio.prime();

  const summary = await client.createSession(subject, seed);
  const runner = new SessionRunner(client, new FrameScheduler(), audio,
    new KeyboardInput(), scene, { askStrategy });
  await runner.run(summary.session_id, summary.trial_count);
  scene.drawMessage("Thank you! Session recorded.");
}

boot().catch((err) => {
  void overlay(`Session failed: ${err}`, "Reload").then(() =>
    window.location.reload());
});
