/** Avatar pose math, matching the server-side renderer's cadence:
 * three lip open-close cycles and three arm sweeps per 1000 ms stimulus,
 * starting and ending at the rest pose. */

import type { AvatarSpec } from "./types.js";

export const STIMULUS_MS = 1000;
export const CYCLES = 3;

export const MOUTH_CLOSED = 1.5;
export const MOUTH_OPEN = 8.0;
export const ARM_REST_DEG = 40.0;
export const ARM_SWEEP_DEG = 30.0;

export interface AvatarPose {
  index: number;
  mouthAperture: number;
  armAngleDeg: number;
}

export function mouthAperture(elapsedMs: number, animated: boolean): number {
  if (!animated) return MOUTH_CLOSED;
  const t = clampElapsed(elapsedMs) / 1000;
  const phase = 0.5 - 0.5 * Math.cos(2 * Math.PI * CYCLES * t);
  return MOUTH_CLOSED + (MOUTH_OPEN - MOUTH_CLOSED) * phase;
}

export function armAngleDeg(elapsedMs: number, animated: boolean): number {
  if (!animated) return ARM_REST_DEG;
  const t = clampElapsed(elapsedMs) / 1000;
  return ARM_REST_DEG + ARM_SWEEP_DEG * Math.sin(2 * Math.PI * CYCLES * t);
}

function clampElapsed(elapsedMs: number): number {
  if (elapsedMs <= 0) return 0;
  if (elapsedMs >= STIMULUS_MS) return STIMULUS_MS;
  return elapsedMs;
}

/** Poses for the full scene at a moment within (or outside) the stimulus. */
export function scenePose(avatars: AvatarSpec[], elapsedMs: number): AvatarPose[] {
  return avatars.map((a) => ({
    index: a.index,
    mouthAperture: mouthAperture(elapsedMs, a.lips_animated),
    armAngleDeg: armAngleDeg(elapsedMs, a.arm_animated),
  }));
}
