/** Canvas renderer for the 4-avatar scene. Geometry mirrors the server-side
 * raster (320x240 logical units, avatars at x = 40/120/200/280) scaled to the
 * canvas; all four avatars look identical, only the flagged cues move. */

import { scenePose } from "./pose.js";
import type { SceneSink } from "./session.js";
import type { TrialPayload } from "./types.js";

const LOGICAL_W = 320;
const LOGICAL_H = 240;
const CENTERS_X = [40, 120, 200, 280];
const HEAD_Y = 50;
const HEAD_R = 22;
const MOUTH_Y = 62;
const MOUTH_RX = 10;
const TORSO = { x0: -14, y0: 100, x1: 14, y1: 170 };
const SHOULDER = { dx: 10, y: 105 };
const ARM_LEN = 26;

export class CanvasScene implements SceneSink {
  private readonly ctx: CanvasRenderingContext2D;
  private readonly sx: number;
  private readonly sy: number;

  constructor(private readonly canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
    this.sx = canvas.width / LOGICAL_W;
    this.sy = canvas.height / LOGICAL_H;
  }

  drawFixation(): void {
    this.clear();
    const { ctx } = this;
    ctx.strokeStyle = "#e8e8e8";
    ctx.lineWidth = 2;
    const cx = (LOGICAL_W / 2) * this.sx;
    const cy = (LOGICAL_H / 2) * this.sy;
    ctx.beginPath();
    ctx.moveTo(cx - 8, cy);
    ctx.lineTo(cx + 8, cy);
    ctx.moveTo(cx, cy - 8);
    ctx.lineTo(cx, cy + 8);
    ctx.stroke();
  }

  drawStimulus(payload: TrialPayload, sinceOnsetMs: number): void {
    this.drawScene(payload, sinceOnsetMs);
  }

  drawStatic(payload: TrialPayload): void {
    this.drawScene(payload, 0);
  }

  drawMessage(text: string): void {
    this.clear();
    const { ctx } = this;
    ctx.fillStyle = "#e8e8e8";
    ctx.font = "16px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(text, (LOGICAL_W / 2) * this.sx, (LOGICAL_H / 2) * this.sy);
  }

  private drawScene(payload: TrialPayload, elapsedMs: number): void {
    this.clear();
    const poses = scenePose(payload.avatars, elapsedMs);
    for (const pose of poses) {
      this.drawAvatar(pose.index, pose.mouthAperture, pose.armAngleDeg);
    }
  }

  private drawAvatar(index: number, aperture: number, armDeg: number): void {
    const { ctx, sx, sy } = this;
    const cx = CENTERS_X[index];

    ctx.fillStyle = "#8c8c8c";
    ctx.beginPath();
    ctx.ellipse(cx * sx, HEAD_Y * sy, HEAD_R * sx, HEAD_R * sy, 0, 0, 2 * Math.PI);
    ctx.fill();

    ctx.fillStyle = "#101010";
    ctx.beginPath();
    ctx.ellipse(cx * sx, MOUTH_Y * sy, MOUTH_RX * sx, aperture * sy, 0, 0,
      2 * Math.PI);
    ctx.fill();

    ctx.fillStyle = "#737373";
    ctx.fillRect((cx + TORSO.x0) * sx, TORSO.y0 * sy,
      (TORSO.x1 - TORSO.x0) * sx, (TORSO.y1 - TORSO.y0) * sy);

    const shoulderX = (cx + SHOULDER.dx) * sx;
    const shoulderY = SHOULDER.y * sy;
    const rad = (armDeg * Math.PI) / 180;
    ctx.strokeStyle = "#cccccc";
    ctx.lineWidth = 4;
    ctx.beginPath();
    ctx.moveTo(shoulderX, shoulderY);
    ctx.lineTo(shoulderX + ARM_LEN * Math.sin(rad) * sx,
      shoulderY + ARM_LEN * Math.cos(rad) * sy);
    ctx.stroke();
  }

  private clear(): void {
    this.ctx.fillStyle = "#000000";
    this.ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
  }
}
