/** Typed client for the trial service, with pause-and-retry on network
 * failures (the overlay hook is injected by the shell). */

import type {
  ResponseAck,
  ResponseBody,
  SessionSummary,
  Strategy,
  TrialPayload,
} from "./types.js";

export interface FetchLike {
  (url: string, init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
  }): Promise<{
    ok: boolean;
    status: number;
    json(): Promise<unknown>;
    text(): Promise<string>;
    arrayBuffer(): Promise<ArrayBuffer>;
  }>;
}

export interface RetryHooks {
  onNetworkIssue?: (attempt: number, error: unknown) => Promise<void>;
  maxAttempts?: number;
}

export class ServiceError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike,
    private readonly hooks: RetryHooks = {},
  ) {}

  private async request(path: string, init?: Parameters<FetchLike>[1]) {
    const max = this.hooks.maxAttempts ?? 5;
    for (let attempt = 1; ; attempt++) {
      try {
        const resp = await this.fetchFn(this.baseUrl + path, init);
        if (!resp.ok) {
          const text = await resp.text();
          throw new ServiceError(resp.status, `${resp.status}: ${text}`);
        }
        return resp;
      } catch (err) {
        // Server-side rejections are not retried: the session state is wrong.
        if (err instanceof ServiceError) throw err;
        if (attempt >= max) throw err;
        if (this.hooks.onNetworkIssue) {
          await this.hooks.onNetworkIssue(attempt, err);
        }
      }
    }
  }

  private post(path: string, body: unknown) {
    return this.request(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async createSession(subject: string, seed?: number): Promise<SessionSummary> {
    const resp = await this.post("/api/session", seed === undefined
      ? { subject }
      : { subject, seed });
    return (await resp.json()) as SessionSummary;
  }

  async getTrial(sessionId: string, index: number): Promise<TrialPayload> {
    const resp = await this.request(`/api/session/${sessionId}/trial/${index}`);
    return (await resp.json()) as TrialPayload;
  }

  async getAudio(sessionId: string, payload: TrialPayload): Promise<ArrayBuffer> {
    const resp = await this.request(payload.audio_url.replace(/^.*\/api\//, "/api/"));
    return resp.arrayBuffer();
  }

  async postResponse(sessionId: string, body: ResponseBody): Promise<ResponseAck> {
    const resp = await this.post(`/api/session/${sessionId}/response`, body);
    return (await resp.json()) as ResponseAck;
  }

  async postStrategy(sessionId: string, strategy: Strategy): Promise<void> {
    await this.post(`/api/session/${sessionId}/strategy`, { strategy });
  }

  async exportSession(sessionId: string): Promise<string> {
    const resp = await this.request(`/api/session/${sessionId}/export`);
    return resp.text();
  }
}
