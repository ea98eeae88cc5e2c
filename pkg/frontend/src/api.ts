/** Typed client for the review server's HTTP API.
 *
 * Every request goes through an injectable fetch so tests can stand in a
 * scripted server. GET helpers throw ApiError on any non-2xx response; the
 * decision POST instead returns a discriminated result, because 409 is an
 * expected outcome the caller must branch on, not an exception.
 */

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface CandidateDoc {
  id: string;
  session_id: string;
  window_start_s: number;
  score: number;
  status: "pending" | "confirmed" | "rejected";
  decided_at?: string;
  reviewer_note?: string;
}

export interface QueuePage {
  items: CandidateDoc[];
  total: number;
  offset: number;
  limit: number;
}

export interface SpectrogramDoc {
  id: string;
  shape: number[];
  values: number[][]; // one row per mel bin, low frequencies first
  mel_centers_hz: number[];
  fmin_hz: number;
  fmax_hz: number;
  seconds_per_frame: number;
}

export interface StatsDoc {
  pending: number;
  confirmed: number;
  rejected: number;
  n_pos: number;
  n_neg: number;
  train_n_pos: number;
  train_n_neg: number;
  positive_rate: number;
}

export type Decision = "confirm" | "reject";

export type DecideResult =
  | { ok: true; doc: CandidateDoc }
  | { ok: false; status: number; error: string; detail: string };

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function errorBody(resp: Response): Promise<{ error: string; detail: string }> {
  try {
    const body = (await resp.json()) as { error?: string; detail?: string };
    return { error: body.error ?? "http_error", detail: body.detail ?? resp.statusText };
  } catch {
    return { error: "http_error", detail: resp.statusText || `status ${resp.status}` };
  }
}

export class ApiClient {
  constructor(
    private readonly fetchImpl: FetchLike = (...args) => globalThis.fetch(...args),
    private readonly base: string = "",
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchImpl(this.base + path);
    if (!resp.ok) {
      const { error, detail } = await errorBody(resp);
      throw new ApiError(resp.status, error, detail);
    }
    return (await resp.json()) as T;
  }

  queuePage(offset: number, limit: number, status = "pending"): Promise<QueuePage> {
    const q = new URLSearchParams({
      status,
      offset: String(offset),
      limit: String(limit),
    });
    return this.getJson<QueuePage>(`/api/candidates?${q}`);
  }

  spectrogram(id: string): Promise<SpectrogramDoc> {
    return this.getJson<SpectrogramDoc>(`/api/candidates/${encodeURIComponent(id)}/spectrogram`);
  }

  stats(): Promise<StatsDoc> {
    return this.getJson<StatsDoc>("/api/stats");
  }

  /** URL for the window's WAV rendition, suitable for an audio element. */
  audioUrl(id: string): string {
    return `${this.base}/api/candidates/${encodeURIComponent(id)}/audio`;
  }

  async decide(id: string, decision: Decision, note?: string): Promise<DecideResult> {
    const body: { decision: Decision; note?: string } = { decision };
    if (note !== undefined) body.note = note;
    let resp: Response;
    try {
      resp = await this.fetchImpl(
        `${this.base}/api/candidates/${encodeURIComponent(id)}/decision`,
        {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify(body),
        },
      );
    } catch (err) {
      // connection loss mid-flight must roll the candidate back, not crash
      return {
        ok: false,
        status: 0,
        error: "network_error",
        detail: err instanceof Error ? err.message : String(err),
      };
    }
    if (resp.ok) return { ok: true, doc: (await resp.json()) as CandidateDoc };
    const { error, detail } = await errorBody(resp);
    return { ok: false, status: resp.status, error, detail };
  }
}
