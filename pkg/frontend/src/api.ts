import type {
  ApiErrorBody,
  DeferralDecision,
  DeferralQueue,
  QueryBatch,
  RecordingArtifact,
  ResolveResponse,
  SessionMode,
  SessionSummary,
  WorkspaceArtifact,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = typeof fetch;

/** Thin typed client; every displayed number in the UI comes through here. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    const body = await res.json().catch(() => null);
    if (!res.ok) {
      const err = body as ApiErrorBody | null;
      throw new ApiError(res.status, err?.message ?? `HTTP ${res.status}`);
    }
    return body as T;
  }

  createSession(
    recordingId: string,
    mode: SessionMode,
    params: Record<string, unknown> = {},
  ): Promise<SessionSummary> {
    return this.request("/sessions", {
      method: "POST",
      body: JSON.stringify({ recording_id: recordingId, mode, params }),
    });
  }

  getSession(sessionId: string): Promise<SessionSummary> {
    return this.request(`/sessions/${sessionId}`);
  }

  getQueries(sessionId: string): Promise<QueryBatch> {
    return this.request(`/sessions/${sessionId}/queries`);
  }

  submitLabels(
    sessionId: string,
    batchToken: string,
    answers: Record<string, number>,
  ): Promise<SessionSummary> {
    return this.request(`/sessions/${sessionId}/labels`, {
      method: "POST",
      body: JSON.stringify({ batch_token: batchToken, answers }),
    });
  }

  getDeferrals(sessionId: string): Promise<DeferralQueue> {
    return this.request(`/sessions/${sessionId}/deferrals`);
  }

  resolveDeferral(
    sessionId: string,
    sampleId: string,
    decision: DeferralDecision,
    label?: number,
  ): Promise<ResolveResponse> {
    const body: Record<string, unknown> = { decision };
    if (label !== undefined) body.label = label;
    return this.request(`/sessions/${sessionId}/deferrals/${sampleId}`, {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  getWorkspace(): Promise<WorkspaceArtifact> {
    return this.request("/artifacts/workspace");
  }

  getArtifact<T>(kind: string, recordingId?: string): Promise<T> {
    const query = recordingId ? `?recording_id=${encodeURIComponent(recordingId)}` : "";
    return this.request(`/artifacts/${kind}${query}`);
  }

  getRecording(recordingId: string): Promise<RecordingArtifact> {
    return this.getArtifact("recording", recordingId);
  }
}
