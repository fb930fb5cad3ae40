// Thin typed client over the service's JSON API.  All scores and ranks the
// UI ever shows originate from these responses; the client computes nothing.

import type {
  ConfirmRequest,
  CreateSessionRequest,
  HealthDoc,
  ImageDoc,
  SessionView,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class ObjseekClient {
  constructor(private readonly baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await fetch(this.baseUrl + path, {
        headers: { "Content-Type": "application/json" },
        ...init,
      });
    } catch (err) {
      throw new ApiError(0, "NetworkError", String(err));
    }
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      body = null;
    }
    if (!resp.ok) {
      const doc = body as { code?: string; message?: string } | null;
      throw new ApiError(
        resp.status,
        doc?.code ?? "UnknownError",
        doc?.message ?? `${resp.status} ${resp.statusText}`,
      );
    }
    return body as T;
  }

  health(): Promise<HealthDoc> {
    return this.request("/api/health");
  }

  createSession(req: CreateSessionRequest): Promise<SessionView> {
    return this.request("/api/sessions", {
      method: "POST",
      body: JSON.stringify(req),
    });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request(`/api/sessions/${encodeURIComponent(sessionId)}`);
  }

  confirmRound(sessionId: string, req: ConfirmRequest): Promise<SessionView> {
    return this.request(`/api/sessions/${encodeURIComponent(sessionId)}/confirm`, {
      method: "POST",
      body: JSON.stringify(req),
    });
  }

  deleteSession(sessionId: string): Promise<{ deleted: string }> {
    return this.request(`/api/sessions/${encodeURIComponent(sessionId)}`, {
      method: "DELETE",
    });
  }

  getImage(imageId: string): Promise<ImageDoc> {
    return this.request(`/api/gallery/images/${encodeURIComponent(imageId)}`);
  }
}
