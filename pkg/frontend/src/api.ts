// Thin typed client over the annotation service's JSON endpoints.

export interface SessionState {
  session_id: string;
  curve: [number, number][];
  clicks: number;
  iou?: number;
}

export interface ModelInfo {
  n_points: number;
  curve_kind: string;
  iterations: number;
  interactive: boolean;
  checkpoint_hash: string;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, `server unreachable: ${err}`);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && body.detail) detail = JSON.stringify(body.detail);
      } catch {
        // keep statusText
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body?: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
  }

  createSession(imageB64: string, gtPolygon?: [number, number][]): Promise<SessionState> {
    const body: Record<string, unknown> = { image: imageB64 };
    if (gtPolygon) body.gt_polygon = gtPolygon;
    return this.post<SessionState>("/session", body);
  }

  correct(sid: string, node: number, newPos: [number, number]): Promise<SessionState> {
    return this.post<SessionState>(`/session/${sid}/correct`, {
      node,
      new_pos: newPos,
    });
  }

  reset(sid: string): Promise<SessionState> {
    return this.post<SessionState>(`/session/${sid}/reset`);
  }

  getSession(sid: string): Promise<SessionState> {
    return this.request<SessionState>(`/session/${sid}`);
  }

  modelInfo(): Promise<ModelInfo> {
    return this.request<ModelInfo>("/model/info");
  }
}
