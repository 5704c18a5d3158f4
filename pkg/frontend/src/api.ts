// Typed client for the session service. The UI never computes masks or
// metrics itself; everything displayed comes from these responses.

export interface SessionConfig {
  beta: number;
  jcm: boolean;
}

export interface RoundPayload {
  round_index: number;
  query_text: string;
  ref_round: number;
  answer_text: string;
  mask_base64: string;
  mask_rle: number[];
  mask_area: number;
  q: number | null;
  corrected: boolean;
  seg_emitted: boolean;
  ref_empty: boolean;
}

export interface SceneEntity {
  entity_id: number;
  category: string;
  mask_base64: string;
}

export interface CreateResponse {
  session_id: string;
  width: number;
  height: number;
  image_base64: string;
  scene: { requested_seed: number; used_seed: number; entities: SceneEntity[] } | null;
  config: SessionConfig;
}

export interface SessionView {
  session_id: string;
  width: number;
  height: number;
  image_base64: string;
  config: SessionConfig;
  rounds: RoundPayload[];
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body);
    } catch {
      // keep statusText
    }
    throw new ApiError(resp.status, detail);
  }
  return resp.json() as Promise<T>;
}

export class ApiClient {
  constructor(private base: string = "") {}

  createFromSeed(seed: number): Promise<CreateResponse> {
    return this.post("/sessions", { seed });
  }

  createFromImage(imageBase64: string): Promise<CreateResponse> {
    return this.post("/sessions", { image_base64: imageBase64 });
  }

  getSession(id: string): Promise<SessionView> {
    return fetch(`${this.base}/sessions/${id}`).then((r) => asJson<SessionView>(r));
  }

  postRound(id: string, queryText: string, refRound: number): Promise<RoundPayload> {
    return this.post(`/sessions/${id}/rounds`, { query_text: queryText, ref_round: refRound });
  }

  patchConfig(id: string, patch: { beta?: number; jcm?: boolean }): Promise<SessionConfig> {
    return fetch(`${this.base}/sessions/${id}/config`, {
      method: "PATCH",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(patch),
    }).then((r) => asJson<SessionConfig>(r));
  }

  maskUrl(id: string, roundIndex: number): string {
    return `${this.base}/sessions/${id}/rounds/${roundIndex}/mask.png`;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return fetch(`${this.base}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => asJson<T>(r));
  }
}
