/**
 * Typed client for the editing service's /v1 HTTP API.
 *
 * The fetch implementation is injectable so the tests can replay recorded
 * interactions; anything structurally compatible with the narrow `HttpReply`
 * surface works, and the browser's own `fetch` does.
 */

export interface Instruction {
  text: string;
  kind: "global" | "local";
  target_description: string | null;
  attention_token: string | null;
}

export interface EditEntry {
  instruction: string;
  eta: number;
}

export interface TurntableInfo {
  frames: number;
  url: string;
}

export interface SessionPayload {
  session_id: string;
  codec_id: string;
  created: number;
  updated: number;
  edits: EditEntry[];
  turntable: TurntableInfo;
  entry_index?: number;
}

export interface Health {
  status: string;
  codec: string;
  architecture: string;
  instructions: number;
}

export interface LatentUpload {
  data: number[][];
  codec_id?: string;
}

export interface SessionSource {
  latent?: LatentUpload;
  prompt?: string;
}

/** The part of the fetch Response the client actually uses. */
export interface HttpReply {
  status: number;
  ok: boolean;
  json(): Promise<unknown>;
  arrayBuffer(): Promise<ArrayBuffer>;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<HttpReply>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export interface FrameOptions {
  /** Total frames in the turntable loop. */
  frames: number;
  /** Render resolution; omit to use the server's configured default. */
  res?: number | null;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async reply(method: string, path: string, body?: unknown): Promise<HttpReply> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = `HTTP ${resp.status}`;
      try {
        const parsed = (await resp.json()) as { detail?: unknown };
        if (typeof parsed.detail === "string") detail = parsed.detail;
      } catch {
        // non-JSON error body: keep the generic message
      }
      throw new ApiError(resp.status, detail);
    }
    return resp;
  }

  private async json<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.reply(method, path, body);
    return (await resp.json()) as T;
  }

  health(): Promise<Health> {
    return this.json("GET", "/v1/healthz");
  }

  async loadCatalog(): Promise<Instruction[]> {
    const data = await this.json<{ instructions: Instruction[] }>("GET", "/v1/instructions");
    return data.instructions;
  }

  createSession(source: SessionSource): Promise<SessionPayload> {
    return this.json("POST", "/v1/sessions", source);
  }

  getSession(sessionId: string): Promise<SessionPayload> {
    return this.json("GET", `/v1/sessions/${sessionId}`);
  }

  applyEdit(sessionId: string, instruction: string, eta = 1.0): Promise<SessionPayload> {
    return this.json("POST", `/v1/sessions/${sessionId}/edits`, { instruction, eta });
  }

  setStrength(sessionId: string, entryIndex: number, eta: number): Promise<SessionPayload> {
    return this.json("PATCH", `/v1/sessions/${sessionId}/edits/${entryIndex}`, { eta });
  }

  /** One PNG frame of the current head turntable, as raw bytes. */
  async turntableFrame(sessionId: string, frame: number, opts: FrameOptions): Promise<Uint8Array> {
    const query = new URLSearchParams();
    query.set("frames", String(opts.frames));
    if (opts.res != null) query.set("res", String(opts.res));
    query.set("frame", String(frame));
    const resp = await this.reply("GET", `/v1/sessions/${sessionId}/turntable?${query.toString()}`);
    return new Uint8Array(await resp.arrayBuffer());
  }
}
