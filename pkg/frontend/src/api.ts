// Typed client for the restoration service wire contract.
// The UI holds no restoration logic; everything goes through these calls.

export type Instruction = "describe" | "restore" | "refine" | "none";

export interface MessageRecord {
  role: "user" | "assistant";
  text: string;
  instruction: Instruction;
  timestamp: number;
}

export interface SessionState {
  id: string;
  has_image: boolean;
  lq_b64?: string;
  restored_b64?: string;
  log: MessageRecord[];
  checkpoint_id: string;
}

export interface MessageReply {
  reply_text: string;
  image_b64?: string;
}

export interface Health {
  status: string;
  checkpoint_id: string;
}

/** status 0 means the service was unreachable (network failure, not HTTP). */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let res: Response;
  try {
    res = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, `service unreachable: ${String(err)}`);
  }
  if (!res.ok) {
    const body = await res.json().catch(() => ({}) as { detail?: string });
    throw new ApiError(res.status, body.detail ?? `HTTP ${res.status}`);
  }
  if (res.status === 204) {
    return undefined as T;
  }
  return (await res.json()) as T;
}

export class StudioApi {
  constructor(private readonly base: string = "") {}

  createSession(): Promise<{ id: string }> {
    return request(`${this.base}/sessions`, { method: "POST" });
  }

  uploadImage(id: string, png: ArrayBuffer | Blob): Promise<void> {
    return request(`${this.base}/sessions/${id}/image`, {
      method: "POST",
      headers: { "content-type": "image/png" },
      body: png,
    });
  }

  sendMessage(id: string, text: string, instruction: Instruction): Promise<MessageReply> {
    return request(`${this.base}/sessions/${id}/messages`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ text, instruction }),
    });
  }

  getSession(id: string): Promise<SessionState> {
    return request(`${this.base}/sessions/${id}`);
  }

  healthz(): Promise<Health> {
    return request(`${this.base}/healthz`);
  }
}
