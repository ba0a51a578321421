/** REST client for the chat service; all behavior is observable HTTP. */

import { Attachment, Mode, TurnRecord } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public endpoint: string,
    message: string,
  ) {
    super(message);
  }
}

export interface MessageBody {
  mode: Mode;
  content: string;
  attachments: Attachment[];
  stream?: boolean;
}

export interface MessageReply {
  reply: string;
  attachments: Attachment[];
}

async function errorFrom(resp: Response, fallbackEndpoint: string): Promise<ApiError> {
  let endpoint = fallbackEndpoint;
  let message = `HTTP ${resp.status}`;
  try {
    const body = await resp.json();
    const detail = body?.detail;
    if (typeof detail === "string") {
      message = detail;
    } else if (detail && typeof detail === "object") {
      endpoint = detail.endpoint ?? endpoint;
      message = detail.error ?? message;
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(resp.status, endpoint, message);
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return this.baseUrl + path;
  }

  async createSession(): Promise<string> {
    const resp = await this.fetchImpl(this.url("/api/sessions"), { method: "POST" });
    if (!resp.ok) throw await errorFrom(resp, "sessions");
    return (await resp.json()).session_id;
  }

  async getHistory(sessionId: string): Promise<TurnRecord[]> {
    const resp = await this.fetchImpl(this.url(`/api/sessions/${sessionId}/messages`));
    if (!resp.ok) throw await errorFrom(resp, "history");
    return resp.json();
  }

  async sendMessage(sessionId: string, body: MessageBody): Promise<MessageReply> {
    const resp = await this.fetchImpl(this.url(`/api/sessions/${sessionId}/messages`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw await errorFrom(resp, "messages");
    return resp.json();
  }

  /**
   * Streaming send: deltas are delivered through `onDelta` strictly in
   * arrival order. Resolves once the server signals [DONE].
   */
  async sendMessageStream(
    sessionId: string,
    body: MessageBody,
    onDelta: (delta: string) => void,
  ): Promise<void> {
    const resp = await this.fetchImpl(this.url(`/api/sessions/${sessionId}/messages`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ ...body, stream: true }),
    });
    if (!resp.ok) throw await errorFrom(resp, "messages");
    if (!resp.body) throw new ApiError(0, "messages", "response has no body stream");
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let sep;
      while ((sep = buffer.indexOf("\n\n")) >= 0) {
        const event = buffer.slice(0, sep);
        buffer = buffer.slice(sep + 2);
        const payload = event.startsWith("data: ") ? event.slice(6) : null;
        if (payload === null) continue;
        if (payload === "[DONE]") return;
        const parsed = JSON.parse(payload);
        if (parsed.error !== undefined) {
          const detail = parsed.error;
          throw new ApiError(
            502,
            typeof detail === "object" ? (detail.endpoint ?? "messages") : "messages",
            typeof detail === "object" ? (detail.error ?? "stream error") : String(detail),
          );
        }
        if (typeof parsed.delta === "string") onDelta(parsed.delta);
      }
    }
  }

  /** Multipart upload; uses XHR when available so progress is observable. */
  upload(
    sessionId: string,
    file: File | Blob,
    filename: string,
    onProgress?: (percent: number) => void,
  ): Promise<{ upload_id: string; chunks_indexed: number }> {
    const path = this.url(`/api/sessions/${sessionId}/uploads`);
    if (typeof XMLHttpRequest === "undefined") {
      return this.uploadViaFetch(path, file, filename);
    }
    return new Promise((resolve, reject) => {
      const xhr = new XMLHttpRequest();
      xhr.open("POST", path);
      xhr.upload.onprogress = (event) => {
        if (event.lengthComputable && onProgress) {
          onProgress(Math.round((100 * event.loaded) / event.total));
        }
      };
      xhr.onerror = () => reject(new ApiError(0, "uploads", "network error"));
      xhr.onload = () => {
        if (xhr.status >= 200 && xhr.status < 300) {
          resolve(JSON.parse(xhr.responseText));
        } else {
          let message = `HTTP ${xhr.status}`;
          try {
            message = JSON.parse(xhr.responseText).detail ?? message;
          } catch {
            // keep the status line
          }
          reject(new ApiError(xhr.status, "uploads", message));
        }
      };
      const form = new FormData();
      form.append("file", file, filename);
      xhr.send(form);
    });
  }

  private async uploadViaFetch(
    path: string,
    file: File | Blob,
    filename: string,
  ): Promise<{ upload_id: string; chunks_indexed: number }> {
    const form = new FormData();
    form.append("file", file, filename);
    const resp = await this.fetchImpl(path, { method: "POST", body: form });
    if (!resp.ok) throw await errorFrom(resp, "uploads");
    return resp.json();
  }

  async transcribe(samplingRate: number, samples: number[]): Promise<string> {
    const resp = await this.fetchImpl(this.url("/api/asr"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ sampling_rate: samplingRate, raw: samples }),
    });
    if (!resp.ok) throw await errorFrom(resp, "asr");
    return (await resp.json()).text;
  }

  fileUrl(ref: string): string {
    return ref.startsWith("/") ? this.baseUrl + ref : ref;
  }
}
