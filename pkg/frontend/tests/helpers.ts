/** Request-recording mock service for driving the client in tests. */

import { FetchLike } from "../src/api.js";
import { TurnRecord } from "../src/types.js";

export interface Recorded {
  url: string;
  method: string;
  body: unknown;
}

export interface MockOptions {
  reply?: string;
  deltas?: string[];
  history?: TurnRecord[];
  messageStatus?: number;
  messageError?: unknown;
  uploadStatus?: number;
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function sseResponse(deltas: string[]): Response {
  const encoder = new TextEncoder();
  const stream = new ReadableStream<Uint8Array>({
    start(controller) {
      for (const delta of deltas) {
        controller.enqueue(
          encoder.encode(`data: ${JSON.stringify({ delta })}\n\n`),
        );
      }
      controller.enqueue(encoder.encode("data: [DONE]\n\n"));
      controller.close();
    },
  });
  return new Response(stream, {
    status: 200,
    headers: { "content-type": "text/event-stream" },
  });
}

export function mockService(options: MockOptions = {}) {
  const recorded: Recorded[] = [];
  const fetchImpl: FetchLike = async (url, init = {}) => {
    const method = init.method ?? "GET";
    const body =
      typeof init.body === "string" ? JSON.parse(init.body) : (init.body ?? null);
    recorded.push({ url, method, body });
    if (method === "POST" && url.endsWith("/api/sessions")) {
      return jsonResponse(201, { session_id: "session-test-1" });
    }
    if (method === "POST" && url.endsWith("/messages")) {
      if (options.messageStatus && options.messageStatus >= 400) {
        return jsonResponse(options.messageStatus, {
          detail: options.messageError ?? "scripted failure",
        });
      }
      if ((body as { stream?: boolean })?.stream) {
        return sseResponse(options.deltas ?? []);
      }
      return jsonResponse(200, { reply: options.reply ?? "ok", attachments: [] });
    }
    if (method === "GET" && url.endsWith("/messages")) {
      return jsonResponse(200, options.history ?? []);
    }
    if (method === "POST" && url.endsWith("/uploads")) {
      if (options.uploadStatus && options.uploadStatus >= 400) {
        return jsonResponse(options.uploadStatus, { detail: "upload rejected" });
      }
      return jsonResponse(200, { upload_id: "u-1", chunks_indexed: 3 });
    }
    if (method === "POST" && url.endsWith("/api/asr")) {
      return jsonResponse(200, { text: "MOCK-ASR:3" });
    }
    return jsonResponse(404, { detail: `no route for ${method} ${url}` });
  };
  return { recorded, fetchImpl };
}

export function messagePosts(recorded: Recorded[]): Recorded[] {
  return recorded.filter((r) => r.method === "POST" && r.url.endsWith("/messages"));
}
