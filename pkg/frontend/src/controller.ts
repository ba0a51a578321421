/** Chat orchestration: one in-flight message, streamed bubbles, history sync.
 *
 * All retrieval and summarization happens server-side; this layer only moves
 * HTTP requests and mirrors server history into the store.
 */

import { ApiClient, ApiError } from "./api.js";
import { Store } from "./store.js";
import { Attachment, Mode, STREAMING_MODES, TurnRecord } from "./types.js";

function banner(error: unknown): string {
  if (error instanceof ApiError) {
    return `HTTP ${error.status} (${error.endpoint}): ${error.message}`;
  }
  return String(error);
}

export class ChatController {
  constructor(
    private api: ApiClient,
    private store: Store,
  ) {}

  async init(): Promise<string> {
    const existing = this.store.get().sessionId;
    if (existing) return existing;
    const sessionId = await this.api.createSession();
    this.store.update((s) => ({ ...s, sessionId }));
    return sessionId;
  }

  setMode(mode: Mode): void {
    this.store.update((s) => ({ ...s, selectedMode: mode }));
  }

  /** Send one message in the selected mode; resolves when history is synced. */
  async sendMessage(content: string, attachments: Attachment[] = []): Promise<void> {
    if (this.store.get().pending) return; // one in-flight message per session
    this.store.update((s) => ({ ...s, pending: true, errorBanner: null }));
    const mode = this.store.get().selectedMode;
    const now = Date.now() / 1000;
    const userTurn: TurnRecord = {
      role: "user",
      mode,
      content,
      attachments,
      timestamp: now,
    };
    const liveTurn: TurnRecord = {
      role: "assistant",
      mode,
      content: "",
      attachments: [],
      timestamp: now,
    };
    let sessionId: string;
    try {
      sessionId = await this.init();
    } catch (error) {
      this.store.update((s) => ({ ...s, pending: false, errorBanner: banner(error) }));
      return;
    }
    this.store.update((s) => ({
      ...s,
      turns: [...s.turns, userTurn, liveTurn],
    }));
    try {
      if (STREAMING_MODES.includes(mode)) {
        await this.api.sendMessageStream(
          sessionId,
          { mode, content, attachments },
          (delta) => this.appendDelta(delta),
        );
      } else {
        const reply = await this.api.sendMessage(sessionId, {
          mode,
          content,
          attachments,
        });
        this.store.update((s) => {
          const turns = s.turns.slice(0, -1);
          turns.push({ ...liveTurn, content: reply.reply, attachments: reply.attachments });
          return { ...s, turns };
        });
      }
      await this.syncHistory(sessionId);
    } catch (error) {
      this.store.update((s) => ({ ...s, errorBanner: banner(error) }));
      await this.syncHistory(sessionId).catch(() => undefined);
    } finally {
      this.store.update((s) => ({ ...s, pending: false }));
    }
  }

  /** Append-only delta into the live assistant bubble. */
  private appendDelta(delta: string): void {
    this.store.update((s) => {
      const turns = s.turns.slice();
      const last = turns[turns.length - 1];
      turns[turns.length - 1] = { ...last, content: last.content + delta };
      return { ...s, turns };
    });
  }

  private async syncHistory(sessionId: string): Promise<void> {
    const turns = await this.api.getHistory(sessionId);
    this.store.update((s) => ({ ...s, turns }));
  }

  async upload(file: File | Blob, filename: string): Promise<void> {
    const sessionId = await this.init();
    this.store.update((s) => ({ ...s, uploadProgress: 0, errorBanner: null }));
    try {
      const result = await this.api.upload(sessionId, file, filename, (percent) =>
        this.store.update((s) => ({ ...s, uploadProgress: percent })),
      );
      this.store.update((s) => ({
        ...s,
        uploadProgress: 100,
        notice: `${filename}: indexed ${result.chunks_indexed} chunks`,
      }));
    } catch (error) {
      this.store.update((s) => ({ ...s, errorBanner: banner(error) }));
    } finally {
      setTimeout(
        () => this.store.update((s) => ({ ...s, uploadProgress: null })),
        800,
      );
    }
  }

  /** Post raw captured audio; returns the transcript for the input box. */
  async transcribe(samplingRate: number, samples: number[]): Promise<string | null> {
    try {
      return await this.api.transcribe(samplingRate, samples);
    } catch (error) {
      this.store.update((s) => ({ ...s, errorBanner: banner(error) }));
      return null;
    }
  }
}
