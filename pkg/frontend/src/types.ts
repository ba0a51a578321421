/** Wire types mirrored from the service, plus the client state shape. */

export const MODES = [
  "assistant",
  "rag_preindexed",
  "rag_upload",
  "rag_web",
  "summarize_url",
  "image_generate",
  "image_understand",
] as const;

export type Mode = (typeof MODES)[number];

/** Modes answered by the LLM as text; these are streamed. */
export const STREAMING_MODES: readonly Mode[] = [
  "assistant",
  "rag_preindexed",
  "rag_upload",
  "rag_web",
];

export interface Attachment {
  kind: "image" | "audio" | "file";
  ref: string;
}

export interface TurnRecord {
  role: "user" | "assistant";
  mode: Mode;
  content: string;
  attachments: Attachment[];
  timestamp: number;
}

export interface UiState {
  sessionId: string | null;
  selectedMode: Mode;
  /** Mirrors server history, plus one live assistant bubble while streaming. */
  turns: TurnRecord[];
  pending: boolean;
  uploadProgress: number | null;
  errorBanner: string | null;
  notice: string | null;
}

export const initialState: UiState = {
  sessionId: null,
  selectedMode: "assistant",
  turns: [],
  pending: false,
  uploadProgress: null,
  errorBanner: null,
  notice: null,
};
