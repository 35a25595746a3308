// Wire types for the /v1 session service. Field names match the JSON
// payloads byte for byte; the client never renames or reshapes them.

export interface SessionBody {
  v: number;
  session_id: string;
  state: "active" | "accepted" | string;
  hypothesis: string;
  keystrokes: number;
  mouse_actions: number;
  constraint_chars: number;
  model_version: number;
  rt_ms?: number;
  final_text?: string;
  adapted?: boolean;
  lt_ms?: number;
}

export interface StatusBody {
  v: number;
  model_version: number;
  active_sessions: number;
  uptime_s: number;
  config: {
    adapt: boolean;
    optimizer: string;
    learning_rate: number | null;
    beam_size: number;
    max_sessions: number;
    auth: boolean;
  };
}

export type FeedbackKind = "char" | "word";

export interface FeedbackEvent {
  kind: FeedbackKind;
  position: number;
  text: string;
}

export interface AcceptEvent {
  kind: "accept";
  at_char: number | null;
}

// One session's transcript: the feedback calls the server acknowledged,
// in acknowledgement order, closed by the accept. Replaying these through
// the raw API must reproduce the same counters and final text.
export type TranscriptEvent = FeedbackEvent | AcceptEvent;
