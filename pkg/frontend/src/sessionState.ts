import { ApiClient, ApiError } from "./apiClient.js";
import type {
  FeedbackEvent,
  FeedbackKind,
  SessionBody,
  TranscriptEvent,
} from "./types.js";

/** Round trips slower than this light the latency badge amber. */
export const LATENCY_AMBER_MS = 300;

/** Keystrokes typed while a request is in flight are buffered up to here. */
export const KEY_BUFFER_LIMIT = 3;

export interface Toast {
  code: string;
  detail: string;
}

/**
 * Everything the view needs. The server is authoritative for every
 * translation-state field here: hypothesis, constraintChars, keystrokes,
 * mouseActions and modelVersion are copied verbatim from the last server
 * response, never derived locally.
 */
export interface UiSessionState {
  sessionId: string | null;
  source: string;
  /** Byte-equal to the last server response's hypothesis. */
  hypothesis: string;
  /** Highlight boundary == constraint length received from the server. */
  constraintChars: number;
  /** First editable position; char feedback advances it to position+1. */
  caret: number;
  keystrokes: number;
  mouseActions: number;
  modelVersion: number;
  /** Server-side adaptation switch, echoed from /v1/status. */
  adaptEnabled: boolean | null;
  mode: FeedbackKind;
  /** True while a mutation is in flight; input is locked, not lost. */
  locked: boolean;
  buffered: FeedbackEvent[];
  /** Server-acknowledged events only, in acknowledgement order. */
  eventLog: TranscriptEvent[];
  lastRoundTripMs: number | null;
  latencyAmber: boolean;
  lastAdapted: boolean | null;
  lastLearnMs: number | null;
  toast: Toast | null;
  accepted: boolean;
  finalText: string | null;
}

function freshState(): UiSessionState {
  return {
    sessionId: null,
    source: "",
    hypothesis: "",
    constraintChars: 0,
    caret: 0,
    keystrokes: 0,
    mouseActions: 0,
    modelVersion: 0,
    adaptEnabled: null,
    mode: "char",
    locked: false,
    buffered: [],
    eventLog: [],
    lastRoundTripMs: null,
    latencyAmber: false,
    lastAdapted: null,
    lastLearnMs: null,
    toast: null,
    accepted: false,
    finalText: null,
  };
}

export interface ControllerOptions {
  /** Injectable clock for latency tests; defaults to performance.now. */
  now?: () => number;
  /** Called after every state change; wire the renderer here. */
  onChange?: (state: UiSessionState) => void;
}

/**
 * Client-side session driver. Enforces a single in-flight mutation,
 * buffers keystrokes typed while locked (up to KEY_BUFFER_LIMIT), and
 * resyncs from GET after a 409/422 instead of guessing.
 */
export class SessionController {
  readonly state: UiSessionState = freshState();
  private readonly now: () => number;
  private readonly onChange?: (state: UiSessionState) => void;
  private drain: Promise<void> | null = null;

  constructor(
    private readonly api: ApiClient,
    options: ControllerOptions = {},
  ) {
    this.now = options.now ?? (() => performance.now());
    this.onChange = options.onChange;
  }

  private emit(): void {
    this.onChange?.(this.state);
  }

  private applyServer(body: SessionBody): void {
    const st = this.state;
    st.sessionId = body.session_id;
    st.hypothesis = body.hypothesis;
    st.constraintChars = body.constraint_chars;
    st.keystrokes = body.keystrokes;
    st.mouseActions = body.mouse_actions;
    st.modelVersion = body.model_version;
    st.accepted = body.state === "accepted";
  }

  /** Pull the service config so the adaptation indicator is truthful. */
  async connect(): Promise<void> {
    const status = await this.api.status();
    this.state.adaptEnabled = status.config.adapt;
    this.state.modelVersion = status.model_version;
    this.emit();
  }

  /** Open a session for `source`, resetting all per-sentence state. */
  async start(source: string): Promise<void> {
    const mode = this.state.mode;
    const adapt = this.state.adaptEnabled;
    Object.assign(this.state, freshState());
    this.state.mode = mode;
    this.state.adaptEnabled = adapt;
    this.state.source = source;
    const body = await this.api.createSession(source);
    this.applyServer(body);
    this.state.caret = this.state.constraintChars;
    this.emit();
  }

  /** Keystroke entry point: one char at an explicit caret. */
  keystroke(ch: string, caret: number): Promise<boolean> {
    return this.correct("char", caret, ch);
  }

  /**
   * Queue one correction. Returns false when the event was dropped
   * because the in-flight buffer is full; true otherwise (sent now or
   * buffered for the next response).
   */
  async correct(
    kind: FeedbackKind,
    position: number,
    text: string,
  ): Promise<boolean> {
    if (!this.state.sessionId || this.state.accepted) {
      throw new Error("no active session");
    }
    const event: FeedbackEvent = { kind, position, text };
    if (this.state.locked) {
      if (this.state.buffered.length >= KEY_BUFFER_LIMIT) return false;
      this.state.buffered.push(event);
      this.emit();
      return true;
    }
    this.drain = this.send(event);
    await this.drain;
    return true;
  }

  private async send(event: FeedbackEvent): Promise<void> {
    const st = this.state;
    st.locked = true;
    this.emit();
    const t0 = this.now();
    try {
      const body = await this.api.feedback(st.sessionId!, event);
      const rt = this.now() - t0;
      st.lastRoundTripMs = rt;
      st.latencyAmber = rt > LATENCY_AMBER_MS;
      st.eventLog.push(event);
      this.applyServer(body);
      st.caret =
        event.kind === "char" ? event.position + 1 : st.constraintChars;
      st.toast = null;
    } catch (err) {
      if (err instanceof ApiError && (err.status === 409 || err.status === 422)) {
        st.toast = { code: err.code, detail: err.detail };
        await this.resyncQuietly();
      } else {
        st.locked = false;
        st.buffered = [];
        this.emit();
        throw err;
      }
    }
    st.locked = false;
    this.emit();
    const next = st.buffered.shift();
    if (next && !st.accepted) {
      await this.send(next);
    }
  }

  /** Resolves once no mutation is in flight and the buffer is empty. */
  async idle(): Promise<void> {
    while (this.drain) {
      const current = this.drain;
      await current.catch(() => undefined);
      if (this.drain === current) this.drain = null;
    }
  }

  /**
   * Accept the current hypothesis (optionally only its first `atChar`
   * characters). Waits for buffered keystrokes to settle first so the
   * single-mutation rule holds. On rejection the session stays open and
   * unaccepted; the caller may retry.
   */
  async acceptHypothesis(atChar?: number | null): Promise<boolean> {
    if (!this.state.sessionId || this.state.accepted) {
      throw new Error("no active session");
    }
    await this.idle();
    const st = this.state;
    st.locked = true;
    this.emit();
    try {
      const body = await this.api.accept(st.sessionId!, atChar ?? null);
      st.eventLog.push({ kind: "accept", at_char: atChar ?? null });
      this.applyServer(body);
      st.finalText = body.final_text ?? body.hypothesis;
      st.lastAdapted = body.adapted ?? null;
      st.lastLearnMs = body.lt_ms ?? null;
      st.toast = null;
      return true;
    } catch (err) {
      if (err instanceof ApiError) {
        st.toast = { code: err.code, detail: err.detail };
        return false;
      }
      throw err;
    } finally {
      st.locked = false;
      this.emit();
    }
  }

  /** Re-pull authoritative state after an error or a missed response. */
  async resync(): Promise<void> {
    await this.resyncQuietly();
    this.emit();
  }

  private async resyncQuietly(): Promise<void> {
    if (!this.state.sessionId) return;
    const body = await this.api.getSession(this.state.sessionId);
    this.applyServer(body);
    this.state.caret = this.state.constraintChars;
  }

  setMode(mode: FeedbackKind): void {
    this.state.mode = mode;
    this.emit();
  }

  dismissToast(): void {
    this.state.toast = null;
    this.emit();
  }
}
