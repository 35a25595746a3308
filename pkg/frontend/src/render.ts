import type { UiSessionState } from "./sessionState.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export interface HypothesisSplit {
  validated: string;
  pending: string;
}

/**
 * Split the hypothesis at the server-reported constraint boundary.
 * Pure string slicing: the boundary is never recomputed client-side.
 */
export function splitHypothesis(
  hypothesis: string,
  constraintChars: number,
): HypothesisSplit {
  const cut = Math.max(0, Math.min(constraintChars, hypothesis.length));
  return { validated: hypothesis.slice(0, cut), pending: hypothesis.slice(cut) };
}

/**
 * Hypothesis line: validated prefix visually distinct from the system
 * suffix, caret parked at the first editable position. Never throws on an
 * empty hypothesis; that renders as a placeholder.
 */
export function renderHypothesis(
  hypothesis: string,
  constraintChars: number,
  caret?: number,
): string {
  const caretAt = caret ?? constraintChars;
  if (hypothesis.length === 0) {
    return (
      `<div class="hypothesis empty" data-caret="0">` +
      `<span class="placeholder">(no hypothesis yet)</span></div>`
    );
  }
  const { validated, pending } = splitHypothesis(hypothesis, constraintChars);
  const complete = validated.length === hypothesis.length && pending === "";
  return (
    `<div class="hypothesis${complete ? " complete" : ""}" ` +
    `data-caret="${caretAt}">` +
    `<span class="validated">${escapeHtml(validated)}</span>` +
    `<span class="pending">${escapeHtml(pending)}</span>` +
    `</div>`
  );
}

function latencyBadge(st: UiSessionState): string {
  if (st.lastRoundTripMs == null) {
    return `<span class="latency idle">rt --</span>`;
  }
  const cls = st.latencyAmber ? "latency amber" : "latency ok";
  return `<span class="${cls}">rt ${st.lastRoundTripMs.toFixed(0)} ms</span>`;
}

function learnBadge(st: UiSessionState): string {
  if (st.lastAdapted == null) return "";
  return st.lastAdapted
    ? `<span class="learn adapted">adapted v${st.modelVersion}` +
        ` (${(st.lastLearnMs ?? 0).toFixed(0)} ms)</span>`
    : `<span class="learn static">model unchanged v${st.modelVersion}</span>`;
}

/** Session stats panel; KSMR appears only once a reference exists. */
function statsPanel(st: UiSessionState): string {
  const counters =
    `<span class="ks">ks ${st.keystrokes}</span> ` +
    `<span class="ma">ma ${st.mouseActions}</span>`;
  if (!st.accepted || !st.finalText || st.finalText.length === 0) {
    return `<div class="stats">${counters}</div>`;
  }
  const ksmr = (st.keystrokes + st.mouseActions) / st.finalText.length;
  return (
    `<div class="stats">${counters} ` +
    `<span class="ksmr">KSMR ${(100 * ksmr).toFixed(1)}%</span></div>`
  );
}

function toastLine(st: UiSessionState): string {
  if (!st.toast) return "";
  return (
    `<div class="toast" role="status">` +
    `${escapeHtml(st.toast.code)}: ${escapeHtml(st.toast.detail)}</div>`
  );
}

/**
 * Whole-panel view of one session as an HTML string. Pure function of the
 * state, so the event-driven redraw is a single innerHTML swap and tests
 * can assert on exact output without a DOM.
 */
export function renderSession(st: UiSessionState): string {
  const adapt =
    st.adaptEnabled == null
      ? ""
      : `<span class="adapt">adaptation ${st.adaptEnabled ? "on" : "off"}</span>`;
  const header =
    `<div class="status">` +
    `<span class="version">model v${st.modelVersion}</span> ` +
    `${adapt} ${latencyBadge(st)} ${learnBadge(st)} ` +
    `<span class="mode">${st.mode}-level</span>` +
    `${st.locked ? ` <span class="busy">…</span>` : ""}` +
    `</div>`;
  const source = `<div class="source">${escapeHtml(st.source)}</div>`;
  const hyp = renderHypothesis(st.hypothesis, st.constraintChars, st.caret);
  const accept = st.accepted
    ? `<div class="accepted">accepted: ` +
      `<span class="final">${escapeHtml(st.finalText ?? "")}</span></div>`
    : `<button class="accept${
        st.constraintChars >= st.hypothesis.length && st.hypothesis.length > 0
          ? " emphasized"
          : ""
      }" ${st.locked ? "disabled" : ""}>accept</button>`;
  return header + source + hyp + accept + statsPanel(st) + toastLine(st);
}
