// Browser entry point: wires the controller to a minimal DOM shell.
// All translation state comes from the server; this file only routes
// input events in and paints controller state out.

import { ApiClient } from "./apiClient.js";
import { renderSession } from "./render.js";
import { SessionController } from "./sessionState.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const api = new ApiClient(window.location.origin);
const view = el<HTMLDivElement>("session");
const sourceInput = el<HTMLInputElement>("source");
const startButton = el<HTMLButtonElement>("start");
const wordInput = el<HTMLInputElement>("word");
const modeToggle = el<HTMLInputElement>("word-mode");

const controller = new SessionController(api, {
  onChange: (st) => {
    view.innerHTML = renderSession(st);
    wordInput.style.display = st.mode === "word" ? "" : "none";
    const accept = view.querySelector<HTMLButtonElement>("button.accept");
    accept?.addEventListener("click", () => {
      void controller.acceptHypothesis();
    });
    const toast = view.querySelector<HTMLDivElement>(".toast");
    toast?.addEventListener("click", () => controller.dismissToast());
  },
});

// Caret chosen by clicking inside the hypothesis line; falls back to the
// first editable position. The server's contiguity rule prices the jump.
let clickCaret: number | null = null;

view.addEventListener("mouseup", () => {
  const selection = window.getSelection();
  if (!selection || selection.rangeCount === 0) return;
  const range = selection.getRangeAt(0);
  const node = range.startContainer;
  const parent = node.parentElement;
  if (!parent || !parent.closest(".hypothesis")) return;
  const base = parent.classList.contains("pending")
    ? controller.state.constraintChars
    : 0;
  clickCaret = base + range.startOffset;
});

document.addEventListener("keydown", (ev) => {
  const st = controller.state;
  if (!st.sessionId || st.accepted) return;
  if (document.activeElement === sourceInput) return;
  if (document.activeElement === wordInput) return;
  if (ev.key.length !== 1 || ev.ctrlKey || ev.metaKey || ev.altKey) return;
  if (st.mode !== "char") return;
  ev.preventDefault();
  const caret = clickCaret ?? st.caret;
  clickCaret = null;
  void controller.keystroke(ev.key, caret);
});

startButton.addEventListener("click", () => {
  const text = sourceInput.value.trim();
  if (!text) return;
  void controller.start(text);
});

wordInput.addEventListener("keydown", (ev) => {
  if (ev.key !== "Enter") return;
  const word = wordInput.value.trim();
  if (!word) return;
  // word position = index of the word the caret sits in
  const st = controller.state;
  const prefix = st.hypothesis.slice(0, clickCaret ?? st.caret);
  const position = prefix.length === 0 ? 0 : prefix.split(/\s+/).length - 1;
  clickCaret = null;
  wordInput.value = "";
  void controller.correct("word", position, word);
});

modeToggle.addEventListener("change", () => {
  controller.setMode(modeToggle.checked ? "word" : "char");
});

void controller.connect();
