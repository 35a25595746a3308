// A recorded UI session's event log, replayed through the raw API,
// must land on identical counters and identical final text. Adaptation
// stays off here so the model the replay sees is the model the recording
// saw.

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ApiClient } from "../src/apiClient.js";
import { SessionController } from "../src/sessionState.js";
import type { SessionBody, TranscriptEvent } from "../src/types.js";
import { startService, type ServiceHandle } from "./serviceHarness.js";

let service: ServiceHandle;

beforeAll(async () => {
  service = await startService({ adapt: false });
}, 180_000);

afterAll(async () => {
  await service?.stop();
});

interface Recording {
  source: string;
  events: TranscriptEvent[];
  keystrokes: number;
  mouseActions: number;
  finalText: string;
}

// Drives a session the way the protocol intends: type the leftmost
// wrong character until the hypothesis equals the target, then accept.
async function recordSession(
  api: ApiClient,
  source: string,
  target: string,
): Promise<Recording> {
  const controller = new SessionController(api);
  await controller.start(source);
  const st = controller.state;
  let guard = target.length + 20;
  while (st.hypothesis !== target && guard-- > 0) {
    let i = 0;
    while (
      i < st.hypothesis.length &&
      i < target.length &&
      st.hypothesis[i] === target[i]
    ) {
      i++;
    }
    if (i >= target.length) break; // hypothesis extends the full target
    await controller.keystroke(target[i], i);
    await controller.idle();
    expect(st.hypothesis.startsWith(target.slice(0, i + 1))).toBe(true);
  }
  const cut = st.hypothesis === target ? null : target.length;
  await controller.acceptHypothesis(cut);
  expect(st.accepted).toBe(true);
  return {
    source,
    events: [...st.eventLog],
    keystrokes: st.keystrokes,
    mouseActions: st.mouseActions,
    finalText: st.finalText ?? "",
  };
}

async function replayRaw(api: ApiClient, rec: Recording): Promise<SessionBody> {
  let body = await api.createSession(rec.source);
  for (const ev of rec.events) {
    if (ev.kind === "accept") {
      body = await api.accept(body.session_id, ev.at_char);
    } else {
      body = await api.feedback(body.session_id, ev);
    }
  }
  return body;
}

// Sources over the model's seven-letter alphabet; targets are deliberate
// re-wordings the untrained model will not guess, so every session
// exercises real corrections.
const SCRIPT: Array<[string, string]> = [
  ["bagad cedef", "gefab adegc"],
  ["dafeg ebage", "cegab befad"],
  ["fcade gadef", "ebagf dafge"],
  ["befag cagbe", "gbace fcdea"],
  ["degaf eabcf", "bcfae aefdb"],
  ["cedef bagad dafeg", "adegc gefab befad"],
];

describe("transcript equivalence", () => {
  it(
    "replaying a recorded event log through the raw API reproduces " +
      "counters and final text",
    async () => {
      const api = new ApiClient(service.baseUrl);
      for (const [source, target] of SCRIPT) {
        const rec = await recordSession(api, source, target);
        expect(rec.events.length).toBeGreaterThan(1);
        const replayed = await replayRaw(api, rec);
        expect(replayed.keystrokes).toBe(rec.keystrokes);
        expect(replayed.mouse_actions).toBe(rec.mouseActions);
        expect(replayed.final_text ?? replayed.hypothesis).toBe(rec.finalText);
        expect(replayed.state).toBe("accepted");
      }
    },
    240_000,
  );
});
