"""Interactive translation sessions: feedback in, re-decoded hypothesis out.

A session holds one source sentence, the current hypothesis, the validated
prefix accumulated from user feedback, and the two effort counters. Character
feedback replaces the leftmost wrong character (or appends one); word
feedback replaces a whole word. Every feedback event re-decodes under the
grown constraint, so the hypothesis always extends what the user validated.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass, field

from .bpe import EOS_ID
from .decoding import PrefixConstraint
from .engine import Engine

ACTIVE = "active"
ACCEPTED = "accepted"


class SessionError(Exception):
    pass


@dataclass
class SessionEvent:
    iteration: int
    kind: str  # start | char | word | accept
    position: int | None
    value: str
    keystrokes: int
    mouse_actions: int
    hypothesis: str
    timestamp: float


@dataclass
class SessionRecord:
    session_id: str
    source_words: tuple[str, ...]
    source_ids: tuple[int, ...]
    hypothesis_words: tuple[str, ...]
    hypothesis_text: str
    constraint: PrefixConstraint
    keystrokes: int = 0
    mouse_actions: int = 0
    status: str = ACTIVE
    beam_size: int = 6
    events: list[SessionEvent] = field(default_factory=list)
    prev_char_position: int | None = None
    any_correction: bool = False
    accepted_words: tuple[str, ...] | None = None

    @property
    def iterations(self) -> int:
        return sum(1 for e in self.events if e.kind in ("char", "word"))

    def _log(self, kind, position, value):
        self.events.append(SessionEvent(
            len(self.events), kind, position, value, self.keystrokes,
            self.mouse_actions, self.hypothesis_text, time.time()))

    def _require_active(self):
        if self.status != ACTIVE:
            raise SessionError("session already accepted")


def start_session(engine: Engine, source_words, beam_size: int = 6,
                  session_id: str | None = None) -> SessionRecord:
    """Open a session with an unconstrained first hypothesis."""
    source_words = tuple(source_words)
    if not source_words or any(not w or " " in w for w in source_words):
        raise SessionError("source must be non-empty words without spaces")
    translation = engine.translate(source_words, beam_size)
    record = SessionRecord(
        session_id=session_id or uuid.uuid4().hex,
        source_words=source_words,
        source_ids=tuple(engine.source_ids(source_words)),
        hypothesis_words=translation.words,
        hypothesis_text=translation.text,
        constraint=PrefixConstraint(),
        beam_size=beam_size)
    record._log("start", None, "")
    return record


def apply_char_feedback(engine: Engine, record: SessionRecord, position: int,
                        char: str) -> SessionRecord:
    """Replace (or append) one character: everything before it is validated.

    A mouse action is charged only when the position breaks contiguity with
    the previous correction; the very first correction is free at position 0.
    """
    record._require_active()
    if len(char) != 1:
        raise SessionError("char feedback carries exactly one character")
    if not (0 <= position <= len(record.hypothesis_text)):
        raise SessionError(
            f"position {position} beyond hypothesis length "
            f"{len(record.hypothesis_text)} + 1")
    constraint = PrefixConstraint.from_chars(
        record.hypothesis_text[:position] + char)

    translation = engine.constrained_translate(
        record.source_words, constraint, record.beam_size)

    record.keystrokes += 1
    if not record.any_correction:
        # the session's very first correction: the cursor starts at char 0
        contiguous = position == 0
    elif record.prev_char_position is not None:
        contiguous = position == record.prev_char_position + 1
    else:
        contiguous = False  # last correction was a word replacement
    if not contiguous:
        record.mouse_actions += 1
    record.prev_char_position = position
    record.any_correction = True
    record.constraint = constraint
    record.hypothesis_words = translation.words
    record.hypothesis_text = translation.text
    record._log("char", position, char)
    return record


def apply_word_feedback(engine: Engine, record: SessionRecord, position: int,
                        word: str) -> SessionRecord:
    """Replace the word at `position`; words before it are validated."""
    record._require_active()
    if not (0 <= position <= len(record.hypothesis_words)):
        raise SessionError(
            f"word position {position} beyond word count "
            f"{len(record.hypothesis_words)}")
    constraint = PrefixConstraint.from_words(
        record.hypothesis_words[:position] + (word,))

    translation = engine.constrained_translate(
        record.source_words, constraint, record.beam_size)

    record.keystrokes += len(word)
    record.mouse_actions += 1
    record.prev_char_position = None  # word jumps break char contiguity
    record.any_correction = True
    record.constraint = constraint
    record.hypothesis_words = translation.words
    record.hypothesis_text = translation.text
    record._log("word", position, word)
    return record


def accept_hypothesis(engine: Engine, record: SessionRecord,
                      at_char: int | None = None):
    """Close the session; returns (record, (source ids, target ids)).

    `at_char` accepts only the first characters of the hypothesis: the way a
    reviewer stops a hypothesis that begins with the full intended text but
    runs past its end. One mouse action either way.
    """
    record._require_active()
    text = record.hypothesis_text
    if at_char is not None:
        if not (0 < at_char <= len(text)):
            raise SessionError(f"accept position {at_char} out of range")
        text = text[:at_char]
        if text.endswith(" "):
            raise SessionError("accept position lands on a space")
    words = tuple(text.split(" ")) if text else ()
    record.mouse_actions += 1
    record.status = ACCEPTED
    record.accepted_words = words
    record.hypothesis_words = words
    record.hypothesis_text = text
    record._log("accept", at_char, "")
    pair = (list(record.source_ids), engine.target_ids(words) if words
            else [EOS_ID])
    return record, pair


def write_session_log(record: SessionRecord, path) -> None:
    """One event per line: iteration, kind, position, value, ks, ma, hypothesis."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in record.events:
            pos = "" if e.position is None else str(e.position)
            fh.write(f"{e.iteration}\t{e.kind}\t{pos}\t{e.value}"
                     f"\t{e.keystrokes}\t{e.mouse_actions}\t{e.hypothesis}\n")
