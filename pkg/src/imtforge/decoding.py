"""Beam search and prefix-constrained decoding over subword sequences.

Three layers of constraint handling sit on one search core: plain beam
search, forced decoding of validated words, and character-prefix masking of
the vocabulary for a partially typed word. The mask follows a hypothesis
across subword boundaries until the typed prefix is fully consumed, so the
detokenized output always extends the character-level constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .bpe import BOS_ID, EOS_ID, PAD_ID, UNK_ID, Subword, Vocabulary
from .model import ModelParams, decoder_step, encode, init_decoder_state

RESERVED_IDS = (PAD_ID, BOS_ID, UNK_ID)  # never emitted; </s> is gated instead


class DecodingError(Exception):
    pass


class ConstraintError(DecodingError):
    """Constraint text the engine cannot express (alphabet mismatch, bad spacing)."""


@dataclass(frozen=True)
class Hypothesis:
    """One decoded candidate. Decoder states are recomputable from the ids."""

    token_ids: tuple[int, ...]
    log_prob: float
    step_log_probs: tuple[float, ...]
    finished: bool


@dataclass(frozen=True)
class PrefixConstraint:
    """Validated words plus the character prefix of the word being typed.

    ``require_more`` marks a constraint whose character form ends with a
    space: the hypothesis must start a new word beyond the validated ones.
    ``complete`` pins the hypothesis to exactly the validated words.
    """

    words: tuple[str, ...] = ()
    partial: str = ""
    require_more: bool = False
    complete: bool = False

    def __post_init__(self):
        if any(not w or " " in w for w in self.words):
            raise ConstraintError("validated words must be non-empty and space-free")
        if " " in self.partial:
            raise ConstraintError("partial word cannot contain a space")
        if self.complete and (self.partial or self.require_more):
            raise ConstraintError("a complete constraint has no open word")

    @property
    def char_position(self) -> int:
        return len(self.partial)

    @property
    def empty(self) -> bool:
        return not self.words and not self.partial and not self.require_more \
            and not self.complete

    def char_string(self) -> str:
        base = " ".join(self.words)
        if self.partial:
            return f"{base} {self.partial}" if base else self.partial
        if self.require_more:
            return base + " "
        return base

    @classmethod
    def from_chars(cls, text: str) -> "PrefixConstraint":
        if not text:
            return cls()
        parts = text.split(" ")
        if any(p == "" for p in parts[:-1]) or parts[0] == "":
            raise ConstraintError("constraint has leading or doubled spaces")
        return cls(words=tuple(parts[:-1]), partial=parts[-1],
                   require_more=(parts[-1] == "" and len(parts) > 1))

    @classmethod
    def from_words(cls, words, complete: bool = False) -> "PrefixConstraint":
        return cls(words=tuple(words), complete=complete)


@dataclass(frozen=True)
class VocabularyMask:
    bits: np.ndarray
    count: int


def build_vocabulary_mask(prefix: str, vocab: Vocabulary) -> VocabularyMask:
    """Which tokens can legally continue a word whose typed prefix is `prefix`.

    A bit is set iff the token string starts with the prefix, or the prefix
    starts with the token string and the token does not close the word (so
    later subwords can supply the rest). Empty prefix sets every bit.
    """
    bits = np.zeros(len(vocab), dtype=bool)
    for i, tok in enumerate(vocab.tokens()):
        bits[i] = tok.text.startswith(prefix) or (
            prefix.startswith(tok.text) and not tok.final)
    return VocabularyMask(bits, int(bits.sum()))


def _consume(pending: str, token: Subword) -> str | None:
    """Remaining char prefix after emitting `token`, or None if incompatible."""
    if not pending:
        return ""
    if token.text.startswith(pending):
        return ""
    if pending.startswith(token.text) and not token.final:
        return pending[len(token.text):]
    return None


def _literal_ids(text: str, vocab: Vocabulary) -> list[int]:
    """Character-by-character non-final subword ids for a partly typed word."""
    ids = []
    for c in text:
        tok = Subword(c, False)
        if tok not in vocab:
            raise ConstraintError(f"character {c!r} outside the model alphabet")
        ids.append(vocab.strict_id(tok))
    return ids


@dataclass(frozen=True)
class _Item:
    ids: tuple[int, ...]
    log_prob: float
    steps: tuple[float, ...]
    state: object
    prev: int
    pending: str
    free: int  # tokens emitted past the forced prefix


def _force(view, annotations, item: _Item, forced_ids) -> _Item:
    state, prev = item.state, item.prev
    ids, steps = item.ids, item.steps
    lp = item.log_prob
    for tid in forced_ids:
        state, probs = decoder_step(view, prev, state, annotations)
        step_lp = float(np.log(probs.data[tid])) if probs.data[tid] > 0 \
            else float("-inf")
        ids += (tid,)
        steps += (step_lp,)
        lp += step_lp
        prev = tid
    return _Item(ids, lp, steps, state, prev, item.pending, item.free)


def _finish(item: _Item) -> Hypothesis:
    return Hypothesis(item.ids, item.log_prob, item.steps, item.ids[-1:] == (EOS_ID,))


def _order(pool):
    return sorted(pool, key=lambda it: (-it.log_prob, it.ids))


def masked_constrained_search(params: ModelParams, vocab: Vocabulary, segment,
                              src_ids, constraint: PrefixConstraint,
                              beam_size: int = 6, max_length: int | None = None,
                              word_completion: bool = False) -> Hypothesis:
    """Best hypothesis whose detokenization extends the constraint.

    `segment` maps a word string to its subword ids (used to force validated
    words). Validated words are force-decoded; while the typed prefix of the
    open word is unconsumed the next-token distribution is masked to
    compatible tokens and renormalized; afterwards the search runs free. If
    masking strands every hypothesis the constraint is forced literally,
    character by character, and decoding continues unconstrained.
    """
    if beam_size < 1:
        raise DecodingError("beam size must be >= 1")
    forced: list[int] = []
    for word in constraint.words:
        forced.extend(segment(word))
    if constraint.complete:
        forced.append(EOS_ID)

    nbest = _run_beam(params, src_ids, forced, constraint.partial,
                      constraint.require_more, vocab, beam_size, max_length,
                      word_completion)
    if nbest is None:
        # every candidate was stranded mid-prefix: force the typed characters
        # as literal subwords, then decode free
        forced = forced + _literal_ids(constraint.partial, vocab)
        nbest = _run_beam(params, src_ids, forced, "", constraint.require_more,
                          vocab, beam_size, max_length, word_completion)
        if nbest is None:
            raise DecodingError("constraint cannot be satisfied")
    return nbest[0]


def _run_beam(params, src_ids, forced_ids, partial, require_more, vocab,
              beam_size, max_length, word_completion) -> list[Hypothesis] | None:
    limit = 2 * len(src_ids) + 5 + len(forced_ids)
    if max_length is not None:
        limit = max(max_length, len(forced_ids) + 1)
    with ad.Tape(grad=False) as tape:
        view = params.view(tape)
        annotations = encode(view, src_ids)
        state = init_decoder_state(view, annotations)
        root = _Item((), 0.0, (), state, state.prev_id, partial, 0)
        root = _force(view, annotations, root, forced_ids)
        if forced_ids and forced_ids[-1] == EOS_ID:
            return [_finish(root)]

        masks: dict[str, np.ndarray] = {}
        live = [root]
        done: list[_Item] = []
        all_ids = np.arange(len(vocab))
        while live and len(live[0].ids) < limit:
            pool: list[_Item] = []
            for item in live:
                new_state, probs = decoder_step(view, item.prev, item.state,
                                                annotations)
                dist = probs.data
                if item.pending:
                    bits = masks.get(item.pending)
                    if bits is None:
                        bits = build_vocabulary_mask(item.pending, vocab).bits
                        masks[item.pending] = bits
                    masked = np.where(bits, dist, 0.0)
                    z = masked.sum()
                    if z <= 0.0:
                        continue
                    dist = masked / z
                with np.errstate(divide="ignore"):
                    lp_vec = np.log(dist)
                order = np.lexsort((all_ids, -lp_vec))
                taken = 0
                for tid in order:
                    tid = int(tid)
                    if not np.isfinite(lp_vec[tid]):
                        break
                    if tid in RESERVED_IDS:
                        continue
                    if tid == EOS_ID:
                        if item.pending or (require_more and item.free == 0):
                            continue
                        new_pending = ""
                    elif item.pending:
                        new_pending = _consume(item.pending, vocab.token(tid))
                        if new_pending is None:
                            continue
                    else:
                        new_pending = ""
                    step_lp = float(lp_vec[tid])
                    pool.append(_Item(item.ids + (tid,), item.log_prob + step_lp,
                                      item.steps + (step_lp,), new_state, tid,
                                      new_pending, item.free + 1))
                    taken += 1
                    if taken >= beam_size or (word_completion and item.pending):
                        break
            pool = _order(pool)[:beam_size]
            live = []
            for item in pool:
                (done if item.prev == EOS_ID else live).append(item)
            if done:
                best_done = max(done, key=lambda it: it.log_prob)
                if not live or best_done.log_prob >= live[0].log_prob:
                    live = []
        if done:
            return [_finish(it) for it in _order(done)]
        if live:
            return [_finish(it) for it in _order(live)]
        if root.pending:
            return None  # stranded: caller applies the literal fallback
        return [_finish(root)]


def beam_search(params: ModelParams, src_ids, beam_size: int = 6,
                max_length: int | None = None) -> Hypothesis:
    """Length-bounded beam search; ties break toward smaller token ids."""
    return beam_search_nbest(params, src_ids, beam_size, max_length)[0]


def beam_search_nbest(params: ModelParams, src_ids, beam_size: int = 6,
                      max_length: int | None = None) -> list[Hypothesis]:
    if beam_size < 1:
        raise DecodingError("beam size must be >= 1")
    nbest = _run_beam(params, src_ids, [], "", False, _IdVocab(params), beam_size,
                      max_length, False)
    return nbest


class _IdVocab:
    """Unconstrained search never consults token text; only ids and size."""

    def __init__(self, params: ModelParams):
        self._size = params.config.tgt_vocab

    def __len__(self):
        return self._size

    def token(self, token_id: int) -> Subword:
        raise DecodingError("unconstrained search should not inspect tokens")


def prefix_constrained_search(params: ModelParams, vocab: Vocabulary, segment,
                              src_ids, prefix_words, beam_size: int = 6,
                              max_length: int | None = None) -> Hypothesis:
    """Beam search whose output starts with the validated words."""
    constraint = PrefixConstraint.from_words(prefix_words)
    return masked_constrained_search(params, vocab, segment, src_ids, constraint,
                                     beam_size, max_length)


def forced_decode(params: ModelParams, src_ids, tgt_ids) -> Hypothesis:
    """Score an exact target id sequence (must end with </s>)."""
    if not tgt_ids or tgt_ids[-1] != EOS_ID:
        raise DecodingError("forced target must end with </s>")
    with ad.Tape(grad=False) as tape:
        view = params.view(tape)
        annotations = encode(view, src_ids)
        state = init_decoder_state(view, annotations)
        root = _Item((), 0.0, (), state, state.prev_id, "", 0)
        return _finish(_force(view, annotations, root, list(tgt_ids)))
