"""Byte-pair-encoding segmentation and vocabulary construction.

Words are segmented into subwords carrying an explicit is-word-final flag
(a :class:`Subword` is a ``(text, final)`` pair). The flag is part of symbol
identity during merge learning, which is the classic end-marker formulation
expressed without marker characters, so character positions inside words stay
exact for the interactive layer.

Input text is assumed pre-tokenized: whitespace-separated words, one sentence
per line. Text containing the literal marker string "</w>" is out of scope
(that string encodes the final flag in the on-disk formats only).
"""

from __future__ import annotations

from typing import Iterable, NamedTuple, Sequence


class Subword(NamedTuple):
    text: str
    final: bool


PAD = Subword("<pad>", True)
BOS = Subword("<s>", True)
EOS = Subword("</s>", True)
UNK = Subword("<unk>", True)
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

_FINAL_MARK = "</w>"


class BpeError(Exception):
    pass


def _word_symbols(word: str) -> tuple[Subword, ...]:
    chars = list(word)
    return tuple(Subword(c, i == len(chars) - 1) for i, c in enumerate(chars))


class MergeTable:
    """Ordered merge pairs; order is significant, duplicates are not allowed.

    ``frequencies`` records each merge's pair count at its learning step (None
    for tables read from disk, where counts are not stored).
    """

    def __init__(self, pairs: Sequence[tuple[Subword, Subword]],
                 frequencies: Sequence[int] | None = None):
        self.pairs = list(pairs)
        if len(set(self.pairs)) != len(self.pairs):
            raise BpeError("duplicate merge pair in table")
        for left, right in self.pairs:
            if left.final:
                raise BpeError("left side of a merge cannot be word-final")
        self.frequencies = list(frequencies) if frequencies is not None else None
        self._cache: dict[str, tuple[Subword, ...]] = {}

    def __len__(self) -> int:
        return len(self.pairs)

    def segment_word(self, word: str) -> tuple[Subword, ...]:
        """Apply every merge in table order to one word."""
        if not word:
            raise BpeError("cannot segment an empty word")
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        symbols = list(_word_symbols(word))
        for pair in self.pairs:
            if len(symbols) < 2:
                break
            left, right = pair
            i = 0
            while i < len(symbols) - 1:
                if symbols[i] == left and symbols[i + 1] == right:
                    symbols[i:i + 2] = [Subword(left.text + right.text, right.final)]
                else:
                    i += 1
        result = tuple(symbols)
        self._cache[word] = result
        return result

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#bpe-v1 {len(self.pairs)}\n")
            for left, right in self.pairs:
                fh.write(f"{_encode_symbol(left)} {_encode_symbol(right)}\n")

    @classmethod
    def load(cls, path) -> "MergeTable":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if not header.startswith("#bpe-v1 "):
                raise BpeError(f"bad merge-table header: {header!r}")
            count = int(header.split()[1])
            pairs = []
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                left, _, right = line.partition(" ")
                pairs.append((_decode_symbol(left), _decode_symbol(right)))
        if len(pairs) != count:
            raise BpeError(f"merge table header says {count}, found {len(pairs)}")
        return cls(pairs)


def _encode_symbol(s: Subword) -> str:
    return s.text + _FINAL_MARK if s.final else s.text


def _decode_symbol(text: str) -> Subword:
    if text.endswith(_FINAL_MARK):
        return Subword(text[:-len(_FINAL_MARK)], True)
    return Subword(text, False)


def learn_bpe(sentences: Iterable[Sequence[str]], num_merges: int) -> MergeTable:
    """Learn merges jointly over every sentence given (both language sides).

    Each step merges the most frequent adjacent symbol pair, ties broken
    lexicographically by (left, right). Stops early when no adjacent pairs
    remain, so the table holds min(num_merges, available) merges.
    """
    if num_merges < 0:
        raise BpeError("num_merges must be >= 0")
    word_freq: dict[str, int] = {}
    for sentence in sentences:
        for word in sentence:
            if word:
                word_freq[word] = word_freq.get(word, 0) + 1
    if not word_freq:
        raise BpeError("empty corpus")

    words = {w: list(_word_symbols(w)) for w in word_freq}
    pairs: list[tuple[Subword, Subword]] = []
    freqs: list[int] = []
    for _ in range(num_merges):
        counts: dict[tuple[Subword, Subword], int] = {}
        for w, symbols in words.items():
            f = word_freq[w]
            for a, b in zip(symbols, symbols[1:]):
                counts[(a, b)] = counts.get((a, b), 0) + f
        if not counts:
            break
        best = min(counts.items(),
                   key=lambda kv: (-kv[1],
                                   kv[0][0].text, kv[0][0].final,
                                   kv[0][1].text, kv[0][1].final))
        (left, right), freq = best
        pairs.append((left, right))
        freqs.append(freq)
        merged = Subword(left.text + right.text, right.final)
        for symbols in words.values():
            i = 0
            while i < len(symbols) - 1:
                if symbols[i] == left and symbols[i + 1] == right:
                    symbols[i:i + 2] = [merged]
                else:
                    i += 1
    return MergeTable(pairs, freqs)


def apply_bpe(words: Sequence[str], table: MergeTable) -> list[Subword]:
    out: list[Subword] = []
    for word in words:
        out.extend(table.segment_word(word))
    return out


class Detokenized(NamedTuple):
    words: list[str]
    complete: bool  # False when a trailing subword never closed its word


def detokenize_bpe(subwords: Sequence[Subword]) -> Detokenized:
    """Concatenate subwords up to and including each word-final subword."""
    words: list[str] = []
    pending: list[str] = []
    for sub in subwords:
        pending.append(sub.text)
        if sub.final:
            words.append("".join(pending))
            pending.clear()
    if pending:
        words.append("".join(pending))
        return Detokenized(words, False)
    return Detokenized(words, True)


class Vocabulary:
    """Dense bidirectional token <-> id map with fixed reserved ids 0..3."""

    def __init__(self, tokens: Sequence[Subword]):
        self._id_to_token: list[Subword] = list(RESERVED)
        seen = set(RESERVED)
        for tok in tokens:
            if tok in seen:
                continue
            seen.add(tok)
            self._id_to_token.append(tok)
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: Subword) -> bool:
        return token in self._token_to_id

    def id(self, token: Subword) -> int:
        """Id of a token, <unk> id when absent."""
        return self._token_to_id.get(token, UNK_ID)

    def strict_id(self, token: Subword) -> int:
        try:
            return self._token_to_id[token]
        except KeyError:
            raise BpeError(f"token {token!r} not in vocabulary") from None

    def token(self, token_id: int) -> Subword:
        if not (0 <= token_id < len(self._id_to_token)):
            raise BpeError(f"token id {token_id} out of range")
        return self._id_to_token[token_id]

    def tokens(self) -> list[Subword]:
        return list(self._id_to_token)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self._id_to_token):
                text = tok.text if i < len(RESERVED) else _encode_symbol(tok)
                fh.write(f"{text}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        entries: list[tuple[int, Subword]] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                text, _, id_text = line.rpartition("\t")
                idx = int(id_text)
                if idx < len(RESERVED):
                    tok = RESERVED[idx]
                    if text != tok.text:
                        raise BpeError(f"reserved id {idx} has text {text!r}")
                else:
                    tok = _decode_symbol(text)
                entries.append((idx, tok))
        entries.sort()
        if [i for i, _ in entries] != list(range(len(entries))):
            raise BpeError("vocabulary ids are not dense from 0")
        vocab = cls([tok for _, tok in entries[len(RESERVED):]])
        if len(vocab) != len(entries):
            raise BpeError("duplicate tokens in vocabulary file")
        return vocab


def build_vocab(segmented: Iterable[Sequence[Subword]],
                extra_tokens: Sequence[Subword] = ()) -> Vocabulary:
    """Vocabulary over every observed subword, frequency desc then lexicographic.

    ``extra_tokens`` join with frequency 0; the engine passes single-character
    subwords here so constraint fallback segmentation is always expressible.
    """
    freq: dict[Subword, int] = {}
    for sentence in segmented:
        for tok in sentence:
            freq[tok] = freq.get(tok, 0) + 1
    for tok in extra_tokens:
        freq.setdefault(tok, 0)
    ordered = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0].text, kv[0].final))
    return Vocabulary([tok for tok, _ in ordered])


def char_singletons(words: Iterable[str]) -> list[Subword]:
    """Both flag variants of every character, for vocabulary augmentation."""
    chars = sorted({c for w in words for c in w})
    out: list[Subword] = []
    for c in chars:
        out.append(Subword(c, False))
        out.append(Subword(c, True))
    return out
