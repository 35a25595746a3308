"""Translation engine: model parameters bundled with BPE and vocabularies.

Everything outside this module speaks words and characters; subword ids stay
internal. The engine also owns the single-file persistence format: merges and
vocabularies ride along in the checkpoint's metadata block, so one path
reloads a complete, runnable translator.
"""

from __future__ import annotations

from dataclasses import dataclass

from .bpe import (
    EOS_ID,
    RESERVED,
    MergeTable,
    Subword,
    Vocabulary,
    apply_bpe,
    build_vocab,
    char_singletons,
    detokenize_bpe,
    learn_bpe,
)
from .decoding import (
    ConstraintError,
    Hypothesis,
    PrefixConstraint,
    beam_search,
    masked_constrained_search,
)
from .model import ModelConfig, ModelParams, load_checkpoint, save_checkpoint


class EngineError(Exception):
    pass


@dataclass
class Translation:
    words: tuple[str, ...]
    text: str
    hypothesis: Hypothesis


class Engine:
    def __init__(self, params: ModelParams, merges: MergeTable,
                 src_vocab: Vocabulary, tgt_vocab: Vocabulary):
        if params.config.src_vocab != len(src_vocab):
            raise EngineError("source vocabulary size does not match model")
        if params.config.tgt_vocab != len(tgt_vocab):
            raise EngineError("target vocabulary size does not match model")
        self.params = params
        self.merges = merges
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab

    # -- text <-> ids --------------------------------------------------------

    def source_ids(self, words) -> list[int]:
        """Segment a source sentence; unknown subwords map to <unk>."""
        if not words:
            raise EngineError("empty source sentence")
        return [self.src_vocab.id(tok) for tok in apply_bpe(list(words), self.merges)]

    def segment_target_word(self, word: str) -> list[int]:
        """In-vocabulary subword ids for one target word.

        Subwords the vocabulary lacks are split to single characters; a
        character outside the alphabet is unrepresentable and rejected
        (an <unk> in a forced prefix would break prefix preservation).
        """
        if not word or " " in word:
            raise ConstraintError("target word must be non-empty and space-free")
        ids: list[int] = []
        for tok in apply_bpe([word], self.merges):
            if tok in self.tgt_vocab:
                ids.append(self.tgt_vocab.strict_id(tok))
                continue
            chars = [Subword(c, False) for c in tok.text[:-1]]
            chars.append(Subword(tok.text[-1], tok.final))
            for ch in chars:
                if ch not in self.tgt_vocab:
                    raise ConstraintError(
                        f"character {ch.text!r} outside the model alphabet")
                ids.append(self.tgt_vocab.strict_id(ch))
        return ids

    def target_ids(self, words, terminated: bool = True) -> list[int]:
        ids: list[int] = []
        for word in words:
            ids.extend(self.segment_target_word(word))
        if terminated:
            ids.append(EOS_ID)
        return ids

    def hypothesis_words(self, hyp: Hypothesis) -> tuple[str, ...]:
        subs = [self.tgt_vocab.token(i) for i in hyp.token_ids if i != EOS_ID]
        return tuple(detokenize_bpe(subs).words)

    def hypothesis_text(self, hyp: Hypothesis) -> str:
        return " ".join(self.hypothesis_words(hyp))

    # -- decoding ------------------------------------------------------------

    def translate(self, source_words, beam_size: int = 6,
                  max_length: int | None = None) -> Translation:
        hyp = beam_search(self.params, self.source_ids(source_words),
                          beam_size, max_length)
        return self._wrap(hyp)

    def constrained_translate(self, source_words, constraint: PrefixConstraint,
                              beam_size: int = 6, max_length: int | None = None,
                              word_completion: bool = False) -> Translation:
        hyp = masked_constrained_search(
            self.params, self.tgt_vocab, self.segment_target_word,
            self.source_ids(source_words), constraint, beam_size, max_length,
            word_completion)
        return self._wrap(hyp)

    def _wrap(self, hyp: Hypothesis) -> Translation:
        words = self.hypothesis_words(hyp)
        return Translation(words, " ".join(words), hyp)

    # -- persistence ---------------------------------------------------------

    def save(self, path, extra_tensors=None, extra_meta=None) -> None:
        meta = {
            "merges": [[_pack(a), _pack(b)] for a, b in self.merges.pairs],
            "src_vocab": [_pack(t) for t in self.src_vocab.tokens()[len(RESERVED):]],
            "tgt_vocab": [_pack(t) for t in self.tgt_vocab.tokens()[len(RESERVED):]],
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.params, extra_tensors or {}, meta)

    @classmethod
    def load(cls, path) -> "Engine":
        engine, _, _ = cls.load_with_extras(path)
        return engine

    @classmethod
    def load_with_extras(cls, path):
        params, extras, meta = load_checkpoint(path)
        for key in ("merges", "src_vocab", "tgt_vocab"):
            if key not in meta:
                raise EngineError(f"checkpoint lacks {key} metadata")
        merges = MergeTable([(_unpack(a), _unpack(b)) for a, b in meta["merges"]])
        src_vocab = Vocabulary([_unpack(t) for t in meta["src_vocab"]])
        tgt_vocab = Vocabulary([_unpack(t) for t in meta["tgt_vocab"]])
        return cls(params, merges, src_vocab, tgt_vocab), extras, meta


def _pack(tok: Subword) -> list:
    return [tok.text, tok.final]


def _unpack(entry) -> Subword:
    return Subword(entry[0], bool(entry[1]))


def build_engine(src_sentences, tgt_sentences, num_merges: int,
                 embed_dim: int = 32, hidden_dim: int = 32,
                 attention_dim: int = 32, readout_dim: int = 32,
                 seed: int = 0, standard_lstm_output: bool = False) -> Engine:
    """Assemble a fresh engine from tokenized parallel text.

    One merge table is learned jointly over both sides. The target
    vocabulary is augmented with single-character subwords so any in-alphabet
    constraint prefix stays expressible during interactive decoding.
    """
    src_sentences = [list(s) for s in src_sentences]
    tgt_sentences = [list(s) for s in tgt_sentences]
    if not src_sentences or len(src_sentences) != len(tgt_sentences):
        raise EngineError("need equal, non-empty parallel sentence lists")
    merges = learn_bpe(src_sentences + tgt_sentences, num_merges)
    src_vocab = build_vocab(apply_bpe(s, merges) for s in src_sentences)
    tgt_words = [w for s in tgt_sentences for w in s]
    tgt_vocab = build_vocab((apply_bpe(s, merges) for s in tgt_sentences),
                            extra_tokens=char_singletons(tgt_words))
    config = ModelConfig(src_vocab=len(src_vocab), tgt_vocab=len(tgt_vocab),
                         embed_dim=embed_dim, hidden_dim=hidden_dim,
                         attention_dim=attention_dim, readout_dim=readout_dim,
                         standard_lstm_output=standard_lstm_output)
    params = ModelParams.new(config, seed=seed)
    return Engine(params, merges, src_vocab, tgt_vocab)
