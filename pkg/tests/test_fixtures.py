"""Bundled corpora: shapes, determinism, and the repetition regimes."""

from imtforge import fixtures as fx
from imtforge.engine import build_engine
from imtforge.metrics import (
    repetition_rate,
    restricted_repetition_rate,
    unseen_ngram_fraction,
)


def flat(corpus):
    return [w for s in corpus for w in s]


class TestCopyTask:
    def test_shape_and_identity(self):
        src, tgt = fx.copy_task(100, seed=0)
        assert len(src) == len(tgt) == 100
        assert src == tgt
        assert all(2 <= len(s) <= 5 for s in src)
        assert all(len(w) == 1 and w in "abcdefghij" for s in src for w in s)

    def test_deterministic(self):
        assert fx.copy_task(50, seed=1) == fx.copy_task(50, seed=1)
        assert fx.copy_task(50, seed=1) != fx.copy_task(50, seed=2)

    def test_subword_vocabulary_stays_small(self):
        src, tgt = fx.copy_task(100, seed=0)
        eng = build_engine(src, tgt, num_merges=10, embed_dim=8, hidden_dim=8,
                           attention_dim=8, readout_dim=8, seed=0)
        assert len(eng.tgt_vocab.tokens()) <= 30
        assert len(eng.src_vocab.tokens()) <= 30


class TestLexicon:
    def test_bijective_and_alphabet_bound(self):
        assert len(fx.LEXICON) == 13
        assert len(set(fx.LEXICON.values())) == 13
        for s, t in fx.LEXICON.items():
            assert len(t) == 5
            assert 3 <= len(s) <= 5
            assert set(s) <= set(fx.ALPHABET) and set(t) <= set(fx.ALPHABET)

    def test_training_targets_cover_alphabet(self):
        # novel target words must stay representable via character fallback
        _, train_tgt = fx.out_domain_training(80, seed=0)
        assert set("".join(flat(train_tgt))) == set(fx.ALPHABET)


class TestOutDomainTraining:
    def test_shape_and_vocabulary(self):
        src, tgt = fx.out_domain_training(80, seed=0)
        assert len(src) == len(tgt) == 80
        train_side = set(fx.LEXICON) - {"ceg", "ebagg", "fcadg"}
        assert set(flat(src)) <= train_side
        for s, t in zip(src, tgt):
            assert t == [fx.LEXICON[w] for w in s]
            assert 3 <= len(s) <= 5

    def test_deterministic(self):
        assert fx.out_domain_training(40, 7) == fx.out_domain_training(40, 7)


class TestTemplateCorpus:
    def test_three_families_with_cycling_slot(self):
        corpus = fx.template_test_corpus(60)
        assert len(corpus) == 60
        # row k and row k+3 share a frame; the slot alternates every 3 rows
        for k in range(60):
            src, ref = corpus[k]
            assert len(src) == 4
            assert ref == [fx.LEXICON[w] for w in src]
        assert corpus[0][0] != corpus[3][0]
        assert corpus[0] == corpus[6]
        assert len({tuple(s) for s, _ in corpus}) == 6

    def test_every_sentence_carries_a_novel_lexeme(self):
        novel = {"ceg", "ebagg", "fcadg"}
        for src, _ in fx.template_test_corpus(60):
            assert len(novel & set(src)) == 1


class TestControlCorpus:
    def test_sentences_come_verbatim_from_training(self):
        train_src, train_tgt = fx.out_domain_training(80, seed=0)
        pairs = {(tuple(s), tuple(t)) for s, t in zip(train_src, train_tgt)}
        control = fx.control_test_corpus(60, seed=0)
        assert len(control) == 60
        assert all((tuple(s), tuple(t)) in pairs for s, t in control)

    def test_stream_is_substring_of_training_stream(self):
        train_stream = flat(fx.out_domain_training(80, seed=0)[1])
        c_stream = fx.target_token_stream(fx.control_test_corpus(60, seed=0))
        joined = "\x1f".join(train_stream)
        assert "\x1f".join(c_stream) in joined


class TestRepetitionRegimes:
    def setup_method(self):
        self.train_stream = flat(fx.out_domain_training(80, seed=0)[1])
        self.t_stream = fx.target_token_stream(fx.template_test_corpus(60))
        self.c_stream = fx.target_token_stream(
            fx.control_test_corpus(60, seed=0))

    def test_template_stream_is_high_rrr(self):
        assert restricted_repetition_rate(
            self.t_stream, self.train_stream) > 0.5

    def test_control_stream_rrr_is_exactly_zero(self):
        assert restricted_repetition_rate(
            self.c_stream, self.train_stream) == 0.0

    def test_template_rr_beats_shuffled_vocabulary_control(self):
        stream = fx.target_token_stream(fx.template_test_corpus(30))
        shuffled = fx.shuffled_vocabulary_control(stream, seed=0)
        assert len(shuffled) == len(stream)
        assert set(shuffled) <= set(stream)
        assert repetition_rate(stream) > repetition_rate(shuffled)

    def test_unseen_fraction_separates_regimes(self):
        t = unseen_ngram_fraction(self.t_stream, self.train_stream)
        c = unseen_ngram_fraction(self.c_stream, self.train_stream)
        assert t > 0.3
        assert c == 0.0


class TestShuffledControl:
    def test_deterministic_and_empty(self):
        assert fx.shuffled_vocabulary_control(["a", "b"], 3) == \
            fx.shuffled_vocabulary_control(["a", "b"], 3)
        assert fx.shuffled_vocabulary_control([], 0) == []
