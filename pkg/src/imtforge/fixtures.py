"""Bundled synthetic corpora for desk-scale experiments.

Three sentence families over a shared seven-letter alphabet drive the
adaptation experiments: their lexical spine is absent from the out-of-domain
training text, so the template test stream has a high restricted repetition
rate, while the control test set is drawn verbatim from training sentences
(restricted repetition rate exactly zero). A separate single-letter copy
task serves as the training-loop oracle.

Source and target sides are linked by a fixed word-for-word lexicon; long
(five-char) target words keep word-level corrections expensive relative to
character-level ones.
"""

from __future__ import annotations

import numpy as np

ALPHABET = "abcdefg"

# stable word-for-word lexicon; first ten pairs are training vocabulary,
# last three are the domain-shifted lexemes that only templates use
_TRAIN_SRC = ("bagad", "cedef", "dafeg", "ebage", "fcade",
              "gadef", "befag", "cagbe", "degaf", "eabcf")
_TRAIN_TGT = ("gefab", "adegc", "befad", "cegab", "dafge",
              "ebagf", "fcdea", "gbace", "aefdb", "bcfae")
# Domain lexemes are near neighbours of training vocabulary, never whole
# training words: each one recombines subword chunks the trained model
# already segments out of training text (adegb vs adegc, cegac vs cegab,
# dafgb vs dafge), the shape real domain drift takes. A lexeme assembled
# from never-trained chunks is unlearnable in a ten-exposure session.
_NOVEL_SRC = ("ceg", "ebagg", "fcadg")
_NOVEL_TGT = ("adegb", "cegac", "dafgb")

LEXICON = dict(zip(_TRAIN_SRC + _NOVEL_SRC, _TRAIN_TGT + _NOVEL_TGT))

# template: fixed source frame with one slot cycling over training words
_TEMPLATES = (
    (("ceg", "bagad", None, "cedef"), ("befag", "cagbe")),
    (("ebagg", "dafeg", None, "ebage"), ("degaf", "eabcf")),
    (("fcadg", "fcade", None, "gadef"), ("bagad", "cedef")),
)


def copy_task(num_pairs: int = 100, seed: int = 0):
    """Parallel corpus where the target is the source: the overfit oracle.

    Single-letter words from a ten-letter inventory, sentences of two to
    five words. Subword vocabulary stays under 30 entries.
    """
    rng = np.random.default_rng(seed)
    letters = list("abcdefghij")
    src = []
    for _ in range(num_pairs):
        length = int(rng.integers(2, 6))
        src.append([letters[int(i)] for i in rng.integers(0, len(letters),
                                                          size=length)])
    return src, [list(s) for s in src]


def out_domain_training(num_sentences: int = 80, seed: int = 0):
    """Training text over the ten-pair training lexicon only."""
    rng = np.random.default_rng(seed)
    src_sentences, tgt_sentences = [], []
    for _ in range(num_sentences):
        length = int(rng.integers(3, 6))
        words = [_TRAIN_SRC[int(i)]
                 for i in rng.integers(0, len(_TRAIN_SRC), size=length)]
        src_sentences.append(words)
        tgt_sentences.append([LEXICON[w] for w in words])
    return src_sentences, tgt_sentences


def template_test_corpus(num_sentences: int = 60):
    """Repetitive test set: three sentence families, one cycling slot each.

    Every sentence carries a domain-shifted lexeme, so against
    out_domain_training the target stream's restricted repetition rate is
    high (the adaptation-helps regime).
    """
    out = []
    for k in range(num_sentences):
        frame, slots = _TEMPLATES[k % len(_TEMPLATES)]
        slot = slots[(k // len(_TEMPLATES)) % len(slots)]
        src = [slot if w is None else w for w in frame]
        out.append((src, [LEXICON[w] for w in src]))
    return out


def control_test_corpus(num_sentences: int = 60, seed: int = 0):
    """Test sentences copied verbatim from the training distribution.

    Takes a contiguous block of training sentences so the flattened test
    stream is a substring of the flattened training stream: every test
    n-gram, including those spanning sentence boundaries, occurs in
    training, making the restricted repetition rate exactly zero (the
    adaptation-is-marginal regime).
    """
    train_src, train_tgt = out_domain_training(max(num_sentences, 80), seed)
    rng = np.random.default_rng(seed + 1)
    start = int(rng.integers(0, len(train_src) - num_sentences + 1))
    return [(train_src[i], train_tgt[i])
            for i in range(start, start + num_sentences)]


def target_token_stream(test_pairs):
    """Flat target-side token stream of a test set, in corpus order."""
    return [w for _, ref in test_pairs for w in ref]


def shuffled_vocabulary_control(tokens, seed: int = 0):
    """Same-length stream of uniform draws from the stream's vocabulary.

    The paired baseline for repetition-rate comparisons: identical token
    inventory and length, structure destroyed.
    """
    tokens = list(tokens)
    if not tokens:
        return []
    vocab = sorted(set(tokens))
    rng = np.random.default_rng(seed)
    return [vocab[int(i)] for i in rng.integers(0, len(vocab),
                                                size=len(tokens))]
