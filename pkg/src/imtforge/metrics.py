"""Translation-quality and corpus-characteristic metrics.

TER (edit distance wrapped in a block-shift search), corpus BLEU, the
keystroke-and-mouse ratio, windowed repetition rates over n-gram types,
unseen-n-gram fractions, and seeded percentile-bootstrap confidence
intervals. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

MAX_ORDER = 4

# block-shift search goes exact below this hypothesis length, greedy above:
# the arrangement space over short sequences is small enough to enumerate
EXACT_SHIFT_LIMIT = 6


class MetricError(Exception):
    pass


# ---------------------------------------------------------------------------
# TER


def _edit_distance(a, b) -> int:
    if len(a) > len(b):
        a, b = b, a
    prev = list(range(len(a) + 1))
    for j, bj in enumerate(b, start=1):
        cur = [j]
        for i, ai in enumerate(a, start=1):
            cur.append(min(prev[i] + 1, cur[i - 1] + 1,
                           prev[i - 1] + (ai != bj)))
        prev = cur
    return prev[-1]


def _all_shifts(seq):
    """Every sequence reachable by moving one contiguous block once."""
    n = len(seq)
    for i in range(n):
        for length in range(1, n - i + 1):
            block = seq[i:i + length]
            rest = seq[:i] + seq[i + length:]
            for j in range(len(rest) + 1):
                if j == i:
                    continue
                yield rest[:j] + block + rest[j:]


def _min_shift_edits(hyp, ref) -> int:
    """Exact minimum of (shifts used + remaining edit distance)."""
    start = tuple(hyp)
    best = _edit_distance(start, ref)
    seen = {start}
    frontier = [start]
    used = 0
    while frontier and used + 1 < best:
        used += 1
        grown = []
        for seq in frontier:
            for shifted in _all_shifts(seq):
                if shifted in seen:
                    continue
                seen.add(shifted)
                grown.append(shifted)
                total = used + _edit_distance(shifted, ref)
                if total < best:
                    best = total
        frontier = grown
    return best


def _greedy_shift_edits(hyp, ref) -> int:
    """Repeatedly apply the single shift that most reduces edit distance."""
    seq = tuple(hyp)
    dist = _edit_distance(seq, ref)
    shifts = 0
    while True:
        best_seq, best_dist = None, dist
        for shifted in _all_shifts(seq):
            d = _edit_distance(shifted, ref)
            if d < best_dist:
                best_seq, best_dist = shifted, d
        if best_seq is None:
            return shifts + dist
        seq, dist = best_seq, best_dist
        shifts += 1


def ter(hypothesis, reference) -> float:
    """Block-shift edit rate: edits needed to turn hypothesis into reference,
    divided by reference length."""
    hyp, ref = list(hypothesis), list(reference)
    if not ref:
        raise MetricError("TER needs a non-empty reference")
    if len(hyp) <= EXACT_SHIFT_LIMIT:
        edits = _min_shift_edits(hyp, ref)
    else:
        edits = _greedy_shift_edits(hyp, ref)
    return edits / len(ref)


# ---------------------------------------------------------------------------
# BLEU


def _ngram_counts(tokens, n) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references) -> float:
    """Corpus BLEU, orders 1..4, clipped counts, brevity penalty, unsmoothed.

    Orders with no hypothesis n-grams anywhere in the corpus are skipped, so
    very short corpora still satisfy identical -> 1.0.
    """
    if not hypotheses:
        raise MetricError("empty hypothesis list")
    if len(hypotheses) != len(references):
        raise MetricError("hypothesis/reference count mismatch")
    matched = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            counts = _ngram_counts(hyp, n)
            if not counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            total[n - 1] += sum(counts.values())
            matched[n - 1] += sum(min(c, ref_counts[g]) for g, c in counts.items())
    log_sum = 0.0
    orders = 0
    for m, t in zip(matched, total):
        if t == 0:
            continue
        if m == 0:
            return 0.0
        log_sum += math.log(m / t)
        orders += 1
    if orders == 0 or hyp_len == 0:
        return 0.0
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * math.exp(log_sum / orders)


def sentence_bleu(hypothesis, reference) -> float:
    """Single-sentence BLEU with +1 smoothing on orders above 1 (diagnostic)."""
    hyp, ref = list(hypothesis), list(reference)
    if not hyp:
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in range(1, MAX_ORDER + 1):
        counts = _ngram_counts(hyp, n)
        if not counts:
            continue
        ref_counts = _ngram_counts(ref, n)
        m = sum(min(c, ref_counts[g]) for g, c in counts.items())
        t = sum(counts.values())
        if n > 1:
            m, t = m + 1, t + 1
        if m == 0:
            return 0.0
        log_sum += math.log(m / t)
        orders += 1
    brevity = 1.0 if len(hyp) >= len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return brevity * math.exp(log_sum / orders)


# ---------------------------------------------------------------------------
# effort


def ksmr(keystrokes: int, mouse_actions: int, reference_chars: int) -> float:
    """(keystrokes + mouse actions) / reference characters."""
    if reference_chars <= 0:
        raise MetricError("reference character count must be positive")
    return (keystrokes + mouse_actions) / reference_chars


# ---------------------------------------------------------------------------
# corpus repetitiveness


@dataclass
class NGramProfile:
    """Per-order n-gram counts of one token window."""

    counts: dict[int, Counter]

    @classmethod
    def of(cls, tokens, max_order: int = MAX_ORDER) -> "NGramProfile":
        return cls({n: _ngram_counts(tokens, n) for n in range(1, max_order + 1)})


def _windows(tokens, window: int):
    """Non-overlapping windows; a trailing partial joins if >= window/10.

    A stream shorter than one window is itself the single window.
    """
    if window < 1:
        raise MetricError("window must be >= 1")
    if len(tokens) <= window:
        return [tokens]
    out = [tokens[i:i + window] for i in range(0, len(tokens) - window + 1, window)]
    leftover = len(tokens) % window
    if leftover and leftover >= window / 10:
        out.append(tokens[-leftover:])
    return out


def _windowed_type_rate(tokens, window, keep) -> float:
    """Geometric mean over orders of windowed non-singleton type fractions.

    `keep` filters which n-gram types count at all (identity for plain RR).
    Orders with no kept types in any window are skipped; if nothing is
    defined the rate is 0.
    """
    tokens = list(tokens)
    if not tokens:
        raise MetricError("empty token stream")
    per_order: list[float] = []
    for n in range(1, MAX_ORDER + 1):
        fractions = []
        for win in _windows(tokens, window):
            counts = {g: c for g, c in _ngram_counts(win, n).items() if keep(g)}
            if not counts:
                continue
            repeated = sum(1 for c in counts.values() if c >= 2)
            fractions.append(repeated / len(counts))
        if fractions:
            per_order.append(sum(fractions) / len(fractions))
    if not per_order:
        return 0.0
    if any(f == 0.0 for f in per_order):
        return 0.0
    return math.exp(sum(math.log(f) for f in per_order) / len(per_order))


def repetition_rate(tokens, window: int = 100) -> float:
    """Windowed fraction of repeated n-gram types, averaged geometrically."""
    return _windowed_type_rate(tokens, window, lambda g: True)


def restricted_repetition_rate(test_tokens, training_tokens,
                               window: int = 100) -> float:
    """Repetition rate over only the n-grams absent from the training stream."""
    training = list(training_tokens)
    if not training:
        raise MetricError("empty training stream")
    known = set()
    for n in range(1, MAX_ORDER + 1):
        known.update(_ngram_counts(training, n).keys())
    return _windowed_type_rate(test_tokens, window, lambda g: g not in known)


def unseen_ngram_fraction(test_tokens, training_tokens) -> float:
    """Mean over orders of the fraction of test n-gram instances not in training."""
    test = list(test_tokens)
    training = list(training_tokens)
    if not test or not training:
        raise MetricError("both streams must be non-empty")
    per_order = []
    for n in range(1, MAX_ORDER + 1):
        counts = _ngram_counts(test, n)
        total = sum(counts.values())
        if total == 0:
            continue
        known = set(_ngram_counts(training, n).keys())
        unseen = sum(c for g, c in counts.items() if g not in known)
        per_order.append(unseen / total)
    if not per_order:
        return 0.0
    return sum(per_order) / len(per_order)


# ---------------------------------------------------------------------------
# bootstrap


@dataclass(frozen=True)
class ConfidenceInterval:
    point: float
    lower: float
    upper: float
    level: float
    resamples: int


def bootstrap_ci(values, level: float = 0.95, resamples: int = 1000,
                 seed: int = 0, statistic=None) -> ConfidenceInterval:
    """Percentile bootstrap over sentence resampling with replacement.

    `values` is a list of per-sentence records; `statistic` maps such a list
    to a float (default: mean of floats). Seeded, so reproducible.
    """
    values = list(values)
    if len(values) < 2:
        raise MetricError("bootstrap needs at least 2 sentences")
    if resamples < 100:
        raise MetricError("bootstrap needs at least 100 resamples")
    if statistic is None:
        statistic = lambda vs: sum(vs) / len(vs)
    rng = np.random.default_rng(seed)
    point = float(statistic(values))
    stats = np.empty(resamples)
    n = len(values)
    for i in range(resamples):
        picks = rng.integers(0, n, size=n)
        stats[i] = statistic([values[j] for j in picks])
    alpha = (1.0 - level) / 2.0
    lower = float(np.quantile(stats, alpha))
    upper = float(np.quantile(stats, 1.0 - alpha))
    # percentile intervals can miss a skewed point estimate; the interval is
    # defined to bracket it
    return ConfidenceInterval(point, min(lower, point), max(upper, point),
                              level, resamples)


def write_metric_report(path, rows) -> None:
    """Rows of (name, value, ci_low, ci_high), tab-separated."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, value, lo, hi in rows:
            fh.write(f"{name}\t{value:.6f}\t{lo:.6f}\t{hi:.6f}\n")
