"""Simulated-user evaluation: drive sessions until hypothesis == reference.

The simulated user always fixes the leftmost wrong character (or word),
exactly once per iteration, and accepts when the hypothesis matches the
intended translation. Static and adaptive systems replay the identical test
order so their effort numbers are directly comparable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import Engine, build_engine
from .metrics import bleu, ter
from .session import accept_hypothesis, apply_char_feedback, \
    apply_word_feedback, start_session
from .training import OPTIMIZERS, OptimizerState, TrainConfig, \
    online_update, train

LEVELS = ("char", "word")


class SimulationError(Exception):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    level: str = "char"
    adaptive: bool = False
    optimizer: str = "adadelta"
    learning_rate: float | None = None
    beam_size: int = 6
    max_sentences: int | None = None
    seed: int = 0

    def validate(self) -> "SimulationConfig":
        if self.level not in LEVELS:
            raise SimulationError(f"unknown interaction level {self.level!r}")
        if self.optimizer not in OPTIMIZERS:
            raise SimulationError(f"unknown optimizer {self.optimizer!r}")
        if self.adaptive and self.learning_rate is not None \
                and self.learning_rate <= 0:
            raise SimulationError("adaptive runs need a positive rate")
        if self.beam_size < 1:
            raise SimulationError("beam size must be >= 1")
        return self


@dataclass
class SentenceResult:
    index: int
    keystrokes: int
    mouse_actions: int
    ref_chars: int
    ter_first: float
    iterations: int
    rt_ms: float          # mean decode response time over the sentence
    lt_ms: float          # learning time for this sentence's update (0 if none)
    first_hypothesis: tuple[str, ...]
    reference_words: tuple[str, ...]
    accepted_pair: tuple[tuple[int, ...], tuple[int, ...]]
    rt_samples_ms: tuple[float, ...]

    def effort_row(self):
        """The report fields that must be bit-identical across reruns."""
        return (self.index, self.keystrokes, self.mouse_actions,
                self.ref_chars, self.ter_first, self.iterations)


@dataclass
class SimulationReport:
    level: str
    adaptive: bool
    rows: list[SentenceResult] = field(default_factory=list)

    @property
    def total_keystrokes(self) -> int:
        return sum(r.keystrokes for r in self.rows)

    @property
    def total_mouse_actions(self) -> int:
        return sum(r.mouse_actions for r in self.rows)

    @property
    def total_ref_chars(self) -> int:
        return sum(r.ref_chars for r in self.rows)

    @property
    def ksmr(self) -> float:
        # micro aggregation: corpus-level sums, not a mean of per-sentence rates
        return (self.total_keystrokes + self.total_mouse_actions) \
            / self.total_ref_chars

    @property
    def mean_ter_first(self) -> float:
        return sum(r.ter_first for r in self.rows) / len(self.rows)

    @property
    def bleu_first(self) -> float:
        return bleu([list(r.first_hypothesis) for r in self.rows],
                    [list(r.reference_words) for r in self.rows])

    @property
    def mean_rt_ms(self) -> float:
        samples = [s for r in self.rows for s in r.rt_samples_ms]
        return sum(samples) / len(samples) if samples else 0.0

    @property
    def mean_lt_ms(self) -> float:
        times = [r.lt_ms for r in self.rows if r.lt_ms > 0]
        return sum(times) / len(times) if times else 0.0

    @property
    def cumulative_ksmr(self) -> list[float]:
        out, effort, chars = [], 0, 0
        for r in self.rows:
            effort += r.keystrokes + r.mouse_actions
            chars += r.ref_chars
            out.append(effort / chars)
        return out


def leftmost_char_discrepancy(hypothesis: str, reference: str):
    """Smallest index where the strings differ, with the reference char there.

    Returns None when equal; (len(hypothesis), next char) when the hypothesis
    is a proper prefix; (len(reference), None) when it overruns the reference.
    """
    for i, (h, r) in enumerate(zip(hypothesis, reference)):
        if h != r:
            return i, r
    if len(hypothesis) < len(reference):
        return len(hypothesis), reference[len(hypothesis)]
    if len(hypothesis) > len(reference):
        return len(reference), None
    return None


def _leftmost_word_discrepancy(hyp_words, ref_words):
    for i, (h, r) in enumerate(zip(hyp_words, ref_words)):
        if h != r:
            return i, r
    if len(hyp_words) < len(ref_words):
        return len(hyp_words), ref_words[len(hyp_words)]
    if len(hyp_words) > len(ref_words):
        return len(ref_words), None
    return None


def simulate_inmt_sentence(engine: Engine, source_words, reference_words,
                           config: SimulationConfig,
                           index: int = 0) -> SentenceResult:
    """One sentence to exact match. Raises if it will not terminate."""
    reference_words = tuple(reference_words)
    if not reference_words:
        raise SimulationError("empty reference")
    ref_text = " ".join(reference_words)
    cap = len(ref_text) + 5

    rt: list[float] = []

    def timed(fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        rt.append((time.perf_counter() - t0) * 1000.0)
        return out

    record = timed(start_session, engine, source_words, config.beam_size)
    first_hyp = record.hypothesis_words
    ter_first = ter(list(first_hyp), list(reference_words))

    iterations = 0
    while True:
        if config.level == "char":
            disc = leftmost_char_discrepancy(record.hypothesis_text, ref_text)
        else:
            disc = _leftmost_word_discrepancy(record.hypothesis_words,
                                              reference_words)
        if disc is None:
            record, pair = accept_hypothesis(engine, record)
            break
        position, wanted = disc
        if wanted is None:
            # hypothesis extends the full reference: keep the validated part
            record, pair = accept_hypothesis(engine, record,
                                             at_char=len(ref_text))
            break
        if iterations >= cap:
            raise SimulationError(
                f"sentence {index}: no exact match within {cap} corrections")
        if config.level == "char":
            timed(apply_char_feedback, engine, record, position, wanted)
        else:
            timed(apply_word_feedback, engine, record, position, wanted)
        iterations += 1

    if record.hypothesis_text != ref_text:
        raise SimulationError(
            f"sentence {index}: accepted text differs from the reference")

    return SentenceResult(
        index=index,
        keystrokes=record.keystrokes,
        mouse_actions=record.mouse_actions,
        ref_chars=len(ref_text),
        ter_first=ter_first,
        iterations=iterations,
        rt_ms=sum(rt) / len(rt),
        lt_ms=0.0,
        first_hypothesis=first_hyp,
        reference_words=reference_words,
        accepted_pair=(tuple(pair[0]), tuple(pair[1])),
        rt_samples_ms=tuple(rt))


def simulate_post_edit(engine: Engine, source_words, reference_words,
                       adaptive: bool, optimizer: OptimizerState | None = None,
                       beam_size: int = 6):
    """Decode once, score TER against the reference, optionally update."""
    reference_words = list(reference_words)
    if not reference_words:
        raise SimulationError("empty reference")
    hyp = engine.translate(source_words, beam_size)
    score = ter(list(hyp.words), reference_words)
    updated = False
    if adaptive:
        if optimizer is None:
            raise SimulationError("adaptive post-editing needs an optimizer")
        updated = online_update(engine.params, optimizer,
                                engine.source_ids(source_words),
                                engine.target_ids(reference_words))
    return score, updated


def run_simulation(engine: Engine, test_pairs,
                   config: SimulationConfig) -> SimulationReport:
    """Simulate a whole test set on one engine, adapting if configured.

    Updates happen after each acceptance, before the next sentence's first
    decode. The engine's parameters are mutated when adaptive.
    """
    config.validate()
    report = SimulationReport(level=config.level, adaptive=config.adaptive)
    optimizer = OptimizerState(config.optimizer, config.learning_rate) \
        if config.adaptive else None
    for index, (source_words, reference_words) in enumerate(test_pairs):
        if config.max_sentences is not None and index >= config.max_sentences:
            break
        result = simulate_inmt_sentence(engine, source_words, reference_words,
                                        config, index)
        if config.adaptive:
            src_ids, tgt_ids = result.accepted_pair
            t0 = time.perf_counter()
            online_update(engine.params, optimizer, list(src_ids),
                          list(tgt_ids))
            result.lt_ms = (time.perf_counter() - t0) * 1000.0
        report.rows.append(result)
    if not report.rows:
        raise SimulationError("empty test set")
    return report


@dataclass
class ScenarioCorpora:
    """Parallel text per role; a scenario uses the roles it needs.

    Train corpora are (source sentences, target sentences) pairs of token
    lists; the test set is a list of (source words, reference words) pairs.
    """
    test: list
    in_domain_train: tuple | None = None
    out_domain_train: tuple | None = None


# engine geometry for scenario runs; callers override via engine_opts
_SCENARIO_ENGINE = dict(num_merges=40, embed_dim=24, hidden_dim=24,
                        attention_dim=24, readout_dim=24, seed=0)


def _trained_engine(train_pair, opts, train_config):
    engine = build_engine(train_pair[0], train_pair[1], **opts)
    pairs = [(engine.source_ids(s), engine.target_ids(t))
             for s, t in zip(train_pair[0], train_pair[1])]
    dev = pairs[: min(len(pairs), 8)]
    optimizer = OptimizerState("adam")
    best, _ = train(pairs, dev, engine.params, optimizer, train_config)
    engine.params = best
    return engine


def _fine_tuned(engine, train_pair, train_config):
    pairs = [(engine.source_ids(s), engine.target_ids(t))
             for s, t in zip(train_pair[0], train_pair[1])]
    dev = pairs[: min(len(pairs), 8)]
    best, _ = train(pairs, dev, engine.params, OptimizerState("adam"),
                    train_config)
    engine.params = best
    return engine


def run_scenario(corpora: ScenarioCorpora, scenario: int,
                 config: SimulationConfig, train_config: TrainConfig | None = None,
                 fine_tune_config: TrainConfig | None = None,
                 engine_opts: dict | None = None):
    """Train per the scenario, then paired static/adaptive simulation.

    1: in-domain training. 2: out-of-domain training only. 3: out-of-domain
    training then in-domain fine-tuning. Returns (static, adaptive) reports
    over the identical test order.
    """
    config.validate()
    if not corpora.test:
        raise SimulationError("scenario needs a test set")
    opts = dict(_SCENARIO_ENGINE)
    opts.update(engine_opts or {})
    tc = train_config or TrainConfig(max_updates=600, eval_every=100,
                                     batch_size=8)

    if scenario == 1:
        if corpora.in_domain_train is None:
            raise SimulationError("scenario 1 needs in-domain training text")
        engine = _trained_engine(corpora.in_domain_train, opts, tc)
    elif scenario == 2:
        if corpora.out_domain_train is None:
            raise SimulationError("scenario 2 needs out-of-domain training text")
        engine = _trained_engine(corpora.out_domain_train, opts, tc)
    elif scenario == 3:
        if corpora.out_domain_train is None or corpora.in_domain_train is None:
            raise SimulationError("scenario 3 needs both training corpora")
        engine = _trained_engine(corpora.out_domain_train, opts, tc)
        ftc = fine_tune_config or TrainConfig(max_updates=200, eval_every=50,
                                              batch_size=8, patience=10)
        engine = _fine_tuned(engine, corpora.in_domain_train, ftc)
    else:
        raise SimulationError(f"unknown scenario {scenario}")

    static_engine = Engine(engine.params.copy(), engine.merges,
                           engine.src_vocab, engine.tgt_vocab)
    adaptive_engine = Engine(engine.params.copy(), engine.merges,
                             engine.src_vocab, engine.tgt_vocab)
    static = run_simulation(static_engine, corpora.test,
                            replace(config, adaptive=False))
    adaptive = run_simulation(adaptive_engine, corpora.test,
                              replace(config, adaptive=True))
    return static, adaptive


@dataclass(frozen=True)
class LatencyStats:
    rt_mean_ms: float
    rt_median_ms: float
    rt_p95_ms: float
    interactions: int
    lt_mean_ms: float
    lt_median_ms: float
    lt_p95_ms: float
    updates: int


def measure_latency(engine: Engine, test_pairs,
                    config: SimulationConfig) -> LatencyStats:
    """Wall-clock response and learning times over a simulated test run.

    Runs on a copy of the parameters so timing never mutates the engine.
    """
    clone = Engine(engine.params.copy(), engine.merges, engine.src_vocab,
                   engine.tgt_vocab)
    report = run_simulation(clone, test_pairs, config)
    rt = [s for r in report.rows for s in r.rt_samples_ms]
    lt = [r.lt_ms for r in report.rows if r.lt_ms > 0]

    def stats(xs):
        if not xs:
            return 0.0, 0.0, 0.0
        arr = np.asarray(xs)
        return (float(arr.mean()), float(np.percentile(arr, 50)),
                float(np.percentile(arr, 95)))

    rt_mean, rt_med, rt_p95 = stats(rt)
    lt_mean, lt_med, lt_p95 = stats(lt)
    return LatencyStats(rt_mean, rt_med, rt_p95, len(rt),
                        lt_mean, lt_med, lt_p95, len(lt))


def write_report_csv(report: SimulationReport, path) -> None:
    """Per-sentence effort rows plus one aggregate footer row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,ks,ma,ref_chars,ter_first,iterations,rt_ms,lt_ms\n")
        for r in report.rows:
            fh.write(f"{r.index},{r.keystrokes},{r.mouse_actions},"
                     f"{r.ref_chars},{r.ter_first:.4f},{r.iterations},"
                     f"{r.rt_ms:.2f},{r.lt_ms:.2f}\n")
        fh.write(f"all,{report.total_keystrokes},{report.total_mouse_actions},"
                 f"{report.total_ref_chars},{report.mean_ter_first:.4f},"
                 f"{sum(r.iterations for r in report.rows)},"
                 f"{report.mean_rt_ms:.2f},{report.mean_lt_ms:.2f}\n")
