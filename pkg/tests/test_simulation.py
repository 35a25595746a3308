"""Simulated-user loop: exactness, effort accounting, scenarios, latency."""

import numpy as np
import pytest

import imtforge.autodiff as ad
from imtforge.bpe import EOS_ID
from imtforge.engine import Engine, Translation, build_engine
from imtforge.simulation import (
    ScenarioCorpora,
    SimulationConfig,
    SimulationError,
    leftmost_char_discrepancy,
    measure_latency,
    run_scenario,
    run_simulation,
    simulate_inmt_sentence,
    simulate_post_edit,
    write_report_csv,
)
from imtforge.training import OptimizerState, TrainConfig, sentence_nll

SRC = [s.split() for s in ["aba ca", "ca aba", "ba ba", "aba aba", "ca ba"]]
TGT = [s.split() for s in ["ab cc", "cc ab", "bb ab", "ab ab", "cc bb"]]

CHAR = SimulationConfig(level="char", beam_size=2)
WORD = SimulationConfig(level="word", beam_size=2)


@pytest.fixture(scope="module")
def engine():
    eng = build_engine(SRC, TGT, num_merges=10, embed_dim=8, hidden_dim=8,
                       attention_dim=8, readout_dim=8, seed=0)
    eng.params.arrays["proj_bias"][EOS_ID] = -3.0
    return eng


class _BrokenEngine:
    """Ignores constraints entirely; drives the termination-cap error."""

    def translate(self, words, beam_size=6, max_length=None):
        return Translation(("zz",), "zz", None)

    def constrained_translate(self, words, constraint, beam_size=6,
                              max_length=None, word_completion=False):
        return Translation(("zz",), "zz", None)

    def source_ids(self, words):
        return [5]

    def target_ids(self, words, terminated=True):
        return [EOS_ID]


class TestDiscrepancy:
    def test_equal_strings(self):
        assert leftmost_char_discrepancy("abc", "abc") is None

    def test_first_difference(self):
        assert leftmost_char_discrepancy("abd", "abc") == (2, "c")

    def test_append_case(self):
        assert leftmost_char_discrepancy("ab", "abc") == (2, "c")

    def test_overrun_case(self):
        assert leftmost_char_discrepancy("abcd", "abc") == (3, None)

    def test_empty_hypothesis(self):
        assert leftmost_char_discrepancy("", "x") == (0, "x")


class TestSentenceSimulation:
    def test_already_correct_hypothesis(self, engine):
        ref = engine.translate(["aba", "ca"], beam_size=2).words
        res = simulate_inmt_sentence(engine, ["aba", "ca"], ref, CHAR)
        assert res.keystrokes == 0
        assert res.mouse_actions == 1
        assert res.iterations == 0
        assert res.ter_first == 0.0

    def test_overlong_hypothesis_truncating_accept(self, engine):
        full = engine.translate(["aba", "ca"], beam_size=2).words
        assert len(full) >= 2
        ref = full[:1]
        res = simulate_inmt_sentence(engine, ["aba", "ca"], ref, CHAR)
        assert res.keystrokes == 0 and res.mouse_actions == 1

    @pytest.mark.parametrize("ref", [
        ["cc"], ["ab", "cc"], ["bb", "ab", "cc"], ["c", "a"],
        ["abc"], ["ba", "ba", "ba"],
    ])
    def test_char_level_exactness_and_bounds(self, engine, ref):
        res = simulate_inmt_sentence(engine, ["aba", "ca"], ref, CHAR)
        ref_text = " ".join(ref)
        assert res.ref_chars == len(ref_text)
        assert res.keystrokes <= len(ref_text)
        assert res.mouse_actions <= res.keystrokes + 1
        assert res.iterations <= len(ref_text) + 1

    @pytest.mark.parametrize("ref", [
        ["cc"], ["ab", "cc"], ["bb", "ab", "cc"], ["cc", "cc", "ab", "bb"],
    ])
    def test_word_level_exactness(self, engine, ref):
        res = simulate_inmt_sentence(engine, ["ca", "ba"], ref, WORD)
        assert res.iterations <= len(ref) + 1
        assert res.mouse_actions <= res.iterations + 1

    def test_accepted_pair_matches_reference(self, engine):
        ref = ["ab", "cc"]
        res = simulate_inmt_sentence(engine, ["aba"], ref, CHAR)
        src_ids, tgt_ids = res.accepted_pair
        assert list(src_ids) == engine.source_ids(["aba"])
        assert list(tgt_ids) == engine.target_ids(ref)

    def test_timing_fields_populated(self, engine):
        res = simulate_inmt_sentence(engine, ["aba"], ["cc"], CHAR)
        assert res.rt_ms > 0
        assert len(res.rt_samples_ms) == res.iterations + 1
        assert res.lt_ms == 0.0

    def test_empty_reference_rejected(self, engine):
        with pytest.raises(SimulationError):
            simulate_inmt_sentence(engine, ["aba"], [], CHAR)

    def test_termination_cap(self):
        with pytest.raises(SimulationError):
            simulate_inmt_sentence(_BrokenEngine(), ["x"], ["ab"], CHAR)


class TestPostEdit:
    def test_static_is_deterministic(self, engine):
        a, updated_a = simulate_post_edit(engine, ["aba"], ["ab", "cc"], False)
        b, updated_b = simulate_post_edit(engine, ["aba"], ["ab", "cc"], False)
        assert a == b and not updated_a and not updated_b

    def test_zero_rate_equals_static(self, engine):
        eng = Engine(engine.params.copy(), engine.merges, engine.src_vocab,
                     engine.tgt_vocab)
        before = {k: v.copy() for k, v in eng.params.arrays.items()}
        score, updated = simulate_post_edit(
            eng, ["aba"], ["ab", "cc"], True, OptimizerState("sgd", 0.0))
        assert score == simulate_post_edit(engine, ["aba"], ["ab", "cc"],
                                           False)[0]
        for k, v in eng.params.arrays.items():
            assert np.array_equal(v, before[k])

    def test_missing_optimizer_rejected(self, engine):
        with pytest.raises(SimulationError):
            simulate_post_edit(engine, ["aba"], ["cc"], True)

    def test_repetition_drives_nll_down_to_convergence(self):
        eng = build_engine(SRC, TGT, num_merges=10, embed_dim=8, hidden_dim=8,
                           attention_dim=8, readout_dim=8, seed=0)
        opt = OptimizerState("sgd", 1.0)
        src, ref = ["aba", "ca"], ["ab", "cc"]
        src_ids = eng.source_ids(src)
        tgt_ids = eng.target_ids(ref)

        def nll():
            view = eng.params.view(ad.Tape(grad=False))
            return float(sentence_nll(view, src_ids, tgt_ids).data)

        first = nll()
        for _ in range(20):
            simulate_post_edit(eng, src, ref, True, opt, beam_size=2)
        assert nll() < first
        assert eng.translate(src, beam_size=2).words == tuple(ref)


class TestRunSimulation:
    def test_report_aggregates(self, engine):
        test = [(["aba"], ["cc"]), (["ca"], ["ab", "cc"]), (["ba"], ["bb"])]
        report = run_simulation(engine, test, CHAR)
        assert len(report.rows) == 3
        total = sum(r.keystrokes + r.mouse_actions for r in report.rows)
        chars = sum(r.ref_chars for r in report.rows)
        assert report.ksmr == pytest.approx(total / chars)
        assert report.cumulative_ksmr[-1] == pytest.approx(report.ksmr)
        assert len(report.cumulative_ksmr) == 3
        assert 0.0 <= report.bleu_first <= 1.0
        assert report.mean_lt_ms == 0.0

    def test_static_leaves_parameters_alone(self, engine):
        before = {k: v.copy() for k, v in engine.params.arrays.items()}
        run_simulation(engine, [(["aba"], ["cc"])], CHAR)
        for k, v in engine.params.arrays.items():
            assert np.array_equal(v, before[k])

    def test_adaptive_updates_parameters_and_times_it(self, engine):
        eng = Engine(engine.params.copy(), engine.merges, engine.src_vocab,
                     engine.tgt_vocab)
        config = SimulationConfig(level="char", adaptive=True,
                                  optimizer="adadelta", beam_size=2)
        report = run_simulation(eng, [(["aba"], ["cc"]), (["ca"], ["ab"])],
                                config)
        assert all(r.lt_ms > 0 for r in report.rows)
        assert report.mean_lt_ms > 0
        changed = any(
            not np.array_equal(eng.params.arrays[k], engine.params.arrays[k])
            for k in eng.params.arrays)
        assert changed

    def test_effort_is_reproducible(self, engine):
        test = [(["aba"], ["cc", "ab"]), (["ba", "ca"], ["bb"])]
        a = run_simulation(engine, test, CHAR)
        b = run_simulation(engine, test, CHAR)
        assert [r.effort_row() for r in a.rows] == \
            [r.effort_row() for r in b.rows]

    def test_max_sentences_and_empty_set(self, engine):
        test = [(["aba"], ["cc"])] * 5
        report = run_simulation(
            engine, test, SimulationConfig(level="char", beam_size=2,
                                           max_sentences=2))
        assert len(report.rows) == 2
        with pytest.raises(SimulationError):
            run_simulation(engine, [], CHAR)

    def test_config_validation(self):
        with pytest.raises(SimulationError):
            SimulationConfig(level="phrase").validate()
        with pytest.raises(SimulationError):
            SimulationConfig(optimizer="newton").validate()
        with pytest.raises(SimulationError):
            SimulationConfig(beam_size=0).validate()
        with pytest.raises(SimulationError):
            SimulationConfig(adaptive=True, learning_rate=-1.0).validate()


class TestScenarios:
    OPTS = dict(num_merges=10, embed_dim=8, hidden_dim=8, attention_dim=8,
                readout_dim=8, seed=0)
    TC = TrainConfig(max_updates=10, eval_every=5, batch_size=2, patience=50)

    def corpora(self):
        test = [(s, t) for s, t in zip(SRC[:3], TGT[:3])]
        return ScenarioCorpora(test=test, in_domain_train=(SRC, TGT),
                               out_domain_train=(SRC, TGT))

    def test_scenario_one_runs_paired(self):
        static, adaptive = run_scenario(
            self.corpora(), 1, CHAR, train_config=self.TC,
            engine_opts=self.OPTS)
        assert not static.adaptive and adaptive.adaptive
        assert [r.reference_words for r in static.rows] == \
            [r.reference_words for r in adaptive.rows]

    def test_scenario_three_fine_tunes(self):
        static, adaptive = run_scenario(
            self.corpora(), 3, CHAR, train_config=self.TC,
            fine_tune_config=self.TC, engine_opts=self.OPTS)
        assert len(static.rows) == len(adaptive.rows) == 3

    def test_same_seed_reproduces_effort(self):
        a_static, a_adapt = run_scenario(self.corpora(), 1, CHAR,
                                         train_config=self.TC,
                                         engine_opts=self.OPTS)
        b_static, b_adapt = run_scenario(self.corpora(), 1, CHAR,
                                         train_config=self.TC,
                                         engine_opts=self.OPTS)
        assert [r.effort_row() for r in a_static.rows] == \
            [r.effort_row() for r in b_static.rows]
        assert [r.effort_row() for r in a_adapt.rows] == \
            [r.effort_row() for r in b_adapt.rows]

    def test_missing_corpus_rejected(self):
        test = [(SRC[0], TGT[0])]
        with pytest.raises(SimulationError):
            run_scenario(ScenarioCorpora(test=test), 1, CHAR)
        with pytest.raises(SimulationError):
            run_scenario(ScenarioCorpora(test=test), 2, CHAR)
        with pytest.raises(SimulationError):
            run_scenario(ScenarioCorpora(test=test,
                                         out_domain_train=(SRC, TGT)), 3, CHAR)

    def test_unknown_scenario_rejected(self):
        with pytest.raises(SimulationError):
            run_scenario(self.corpora(), 4, CHAR)
        with pytest.raises(SimulationError):
            run_scenario(ScenarioCorpora(test=[]), 1, CHAR)


class TestLatency:
    def test_stats_structure(self, engine):
        config = SimulationConfig(level="char", adaptive=True,
                                  optimizer="adadelta", beam_size=2)
        test = [(["aba"], ["cc"]), (["ca"], ["ab"])]
        before = {k: v.copy() for k, v in engine.params.arrays.items()}
        stats = measure_latency(engine, test, config)
        # measurement must not touch the caller's parameters
        for k, v in engine.params.arrays.items():
            assert np.array_equal(v, before[k])
        assert stats.interactions >= 2
        assert stats.updates == 2
        assert 0 < stats.rt_mean_ms
        assert stats.rt_median_ms <= stats.rt_p95_ms
        assert 0 < stats.lt_mean_ms


class TestReportCsv:
    def test_rows_and_footer(self, tmp_path, engine):
        report = run_simulation(engine, [(["aba"], ["cc"]), (["ba"], ["bb"])],
                                CHAR)
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "index,ks,ma,ref_chars,ter_first,iterations,rt_ms,lt_ms"
        assert len(lines) == 4
        assert lines[1].startswith("0,") and lines[2].startswith("1,")
        footer = lines[3].split(",")
        assert footer[0] == "all"
        assert int(footer[1]) == report.total_keystrokes
        assert int(footer[3]) == report.total_ref_chars
