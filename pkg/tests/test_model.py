import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from imtforge import autodiff as ad
from imtforge import model as m
from imtforge.bpe import BOS_ID


def tiny_config(**kw):
    defaults = dict(src_vocab=7, tgt_vocab=9, embed_dim=4, hidden_dim=4,
                    attention_dim=4, readout_dim=4)
    defaults.update(kw)
    return m.ModelConfig(**defaults)


def make_params(seed=0, **kw):
    return m.ModelParams.new(tiny_config(**kw), seed=seed)


# ---------------------------------------------------------------------------
# straight-line scalar oracle: explicit loops and math.tanh, no numpy matmul


def oracle_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def oracle_affine(w, x, u, h, b):
    out = []
    for r in range(len(b)):
        acc = b[r]
        for c in range(len(x)):
            acc += w[r][c] * x[c]
        for c in range(len(h)):
            acc += u[r][c] * h[c]
        out.append(acc)
    return out


def oracle_lstm(arrays, block, x, h_prev, c_prev, standard=False):
    def gate(name, squash):
        vals = oracle_affine(arrays[f"{block}.w_{name}"].tolist(), x,
                             arrays[f"{block}.u_{name}"].tolist(), h_prev,
                             arrays[f"{block}.b_{name}"].tolist())
        return [squash(v) for v in vals]

    cand = gate("cand", math.tanh)
    forget = gate("forget", oracle_sigmoid)
    gate_in = gate("input", oracle_sigmoid)
    gate_out = gate("output", oracle_sigmoid)
    cell = [f * cp + i * cd for f, cp, i, cd in zip(forget, c_prev, gate_in, cand)]
    if standard:
        hidden = [o * math.tanh(c) for o, c in zip(gate_out, cell)]
    else:
        hidden = [o * c for o, c in zip(gate_out, cell)]
    return hidden, cell


def oracle_encode(arrays, src_ids, hidden_dim, standard=False):
    embeds = [arrays["src_embed"][i].tolist() for i in src_ids]
    zeros = [0.0] * hidden_dim

    def sweep(block, seq):
        h, c = zeros, zeros
        out = []
        for x in seq:
            h, c = oracle_lstm(arrays, block, x, h, c, standard)
            out.append(h)
        return out

    fwd = sweep("enc_fwd", embeds)
    bwd = list(reversed(sweep("enc_bwd", list(reversed(embeds)))))
    return [f + b for f, b in zip(fwd, bwd)]


def oracle_attend(arrays, query_hidden, annotations):
    scores = []
    for h_j in annotations:
        act = oracle_affine(arrays["att_query"].tolist(), query_hidden,
                            arrays["att_key"].tolist(), h_j,
                            arrays["att_bias"].tolist())
        act = [math.tanh(v) for v in act]
        scores.append(sum(w * v for w, v in zip(arrays["att_score"], act)))
    mx = max(scores)
    exps = [math.exp(s - mx) for s in scores]
    total = sum(exps)
    weights = [v / total for v in exps]
    ctx = [0.0] * len(annotations[0])
    for wgt, h_j in zip(weights, annotations):
        for k, v in enumerate(h_j):
            ctx[k] += wgt * v
    return scores, weights, ctx


def oracle_decoder_step(arrays, prev_id, out_hidden, out_cell, word_cell,
                        annotations, standard=False):
    prev_embed = arrays["tgt_embed"][prev_id].tolist()
    word_h, word_c = oracle_lstm(arrays, "dec_word", prev_embed,
                                 out_hidden, word_cell, standard)
    _, weights, ctx = oracle_attend(arrays, word_h, annotations)
    out_h, out_c = oracle_lstm(arrays, "dec_ctx", ctx, word_h, out_cell, standard)
    readout = []
    for r in range(len(arrays["out_bias"])):
        acc = arrays["out_bias"][r]
        acc += sum(arrays["out_state"][r][c] * out_h[c] for c in range(len(out_h)))
        acc += sum(arrays["out_ctx"][r][c] * ctx[c] for c in range(len(ctx)))
        acc += sum(arrays["out_word"][r][c] * prev_embed[c]
                   for c in range(len(prev_embed)))
        readout.append(math.tanh(acc))
    logits = []
    for r in range(len(arrays["proj_bias"])):
        acc = arrays["proj_bias"][r]
        acc += sum(arrays["proj"][r][c] * readout[c] for c in range(len(readout)))
        logits.append(acc)
    mx = max(logits)
    exps = [math.exp(v - mx) for v in logits]
    total = sum(exps)
    return out_h, out_c, word_h, word_c, [v / total for v in exps]


# ---------------------------------------------------------------------------


class TestLstmStep:
    def run_step(self, params, x, h, c):
        with ad.Tape(grad=False) as tape:
            view = params.view(tape)
            hidden, cell = m.lstm_step(view, "dec_word", tape.tensor(x),
                                       tape.tensor(h), tape.tensor(c))
            return hidden.data, cell.data

    def test_zero_weights_halve_cell(self):
        params = make_params()
        for name in list(params.arrays):
            if name.startswith("dec_word."):
                params.arrays[name] = np.zeros_like(params.arrays[name])
        v = np.array([1.0, -2.0, 4.0, 0.5])
        hidden, cell = self.run_step(params, np.ones(4), np.ones(4), v)
        assert_allclose(cell, 0.5 * v)
        assert_allclose(hidden, 0.25 * v)

    def test_all_zero_inputs_and_weights(self):
        params = make_params()
        for name in list(params.arrays):
            if name.startswith("dec_word."):
                params.arrays[name] = np.zeros_like(params.arrays[name])
        hidden, cell = self.run_step(params, np.zeros(4), np.zeros(4), np.zeros(4))
        assert_allclose(cell, 0.0)
        assert_allclose(hidden, 0.0)

    def test_standard_output_flag(self):
        params = m.ModelParams.new(tiny_config(standard_lstm_output=True), seed=1)
        for name in list(params.arrays):
            if name.startswith("dec_word."):
                params.arrays[name] = np.zeros_like(params.arrays[name])
        v = np.array([1.0, -2.0, 4.0, 0.5])
        hidden, cell = self.run_step(params, np.ones(4), np.ones(4), v)
        assert_allclose(cell, 0.5 * v)
        assert_allclose(hidden, 0.5 * np.tanh(0.5 * v))

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        params = make_params(seed=3)
        x, h, c = rng.normal(size=4), rng.normal(size=4), rng.normal(size=4)
        hidden, cell = self.run_step(params, x, h, c)
        want_h, want_c = oracle_lstm(params.arrays, "dec_word",
                                     x.tolist(), h.tolist(), c.tolist())
        assert_allclose(hidden, want_h, rtol=1e-12)
        assert_allclose(cell, want_c, rtol=1e-12)


class TestEncode:
    def test_single_position_is_one_step_from_zero_state(self):
        params = make_params(seed=4)
        with ad.Tape(grad=False) as tape:
            view = params.view(tape)
            ann = m.encode(view, [5])
            assert ann.length == 1
            x = ad.embedding(view["src_embed"], 5)
            zero = tape.tensor(np.zeros(4))
            f, _ = m.lstm_step(view, "enc_fwd", x, zero, zero)
            b, _ = m.lstm_step(view, "enc_bwd", x, zero, zero)
            assert_allclose(ann.vectors[0].data, np.concatenate([f.data, b.data]))

    def test_matches_scalar_oracle_and_reversal(self):
        params = make_params(seed=5)
        ids = [1, 4, 2]
        with ad.Tape(grad=False) as tape:
            ann = m.encode(params.view(tape), ids)
        want = oracle_encode(params.arrays, ids, 4)
        for got, w in zip(ann.vectors, want):
            assert_allclose(got.data, w, rtol=1e-12)
        # reversing the source swaps the roles of the two sweeps
        with ad.Tape(grad=False) as tape:
            rev = m.encode(params.view(tape), list(reversed(ids)))
        want_rev = oracle_encode(params.arrays, list(reversed(ids)), 4)
        for got, w in zip(rev.vectors, want_rev):
            assert_allclose(got.data, w, rtol=1e-12)

    def test_identical_tokens_get_distinct_annotations(self):
        params = make_params(seed=6)
        with ad.Tape(grad=False) as tape:
            ann = m.encode(params.view(tape), [3, 3])
        assert not np.allclose(ann.vectors[0].data, ann.vectors[1].data)

    def test_empty_source_errors(self):
        params = make_params()
        with ad.Tape(grad=False) as tape:
            with pytest.raises(m.ModelError):
                m.encode(params.view(tape), [])

    def test_out_of_range_id_errors(self):
        params = make_params()
        with ad.Tape(grad=False) as tape:
            with pytest.raises(m.ModelError):
                m.encode(params.view(tape), [99])


class TestAttend:
    def test_single_annotation_forces_unit_weight(self):
        params = make_params(seed=7)
        rng = np.random.default_rng(7)
        with ad.Tape(grad=False) as tape:
            view = params.view(tape)
            ann = m.EncoderAnnotations([tape.tensor(rng.normal(size=8))])
            att = m.attend(view, tape.tensor(rng.normal(size=4)), ann)
        assert_allclose(att.weights.data, [1.0])
        assert_allclose(att.context.data, ann.vectors[0].data)

    def test_identical_annotations_give_uniform_weights(self):
        params = make_params(seed=8)
        rng = np.random.default_rng(8)
        h = rng.normal(size=8)
        with ad.Tape(grad=False) as tape:
            view = params.view(tape)
            ann = m.EncoderAnnotations([tape.tensor(h) for _ in range(3)])
            att = m.attend(view, tape.tensor(rng.normal(size=4)), ann)
        assert_allclose(att.weights.data, [1 / 3] * 3)
        assert_allclose(att.context.data, h, rtol=1e-12)

    def test_matches_scalar_oracle(self):
        params = make_params(seed=9)
        rng = np.random.default_rng(9)
        annotations = [rng.normal(size=8) for _ in range(3)]
        query = rng.normal(size=4)
        with ad.Tape(grad=False) as tape:
            view = params.view(tape)
            ann = m.EncoderAnnotations([tape.tensor(a) for a in annotations])
            att = m.attend(view, tape.tensor(query), ann)
        want_scores, want_weights, want_ctx = oracle_attend(
            params.arrays, query.tolist(), [a.tolist() for a in annotations])
        assert_allclose(att.scores.data, want_scores, rtol=1e-12)
        assert_allclose(att.weights.data, want_weights, rtol=1e-12)
        assert_allclose(att.context.data, want_ctx, rtol=1e-12)
        assert abs(att.weights.data.sum() - 1.0) < 1e-9


class TestDecoderStep:
    def test_distribution_valid(self):
        params = make_params(seed=10)
        with ad.Tape(grad=False) as tape:
            view = params.view(tape)
            ann = m.encode(view, [1, 2, 3])
            state = m.init_decoder_state(view, ann)
            _, probs = m.decoder_step(view, BOS_ID, state, ann)
        assert abs(probs.data.sum() - 1.0) < 1e-9
        assert np.all(probs.data > 0)

    def test_zero_projection_gives_uniform(self):
        params = make_params(seed=11)
        params.arrays["proj"] = np.zeros_like(params.arrays["proj"])
        params.arrays["proj_bias"] = np.zeros_like(params.arrays["proj_bias"])
        with ad.Tape(grad=False) as tape:
            view = params.view(tape)
            ann = m.encode(view, [1])
            state = m.init_decoder_state(view, ann)
            _, probs = m.decoder_step(view, 4, state, ann)
        assert_allclose(probs.data, np.full(9, 1 / 9), rtol=1e-12)

    def test_full_step_matches_scalar_oracle(self):
        params = make_params(seed=12)
        rng = np.random.default_rng(12)
        src = [2, 5, 1]
        with ad.Tape(grad=False) as tape:
            view = params.view(tape)
            ann = m.encode(view, src)
            state = m.init_decoder_state(view, ann)
            new_state, probs = m.decoder_step(view, 3, state, ann)
        oracle_ann = oracle_encode(params.arrays, src, 4)
        o_out_h, o_out_c, o_word_h, o_word_c, o_probs = oracle_decoder_step(
            params.arrays, 3,
            state.out_hidden.data.tolist(), state.out_cell.data.tolist(),
            [0.0] * 4, oracle_ann)
        assert_allclose(new_state.out_hidden.data, o_out_h, rtol=1e-10)
        assert_allclose(new_state.out_cell.data, o_out_c, rtol=1e-10)
        assert_allclose(new_state.word_hidden.data, o_word_h, rtol=1e-10)
        assert_allclose(new_state.word_cell.data, o_word_c, rtol=1e-10)
        assert_allclose(probs.data, o_probs, rtol=1e-10)

    def test_init_state_uses_mean_annotation(self):
        params = make_params(seed=13)
        with ad.Tape(grad=False) as tape:
            view = params.view(tape)
            ann = m.encode(view, [1, 2])
            state = m.init_decoder_state(view, ann)
            mean = 0.5 * (ann.vectors[0].data + ann.vectors[1].data)
            want = np.tanh(params.arrays["init_state_w"] @ mean
                           + params.arrays["init_state_b"])
        assert_allclose(state.out_hidden.data, want, rtol=1e-12)
        assert_allclose(state.word_hidden.data, np.zeros(4))
        assert state.prev_id == BOS_ID

    def test_determinism(self):
        params = make_params(seed=14)

        def run():
            with ad.Tape(grad=False) as tape:
                view = params.view(tape)
                ann = m.encode(view, [1, 2, 3])
                state = m.init_decoder_state(view, ann)
                _, probs = m.decoder_step(view, 2, state, ann)
                return probs.data.copy()

        a, b = run(), run()
        assert np.array_equal(a, b)


class TestGradientFlow:
    def test_decoder_nll_gradient_small_dims(self):
        """Per-word NLL through the full step graph vs central differences."""
        cfg = m.ModelConfig(src_vocab=5, tgt_vocab=6, embed_dim=3, hidden_dim=3,
                            attention_dim=3, readout_dim=3)
        params = m.ModelParams.new(cfg, seed=15)
        src, target = [1, 3], 4

        def loss_fn():
            with ad.Tape() as tape:
                view = params.view(tape)
                ann = m.encode(view, src)
                state = m.init_decoder_state(view, ann)
                _, probs = m.decoder_step(view, BOS_ID, state, ann)
                return float(ad.scale(ad.log(ad.pick(probs, target)), -1.0).data)

        with ad.Tape() as tape:
            view = params.view(tape)
            ann = m.encode(view, src)
            state = m.init_decoder_state(view, ann)
            _, probs = m.decoder_step(view, BOS_ID, state, ann)
            loss = ad.scale(ad.log(ad.pick(probs, target)), -1.0)
            names = sorted(view.t)
            grads = ad.gradient(loss, [view.t[n] for n in names])
        report = ad.finite_difference_check(
            loss_fn, {n: params.arrays[n] for n in names},
            dict(zip(names, grads)), step=1e-5, tolerance=1e-4)
        assert report.passed, report.failures


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = make_params(seed=16)
        path = tmp_path / "model.ckpt"
        opt_arrays = {"accum/proj": np.ones_like(params.arrays["proj"])}
        m.save_checkpoint(path, params, opt_arrays, {"algo": "adagrad", "lr": 0.1})
        loaded, extra, meta = m.load_checkpoint(path)
        assert loaded.config == params.config
        for name, arr in params.arrays.items():
            assert np.array_equal(loaded.arrays[name], arr)
        assert np.array_equal(extra["accum/proj"], opt_arrays["accum/proj"])
        assert meta == {"algo": "adagrad", "lr": 0.1}

    def test_magic_line(self, tmp_path):
        params = make_params()
        path = tmp_path / "model.ckpt"
        params.save(path)
        with open(path, "rb") as fh:
            assert fh.readline() == b"imtforge-ckpt-v1\n"

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"something else\n")
        with pytest.raises(m.ModelError):
            m.load_checkpoint(path)

    def test_shape_validation_on_load(self, tmp_path):
        params = make_params()
        path = tmp_path / "model.ckpt"
        params.save(path)
        # corrupt: rewrite with a mismatched config
        data = path.read_bytes()
        lines = data.split(b"\n", 2)
        import json as js
        header = js.loads(lines[1])
        header["config"]["hidden_dim"] = 5
        path.write_bytes(lines[0] + b"\n"
                         + js.dumps(header, sort_keys=True).encode() + b"\n"
                         + lines[2])
        with pytest.raises(m.ModelError):
            m.load_checkpoint(path)

    def test_params_validate_catches_mismatch(self):
        params = make_params()
        params.arrays["proj"] = np.zeros((2, 2))
        with pytest.raises(m.ModelError):
            params.validate()
