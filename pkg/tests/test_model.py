import math

import numpy as np
import pytest

from conftest import gradcheck_doc, gradient_errors, tiny_params
from rstsplit.document import Document, RelationLabel
from rstsplit.model import (E2E, GOLD_EDU, DecoderState, EncodedDocument, ModelConfig,
                            build_label_inventory, build_vocab, decoder_step, encode,
                            forward_loss, init_decoder, init_params, label_logits,
                            load_pretrained_embeddings, pointer_projection,
                            pointing_distribution, span_rep, total_loss)
from rstsplit.tree import DiscourseTree


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _leaky(x, slope=0.01):
    return x if x > 0 else slope * x


def _cell(x, h, c, W, U, b):
    """Scalar-loop LSTM cell, gates (i, f, g, o)."""
    H = len(h)
    z = [sum(x[a] * W[a, q] for a in range(len(x))) + sum(h[a] * U[a, q] for a in range(H)) + b[q]
         for q in range(4 * H)]
    hn, cn = [], []
    for u in range(H):
        i, f = _sig(z[u]), _sig(z[H + u])
        g, o = math.tanh(z[2 * H + u]), _sig(z[3 * H + u])
        cn.append(f * c[u] + i * g)
        hn.append(o * math.tanh(cn[-1]))
    return np.array(hn), np.array(cn)


def _manual_encoding(reps, params, mode=E2E):
    reps = np.asarray(reps, dtype=params.dtype)
    keys, bias = pointer_projection(reps, params)
    return EncodedDocument(mode, reps, None, None, reps[-1], None, None, keys, bias)


@pytest.fixture
def fig1_params(fig1_doc):
    return tiny_params([fig1_doc])


class TestEncode:
    def test_boundary_count(self, fig1_doc, fig1_params):
        enc = encode(fig1_doc, fig1_params, E2E)
        assert enc.boundaries.shape == (45, 6)
        assert enc.size == 44

    def test_gold_edu_boundary_inputs(self, fig1_doc, fig1_params):
        enc = encode(fig1_doc, fig1_params, GOLD_EDU)
        assert enc.edu_reps.shape == (7, 6)
        assert enc.size == 6

    def test_without_boundary_lstm_selects_edu_boundaries(self, fig1_doc):
        params = tiny_params([fig1_doc], boundary_lstm=False)
        enc = encode(fig1_doc, params, GOLD_EDU)
        assert np.array_equal(enc.edu_reps, enc.boundaries[[0, 4, 17, 25, 33, 37, 44]])

    def test_zero_params_constant(self, fig1_doc, fig1_params):
        for a in fig1_params.arrays.values():
            a[...] = 0
        enc = encode(fig1_doc, fig1_params, E2E)
        assert np.all(enc.boundaries == enc.boundaries[0])

    def test_fencepost_matches_scalar_lstm(self):
        doc = Document("d", ["a", "b", "c"], [3], [3])
        params = tiny_params([doc], word_dim=2, hidden=2)
        enc = encode(doc, params, E2E)
        ids = [params.word_index[t] for t in ["<sod>", "a", "b", "c", "<eod>"]]
        X = params["word_emb"][ids]

        def run(prefix, seq):
            h, c, out = np.zeros(2), np.zeros(2), []
            for x in seq:
                h, c = _cell(x, h, c, params[f"{prefix}.W"], params[f"{prefix}.U"],
                             params[f"{prefix}.b"])
                out.append(h)
            return out

        f = run("enc0.fw", X)
        b = run("enc0.bw", X[::-1])[::-1]
        for k in range(4):
            assert np.allclose(enc.boundaries[k], np.concatenate([f[k], b[k + 1]]), atol=1e-12)
        assert np.allclose(enc.final, np.concatenate([f[4], b[0]]), atol=1e-12)

    def test_deterministic(self, fig1_doc, fig1_params):
        a = encode(fig1_doc, fig1_params, GOLD_EDU)
        b = encode(fig1_doc, fig1_params, GOLD_EDU)
        assert np.array_equal(a.edu_reps, b.edu_reps)

    def test_unknown_words_use_unk_row(self, fig1_doc, fig1_params):
        other = Document("x", ["never-seen"] * 44, fig1_doc.sentence_boundaries)
        assert encode(other, fig1_params, E2E).boundaries.shape == (45, 6)

    def test_disabled_char_path_is_word_only_model(self, fig1_doc):
        with_chars = tiny_params([fig1_doc], char_dim=2, char_hidden=2)
        for name in with_chars.arrays:
            if name.startswith("char"):
                with_chars.arrays[name][...] = 0
        word_only = tiny_params([fig1_doc])
        arrays = {k: v.copy() for k, v in with_chars.arrays.items() if not k.startswith("char")}
        for d in ("fw", "bw"):
            arrays[f"enc0.{d}.W"] = arrays[f"enc0.{d}.W"][4:]
        word_only.arrays = arrays
        a = encode(fig1_doc, with_chars, E2E).boundaries
        b = encode(fig1_doc, word_only, E2E).boundaries
        assert np.allclose(a, b, atol=1e-14)


class TestSpanRep:
    def test_projection(self, fig1_doc, fig1_params):
        enc = encode(fig1_doc, fig1_params, E2E)
        fig1_params.arrays["span.W1"] = np.eye(6, 3)
        fig1_params.arrays["span.W2"] = np.zeros((6, 3))
        assert np.allclose(span_rep(enc, 2, 9, fig1_params), enc.boundaries[2, :3])

    def test_cancellation(self):
        params = tiny_params([gradcheck_doc()], hidden=1, span_dim=2)
        params.arrays["span.W1"] = np.eye(2)
        params.arrays["span.W2"] = np.eye(2)
        enc = _manual_encoding([[1.0, -2.0], [0.5, 0.5], [-1.0, 2.0]], params)
        assert np.allclose(span_rep(enc, 0, 2, params), 0.0)

    def test_random_matches_hand_multiply(self):
        params = tiny_params([gradcheck_doc()], seed=5)
        rng = np.random.default_rng(0)
        reps = rng.normal(size=(4, 6))
        enc = _manual_encoding(reps, params)
        W1, W2 = params["span.W1"], params["span.W2"]
        want = [sum(reps[1, a] * W1[a, q] + reps[3, a] * W2[a, q] for a in range(6))
                for q in range(3)]
        assert np.allclose(span_rep(enc, 1, 3, params), want)

    @pytest.mark.parametrize("i,j", [(-1, 2), (2, 2), (0, 4)])
    def test_out_of_range(self, i, j):
        params = tiny_params([gradcheck_doc()])
        enc = _manual_encoding(np.ones((4, 6)), params)
        with pytest.raises(IndexError):
            span_rep(enc, i, j, params)


class TestDecoderStep:
    def test_zero_pointer_weights(self, fig1_doc, fig1_params):
        fig1_params.arrays["ptr.W_dh"][...] = 0
        fig1_params.arrays["ptr.w_h"][...] = 0
        enc = encode(fig1_doc, fig1_params, E2E)
        state = init_decoder(enc, fig1_params)
        _, scores = decoder_step(state, span_rep(enc, 0, 44, fig1_params), enc, fig1_params)
        assert scores.shape == (45,)
        assert np.all(scores == 0)

    def test_orthogonal_vectors_score_zero(self):
        params = tiny_params([gradcheck_doc()], hidden=1, mlp_dim=2)
        params.arrays["mlp_d.W"][...] = 0
        params.arrays["mlp_d.b"] = np.array([1.0, 0.0])      # d' = (1, 0)
        params.arrays["mlp_h.W"] = np.eye(2)
        params.arrays["mlp_h.b"] = np.zeros(2)
        params.arrays["ptr.W_dh"] = np.eye(2)
        params.arrays["ptr.w_h"] = np.zeros(2)
        enc = _manual_encoding([[0.0, 1.0], [0.0, 1.0]], params)  # h' = (0, 1)
        state = init_decoder(enc, params)
        _, scores = decoder_step(state, np.ones(3), enc, params)
        assert np.allclose(scores, 0.0)

    def test_matches_scalar_recomputation(self):
        params = tiny_params([gradcheck_doc()], seed=2, hidden=1, dec_hidden=2, mlp_dim=2,
                             span_dim=2)
        rng = np.random.default_rng(1)
        reps = rng.normal(size=(4, 2))
        enc = _manual_encoding(reps, params)
        state = DecoderState(rng.normal(size=(1, 2)), rng.normal(size=(1, 2)))
        x = rng.normal(size=2)
        new, scores = decoder_step(state, x, enc, params)
        h, c = _cell(x, state.h[0], state.c[0], params["dec0.W"], params["dec0.U"], params["dec0.b"])
        assert np.allclose(new.h[0], h) and np.allclose(new.c[0], c)
        Wd, bd, Wh, bh = params["mlp_d.W"], params["mlp_d.b"], params["mlp_h.W"], params["mlp_h.b"]
        dp = [_leaky(sum(h[a] * Wd[a, q] for a in range(2)) + bd[q]) for q in range(2)]
        for i in range(4):
            hp = [_leaky(sum(reps[i, a] * Wh[a, q] for a in range(2)) + bh[q]) for q in range(2)]
            s = sum(dp[p] * params["ptr.W_dh"][p, q] * hp[q] for p in range(2) for q in range(2))
            s += sum(hp[q] * params["ptr.w_h"][q] for q in range(2))
            assert scores[i] == pytest.approx(s, abs=1e-12)

    def test_batched_equals_single(self, fig1_doc, fig1_params):
        enc = encode(fig1_doc, fig1_params, E2E)
        s0 = init_decoder(enc, fig1_params)
        xs = np.stack([span_rep(enc, 0, 44, fig1_params), span_rep(enc, 4, 25, fig1_params)])
        batch = DecoderState(np.repeat(s0.h[:, None], 2, axis=1), np.repeat(s0.c[:, None], 2, axis=1))
        _, scores = decoder_step(batch, xs, enc, fig1_params)
        for b in range(2):
            _, single = decoder_step(s0, xs[b], enc, fig1_params)
            assert np.allclose(scores[b], single)


class TestPointingDistribution:
    def test_uniform(self):
        assert np.allclose(pointing_distribution(np.zeros(5)), 0.2)

    def test_argmax_in_range(self):
        probs = pointing_distribution(np.array([0, 0, 10, 0, 0.0]), (0, 4), E2E)
        assert int(np.argmax(probs)) == 2

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            scores = rng.normal(scale=rng.uniform(0.1, 50), size=rng.integers(2, 60))
            probs = pointing_distribution(scores)
            assert abs(probs.sum() - 1.0) <= 1e-6
            assert np.all(probs >= 0)

    def test_inference_keeps_full_softmax_mass(self):
        scores = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        full = pointing_distribution(scores)
        part = pointing_distribution(scores, (1, 4), GOLD_EDU)
        assert np.array_equal(np.nonzero(part)[0], [2, 3])
        assert np.allclose(part[2:4], full[2:4])

    def test_empty_range(self):
        with pytest.raises(ValueError):
            pointing_distribution(np.zeros(4), (1, 2), GOLD_EDU)


class TestInitDecoder:
    def test_zero_projection(self, fig1_doc, fig1_params):
        fig1_params.arrays["dec_init.W"][...] = 0
        fig1_params.arrays["dec_init.b"][...] = 0
        state = init_decoder(encode(fig1_doc, fig1_params, E2E), fig1_params)
        assert not state.h.any() and not state.c.any()

    def test_deterministic(self, fig1_doc, fig1_params):
        a = init_decoder(encode(fig1_doc, fig1_params, E2E), fig1_params)
        b = init_decoder(encode(fig1_doc, fig1_params, E2E), fig1_params)
        assert np.array_equal(a.h, b.h) and np.array_equal(a.c, b.c)

    def test_matches_recomputation(self, fig1_doc, fig1_params):
        enc = encode(fig1_doc, fig1_params, E2E)
        state = init_decoder(enc, fig1_params)
        W, b = fig1_params["dec_init.W"], fig1_params["dec_init.b"]
        z = [sum(enc.final[a] * W[a, q] for a in range(6)) + b[q] for q in range(6)]
        assert np.allclose(state.h[0], z[:3]) and np.allclose(state.c[0], z[3:])

    def test_zero_init_option(self, fig1_doc):
        params = tiny_params([fig1_doc], decoder_init="zero")
        assert "dec_init.W" not in params.arrays
        state = init_decoder(encode(fig1_doc, params, E2E), params)
        assert not state.h.any()


class TestLabelLogits:
    def test_bias_only(self, fig1_doc, fig1_params):
        for name in ("label.W_lr", "label.W_l", "label.W_r"):
            fig1_params.arrays[name][...] = 0
        b = np.zeros(fig1_params.num_labels)
        b[0] = 1
        fig1_params.arrays["label.b"] = b
        enc = encode(fig1_doc, fig1_params, E2E)
        for i, k, j in [(0, 4, 44), (25, 33, 37), (3, 5, 40)]:
            assert int(np.argmax(label_logits(enc, i, k, j, fig1_params))) == 0

    def test_matches_scalar_recomputation(self):
        params = tiny_params([gradcheck_doc()], seed=4, hidden=1, label_dim=2)
        assert params.num_labels == 2
        rng = np.random.default_rng(3)
        reps = rng.normal(size=(5, 2))
        enc = _manual_encoding(reps, params)
        i, k, j = 0, 2, 4
        P = params

        def mlp(W, b, x):
            return [_leaky(sum(x[a] * W[a, q] for a in range(len(x))) + b[q]) for q in range(2)]

        hl = mlp(P["mlp_l.W"], P["mlp_l.b"], np.concatenate([reps[i], reps[k]]))
        hr = mlp(P["mlp_r.W"], P["mlp_r.b"], np.concatenate([reps[k], reps[j]]))
        want = [sum(hl[a] * P["label.W_lr"][a, l, c] * hr[c] for a in range(2) for c in range(2))
                + sum(hl[a] * P["label.W_l"][a, l] + hr[a] * P["label.W_r"][a, l] for a in range(2))
                + P["label.b"][l] for l in range(2)]
        assert np.allclose(label_logits(enc, i, k, j, params), want, atol=1e-12)

    def test_permutation_equivariance(self, fig1_doc, fig1_params):
        fig1_params.arrays["label.b"] = np.random.default_rng(0).normal(size=fig1_params.num_labels)
        enc = encode(fig1_doc, fig1_params, E2E)
        base = label_logits(enc, 4, 17, 25, fig1_params)
        perm = np.random.default_rng(1).permutation(fig1_params.num_labels)
        P = fig1_params.arrays
        P["label.W_lr"] = P["label.W_lr"][:, perm]
        P["label.W_l"] = P["label.W_l"][:, perm]
        P["label.W_r"] = P["label.W_r"][:, perm]
        P["label.b"] = P["label.b"][perm]
        assert np.allclose(label_logits(enc, 4, 17, 25, fig1_params), base[perm])

    def test_out_of_range(self, fig1_doc, fig1_params):
        enc = encode(fig1_doc, fig1_params, E2E)
        with pytest.raises(IndexError):
            label_logits(enc, 4, 4, 10, fig1_params)


class TestLoss:
    def test_uniform_pointing_single_decision(self):
        doc = Document("u", ["a", "b", "c", "d"], [4], None, DiscourseTree.single(4))
        params = tiny_params([doc])
        params.arrays["ptr.W_dh"][...] = 0
        params.arrays["ptr.w_h"][...] = 0
        res = forward_loss(doc, params, E2E)
        assert res.structure == pytest.approx(math.log(5), abs=1e-12)
        assert res.label == 0.0

    def test_confident_correct_model(self):
        doc = Document("c", ["a"], [1], None, DiscourseTree.single(1))
        params = tiny_params([doc])
        params.arrays["ptr.W_dh"][...] = 0
        reps = encode(doc, params, E2E).boundaries
        h = np.maximum(reps @ params["mlp_h.W"] + params["mlp_h.b"], 0)
        h = h + 0.01 * np.minimum(reps @ params["mlp_h.W"] + params["mlp_h.b"], 0)
        diff = h[1] - h[0]
        params.arrays["ptr.w_h"] = 60.0 * diff / (diff @ diff)
        assert forward_loss(doc, params, E2E).structure < 1e-20

    def test_labels_only_for_internal_decisions(self, fig1_doc, fig1_params):
        e2e = forward_loss(fig1_doc, fig1_params, E2E, with_grad=False)
        edu = forward_loss(fig1_doc, fig1_params, GOLD_EDU, with_grad=False)
        assert e2e.total == pytest.approx(e2e.structure + e2e.label)
        assert e2e.label > 0 and edu.label > 0

    def test_total_loss_returns_every_group(self, fig1_doc, fig1_params):
        loss, grads = total_loss(fig1_doc, fig1_params, GOLD_EDU)
        assert set(grads) == set(fig1_params.arrays)
        assert math.isfinite(loss)

    def test_missing_tree(self):
        doc = Document("n", ["a"], [1])
        with pytest.raises(ValueError):
            forward_loss(doc, tiny_params([doc]), E2E)

    @pytest.mark.parametrize("mode", [E2E, GOLD_EDU])
    def test_gradients_match_finite_differences(self, mode):
        doc = gradcheck_doc()
        params = tiny_params([doc], seed=3, char_dim=2, char_hidden=2, dec_layers=2)
        errors = gradient_errors(doc, params, mode)
        worst = max(errors, key=errors.get)
        assert errors[worst] <= 1e-4, (worst, errors[worst])


class TestEmbeddings:
    def test_one_word_replaced_and_frozen(self, tmp_path):
        doc = gradcheck_doc()
        params = init_params(ModelConfig.tiny(word_dim=100), build_vocab([doc]),
                             build_label_inventory([doc]))
        vec = np.arange(100) / 100.0
        path = tmp_path / "emb.txt"
        path.write_text("cat " + " ".join(f"{v:.2f}" for v in vec) + "\n")
        out = load_pretrained_embeddings(path, params)
        row = params.word_index["cat"]
        assert np.allclose(out["word_emb"][row], vec)
        assert out.frozen[row] and out.frozen.sum() == 1
        others = np.arange(len(params.vocab)) != row
        assert np.array_equal(out["word_emb"][others], params["word_emb"][others])

    def test_empty_file(self, tmp_path):
        params = tiny_params([gradcheck_doc()])
        path = tmp_path / "empty.txt"
        path.write_text("")
        out = load_pretrained_embeddings(path, params)
        assert np.array_equal(out["word_emb"], params["word_emb"])
        assert not out.frozen.any()

    def test_dimension_mismatch(self, tmp_path):
        params = tiny_params([gradcheck_doc()])
        path = tmp_path / "bad.txt"
        path.write_text("cat 1 2 3\n")
        with pytest.raises(ValueError, match="expected 4 values"):
            load_pretrained_embeddings(path, params)

    def test_frozen_rows_get_no_gradient(self, tmp_path):
        doc = gradcheck_doc()
        params = tiny_params([doc])
        path = tmp_path / "e.txt"
        path.write_text("sat 1 1 1 1\n")
        params = load_pretrained_embeddings(path, params)
        grads = forward_loss(doc, params, E2E).grads
        assert not grads["word_emb"][params.word_index["sat"]].any()
        assert grads["word_emb"][params.word_index["cat"]].any()
