import math

import numpy as np
import pytest

from trialparse import crf, network, numcore
from trialparse.corpus import tokenize
from trialparse.errors import ConfigError
from trialparse.network import (
    EmbeddedSequence,
    LSTMBlock,
    Vocabulary,
    attention_layer,
    attention_scores,
    bilstm_forward,
    embed,
    emissions,
    forward_pass,
    init_params,
    lstm_cell_step,
    network_backward,
)

DIMS = dict(d_e=7, d_h=6, d_a=5, d_z=12, d_m=9)


def small_params(variant="multiply", seed=0, score_inputs="embeddings", vocab_size=14, n_tags=5):
    rng = np.random.default_rng(seed)
    return init_params(
        vocab_size, n_tags, variant=variant, score_inputs=score_inputs, rng=rng, **DIMS
    )


def scalar_lstm_step(block, x, h_prev, c_prev):
    """Independent scalar-loop oracle for one LSTM step."""
    d_h = block.d_h

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    pre = [
        sum(block.w_in[r, i] * x[i] for i in range(len(x)))
        + sum(block.w_rec[r, j] * h_prev[j] for j in range(d_h))
        + block.bias[r]
        for r in range(4 * d_h)
    ]
    h = np.zeros(d_h)
    c = np.zeros(d_h)
    for j in range(d_h):
        i_g = sig(pre[j])
        f_g = sig(pre[d_h + j])
        g_g = math.tanh(pre[2 * d_h + j])
        o_g = sig(pre[3 * d_h + j])
        c[j] = f_g * c_prev[j] + i_g * g_g
        h[j] = o_g * math.tanh(c[j])
    return h, c


class TestVocabulary:
    def test_reserved_indices(self):
        vocab = Vocabulary.from_surfaces(["Adults", "with", "adults"])
        assert vocab.index_to_token[:2] == ["<pad>", "<unk>"]
        assert vocab.index("ADULTS") == vocab.index("adults") == 2
        assert vocab.index("never-seen") == network.UNK_INDEX

    def test_min_count(self):
        vocab = Vocabulary.from_surfaces(["a", "a", "b"], min_count=2)
        assert "a" in vocab.token_to_index
        assert "b" not in vocab.token_to_index

    def test_dense_indices(self):
        vocab = Vocabulary.from_surfaces(["x", "y", "z"])
        assert sorted(vocab.token_to_index.values()) == list(range(len(vocab)))


class TestEmbed:
    def test_oov_rows_identical(self):
        vocab = Vocabulary.from_surfaces(["known"])
        E = np.random.default_rng(0).normal(size=(len(vocab), 4))
        seq = embed(tokenize("alpha beta gamma"), vocab, E)
        assert seq.vectors.shape == (3, 4)
        for row in seq.vectors:
            np.testing.assert_array_equal(row, E[network.UNK_INDEX])

    def test_known_token_exact_row(self):
        vocab = Vocabulary.from_surfaces(["pneumonia"])
        E = np.random.default_rng(1).normal(size=(len(vocab), 4))
        seq = embed(tokenize("Pneumonia"), vocab, E)
        np.testing.assert_array_equal(seq.vectors[0], E[vocab.index("pneumonia")])

    def test_empty_rejected(self):
        vocab = Vocabulary.from_surfaces(["a"])
        with pytest.raises(ValueError):
            embed([], vocab, np.zeros((3, 2)))

    def test_synthetic_corpus_vocabulary_coverage(self):
        from trialparse import synthdata

        corp = synthdata.generate_corpus(seed=0, n_train=200, n_test=50)
        surfaces = [t.surface for seq in corp.train for t in seq.criterion.tokens]
        vocab = Vocabulary.from_surfaces(surfaces)
        covered = sum(1 for s in surfaces if vocab.index(s) != network.UNK_INDEX)
        assert covered / len(surfaces) >= 0.95
        # held-out split should also be nearly covered by the train vocabulary
        test_surfaces = [t.surface for seq in corp.test for t in seq.criterion.tokens]
        test_covered = sum(1 for s in test_surfaces if vocab.index(s) != network.UNK_INDEX)
        assert test_covered / len(test_surfaces) >= 0.95


class TestLstmCell:
    def test_all_zero(self):
        block = LSTMBlock(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        h, c = lstm_cell_step(np.zeros(3), np.zeros(2), np.zeros(2), block)
        np.testing.assert_array_equal(h, 0.0)
        np.testing.assert_array_equal(c, 0.0)

    def test_gate_saturation_keeps_cell(self):
        d_h = 3
        bias = np.zeros(4 * d_h)
        bias[d_h : 2 * d_h] = 30.0  # forget gate pinned open
        bias[:d_h] = -30.0  # input gate pinned shut
        block = LSTMBlock(np.zeros((4 * d_h, 2)), np.zeros((4 * d_h, d_h)), bias)
        c_prev = np.array([0.3, -0.8, 0.5])
        _, c = lstm_cell_step(np.zeros(2), np.zeros(d_h), c_prev, block)
        np.testing.assert_allclose(c, c_prev, atol=1e-10)

    def test_against_scalar_loop_oracle(self):
        rng = np.random.default_rng(4)
        block = LSTMBlock(
            rng.normal(size=(8, 3)), rng.normal(size=(8, 2)), rng.normal(size=8)
        )
        x, h_prev, c_prev = rng.normal(size=3), rng.normal(size=2), rng.normal(size=2)
        h, c = lstm_cell_step(x, h_prev, c_prev, block)
        h_ref, c_ref = scalar_lstm_step(block, x, h_prev, c_prev)
        assert np.max(np.abs(h - h_ref)) < 1e-12
        assert np.max(np.abs(c - c_ref)) < 1e-12


class TestBilstm:
    def test_single_token_equals_one_step(self):
        params = small_params()
        X = EmbeddedSequence(vectors=np.random.default_rng(5).normal(size=(1, DIMS["d_e"])), mask=np.ones(1, bool))
        enc = bilstm_forward(X, params)
        h_f, _ = lstm_cell_step(X.vectors[0], np.zeros(DIMS["d_h"]), np.zeros(DIMS["d_h"]), params.fwd)
        h_b, _ = lstm_cell_step(X.vectors[0], np.zeros(DIMS["d_h"]), np.zeros(DIMS["d_h"]), params.bwd)
        np.testing.assert_allclose(enc.hidden[0], np.concatenate([h_f, h_b]), atol=1e-12)

    def test_reversal_property(self):
        params = small_params(seed=6)
        rng = np.random.default_rng(7)
        X = rng.normal(size=(5, DIMS["d_e"]))
        mask = np.ones(5, bool)
        enc = bilstm_forward(EmbeddedSequence(X, mask), params)
        backward_half = enc.hidden[:, DIMS["d_h"] :]
        # scan the backward parameters forward over the reversed input
        swapped = small_params(seed=6)
        swapped.fwd, swapped.bwd = params.bwd, params.fwd
        enc_rev = bilstm_forward(EmbeddedSequence(X[::-1].copy(), mask), swapped)
        forward_on_reversed = enc_rev.hidden[:, : DIMS["d_h"]]
        np.testing.assert_allclose(backward_half, forward_on_reversed[::-1], atol=1e-12)

    def test_zero_parameters_give_zero_encoding(self):
        params = small_params()
        for block in (params.fwd, params.bwd):
            block.w_in[:] = 0
            block.w_rec[:] = 0
            block.bias[:] = 0
        X = EmbeddedSequence(np.random.default_rng(8).normal(size=(4, DIMS["d_e"])), np.ones(4, bool))
        np.testing.assert_array_equal(bilstm_forward(X, params).hidden, 0.0)


class TestAttentionScores:
    def test_dot_orthonormal_identity(self):
        params = small_params("dot")
        R = np.eye(4, DIMS["d_e"])  # orthonormal rows
        S = attention_scores(R, "dot", params)
        np.testing.assert_allclose(S, np.eye(4), atol=1e-12)

    def test_multiply_with_identity_matches_dot(self):
        params = small_params("multiply")
        params.attn_bilinear = np.eye(DIMS["d_e"])
        R = np.random.default_rng(9).normal(size=(5, DIMS["d_e"]))
        np.testing.assert_array_equal(
            attention_scores(R, "multiply", params), attention_scores(R, "dot", params)
        )

    def test_add_zero_parameters_give_uniform_rows(self):
        params = small_params("add")
        for name in ("attn_w1", "attn_b1", "attn_w2", "attn_b2", "attn_v"):
            getattr(params, name)[:] = 0
        R = np.random.default_rng(10).normal(size=(4, DIMS["d_e"]))
        S = attention_scores(R, "add", params)
        np.testing.assert_array_equal(S, 0.0)
        out = attention_layer(np.random.default_rng(11).normal(size=(4, 2 * DIMS["d_h"])), S, np.ones(4, bool), params)
        np.testing.assert_allclose(out.weights, 0.25, atol=1e-12)

    def test_missing_variant_parameters(self):
        params = small_params("dot")
        with pytest.raises(ConfigError):
            attention_scores(np.zeros((2, DIMS["d_e"])), "multiply", params)

    def test_masked_columns_get_neg_inf(self):
        params = small_params("dot")
        R = np.ones((3, DIMS["d_e"]))
        S = attention_scores(R, "dot", params, mask=np.array([True, True, False]))
        assert np.all(S[:, 2] == numcore.NEG_INF)


class TestAttentionLayer:
    def test_uniform_scores_average_hidden(self):
        params = small_params()
        H = np.random.default_rng(12).normal(size=(3, 2 * DIMS["d_h"]))
        out = attention_layer(H, np.zeros((3, 3)), np.ones(3, bool), params)
        np.testing.assert_allclose(out.weights, 1.0 / 3.0, atol=1e-12)
        np.testing.assert_allclose(out.contexts, np.tile(H.mean(axis=0), (3, 1)), atol=1e-12)

    def test_one_hot_limit_selects_row(self):
        params = small_params()
        H = np.random.default_rng(13).normal(size=(3, 2 * DIMS["d_h"]))
        S = np.zeros((3, 3))
        S[0, 2] = 60.0  # softmax saturates onto column 2
        out = attention_layer(H, S, np.ones(3, bool), params)
        np.testing.assert_allclose(out.contexts[0], H[2], atol=1e-10)

    def test_contexts_match_double_loop_oracle(self):
        params = small_params()
        rng = np.random.default_rng(14)
        n = 5
        H = rng.normal(size=(n, 2 * DIMS["d_h"]))
        S = rng.normal(size=(n, n))
        out = attention_layer(H, S, np.ones(n, bool), params)
        for i in range(n):
            exp_row = np.exp(S[i] - S[i].max())
            weights = exp_row / exp_row.sum()
            c_ref = np.zeros(2 * DIMS["d_h"])
            for j in range(n):
                c_ref += weights[j] * H[j]
            assert np.max(np.abs(out.contexts[i] - c_ref)) < 1e-10

    def test_rows_are_distributions_with_zero_pad_mass(self):
        params = small_params()
        rng = np.random.default_rng(15)
        n = 6
        mask = np.array([True] * 4 + [False] * 2)
        H = rng.normal(size=(n, 2 * DIMS["d_h"])) * mask[:, None]
        S = attention_scores(rng.normal(size=(n, DIMS["d_e"])), "dot", params, mask=mask)
        out = attention_layer(H, S, mask, params)
        np.testing.assert_allclose(out.weights[mask].sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out.weights[:, ~mask] == 0.0)
        assert np.all(np.abs(out.outputs) < 1.0)

    def test_fully_masked_rejected(self):
        params = small_params()
        with pytest.raises(ValueError, match="masked"):
            attention_layer(np.zeros((2, 2 * DIMS["d_h"])), np.zeros((2, 2)), np.zeros(2, bool), params)


class TestEmissions:
    def test_zero_parameters_zero_scores(self):
        params = small_params()
        params.dec_hidden_w[:] = 0
        params.dec_hidden_b[:] = 0
        params.dec_out_w[:] = 0
        params.dec_out_b[:] = 0
        P = emissions(np.random.default_rng(16).normal(size=(4, DIMS["d_z"])), params)
        np.testing.assert_array_equal(P, 0.0)

    def test_single_tag_crf_assigns_probability_one(self):
        params = small_params(n_tags=1)
        Z = np.random.default_rng(17).normal(size=(3, DIMS["d_z"]))
        P = emissions(Z, params)
        assert P.shape == (3, 1)
        loss, _, _ = crf.nll_loss(P, params.transitions, [0, 0, 0])
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_against_scalar_loop_oracle(self):
        params = small_params()
        rng = np.random.default_rng(18)
        Z = rng.normal(size=(3, DIMS["d_z"]))
        P = emissions(Z, params)
        for i in range(3):
            hidden = [
                math.tanh(
                    sum(params.dec_hidden_w[r, j] * Z[i, j] for j in range(DIMS["d_z"]))
                    + params.dec_hidden_b[r]
                )
                for r in range(DIMS["d_m"])
            ]
            for k in range(params.n_tags):
                ref = sum(params.dec_out_w[k, r] * hidden[r] for r in range(DIMS["d_m"]))
                ref += params.dec_out_b[k]
                assert abs(P[i, k] - ref) < 1e-12


class TestParameterCounts:
    def count_attention(self, variant):
        params = small_params(variant)
        return sum(
            arr.size
            for name, arr in params.arrays().items()
            if name.startswith("attn_") and name not in ("attn_out_w", "attn_out_b")
        )

    def test_dot_has_no_attention_parameters(self):
        assert self.count_attention("dot") == 0

    def test_multiply_adds_bilinear(self):
        assert self.count_attention("multiply") == DIMS["d_e"] ** 2

    def test_add_adds_mlp_block(self):
        d_a, d_e = DIMS["d_a"], DIMS["d_e"]
        assert self.count_attention("add") == d_a * 2 * d_e + d_a + d_a**2 + d_a + d_a


class TestForwardPassProperties:
    def test_padding_matches_unpadded(self):
        for variant in network.ATTENTION_VARIANTS:
            params = small_params(variant)
            rng = np.random.default_rng(19)
            ids = rng.integers(1, 14, size=4)
            P_plain, _ = forward_pass(params, ids, None, variant)
            padded_ids = np.concatenate([ids, [network.PAD_INDEX] * 3])
            mask = np.array([True] * 4 + [False] * 3)
            P_padded, _ = forward_pass(params, padded_ids, mask, variant)
            np.testing.assert_allclose(P_padded[:4], P_plain, atol=1e-12, err_msg=variant)

    def test_vocabulary_permutation_invariance(self):
        variant = "multiply"
        params = small_params(variant)
        rng = np.random.default_rng(20)
        ids = rng.integers(2, 14, size=5)
        P_base, _ = forward_pass(params, ids, None, variant)
        # permute non-reserved vocabulary rows together with their ids
        perm = np.arange(params.embeddings.shape[0])
        perm[2:] = rng.permutation(perm[2:])
        permuted = params.copy()
        permuted.embeddings = params.embeddings[np.argsort(perm)]
        P_perm, _ = forward_pass(permuted, np.array([perm[i] for i in ids]), None, variant)
        np.testing.assert_allclose(P_perm, P_base, atol=1e-12)

    def test_inference_deterministic_and_dropout_training_differs(self):
        params = small_params()
        ids = np.arange(1, 6)
        P1, _ = forward_pass(params, ids, None, "multiply")
        P2, _ = forward_pass(params, ids, None, "multiply")
        np.testing.assert_array_equal(P1, P2)
        rng = np.random.default_rng(21)
        P3, _ = forward_pass(params, ids, None, "multiply", dropout=0.5, rng=rng, train=True)
        assert np.max(np.abs(P3 - P1)) > 1e-9

    def test_none_variant_requires_matching_width(self):
        bad = dict(DIMS, d_z=DIMS["d_h"])  # only d_z == 2*d_h is legal for "none"
        with pytest.raises(ConfigError):
            init_params(10, 3, variant="none", rng=np.random.default_rng(0), **bad)

    def test_none_variant_passes_hidden_straight_through(self):
        params = small_params("none")
        ids = np.arange(1, 5)
        X = EmbeddedSequence(params.embeddings[ids], np.ones(4, bool))
        H = bilstm_forward(X, params).hidden
        P_direct = emissions(H, params)
        P_full, _ = forward_pass(params, ids, None, "none")
        np.testing.assert_allclose(P_full, P_direct, atol=1e-12)

    def test_long_input_truncation_is_callers_job(self):
        # forward_pass itself runs any length; max_len policy lives in the
        # trainer and CLI, so a 300-token input is legal here.
        params = small_params("dot")
        ids = np.ones(300, dtype=np.intp)
        P, _ = forward_pass(params, ids, None, "dot")
        assert P.shape == (300, params.n_tags)


def projection_loss(matrix, weights):
    return float(np.sum(matrix * weights))


class TestLayerGradients:
    """Isolated per-layer backward passes vs central finite differences."""

    def test_lstm_direction_gradients(self):
        params = small_params("none")
        rng = np.random.default_rng(22)
        X = rng.normal(size=(5, DIMS["d_e"]))
        mask = np.ones(5, bool)
        weights = rng.normal(size=(5, DIMS["d_h"]))

        H, steps = network._lstm_scan(params.fwd, X, mask, reverse=False)
        dX, dwi, dwr, db = network._lstm_scan_backward(params.fwd, steps, weights, DIMS["d_e"])

        def loss_wrt(name):
            def f(arr):
                block = LSTMBlock(
                    arr if name == "w_in" else params.fwd.w_in,
                    arr if name == "w_rec" else params.fwd.w_rec,
                    arr if name == "bias" else params.fwd.bias,
                )
                H2, _ = network._lstm_scan(block, X, mask, reverse=False)
                return projection_loss(H2, weights)

            return f

        assert numcore.grad_check(loss_wrt("w_in"), params.fwd.w_in, dwi) < 1e-6
        assert numcore.grad_check(loss_wrt("w_rec"), params.fwd.w_rec, dwr) < 1e-6
        assert numcore.grad_check(loss_wrt("bias"), params.fwd.bias, db) < 1e-6

        def loss_x(x):
            H2, _ = network._lstm_scan(params.fwd, x.reshape(X.shape), mask, reverse=False)
            return projection_loss(H2, weights)

        assert numcore.grad_check(loss_x, X, dX) < 1e-6

    @pytest.mark.parametrize("variant", ["dot", "multiply", "add"])
    def test_attention_block_gradients(self, variant):
        params = small_params(variant, seed=23)
        rng = np.random.default_rng(24)
        n = 4
        ids = rng.integers(1, 14, size=n)
        gold = rng.integers(0, params.n_tags, size=n)

        P, cache = forward_pass(params, ids, None, variant)
        _, d_p, _ = crf.nll_loss(P, params.transitions, gold)
        grads = network_backward(cache, d_p)

        attn_names = [n_ for n_ in grads if n_.startswith("attn_")]
        assert attn_names, variant

        for name in attn_names:
            arr = params.arrays()[name]

            def f(values, name=name):
                probe = params.copy()
                probe.set_array(name, values)
                P2, _ = forward_pass(probe, ids, None, variant)
                loss2, _, _ = crf.nll_loss(P2, probe.transitions, gold)
                return loss2

            assert numcore.grad_check(f, arr, grads[name]) < 1e-6, (variant, name)

    def test_decoder_gradients(self):
        params = small_params("dot", seed=25)
        rng = np.random.default_rng(26)
        ids = rng.integers(1, 14, size=5)
        gold = rng.integers(0, params.n_tags, size=5)
        P, cache = forward_pass(params, ids, None, "dot")
        _, d_p, _ = crf.nll_loss(P, params.transitions, gold)
        grads = network_backward(cache, d_p)
        for name in ("dec_hidden_w", "dec_hidden_b", "dec_out_w", "dec_out_b"):
            arr = params.arrays()[name]

            def f(values, name=name):
                probe = params.copy()
                probe.set_array(name, values)
                P2, _ = forward_pass(probe, ids, None, "dot")
                loss2, _, _ = crf.nll_loss(P2, probe.transitions, gold)
                return loss2

            assert numcore.grad_check(f, arr, grads[name]) < 1e-6, name

    def test_embedding_gradients_with_repeated_tokens(self):
        params = small_params("multiply", seed=27)
        ids = np.array([3, 5, 3, 7, 3])  # repeats exercise the scatter-add
        gold = np.array([0, 1, 2, 3, 4])
        P, cache = forward_pass(params, ids, None, "multiply")
        _, d_p, _ = crf.nll_loss(P, params.transitions, gold)
        grads = network_backward(cache, d_p)
        assert np.all(grads["embeddings"][network.PAD_INDEX] == 0.0)

        def f(values):
            probe = params.copy()
            probe.embeddings = values
            P2, _ = forward_pass(probe, ids, None, "multiply")
            loss2, _, _ = crf.nll_loss(P2, probe.transitions, gold)
            return loss2

        touched = np.flatnonzero(np.abs(grads["embeddings"]).ravel() > 0)
        assert numcore.grad_check(f, params.embeddings, grads["embeddings"], coords=touched[:60]) < 1e-6

    def test_zero_upstream_gradient_zeroes_everything(self):
        params = small_params("add", seed=28)
        ids = np.arange(1, 6)
        P, cache = forward_pass(params, ids, None, "add")
        grads = network_backward(cache, np.zeros_like(P))
        for name, g in grads.items():
            np.testing.assert_array_equal(g, 0.0, err_msg=name)


class TestWordVectors:
    def test_load_and_apply(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("2 3\nadults 1.0 2.0 3.0\nwith -1.0 0.5 0.25\n", encoding="utf-8")
        tokens, rows = network.load_word_vectors(path)
        assert tokens == ["adults", "with"]
        assert rows.shape == (2, 3)

        vocab = Vocabulary.from_surfaces(["adults", "pneumonia"])
        params = init_params(len(vocab), 3, d_e=3, d_h=2, d_a=2, d_z=4, d_m=3, variant="dot", rng=np.random.default_rng(0))
        hit = network.apply_pretrained_vectors(params, vocab, path)
        assert hit == 1
        np.testing.assert_array_equal(params.embeddings[vocab.index("adults")], [1.0, 2.0, 3.0])

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("3 2\na 1.0 2.0\n", encoding="utf-8")
        with pytest.raises(Exception, match="promised"):
            network.load_word_vectors(path)

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("1 2\na 1.0 2.0\n", encoding="utf-8")
        vocab = Vocabulary.from_surfaces(["a"])
        params = init_params(len(vocab), 3, d_e=3, d_h=2, d_a=2, d_z=4, d_m=3, variant="dot", rng=np.random.default_rng(0))
        with pytest.raises(ConfigError):
            network.apply_pretrained_vectors(params, vocab, path)
