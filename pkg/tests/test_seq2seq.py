import numpy as np
import numpy.testing as npt
import pytest

from busarrival import seq2seq
from busarrival.dataprep import NormStats
from busarrival.gru import gru_forward
from busarrival.numkit import (finite_diff_grad, flatten_params, make_rng,
                               write_flat_params)
from busarrival.seq2seq import (Context, CoverageError, ModelBank, TrainConfig,
                                bank_layout, bi_hidden_for_parity, decode_bi,
                                decode_uni, decoder_param_count, encode,
                                load_bank, load_model_json, loss, mean_loss,
                                model_backward, model_loss, new_model, predict,
                                predict_example, save_bank, save_model_json,
                                train_bank, train_model)
from conftest import make_example


def zero_model(kind, m_lo, m_hi, n_sections, norm, hidden_enc=4, hidden_dec=3):
    model = new_model(kind, m_lo, m_hi, n_sections, make_rng(0),
                      hidden_enc=hidden_enc, hidden_dec=hidden_dec, norm=norm)
    for v in model.params().values():
        v[...] = 0.0
    return model


def zero_bank(kind, n_sections, norm):
    models = [zero_model(kind, lo, hi, n_sections, norm)
              for lo, hi in bank_layout(n_sections)]
    return ModelBank(kind=kind, n_sections=n_sections, models=models)


class TestBankLayout:
    def test_route_34_has_six_banks_with_wide_tail(self):
        assert bank_layout(34) == [(3, 7), (8, 12), (13, 17), (18, 22),
                                   (23, 27), (28, 33)]

    def test_small_routes(self):
        assert bank_layout(8) == [(3, 7)]
        assert bank_layout(6) == [(3, 5)]
        assert bank_layout(4) == [(3, 3)]

    def test_contiguous_cover(self):
        for n_s in range(4, 60):
            banks = bank_layout(n_s)
            assert banks[0][0] == 3 and banks[-1][1] == n_s - 1
            for (a, b), (c, d) in zip(banks, banks[1:]):
                assert c == b + 1


class TestEncode:
    def test_zero_weights_collapse(self, toy_norm):
        model = zero_model("edu", 3, 7, 10, toy_norm)
        rng = make_rng(1)
        for m in (3, 5, 7):
            ctx = encode(model, rng.uniform(60, 200, (m, 2)), m, 30000.0)
            npt.assert_array_equal(ctx.e_a[:4], np.zeros(4))
            onehot = ctx.e_a[4:9]
            assert onehot[m - 3] == 1.0 and onehot.sum() == 1.0
            assert ctx.e_a[9] == toy_norm.norm_tod(30000.0)

    def test_onehot_at_bank_start(self, toy_norm):
        model = zero_model("edu", 3, 7, 10, toy_norm)
        ctx = encode(model, np.full((3, 2), 100.0), 3, 30000.0)
        npt.assert_array_equal(ctx.e_a[4:9], [1.0, 0.0, 0.0, 0.0, 0.0])

    def test_matches_manual_unroll(self, toy_norm):
        rng = make_rng(2)
        model = new_model("edu", 3, 7, 10, rng, hidden_enc=4, hidden_dec=3,
                          norm=toy_norm)
        m = 5
        enc_seq = rng.uniform(60, 200, (m, 2))
        t_c = 31000.0
        ctx = encode(model, enc_seq, m, t_c)
        h = np.zeros(4)
        for j in range(m):  # rows already ordered section m .. 1
            h, _ = gru_forward(model.enc, h, toy_norm.norm_travel(enc_seq[j]))
        onehot = np.zeros(5)
        onehot[m - 3] = 1.0
        expect = np.concatenate([h, onehot, [toy_norm.norm_tod(t_c)]])
        npt.assert_allclose(ctx.e_a, expect, atol=1e-15)

    def test_m_outside_bank_is_usage_error(self, toy_norm):
        model = zero_model("edu", 3, 7, 10, toy_norm)
        with pytest.raises(CoverageError):
            encode(model, np.full((8, 2), 100.0), 8, 30000.0)

    def test_length_mismatch_is_structural_error(self, toy_norm):
        model = zero_model("edu", 3, 7, 10, toy_norm)
        with pytest.raises(ValueError):
            encode(model, np.full((4, 2), 100.0), 5, 30000.0)


class TestDecodeUni:
    def test_zero_weights_predict_training_mean(self, toy_norm):
        model = zero_model("edu", 3, 7, 10, toy_norm)
        rng = make_rng(3)
        ex = make_example(rng, 4, 10)
        preds = predict_example(model, ex)
        npt.assert_allclose(preds, toy_norm.travel_mean, atol=1e-12)

    def test_prefix_property(self, toy_norm):
        rng = make_rng(4)
        model = new_model("edu", 3, 7, 10, rng, hidden_enc=4, hidden_dec=3,
                          norm=toy_norm)
        ex = make_example(rng, 4, 10)
        ctx = encode(model, ex.enc, ex.m, ex.t_c)
        full = decode_uni(model, ctx, ex.dec)
        for k in range(1, ex.k + 1):
            head = decode_uni(model, ctx, ex.dec[:k])
            npt.assert_array_equal(head, full[:k])

    def test_matches_manual_unroll(self, toy_norm):
        rng = make_rng(5)
        model = new_model("edu", 3, 7, 8, rng, hidden_enc=4, hidden_dec=3,
                          norm=toy_norm)
        ex = make_example(rng, 5, 8)  # K = 3
        ctx = encode(model, ex.enc, ex.m, ex.t_c)
        got = decode_uni(model, ctx, ex.dec)
        dec_n = np.column_stack([
            toy_norm.norm_travel(ex.dec[:, 0]),
            toy_norm.norm_travel(ex.dec[:, 1]),
            toy_norm.norm_tod(ex.dec[:, 2]),
            toy_norm.norm_tod(ex.dec[:, 3])])
        h = np.tanh(model.w_embed @ ctx.e_a)
        expect = []
        for i in range(3):
            u = np.concatenate([dec_n[i], ctx.e_a])
            h, _ = gru_forward(model.dec_fwd, h, u)
            expect.append(toy_norm.denorm_travel(model.w_out @ h))
        npt.assert_allclose(got, expect, atol=1e-12)

    def test_empty_decode_is_usage_error(self, toy_norm):
        model = zero_model("edu", 3, 7, 10, toy_norm)
        ctx = Context(e_a=np.zeros(model.ctx_len))
        with pytest.raises(ValueError):
            decode_uni(model, ctx, np.zeros((0, 4)))

    def test_kind_mismatch(self, toy_norm):
        edb = zero_model("edb", 3, 7, 10, toy_norm)
        ctx = Context(e_a=np.zeros(edb.ctx_len))
        with pytest.raises(ValueError):
            decode_uni(edb, ctx, np.full((2, 4), 100.0))


class TestDecodeBi:
    def test_zero_weights_predict_training_mean(self, toy_norm):
        model = zero_model("edb", 3, 7, 10, toy_norm)
        ex = make_example(make_rng(6), 5, 10)
        npt.assert_allclose(predict_example(model, ex), toy_norm.travel_mean,
                            atol=1e-12)

    def test_k1_concatenates_both_chains(self, toy_norm):
        rng = make_rng(7)
        model = new_model("edb", 3, 7, 8, rng, hidden_enc=4, hidden_dec=3,
                          norm=toy_norm)
        ex = make_example(rng, 7, 8)  # K = 1
        ctx = encode(model, ex.enc, ex.m, ex.t_c)
        got = decode_bi(model, ctx, ex.dec)
        dec_n = np.concatenate([
            toy_norm.norm_travel(ex.dec[0, :2]),
            toy_norm.norm_tod(ex.dec[0, 2:])])
        u1 = np.concatenate([dec_n, ctx.e_a])
        h0 = np.tanh(model.w_embed @ ctx.e_a)
        hf, _ = gru_forward(model.dec_fwd, h0, u1)
        hb, _ = gru_forward(model.dec_bwd, h0, u1)
        expect = toy_norm.denorm_travel(model.w_out @ np.concatenate([hf, hb]))
        npt.assert_allclose(got, [expect], atol=1e-12)

    def test_anticausal_sensitivity(self, toy_norm):
        """Perturbing the last decoder input moves the first prediction for
        the bidirectional decoder and provably not for the unidirectional."""
        rng = make_rng(8)
        ex = make_example(rng, 4, 10)  # K = 6
        h = 1e-4
        for kind, expect_nonzero in (("edu", False), ("edb", True)):
            model = new_model(kind, 3, 7, 10, make_rng(9), hidden_enc=5,
                              hidden_dec=4, norm=toy_norm)
            base = predict_example(model, ex)
            derivs = []
            for col in range(4):
                bumped = ex.dec.copy()
                bumped[-1, col] += h
                ex2 = _with_dec(ex, bumped)
                bumped2 = ex.dec.copy()
                bumped2[-1, col] -= h
                ex3 = _with_dec(ex, bumped2)
                d = (predict_example(model, ex2)[0]
                     - predict_example(model, ex3)[0]) / (2 * h)
                derivs.append(d)
            if expect_nonzero:
                assert max(abs(d) for d in derivs) > 1e-8
            else:
                assert all(d == 0.0 for d in derivs)
                bumped = ex.dec.copy()
                bumped[-1, :] += 1000.0
                npt.assert_array_equal(predict_example(model, _with_dec(ex, bumped))[0],
                                       base[0])


def _with_dec(ex, dec):
    from dataclasses import replace
    return replace(ex, dec=dec)


class TestLoss:
    def test_exact_cases(self):
        assert loss(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
        assert loss(np.array([1.0, -1.0]), np.array([0.0, 0.0])) == 1.0

    def test_matches_brute_force(self):
        rng = make_rng(10)
        p, t = rng.normal(size=5), rng.normal(size=5)
        assert abs(loss(p, t) - sum((a - b) ** 2 for a, b in zip(p, t)) / 5) < 1e-15

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            loss(np.zeros(3), np.zeros(4))


class TestModelBackward:
    def test_zero_gradients_when_targets_match(self, toy_norm):
        model = zero_model("edu", 3, 7, 10, toy_norm)
        rng = make_rng(11)
        ex = make_example(rng, 4, 10)
        ex.targets[:] = toy_norm.travel_mean  # zero-weight model's prediction
        l, grads = model_backward(model, ex)
        assert l == 0.0
        for g in grads.values():
            npt.assert_array_equal(g, np.zeros_like(g))

    @pytest.mark.parametrize("kind,n_s,m,hidden", [("edu", 5, 3, 4),
                                                   ("edb", 6, 3, 3)])
    def test_gradients_match_finite_differences(self, kind, n_s, m, hidden,
                                                toy_norm):
        rng = make_rng(12)
        model = new_model(kind, 3, n_s - 1, n_s, rng, hidden_enc=hidden,
                          hidden_dec=hidden, norm=toy_norm)
        ex = make_example(rng, m, n_s)
        _, grads = model_backward(model, ex)
        params = model.params()
        vec, layout = flatten_params(params)

        def f(v):
            write_flat_params(params, v, layout)
            return model_loss(model, ex)

        fd = finite_diff_grad(f, vec.copy())
        write_flat_params(params, vec, layout)
        analytic, _ = flatten_params(grads)
        rel = np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))
        assert np.max(rel) < 1e-4

    def test_batch_equals_mean_of_examples(self, toy_norm):
        rng = make_rng(13)
        model = new_model("edb", 3, 7, 9, rng, hidden_enc=4, hidden_dec=3,
                          norm=toy_norm)
        exs = [make_example(rng, 5, 9, trip_id=i) for i in range(4)]
        batch_loss, batch_grads = seq2seq._batch_step(model, exs)
        singles = [model_backward(model, ex) for ex in exs]
        npt.assert_allclose(batch_loss,
                            np.mean([s[0] for s in singles]), atol=1e-12)
        for k in batch_grads:
            mean_g = np.mean([s[1][k] for s in singles], axis=0)
            npt.assert_allclose(batch_grads[k], mean_g, atol=1e-12)

    def test_mixed_m_batch_rejected(self, toy_norm):
        model = zero_model("edu", 3, 7, 9, toy_norm)
        rng = make_rng(14)
        with pytest.raises(ValueError):
            seq2seq._batch_step(model, [make_example(rng, 4, 9),
                                        make_example(rng, 5, 9)])


class TestParameterParity:
    def test_default_sizes_within_ten_percent(self, toy_norm):
        for m_lo, m_hi in ((3, 7), (28, 33)):
            rng = make_rng(0)
            edu = new_model("edu", m_lo, m_hi, 34, rng, norm=toy_norm)
            edb = new_model("edb", m_lo, m_hi, 34, rng, norm=toy_norm)
            n_edu = decoder_param_count(edu)
            n_edb = decoder_param_count(edb)
            assert n_edb <= n_edu
            assert n_edb >= 0.9 * n_edu

    def test_parity_helper_matches_default(self):
        assert bi_hidden_for_parity() == seq2seq.DEFAULT_HIDDEN_DEC["edb"]


class TestNormalizationContract:
    def test_round_trip(self):
        norm = NormStats(123.4, 56.7, 100.0, 86000.0)
        x = make_rng(15).uniform(10, 500, 64)
        npt.assert_allclose(norm.denorm_travel(norm.norm_travel(x)), x,
                            atol=1e-9)
        t = make_rng(16).uniform(0, 86400, 64)
        npt.assert_allclose(norm.denorm_tod(norm.norm_tod(t)), t, atol=1e-9)


class TestTraining:
    def test_overfit_single_example(self, toy_norm):
        for kind in ("edu", "edb"):
            rng = make_rng(17)
            ex = make_example(rng, 4, 8)
            cfg = TrainConfig(max_epochs=500, lr=5e-3, hidden_enc=8,
                              hidden_dec_edu=8, hidden_dec_edb=6, seed=1)
            result = train_bank(kind, [ex], 8, cfg)
            model = result.bank.model_for(4)
            assert model_loss(model, ex) < 1e-3

    def test_training_is_deterministic(self, toy_norm):
        rng = make_rng(18)
        exs = [make_example(rng, m, 8, day_index=7 + i % 3, trip_id=i)
               for i, m in enumerate([3, 4, 5, 6, 7] * 8)]
        cfg = TrainConfig(max_epochs=4, hidden_enc=6, hidden_dec_edu=5, seed=9)
        r1 = train_bank("edu", exs, 8, cfg)
        r2 = train_bank("edu", exs, 8, cfg)
        for m1, m2 in zip(r1.bank.models, r2.bank.models):
            for k, v in m1.params().items():
                npt.assert_array_equal(v, m2.params()[k])
        assert r1.histories == r2.histories

    def test_early_stopping_restores_best(self, toy_norm):
        rng = make_rng(19)
        train_ex = make_example(rng, 4, 8, trip_id=1)
        val_ex = make_example(rng, 4, 8, trip_id=2)
        # same inputs, opposite targets: fitting train strictly hurts val
        val_ex.enc = train_ex.enc.copy()
        val_ex.dec = train_ex.dec.copy()
        val_ex.t_c = train_ex.t_c
        val_ex.targets = 2 * toy_norm.travel_mean - train_ex.targets
        model = new_model("edu", 3, 7, 8, make_rng(20), hidden_enc=6,
                          hidden_dec=5, norm=toy_norm)
        cfg = TrainConfig(max_epochs=200, patience=4, lr=5e-3)
        history = train_model(model, [train_ex], [val_ex], cfg, make_rng(21))
        assert len(history) < 200
        vals = [h["val_loss"] for h in history]
        assert mean_loss(model, [val_ex]) == min(vals)

    def test_skipped_bank_reported(self, toy_norm):
        rng = make_rng(22)
        exs = [make_example(rng, 3, 34, day_index=7, trip_id=i)
               for i in range(3)]
        cfg = TrainConfig(max_epochs=1, hidden_enc=4, hidden_dec_edu=3,
                          hidden_dec_edb=2)
        result = train_bank("edu", exs, 34, cfg)
        assert (8, 12) in result.skipped and (3, 7) not in result.skipped
        assert len(result.bank.models) == 6

    def test_no_examples_raises(self, toy_norm):
        model = zero_model("edu", 3, 7, 8, toy_norm)
        with pytest.raises(ValueError):
            train_model(model, [], [], TrainConfig(), make_rng(0))


class TestPredict:
    def test_boundary_one_section(self, toy_norm):
        bank = zero_bank("edu", 34, toy_norm)
        ex = make_example(make_rng(23), 33, 34)
        result = predict(bank, ex)
        assert len(result.travel_s) == 1
        assert result.sections.tolist() == [34]

    def test_cumulative_definition(self, toy_norm):
        bank = zero_bank("edb", 10, toy_norm)
        ex = make_example(make_rng(24), 4, 10)
        result = predict(bank, ex)
        npt.assert_allclose(result.cumulative_s, np.cumsum(result.travel_s),
                            atol=1e-12)
        npt.assert_allclose(result.arrival_s[-1],
                            ex.t_c + result.travel_s.sum(), atol=1e-12)

    def test_out_of_coverage(self, toy_norm):
        bank = zero_bank("edu", 10, toy_norm)
        for m in (1, 2, 10, 11):
            ex = make_example(make_rng(25), max(3, min(m, 9)), 10)
            ex.m = m
            with pytest.raises(CoverageError):
                bank.model_for(m)

    def test_unresolved_inputs_rejected(self, toy_norm):
        bank = zero_bank("edu", 10, toy_norm)
        ex = make_example(make_rng(26), 5, 10)
        ex.dec[0, 0] = np.nan
        with pytest.raises(ValueError):
            predict(bank, ex)

    def test_variable_length_contract(self, toy_norm):
        n_s = 34
        bank = zero_bank("edu", n_s, toy_norm)
        rng = make_rng(27)
        owners = []
        for m in range(3, n_s):
            ex = make_example(rng, m, n_s)
            result = predict(bank, ex)
            assert len(result.travel_s) == n_s - m
            owner = bank.model_for(m)
            owners.append((owner.m_lo, owner.m_hi))
            assert owner.m_lo <= m <= owner.m_hi
        assert len(set(owners)) == 6


class TestCheckpoints:
    def test_round_trip_bitwise(self, tmp_path, toy_norm):
        rng = make_rng(28)
        for kind in ("edu", "edb"):
            model = new_model(kind, 8, 12, 34, rng, hidden_enc=6,
                              hidden_dec=4, norm=toy_norm)
            path = tmp_path / f"{kind}.json"
            save_model_json(model, path)
            loaded = load_model_json(path)
            for k, v in model.params().items():
                npt.assert_array_equal(v, loaded.params()[k])
            ex = make_example(rng, 9, 34)
            npt.assert_array_equal(predict_example(model, ex),
                                   predict_example(loaded, ex))

    def test_bank_round_trip(self, tmp_path, toy_norm):
        bank = zero_bank("edu", 10, toy_norm)
        save_bank(bank, tmp_path)
        loaded = load_bank(tmp_path, "edu", 10)
        assert [(m.m_lo, m.m_hi) for m in loaded.models] == bank_layout(10)

    def test_missing_checkpoint_names_bank(self, tmp_path, toy_norm):
        bank = zero_bank("edu", 10, toy_norm)
        save_bank(bank, tmp_path)
        (tmp_path / "edu_bank_03_09.json").unlink()
        with pytest.raises(FileNotFoundError, match="3-9"):
            load_bank(tmp_path, "edu", 10)

    def test_format_version_checked(self, tmp_path, toy_norm):
        model = zero_model("edu", 3, 7, 10, toy_norm)
        path = tmp_path / "m.json"
        save_model_json(model, path)
        import json
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="format"):
            load_model_json(path)


class TestModelValidation:
    def test_bank_tiling_checked(self, toy_norm):
        models = [zero_model("edu", 3, 7, 10, toy_norm)]
        bank = ModelBank(kind="edu", n_sections=10, models=models)
        with pytest.raises(ValueError):
            bank.validate()

    def test_kind_consistency(self, toy_norm):
        m = zero_model("edu", 3, 7, 8, toy_norm)
        bank = ModelBank(kind="edb", n_sections=8, models=[m])
        with pytest.raises(ValueError):
            bank.validate()

    def test_edb_requires_reverse_params(self, toy_norm):
        m = zero_model("edb", 3, 7, 8, toy_norm)
        m.dec_bwd = None
        with pytest.raises(ValueError):
            m.validate()
