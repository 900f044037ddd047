import numpy as np
import pytest

import helpers
from translabel import autodiff as ad
from translabel.model import (
    CheckpointError,
    ModelConfig,
    ModelParams,
    UnknownIndicatorError,
    beam_decode,
    decode_step,
    encode,
    forward_loss,
    greedy_decode,
    init_decode_state,
    load_checkpoint,
    save_checkpoint,
    sequence_score,
)
from translabel.serialize import load_arrays, save_arrays
from translabel.vocab import bounded_target, build_vocab


def tiny_setup(seed=0, precision=64, indicators=("EN", "EN-SRL")):
    vocab = build_vocab(
        [["the", "cat", "sat", "dog", "ran", "on", "mat"] * 3],
        ["A0", "A1", "AM-TMP"],
        [f"<2{ind}>" for ind in indicators],
        min_count=1)
    config = ModelConfig(d_w=8, d_p=4, d_l=4, d_h=8, d_s=12, d_a=8,
                         enc_layers=1, enc_style="bidi",
                         indicators=indicators, precision=precision)
    params = ModelParams.init(config, vocab, np.random.default_rng(seed))
    return vocab, config, params


class TestConfig:
    def test_odd_hidden_size_rejected_for_bidi(self):
        config = ModelConfig(d_h=7, indicators=("EN",))
        assert any("d_h" in p for p in config.validate())

    def test_duplicate_indicators_rejected(self):
        config = ModelConfig(indicators=("EN", "EN"))
        assert config.validate()

    def test_defaults_validate(self):
        config = ModelConfig(indicators=("EN", "EN-SRL"))
        assert config.validate() == []


class TestEncode:
    def test_state_count_matches_tokens(self):
        vocab, config, params = tiny_setup()
        enc = encode(["<2EN-SRL>", "the", "cat"], 2, "EN", params)
        assert len(enc.states) == 3
        assert enc.states[0].data.shape == (config.d_h,)

    def test_empty_tokens_rejected(self):
        _, _, params = tiny_setup()
        with pytest.raises(ValueError):
            encode([], None, "EN", params)

    def test_predicate_out_of_range_rejected(self):
        _, _, params = tiny_setup()
        with pytest.raises(IndexError):
            encode(["a", "b"], 5, "EN", params)

    def test_unknown_language_rejected(self):
        _, _, params = tiny_setup()
        with pytest.raises(UnknownIndicatorError):
            encode(["a"], None, "ZZ", params)

    def test_predicate_flag_changes_states(self):
        _, _, params = tiny_setup()
        a = encode(["the", "cat", "sat"], 2, "EN", params)
        b = encode(["the", "cat", "sat"], 1, "EN", params)
        assert not np.allclose(a.states[1].data, b.states[1].data)


class TestClosure:
    def test_joint_distribution_sums_to_one(self):
        vocab, _, params = tiny_setup()
        enc = encode(["<2EN-SRL>", "the", "cat", "sat"], 3, "EN", params)
        state = init_decode_state(enc, "EN-SRL", params)
        out, _ = decode_step(state, enc, params)
        assert abs(out.joint.data.sum() - 1.0) < 1e-6

    def test_aggregated_masses_sum_to_one(self):
        vocab, _, params = tiny_setup()
        enc = encode(["<2EN-SRL>", "qqq", "zzz"], 1, "EN", params)
        state = init_decode_state(enc, "EN-SRL", params)
        out, _ = decode_step(state, enc, params)
        masses, extra = out.aggregated()
        assert abs(masses.sum() - 1.0) < 1e-6
        assert len(extra) == len(set(extra))
        assert set(extra) == {"qqq", "zzz"}

    def test_attention_sums_to_one(self):
        _, _, params = tiny_setup()
        enc = encode(["<2EN-SRL>", "the", "cat", "sat", "on"], 2, "EN", params)
        state = init_decode_state(enc, "EN-SRL", params)
        out, _ = decode_step(state, enc, params)
        assert abs(out.attention.data.sum() - 1.0) < 1e-6


class TestCopyPath:
    def test_oov_source_word_has_positive_probability(self):
        vocab, _, params = tiny_setup()
        assert vocab.word_id_or_unk("zorblatt") == vocab.unk_id
        enc = encode(["<2EN-SRL>", "zorblatt", "sat"], 2, "EN", params)
        state = init_decode_state(enc, "EN-SRL", params)
        out, _ = decode_step(state, enc, params)
        assert out.prob("zorblatt") > 0.0

    def test_absent_word_has_exactly_zero_probability(self):
        vocab, _, params = tiny_setup()
        enc = encode(["<2EN-SRL>", "the", "cat"], 1, "EN", params)
        state = init_decode_state(enc, "EN-SRL", params)
        out, _ = decode_step(state, enc, params)
        assert out.prob("not-anywhere") == 0.0

    def test_in_vocab_source_word_aggregates_generate_and_copy(self):
        vocab, _, params = tiny_setup()
        enc = encode(["<2EN-SRL>", "the", "cat"], 1, "EN", params)
        state = init_decode_state(enc, "EN-SRL", params)
        out, _ = decode_step(state, enc, params)
        joint = out.joint.data
        gen_mass = joint[vocab.id("the")]
        n_symbols = vocab.size
        copy_mass = joint[n_symbols + 1]  # position 1 holds "the"
        assert abs(out.prob("the") - (gen_mass + copy_mass)) < 1e-12

    def test_gold_mass_unreachable_symbol_raises(self):
        vocab, _, params = tiny_setup()
        enc = encode(["<2EN-SRL>", "the"], 1, "EN", params)
        refs = bounded_target(["madeup"], vocab, enc.extension)
        # encode_target mapped it to UNK, which is reachable, so force
        # an impossible reference instead
        from translabel.vocab import TargetRef

        bad = TargetRef(symbol="x", gen_id=None, copy_positions=())
        state = init_decode_state(enc, "EN-SRL", params)
        out, _ = decode_step(state, enc, params)
        with pytest.raises(ValueError):
            out.gold_mass(bad)


class TestForwardLoss:
    def test_loss_is_finite_and_positive(self):
        vocab, _, params = tiny_setup()
        enc = encode(["<2EN-SRL>", "the", "cat", "sat"], 3, "EN", params)
        refs = bounded_target(["(#", "the", "cat", "A0)", "sat"], vocab,
                              enc.extension)
        result = forward_loss(enc, refs, "EN-SRL", params)
        assert np.isfinite(result.loss.data)
        assert result.loss.data > 0.0
        assert result.steps == len(refs) - 1

    def test_gradients_flow_to_all_parameter_groups(self):
        vocab, _, params = tiny_setup()
        enc = encode(["<2EN-SRL>", "the", "cat"], 2, "EN", params)
        refs = bounded_target(["the", "cat"], vocab, enc.extension)
        result = forward_loss(enc, refs, "EN-SRL", params)
        result.loss.backward()
        flowed = {name: t.grad is not None and np.any(t.grad != 0.0)
                  for name, t in params.named_parameters().items()}
        dead = sorted(name for name, ok in flowed.items() if not ok)
        # predicate flag "on" row never fires without a predicate inside
        # these two tokens; everything else must receive gradient
        assert all("emb" in name or not name for name in dead), dead

    def test_requires_sentinel_wrapping(self):
        vocab, _, params = tiny_setup()
        enc = encode(["<2EN-SRL>", "the"], 1, "EN", params)
        from translabel.vocab import encode_target

        bare = encode_target(["the"], vocab, enc.extension)
        with pytest.raises(ValueError):
            forward_loss(enc, bare, "EN-SRL", params)


class TestDecoding:
    def test_truncated_decode_fills_the_budget(self):
        # an untrained model rarely finds EOS; the flag must say so
        _, _, params = tiny_setup()
        seq = greedy_decode(["<2EN-SRL>", "the", "cat"], 1, "EN", "EN-SRL",
                            params, max_len=7)
        if seq.truncated:
            assert len(seq.symbols) == 7
        else:
            assert len(seq.symbols) < 7

    def test_greedy_truncates_at_budget(self):
        _, _, params = tiny_setup()
        seq = greedy_decode(["<2EN-SRL>", "the", "cat"], 1, "EN", "EN-SRL",
                            params, max_len=1)
        assert seq.truncated
        assert len(seq.symbols) <= 1

    def test_beam_width_one_equals_greedy(self):
        _, _, params = tiny_setup(seed=5)
        tokens = ["<2EN-SRL>", "the", "cat", "sat", "on", "mat"]
        g = greedy_decode(tokens, 3, "EN", "EN-SRL", params, max_len=30)
        b, _ = beam_decode(tokens, 3, "EN", "EN-SRL", params, beam_width=1,
                           max_len=30)
        assert g.symbols == b.symbols

    def test_beam_reported_score_matches_recomputation(self):
        for seed in (1, 2, 3):
            _, _, params = tiny_setup(seed=seed)
            tokens = ["<2EN-SRL>", "the", "cat", "sat"]
            enc = encode(tokens, 2, "EN", params)
            b, score = beam_decode(tokens, 2, "EN", "EN-SRL", params,
                                   beam_width=4, max_len=25)
            if b.truncated:
                # teacher-force the beam's own output and re-add its logprobs
                state = init_decode_state(enc, "EN-SRL", params)
                total = 0.0
                for symbol in b.symbols:
                    out, state = decode_step(state, enc, params)
                    total += float(np.log(out.prob(symbol)))
                    state = state.feed(params.vocab.word_id_or_unk(symbol))
                recomputed = total / (len(b.symbols) + 1)
            else:
                recomputed = sequence_score(enc, "EN-SRL", b.symbols, params)
            assert abs(score - recomputed) < 1e-9

    def test_beam_is_deterministic(self):
        _, _, params = tiny_setup(seed=2)
        tokens = ["<2EN-SRL>", "the", "cat", "sat"]
        a, sa = beam_decode(tokens, 2, "EN", "EN-SRL", params, beam_width=4,
                            max_len=20)
        b, sb = beam_decode(tokens, 2, "EN", "EN-SRL", params, beam_width=4,
                            max_len=20)
        assert a.symbols == b.symbols
        assert sa == sb

    def test_decode_is_deterministic(self):
        _, _, params = tiny_setup(seed=4)
        tokens = ["<2EN-SRL>", "dog", "ran"]
        a = greedy_decode(tokens, 2, "EN", "EN-SRL", params, max_len=20)
        b = greedy_decode(tokens, 2, "EN", "EN-SRL", params, max_len=20)
        assert a.symbols == b.symbols

    def test_unknown_target_indicator_rejected(self):
        _, _, params = tiny_setup()
        with pytest.raises(UnknownIndicatorError):
            greedy_decode(["<2EN-SRL>", "a"], None, "EN", "FR-SRL", params)


class TestPrecision:
    def test_float32_parameters(self):
        _, config, params = tiny_setup(precision=32)
        assert params.emb_word.data.dtype == np.float32
        enc = encode(["<2EN-SRL>", "the"], 1, "EN", params)
        assert enc.states[0].data.dtype == np.float32


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        _, _, params = tiny_setup(seed=9)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, str(path))
        back = load_checkpoint(str(path))
        for name, tensor in params.named_parameters().items():
            np.testing.assert_array_equal(
                tensor.data, back.named_parameters()[name].data)
        assert back.vocab == params.vocab
        assert back.config == params.config

    def test_same_decode_after_reload(self, tmp_path):
        _, _, params = tiny_setup(seed=9)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, str(path))
        back = load_checkpoint(str(path))
        tokens = ["<2EN-SRL>", "cat", "sat", "on", "mat"]
        a = greedy_decode(tokens, 1, "EN", "EN-SRL", params, max_len=30)
        b = greedy_decode(tokens, 1, "EN", "EN-SRL", back, max_len=30)
        assert a.symbols == b.symbols

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        save_arrays(str(path), {"kind": "something-else"},
                    {"x": np.zeros(3)})
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))


class TestSerializeContainer:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "c.bin"
        arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3),
                  "b": np.array([1.5], dtype=np.float64)}
        save_arrays(str(path), {"note": "hi"}, arrays)
        meta, back = load_arrays(str(path))
        assert meta["note"] == "hi"
        np.testing.assert_array_equal(back["a"], arrays["a"])
        np.testing.assert_array_equal(back["b"], arrays["b"])

    def test_byte_identical_for_same_content(self, tmp_path):
        arrays = {"a": np.ones((4, 4), dtype=np.float32)}
        p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
        save_arrays(str(p1), {"k": 1}, arrays)
        save_arrays(str(p2), {"k": 1}, arrays)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "c.bin"
        save_arrays(str(path), {}, {"a": np.zeros(10)})
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        from translabel.serialize import ContainerError

        with pytest.raises(ContainerError):
            load_arrays(str(path))


class TestPretrained:
    def test_known_rows_are_copied(self):
        vocab = build_vocab([["alpha", "beta"] * 3], ["A0"], [], min_count=1)
        config = ModelConfig(d_w=4, d_p=2, d_l=2, d_h=4, d_s=6, d_a=4,
                             enc_layers=1, indicators=("EN",), precision=64)
        vec = np.array([9.0, 8.0, 7.0, 6.0])
        params = ModelParams.init(config, vocab, np.random.default_rng(0),
                                  pretrained={"alpha": vec})
        np.testing.assert_allclose(
            params.emb_word.data[vocab.id("alpha")], vec)
        assert not np.allclose(params.emb_word.data[vocab.id("beta")], vec)
