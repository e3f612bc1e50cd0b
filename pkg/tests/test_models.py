from __future__ import annotations

import math

import numpy as np
import pytest

from guided_decode.errors import (
    ContextTooLongError,
    ModelConfigError,
    UnknownTokenError,
    VocabularyError,
)
from guided_decode.kernels import softmax
from guided_decode.models import (
    NGramModel,
    TableModel,
    Vocabulary,
    greedy_continue,
    next_logits,
    score_sequence,
)


class TestVocabulary:
    def test_tokenize_round_trip_up_to_whitespace(self, abcd_vocab):
        assert abcd_vocab.detokenize(abcd_vocab.tokenize("a  b\nc")) == "a b c"

    def test_unknown_words_map_to_unk(self, abcd_vocab):
        ids = abcd_vocab.tokenize("a zebra")
        assert ids == [0, abcd_vocab.unk_id]

    def test_save_load_round_trip(self, tmp_path, abcd_vocab):
        path = tmp_path / "vocab.txt"
        abcd_vocab.save(str(path))
        loaded = Vocabulary.load(str(path))
        assert loaded == abcd_vocab

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(VocabularyError):
            Vocabulary(tokens=("a", "a", "<eos>", "<unk>"), eos_id=2, unk_id=3, pad_id=2)

    def test_special_ids_validated(self):
        with pytest.raises(VocabularyError):
            Vocabulary(tokens=("a", "b"), eos_id=5, unk_id=1, pad_id=1)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("a\nb\n")
        with pytest.raises(VocabularyError):
            Vocabulary.load(str(path))


class TestTableModel:
    def test_scripted_rule_puts_all_mass_on_target(self, abcd_vocab):
        model = TableModel(abcd_vocab, rules={("a",): {"b": 1.0}})
        probs = softmax(next_logits(model, [0]))
        assert probs[1] == pytest.approx(1.0, abs=1e-9)

    def test_empty_context_uses_default_uniform(self, abcd_vocab):
        model = TableModel(abcd_vocab, default={t: 0.25 for t in "abcd"})
        probs = softmax(next_logits(model, []))
        for token in "abcd":
            assert probs[abcd_vocab.id_of(token)] == pytest.approx(0.25, abs=1e-9)

    def test_longest_suffix_wins(self, abcd_vocab):
        model = TableModel(
            abcd_vocab,
            rules={("b",): {"c": 1.0}, ("a", "b"): {"d": 1.0}},
        )
        assert int(np.argmax(next_logits(model, [0, 1]))) == abcd_vocab.id_of("d")
        assert int(np.argmax(next_logits(model, [2, 1]))) == abcd_vocab.id_of("c")

    def test_bad_distribution_rejected(self, abcd_vocab):
        with pytest.raises(ModelConfigError):
            TableModel(abcd_vocab, rules={("a",): {"b": 0.5}})
        with pytest.raises(ModelConfigError):
            TableModel(abcd_vocab, rules={("a",): {"zebra": 1.0}})

    def test_config_text_round_trip(self, abcd_vocab):
        model = TableModel(
            abcd_vocab,
            rules={("a",): {"b": 0.75, "c": 0.25}, ("a", "b"): {"d": 1.0}},
            default={"a": 0.5, "b": 0.5},
        )
        clone = TableModel.from_config_text(model.to_config_text(), abcd_vocab)
        for ctx in ([], [0], [0, 1], [3, 2]):
            np.testing.assert_array_equal(next_logits(model, ctx), next_logits(clone, ctx))

    def test_config_parse_errors(self, abcd_vocab):
        with pytest.raises(ModelConfigError):
            TableModel.from_config_text("RULE a b:1.0\n", abcd_vocab)
        with pytest.raises(ModelConfigError):
            TableModel.from_config_text("BANANA a -> b:1.0\n", abcd_vocab)

    def test_determinism(self, chain_model):
        a = next_logits(chain_model, [0, 1])
        b = next_logits(chain_model, [0, 1])
        assert np.array_equal(a, b)


class TestNGramModel:
    def test_hand_counted_bigram(self, abcd_vocab):
        # corpus "a b a b": count(a,b)=2, count(a .)=2, V_seen=2
        # P(b|a) = (2+1)/(2+2*1) = 0.75
        model = NGramModel(abcd_vocab, order=2, smoothing=1.0).fit([abcd_vocab.tokenize("a b a b")])
        probs = softmax(next_logits(model, [abcd_vocab.id_of("a")]))
        assert probs[abcd_vocab.id_of("b")] == pytest.approx(0.75, abs=1e-9)
        assert probs[abcd_vocab.id_of("a")] == pytest.approx(0.25, abs=1e-9)

    def test_distribution_sums_to_one(self, abcd_vocab):
        model = NGramModel(abcd_vocab, order=3, smoothing=0.5).fit(
            [abcd_vocab.tokenize("a b c d a b d c"), abcd_vocab.tokenize("b c a")]
        )
        for ctx in ([], [0], [0, 1], [3, 3]):
            probs = softmax(next_logits(model, ctx))
            assert abs(probs.sum() - 1.0) < 1e-9

    def test_score_matches_hand_count(self, abcd_vocab):
        model = NGramModel(abcd_vocab, order=2, smoothing=1.0).fit([abcd_vocab.tokenize("a b a b")])
        scores = score_sequence(model, abcd_vocab.tokenize("a b"))
        # unigram: count(a)=2 of 4 tokens, P(a) = (2+1)/(4+2) = 0.5
        assert scores[0] == pytest.approx(math.log(0.5), abs=1e-9)
        assert scores[1] == pytest.approx(math.log(0.75), abs=1e-9)

    def test_unfitted_model_errors(self, abcd_vocab):
        with pytest.raises(ModelConfigError):
            next_logits(NGramModel(abcd_vocab), [0])


class TestOps:
    def test_greedy_chain(self, chain_model):
        assert greedy_continue(chain_model, [0], 2) == [1, 2]

    def test_greedy_stops_at_eos(self, abcd_vocab):
        model = TableModel(abcd_vocab, default={"<eos>": 1.0})
        out = greedy_continue(model, [0], 8)
        assert out == [abcd_vocab.eos_id]

    def test_greedy_prefix_property(self, abcd_vocab):
        model = NGramModel(abcd_vocab, order=2, smoothing=1.0).fit(
            [abcd_vocab.tokenize("a b c a c b d a")]
        )
        whole = greedy_continue(model, [0], 7)
        head = greedy_continue(model, [0], 3)
        tail = greedy_continue(model, [0] + head, 4)
        assert whole == head + tail

    def test_greedy_requires_positive_steps(self, chain_model):
        with pytest.raises(ValueError):
            greedy_continue(chain_model, [0], 0)

    def test_context_too_long(self, abcd_vocab):
        model = TableModel(abcd_vocab, max_context=3)
        with pytest.raises(ContextTooLongError):
            next_logits(model, [0, 1, 2, 3])

    def test_unknown_token_id(self, chain_model):
        with pytest.raises(UnknownTokenError):
            next_logits(chain_model, [99])

    def test_score_chain_is_zero(self, chain_model):
        scores = score_sequence(chain_model, [0, 1, 2, 3])
        # first token scored against the empty context (default -> a), then
        # probability-1 transitions
        assert np.all(scores <= 0)
        assert scores[1:] == pytest.approx([0.0, 0.0, 0.0], abs=1e-12)

    def test_score_uniform(self, uniform_model):
        scores = score_sequence(uniform_model, [0, 1, 2])
        assert scores == pytest.approx([math.log(0.25)] * 3, abs=1e-9)

    def test_perplexity_identity_against_brute_force(self, abcd_vocab):
        model = NGramModel(abcd_vocab, order=2, smoothing=1.0).fit(
            [abcd_vocab.tokenize("a b b a c d c a")]
        )
        tokens = abcd_vocab.tokenize("a b c a")
        scores = score_sequence(model, tokens)
        brute = []
        for j in range(len(tokens)):
            logits = next_logits(model, tokens[:j])
            shifted = logits - logits.max()
            brute.append(shifted[tokens[j]] - math.log(np.exp(shifted).sum()))
        ppl = math.exp(-scores.mean())
        brute_ppl = math.exp(-np.mean(brute))
        assert abs(ppl - brute_ppl) / brute_ppl < 1e-9
