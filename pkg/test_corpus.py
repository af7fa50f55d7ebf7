#!/usr/bin/env python3
"""
コーパス処理（トークナイザ・語彙・文フィルタ・ミニバッチ・刺激文）のテスト
"""

from collections import Counter

import numpy as np
import pytest

from config import BOS_ID, EOS_ID, PAD_ID, SPECIAL_TOKENS
from core.exceptions import CorpusError
from corpus.batching import batches
from corpus.stimuli import read_stimuli, stimulus_words, write_stimuli
from corpus.tokenizer import is_valid_token, normalize_stimulus_word, tokenize_line
from corpus.vocabulary import (SentenceCorpus, Vocabulary, build_vocabulary, corpus_statistics, filter_sentences,
                               read_vocabulary, write_vocabulary)


class TestTokenizer:
    def test_contraction_is_single_token(self):
        tokens = tokenize_line("Don't stop")
        assert [t.text for t in tokens] == ["don't", "stop"]
        assert all(t.valid for t in tokens)

    def test_numeral_flagged_invalid(self):
        tokens = tokenize_line("he won 3 games")
        assert [t.text for t in tokens] == ["he", "won", "3", "games"]
        assert [t.valid for t in tokens] == [True, True, False, True]

    def test_empty_line(self):
        assert tokenize_line("") == []
        assert tokenize_line("   ") == []

    def test_punctuation_and_hyphen(self):
        assert is_valid_token("well-known")
        assert not is_valid_token("end.")
        assert not is_valid_token("--")
        assert not is_valid_token("a1")

    def test_validity_is_idempotent(self):
        for token in tokenize_line("The cat's well-known trick"):
            assert tokenize_line(token.text)[0] == token

    def test_normalize_stimulus_word(self):
        assert normalize_stimulus_word("said,") == "said"
        assert normalize_stimulus_word("The") == "the"
        assert normalize_stimulus_word("end.") == "end"


class TestVocabulary:
    def test_top_n_with_lexicographic_ties(self):
        corpus = [
            ["b", "a", "c"],
            ["a", "b", "d"],
            ["c", "d", "e"],
            ["a", "e"],
            ["b", "f"],
        ]
        vocab = build_vocabulary(corpus, test_words=set(), n_top=3)

        counts = Counter(w for s in corpus for w in s)
        expected = sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:3]
        assert vocab.entries == tuple(expected)
        assert [w for w, _ in vocab.entries] == ["a", "b", "c"]

    def test_no_truncation_without_test_words(self):
        vocab = build_vocabulary([["x", "y"], ["y", "z"]], test_words=set(), n_top=10)
        assert vocab.n_words == 3
        assert len(vocab) == 3 + len(SPECIAL_TOKENS)

    def test_test_words_are_added(self):
        vocab = build_vocabulary([["x", "y"], ["y", "y"]], test_words={"y", "unseen"}, n_top=1)
        assert vocab.contains_word("y")
        assert vocab.contains_word("unseen")
        assert not vocab.contains_word("x")

    def test_invalid_tokens_are_not_counted(self):
        vocab = build_vocabulary([["a", "3", "3", "3"]], test_words=set(), n_top=5)
        assert [w for w, _ in vocab.entries] == ["a"]

    def test_empty_corpus_is_error(self):
        with pytest.raises(CorpusError):
            build_vocabulary([], test_words={"a"}, n_top=5)

    def test_id_round_trip(self):
        vocab = build_vocabulary([["a", "b", "c", "a"]], test_words=set(), n_top=3)
        for token_id in range(len(vocab)):
            assert vocab.id_of(vocab.word_of(token_id)) == token_id

    def test_file_round_trip(self, tmp_path):
        vocab = build_vocabulary([["a", "b", "b"], ["c"]], test_words={"z"}, n_top=3)
        path = tmp_path / "vocabulary.tsv"
        write_vocabulary(vocab, path)
        assert read_vocabulary(path) == vocab


class TestFilterSentences:
    @pytest.fixture
    def vocab(self):
        return Vocabulary(entries=(("a", 5), ("b", 3), ("c", 1)))

    def test_out_of_vocabulary_sentence_dropped(self, vocab):
        corpus = filter_sentences([["a", "b"], ["a", "zzz"]], vocab, max_len=39)
        assert len(corpus) == 1
        assert corpus.sentences[0] == (vocab.id_of("a"), vocab.id_of("b"))

    def test_long_sentence_dropped(self, vocab):
        corpus = filter_sentences([["a"] * 40, ["a"] * 39], vocab, max_len=39)
        assert [len(s) for s in corpus.sentences] == [39]

    def test_special_tokens_are_not_words(self, vocab):
        corpus = filter_sentences([[SPECIAL_TOKENS[0], "a"]], vocab, max_len=39)
        assert len(corpus) == 0

    def test_statistics(self, vocab):
        corpus = filter_sentences([["a", "b"], ["c", "a", "b", "c"]], vocab, max_len=39)
        stats = corpus_statistics(corpus)
        assert stats["sentences"] == 2
        assert stats["tokens"] == 6
        assert stats["mean_length"] == pytest.approx(3.0)
        assert stats["max_length"] == 4


class TestBatches:
    @staticmethod
    def corpus_of(n: int) -> SentenceCorpus:
        return SentenceCorpus(sentences=tuple((3 + i % 4,) * (1 + i % 3) for i in range(n)), max_len=39)

    def test_single_batch(self):
        assert [b.n_sentences for b in batches(self.corpus_of(10), 10, order_seed=1)] == [10]

    def test_remainder_batch(self):
        assert [b.n_sentences for b in batches(self.corpus_of(25), 10, order_seed=1)] == [10, 10, 5]

    def test_deterministic_order(self):
        first = [b.token_ids for b in batches(self.corpus_of(25), 10, order_seed=3)]
        second = [b.token_ids for b in batches(self.corpus_of(25), 10, order_seed=3)]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_epoch_is_permutation(self):
        corpus = self.corpus_of(25)
        seen = []
        for batch in batches(corpus, 7, order_seed=9):
            for row, length in zip(batch.token_ids, batch.lengths):
                seen.append(tuple(row[1:length - 1]))
        assert sorted(seen) == sorted(corpus.sentences)

    def test_bos_eos_and_padding(self):
        corpus = SentenceCorpus(sentences=((5, 6, 7), (8,)), max_len=39)
        batch = next(batches(corpus, 2, order_seed=0))
        for row, mask, length in zip(batch.token_ids, batch.pad_mask, batch.lengths):
            assert row[0] == BOS_ID
            assert row[length - 1] == EOS_ID
            assert np.all(row[length:] == PAD_ID)
            assert np.all(mask[length:]) and not np.any(mask[:length])

    def test_empty_corpus_is_error(self):
        with pytest.raises(CorpusError):
            next(batches(SentenceCorpus(sentences=(), max_len=39), 10, order_seed=0))


class TestStimuli:
    def test_round_trip_and_words(self, tmp_path):
        stimuli = [(1, "The dog barked, loudly."), (2, "Cats sleep.")]
        path = tmp_path / "stimuli.tsv"
        write_stimuli(stimuli, path)
        assert read_stimuli(path) == stimuli
        assert stimulus_words(stimuli) == {"the", "dog", "barked", "loudly", "cats", "sleep"}

    def test_duplicate_id_is_error(self, tmp_path):
        path = tmp_path / "stimuli.tsv"
        path.write_text("1\tA b.\n1\tC d.\n", encoding="utf-8")
        with pytest.raises(CorpusError):
            read_stimuli(path)

    def test_malformed_row_is_error(self, tmp_path):
        path = tmp_path / "stimuli.tsv"
        path.write_text("x\tA b.\n", encoding="utf-8")
        with pytest.raises(CorpusError):
            read_stimuli(path)

    def test_toy_stimuli_are_in_vocabulary(self, toy_corpus):
        lines = [[t.text for t in tokenize_line(line)] for line in toy_corpus.corpus_lines]
        vocab = build_vocabulary(lines, stimulus_words(toy_corpus.stimuli), n_top=200)
        assert all(vocab.contains_word(w) for w in stimulus_words(toy_corpus.stimuli))
