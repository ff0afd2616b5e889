"""Word segmentation and normalization rules."""

from __future__ import annotations

from hypothesis import given
from hypothesis import strategies as st

from lookback.words import (
    WordBuffer,
    ends_with,
    normalize_phrase,
    normalize_word,
    phrase_words,
    segment_words,
)


class TestNormalize:
    def test_casefold(self):
        assert normalize_word("Wait") == "wait"
        assert normalize_word("HMMM") == "hmmm"

    def test_strips_surrounding_punctuation(self):
        assert normalize_word("wait,") == "wait"
        assert normalize_word('"hmm..."') == "hmm"
        assert normalize_word("(actually)") == "actually"

    def test_keeps_interior_punctuation(self):
        assert normalize_word("doesn't") == "doesn't"
        assert normalize_word("x-axis") == "x-axis"

    def test_unicode_quotes_and_dashes(self):
        assert normalize_word("“wait”") == "wait"
        assert normalize_word("hmm…") == "hmm"

    def test_pure_punctuation_vanishes(self):
        assert normalize_word("...") == ""
        assert normalize_word("--") == ""

    def test_phrase(self):
        assert normalize_phrase("  Let  me, reconsider.  ") == "let me reconsider"
        assert normalize_phrase("") == ""

    def test_phrase_words(self):
        assert phrase_words("Let me... reconsider") == ("let", "me", "reconsider")
        assert phrase_words("... !!") == ()


class TestSegmentWords:
    def test_words_anchor_to_final_character_step(self):
        # "so" and "we" both finish inside token 1; "check" spans tokens 2-3.
        tokens = ["so we", " che", "ck ", "now"]
        assert segment_words(tokens) == [
            ("so", 1), ("we", 1), ("check", 3), ("now", 4)]

    def test_trailing_fragment_counts(self):
        assert segment_words(["wai", "t"]) == [("wait", 2)]

    def test_punctuation_only_tokens_do_not_advance_anchor(self):
        # The quote closes at step 2 and is stripped, but the word's last
        # letter also lives in step 2 via the quote token's position rule:
        # anchor tracks the last contributing character, stripped or not.
        tokens = ['"wait', '" ', "so "]
        assert segment_words(tokens) == [("wait", 2), ("so", 3)]

    def test_empty_and_whitespace_tokens(self):
        assert segment_words([]) == []
        assert segment_words(["   ", "\n"]) == []
        assert segment_words(["", "a ", ""]) == [("a", 2)]

    def test_agrees_with_split_on_plain_text(self):
        text = "Let me reconsider the chart, it shows a dip."
        words = [w for w, _ in segment_words([text])]
        assert words == [normalize_word(w) for w in text.split()]

    @given(st.lists(st.text(
        alphabet=st.sampled_from("ab .,\n\"'"), max_size=6), max_size=20))
    def test_segmentation_ignores_token_boundaries(self, tokens):
        # Splitting the same text differently must yield the same words.
        joined = "".join(tokens)
        expected = [w for w, _ in segment_words([joined])]
        actual = [w for w, _ in segment_words(tokens)]
        assert actual == expected


class TestWordBuffer:
    def test_incremental_matches_batch(self):
        tokens = ["The ", "x-", "axis ", "rises, ", "hm", "m"]
        buf = WordBuffer()
        for t in tokens:
            buf.push(t)
        assert buf.suffix(10) == ("the", "x-axis", "rises", "hmm")

    def test_trailing_fragment_visible_immediately(self):
        buf = WordBuffer()
        buf.push("let me reconsi")
        assert buf.suffix(3) == ("let", "me", "reconsi")
        buf.push("der")
        assert buf.suffix(3) == ("let", "me", "reconsider")

    def test_suffix_window(self):
        buf = WordBuffer()
        buf.push("a b c d e ")
        assert buf.suffix(2) == ("d", "e")
        assert buf.suffix(0) == ()

    def test_fragment_not_double_counted_after_completion(self):
        buf = WordBuffer()
        buf.push("wait")
        buf.push(" so ")
        assert buf.suffix(5) == ("wait", "so")

    @given(st.lists(st.text(
        alphabet=st.sampled_from("xy ._"), max_size=5), max_size=25))
    def test_buffer_agrees_with_segment_words(self, tokens):
        buf = WordBuffer()
        for t in tokens:
            buf.push(t)
        expected = tuple(w for w, _ in segment_words(tokens))
        assert buf.suffix(10 ** 6) == expected


class TestEndsWith:
    def test_match(self):
        assert ends_with(("a", "b", "c"), ("b", "c"))
        assert ends_with(("a",), ("a",))

    def test_no_match(self):
        assert not ends_with(("a", "b", "c"), ("a", "b"))
        assert not ends_with(("a",), ("a", "b"))
        assert not ends_with((), ("a",))

    def test_empty_suffix_never_matches(self):
        assert not ends_with(("a", "b"), ())
