"""Phrase mining: enrichment counting, dominance dedup, and alignment."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lookback.errors import (
    DataIntegrityError,
    PreconditionError,
    UndefinedRateError,
)
from lookback.miner import (
    FALLBACK_TEMPLATE,
    SEED_MARKERS,
    VOCAB_FORMAT,
    PhraseEntry,
    PhraseVocabulary,
    alignment_rate,
    as_template_text,
    build_vocabulary,
    mine_lookback_templates,
    mine_pause_phrases,
)
from lookback.probe import FlagIndex, FlagThresholds, StepFlag
from lookback.synthetic import alignment_fixture, planted_miner_corpus
from lookback.words import segment_words

from conftest import make_trace

THRESHOLDS = FlagThresholds(q_p=1.0, q_c=1.0, q_g=-1.0)


def _flag_index(flag_steps_by_trace):
    """flag_steps_by_trace: {question_id: [step, ...]} all presence-sensitive."""
    flags = {}
    for qid, steps in flag_steps_by_trace.items():
        for step in steps:
            flags[(qid, 0, step)] = StepFlag.PRESENCE_SENSITIVE
    return FlagIndex(flags=flags, thresholds=THRESHOLDS)


def _brute_force(traces, flags, n_range, min_support, min_enrichment):
    """Independent recount of the enrichment statistic and filters."""
    total = sum(len(t.tokens) for t in traces)
    flagged_steps = 0
    for t in traces:
        for s in range(1, len(t.tokens) + 1):
            if flags.get(t.question_id, t.pass_index, s) is StepFlag.PRESENCE_SENSITIVE:
                flagged_steps += 1
    counts, hits = {}, {}
    for t in traces:
        words = segment_words(t.token_texts())
        for n in range(n_range[0], n_range[1] + 1):
            for i in range(len(words) - n + 1):
                gram = tuple(w for w, _ in words[i:i + n])
                end = words[i + n - 1][1]
                counts[gram] = counts.get(gram, 0) + 1
                flag = flags.get(t.question_id, t.pass_index, end)
                if flag is StepFlag.PRESENCE_SENSITIVE:
                    hits[gram] = hits.get(gram, 0) + 1
    if flagged_steps == 0:
        return {}
    background = flagged_steps / total
    out = {}
    for gram, c in counts.items():
        if c < min_support or hits.get(gram, 0) == 0:
            continue
        e = (hits.get(gram, 0) / c) / background
        if e >= min_enrichment:
            out[" ".join(gram)] = (e, c)
    return out


def _random_corpus(seed):
    rng = random.Random(seed)
    vocab = ["so", "we", "see", "the", "axis", "hmm", "wait", "dip"]
    traces, flags = [], {}
    for t in range(rng.randrange(3, 7)):
        qid = f"q{t}"
        length = rng.randrange(20, 60)
        texts = [rng.choice(vocab) + " " for _ in range(length)]
        traces.append(make_trace(texts, question_id=qid))
        for step in rng.sample(range(1, length + 1), k=max(1, length // 6)):
            flags[(qid, 0, step)] = StepFlag.PRESENCE_SENSITIVE
    return traces, FlagIndex(flags=flags, thresholds=THRESHOLDS)


class TestEnrichmentCounting:
    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_brute_force_recount(self, seed):
        traces, flags = _random_corpus(seed)
        n_range, support, floor = (1, 3), 3, 1.5
        mined = mine_pause_phrases(traces, flags, n_range=n_range,
                                   min_support=support, min_enrichment=floor)
        expected = _brute_force(traces, flags, n_range, support, floor)
        for entry in mined:
            e, c = expected[entry.text]
            assert entry.enrichment == pytest.approx(e)
            assert entry.support == c
            assert entry.n == len(entry.text.split())

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_dominance_dedup_invariant(self, seed):
        # Every kept phrase strictly beats each of its well-supported
        # strict sub-grams; the brute-force survivors minus mined output
        # must all be dominated phrases.
        traces, flags = _random_corpus(seed)
        n_range, support, floor = (1, 3), 3, 1.5
        mined = mine_pause_phrases(traces, flags, n_range=n_range,
                                   min_support=support, min_enrichment=floor)
        candidates = _brute_force(traces, flags, n_range, support, floor)
        all_counts = _brute_force(traces, flags, n_range, 1, 0.0)
        mined_texts = {e.text for e in mined}

        def subgrams(words):
            for ln in range(1, len(words)):
                for i in range(len(words) - ln + 1):
                    yield " ".join(words[i:i + ln])

        for text, (e, _) in candidates.items():
            words = text.split()
            dominated = any(
                sub in all_counts and all_counts[sub][1] >= support
                and all_counts[sub][0] >= e
                for sub in subgrams(words))
            assert (text in mined_texts) == (not dominated)

    def test_sorted_by_enrichment_then_text(self):
        traces, flags = _random_corpus(5)
        mined = mine_pause_phrases(traces, flags, n_range=(1, 3),
                                   min_support=2, min_enrichment=1.0)
        keys = [(-e.enrichment, e.text) for e in mined]
        assert keys == sorted(keys)

    def test_deterministic(self):
        traces, flags = _random_corpus(6)
        first = mine_pause_phrases(traces, flags)
        second = mine_pause_phrases(traces, flags)
        assert first == second

    def test_no_flags_yields_nothing(self):
        traces, _ = _random_corpus(0)
        empty = FlagIndex(flags={}, thresholds=THRESHOLDS)
        assert mine_pause_phrases(traces, empty) == []

    def test_bad_n_range(self):
        traces, flags = _random_corpus(0)
        with pytest.raises(PreconditionError):
            mine_pause_phrases(traces, flags, n_range=(0, 3))
        with pytest.raises(PreconditionError):
            mine_pause_phrases(traces, flags, n_range=(4, 2))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10 ** 6))
    def test_floors_always_respected(self, seed):
        traces, flags = _random_corpus(seed)
        mined = mine_pause_phrases(traces, flags, n_range=(1, 2),
                                   min_support=4, min_enrichment=2.0)
        for entry in mined:
            assert entry.support >= 4
            assert entry.enrichment >= 2.0


class TestPlantedPhrase:
    def test_planted_phrase_tops_the_list(self):
        traces, flags, phrase = planted_miner_corpus()
        mined = mine_pause_phrases(traces, flags)
        assert mined[0].text == phrase
        assert mined[0].enrichment == pytest.approx(50.0)
        assert mined[0].support == 200

    def test_subgrams_score_strictly_lower(self):
        traces, flags, phrase = planted_miner_corpus()
        mined = {e.text: e for e in mine_pause_phrases(traces, flags)}
        assert mined["me reconsider"].enrichment == pytest.approx(40.0)
        assert mined["me reconsider"].support == 250
        assert mined["reconsider"].enrichment == pytest.approx(100.0 / 3.0)
        assert mined["reconsider"].support == 300


class TestTemplates:
    def test_requires_correct_traces(self):
        traces = [make_trace(["a "], correct=False), make_trace(["b "])]
        with pytest.raises(PreconditionError, match="correct"):
            mine_lookback_templates(traces, _flag_index({}))

    def test_template_formatting(self):
        assert as_template_text("let me reconsider") == "Let me reconsider "
        assert as_template_text("  looking again ") == "Looking again "
        assert as_template_text("X marks") == "X marks "

    def test_mined_templates_are_formatted(self):
        texts = ["filler " for _ in range(30)]
        texts[10:13] = ["looking ", "back ", "again "]
        traces = [make_trace(texts, question_id=f"q{i}", correct=True)
                  for i in range(6)]
        flags = FlagIndex(
            flags={(f"q{i}", 0, 13): StepFlag.CONTENT_GROUNDED
                   for i in range(6)},
            thresholds=THRESHOLDS)
        mined = mine_lookback_templates(traces, flags, n_range=(3, 3),
                                        min_support=5, min_enrichment=2.0)
        assert mined
        assert mined[0].text == "Looking back again "

    def test_incorrect_traces_are_excluded_from_counting(self):
        texts = ["filler " for _ in range(10)]
        texts[3:6] = ["looking ", "back ", "again "]
        correct = [make_trace(texts, question_id=f"c{i}", correct=True)
                   for i in range(5)]
        wrong = [make_trace(texts, question_id=f"w{i}", correct=False)
                 for i in range(50)]
        flags = FlagIndex(
            flags={(f"c{i}", 0, 6): StepFlag.CONTENT_GROUNDED
                   for i in range(5)},
            thresholds=THRESHOLDS)
        mined = mine_lookback_templates(correct + wrong, flags,
                                        n_range=(3, 3), min_support=5,
                                        min_enrichment=2.0)
        # Counting over all 55 traces would dilute support below the floor;
        # restricted to the 5 correct ones the phrase ends flagged every time.
        assert [e.support for e in mined] == [5]


class TestVocabulary:
    def test_seed_markers_always_present(self):
        vocab = PhraseVocabulary(seed_markers=())
        assert set(SEED_MARKERS) <= set(vocab.seed_markers)

    def test_pause_set_includes_markers_longest_first(self):
        vocab = PhraseVocabulary(pause_phrases=(
            PhraseEntry(text="let me reconsider", n=3, enrichment=5.0, support=9),
            PhraseEntry(text="actually", n=1, enrichment=4.0, support=9),
        ))
        ps = vocab.pause_set()
        assert ps[0] == ("let", "me", "reconsider")
        assert ("hmm",) in ps and ("wait",) in ps and ("actually",) in ps
        lengths = [len(p) for p in ps]
        assert lengths == sorted(lengths, reverse=True)

    def test_fallback_template(self):
        vocab = build_vocabulary([], [])
        assert [e.text for e in vocab.lookback_templates] == [FALLBACK_TEMPLATE]
        assert vocab.lookback_templates[0].support == 0
        assert vocab.provenance["fallback_template"] is True

    def test_fallback_suppressed(self):
        vocab = build_vocabulary([], [], use_fallback_template=False)
        assert vocab.lookback_templates == ()

    def test_mined_templates_suppress_fallback(self):
        entry = PhraseEntry(text="Check the axes ", n=3, enrichment=8.0,
                            support=12)
        vocab = build_vocabulary([], [entry])
        assert vocab.lookback_templates == (entry,)
        assert "fallback_template" not in vocab.provenance

    def test_save_load_round_trip(self, tmp_path):
        vocab = build_vocabulary(
            [PhraseEntry(text="hmm", n=1, enrichment=19.0, support=40)],
            [PhraseEntry(text="The axis rises ", n=3, enrichment=9.5,
                         support=64)],
            provenance={"config_hash": "abc", "n_traces": 40})
        path = tmp_path / "vocab.json"
        vocab.save(path)
        loaded = PhraseVocabulary.load(path)
        assert loaded == vocab

    def test_save_is_byte_deterministic(self, tmp_path):
        traces, flags, _ = planted_miner_corpus(n_traces=10)
        mined = mine_pause_phrases(traces, flags, n_range=(1, 3),
                                   min_support=3, min_enrichment=2.0)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        build_vocabulary(mined, []).save(a)
        build_vocabulary(mine_pause_phrases(
            traces, flags, n_range=(1, 3), min_support=3,
            min_enrichment=2.0), []).save(b)
        assert a.read_bytes() == b.read_bytes()

    def test_format_tag_checked(self):
        with pytest.raises(DataIntegrityError, match="format"):
            PhraseVocabulary.from_dict({"format": "something-else"})

    def test_format_tag_value(self):
        assert PhraseVocabulary().to_dict()["format"] == VOCAB_FORMAT


class TestAlignment:
    def test_fixture_rate_is_exact(self):
        vocab, traces, flags = alignment_fixture(aligned=89, total=100)
        report = alignment_rate(vocab, traces, flags)
        assert report.rate == 0.89
        assert report.total_occurrences == 100
        assert report.aligned_occurrences == 89
        assert report.per_phrase["check the image"] == (100, 89)

    def test_unseen_phrases_reported_not_counted(self):
        vocab, traces, flags = alignment_fixture(aligned=2, total=4)
        report = alignment_rate(vocab, traces, flags)
        # hmm and wait never occur in this corpus.
        assert set(report.unseen_phrases) == {"hmm", "wait"}
        assert report.rate == 0.5

    def test_no_occurrences_is_undefined(self):
        vocab, _, flags = alignment_fixture(total=1)
        stranger = [make_trace(["totally ", "different ", "words "])]
        with pytest.raises(UndefinedRateError):
            alignment_rate(vocab, stranger, flags)

    def test_marker_occurrences_count(self):
        vocab, traces, flags = alignment_fixture(aligned=1, total=1)
        extra = make_trace(["hmm ", "so "], question_id="x0")
        report = alignment_rate(vocab, traces + [extra], flags)
        assert report.per_phrase["hmm"] == (1, 0)
        assert report.total_occurrences == 2
        assert report.rate == 0.5
