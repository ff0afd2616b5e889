"""Streaming decode controller behavior, driven by the shared case table."""

from __future__ import annotations

import pytest

from lookback.backend.mock import MockBackend, MockScript, QuestionScript
from lookback.backend.types import SamplingParams, VisualContext
from lookback.controller import (
    ControllerConfig,
    DecodeSession,
    TemplatePolicy,
    run_decode,
)
from lookback.errors import ConfigError
from lookback.miner import PhraseEntry, PhraseVocabulary

from controller_cases import CASES, QUESTION, case_vocab, check_case, run_case


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.name)
def test_scripted_case(case):
    check_case(case)


def test_case_table_is_large_enough():
    assert len(CASES) >= 30
    assert len({c.name for c in CASES}) == len(CASES)


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.name)
def test_replay_is_deterministic(case):
    first, _ = run_case(case)
    second, _ = run_case(case)
    assert first.to_line_dict() == second.to_line_dict()


class TestConfigValidation:
    def test_bad_suffix_len(self):
        with pytest.raises(ConfigError):
            ControllerConfig(suffix_len=0)

    def test_bad_cooldown(self):
        with pytest.raises(ConfigError):
            ControllerConfig(cooldown_window=0)

    def test_cooldown_below_suffix_len(self):
        with pytest.raises(ConfigError):
            ControllerConfig(suffix_len=8, cooldown_window=4)

    def test_negative_cap(self):
        with pytest.raises(ConfigError):
            ControllerConfig(max_injections=-1)

    def test_empty_think_marker(self):
        with pytest.raises(ConfigError):
            ControllerConfig(think_close_marker="")

    def test_zero_budget_rejected(self):
        backend = MockBackend(MockScript(
            questions={QUESTION: QuestionScript(tokens=("a ",))}))
        with pytest.raises(ConfigError):
            run_decode(QUESTION, VisualContext.absent(), backend,
                       ControllerConfig(), budget=0)

    def test_pause_phrases_without_templates_rejected(self):
        vocab = PhraseVocabulary(
            pause_phrases=(PhraseEntry(text="hmm", n=1, enrichment=5.0,
                                       support=9),),
            lookback_templates=())
        with pytest.raises(ConfigError, match="template"):
            DecodeSession(ControllerConfig(), vocab)

    def test_markers_alone_also_need_templates(self):
        # Seed markers are always armed, so an empty vocabulary still
        # requires something to inject.
        with pytest.raises(ConfigError):
            DecodeSession(ControllerConfig(), PhraseVocabulary())


class TestSessionDetails:
    def _session(self, **config):
        vocab = case_vocab(CASES[3])  # any vocab with one template
        return DecodeSession(ControllerConfig(**config), vocab, seed=0)

    def test_no_trigger_on_empty_stream(self):
        session = self._session()
        assert session.should_trigger() is None

    def test_rolling_suffix_window(self):
        session = self._session(suffix_len=3, cooldown_window=3)
        for word in ("a ", "b ", "c ", "d "):
            session.push_generated(word, -1.0)
        assert session.rolling_suffix == ("b", "c", "d")

    def test_unbilled_push(self):
        session = self._session()
        session.push_generated("a ", -1.0)
        session.push_generated("b ", -1.0, bill=False)
        assert session.budget_used == 1
        assert len(session.emitted) == 2

    def test_outcome_line_dict_shape(self):
        outcome, _ = run_case(CASES[3])
        line = outcome.to_line_dict()
        assert line["status"] == "ok"
        assert line["truncated"] is False
        assert line["budget_used"] == outcome.budget_used
        assert line["injections"] == [i.to_dict() for i in outcome.injections]
        assert "branching" not in line
        assert line["question_id"] == "t1"

    def test_error_outcome_line_has_no_trace_fields(self):
        error_case = next(c for c in CASES if c.name == "backend_error_at_open")
        outcome, _ = run_case(error_case)
        line = outcome.to_line_dict()
        assert line["status"].startswith("error")
        assert "tokens" not in line


class TestTemplatePolicies:
    def _vocab(self):
        return PhraseVocabulary(
            pause_phrases=(),
            lookback_templates=tuple(
                PhraseEntry(text=t, n=2, enrichment=e, support=5)
                for t, e in (("Alpha one ", 1.0), ("Bravo two ", 7.0),
                             ("Charlie three ", 3.0))))

    def test_round_robin_wraps_around(self):
        session = DecodeSession(
            ControllerConfig(template_policy=TemplatePolicy.ROUND_ROBIN),
            self._vocab())
        picks = [session.choose_template() for _ in range(7)]
        assert picks == ["Alpha one ", "Bravo two ", "Charlie three "] * 2 + [
            "Alpha one "]

    def test_top_enrichment_is_constant(self):
        session = DecodeSession(
            ControllerConfig(template_policy=TemplatePolicy.TOP_ENRICHMENT),
            self._vocab())
        assert {session.choose_template() for _ in range(5)} == {"Bravo two "}

    def test_seeded_random_reproducible(self):
        def picks(seed):
            session = DecodeSession(
                ControllerConfig(template_policy=TemplatePolicy.SEEDED_RANDOM),
                self._vocab(), seed=seed)
            return [session.choose_template() for _ in range(10)]

        assert picks(3) == picks(3)
        assert picks(3) != picks(4)  # overwhelmingly likely to differ
