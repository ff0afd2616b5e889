"""Deterministic synthetic fixtures: questions, images, scripts, corpora.

Everything here is seeded and pure so the demo workspace and the test suite
are byte-reproducible. The demo trace is 19 tokens long with one planted
presence-sensitive step (the "hmm" pause) and two content-grounded steps
(both "rises" tokens), sized so the default quantile thresholds recover
exactly the planted flags:

  - presence steps are ~5% of the corpus, below the 90th-percentile cut;
  - grounded steps are ~10.5%, so the 10th percentile of delta_content lands
    inside their (bit-identical) value block;
  - neutral steps with large |delta_presence| carry |delta_content| above
    the median, so they never masquerade as presence-sensitive.

Run as a module to build a demo workspace:  python -m lookback.synthetic DIR
"""

from __future__ import annotations

import io
import json
import math
import random
from pathlib import Path
from typing import Any, Sequence

from .backend.mock import MockScript, QuestionScript
from .evaluation import EvalRecord
from .jobs import Question
from .miner import PhraseEntry, PhraseVocabulary
from .probe import FlagIndex, FlagThresholds, StepFlag
from .traces import Difficulty, Phase, ThinkingTrace, TraceToken

OBJECT_WORDS = ("chart", "diagram", "plot", "graph", "map")
ANSWER_LETTERS = ("A", "B", "C", "D")
DEMO_TRACE_LEN = 19
PRESENCE_STEP = 6  # 1-based step of the "hmm " token
GROUNDED_STEPS = (11, 15)  # both "rises " tokens

PPL_PRESENCE = (6.0, 6.0, 1.0)  # (real, noise, absent)
PPL_GROUNDED = (1.5, 12.0, 12.0)


def tiny_png(seed: int, size: tuple[int, int] = (8, 8)) -> bytes:
    """Small solid-color PNG; color is a pure function of the seed."""
    from PIL import Image

    rgb = ((seed * 53) % 256, (seed * 97) % 256, (seed * 31) % 256)
    with io.BytesIO() as buf:
        Image.new("RGB", size, rgb).save(buf, format="PNG")
        return buf.getvalue()


def demo_trace_tokens(question_index: int, wrong: bool = False) -> list[str]:
    obj = OBJECT_WORDS[question_index % len(OBJECT_WORDS)]
    gold = ANSWER_LETTERS[question_index % len(ANSWER_LETTERS)]
    emitted = "Z" if wrong else gold
    return [
        "The ", f"{obj} ", "shows ", "a ", "pattern. ", "hmm ",
        "I ", "see ", "the ", "axis ", "rises ", "and ",
        "the ", "axis ", "rises ", "clearly. ", "</think>",
        " Final Answer: ", emitted,
    ]


def demo_score_tables() -> dict[str, list[float]]:
    """Positional logprobs per context realizing the planted flag pattern."""
    tables: dict[str, list[float]] = {"real": [], "noise": [], "absent": []}
    for i in range(DEMO_TRACE_LEN):
        step = i + 1
        if step == PRESENCE_STEP:
            real, noise, absent = PPL_PRESENCE
        elif step in GROUNDED_STEPS:
            real, noise, absent = PPL_GROUNDED
        else:
            presence = 0.25 * (((i * 7) % 5) - 2)
            content = 0.2 * presence
            real = 2.0 + 0.05 * ((i * 3) % 7)
            noise = real - content
            absent = noise - presence
        tables["real"].append(-math.log(real))
        tables["noise"].append(-math.log(noise))
        tables["absent"].append(-math.log(absent))
    return tables


def demo_question_rows(n_questions: int = 20) -> list[dict[str, Any]]:
    rows = []
    for i in range(n_questions):
        rows.append({
            "id": f"q{i + 1:02d}",
            "text": f"What does the {OBJECT_WORDS[i % len(OBJECT_WORDS)]} "
                    f"in figure {i + 1} indicate?",
            "image": f"images/q{i + 1:02d}.png",
            "answer": ANSWER_LETTERS[i % len(ANSWER_LETTERS)],
            "category": OBJECT_WORDS[i % len(OBJECT_WORDS)] + "s",
            "difficulty": ("easy", "medium", "hard")[i % 3],
        })
    return rows


def is_wrong_question(index: int) -> bool:
    """Every fifth demo question answers incorrectly, for group variety."""
    return (index + 1) % 5 == 0


def build_mock_script(n_questions: int = 20) -> MockScript:
    tables = demo_score_tables()
    questions: dict[str, QuestionScript] = {}
    for i, row in enumerate(demo_question_rows(n_questions)):
        tokens = demo_trace_tokens(i, wrong=is_wrong_question(i))
        questions[row["text"]] = QuestionScript(
            tokens=tuple(tokens),
            score_by_position={k: tuple(v) for k, v in tables.items()},
            score_default={"real": -1.0, "noise": -1.0, "absent": -1.0},
        )
    return MockScript(questions=questions, default_gen_logprob=-0.5)


DEMO_CONFIG = """\
[backend]
kind = "mock"
mock_script = "mock_script.json"
model_id = "demo-4b"
thinking = true

[sampling]
temperature = 1.0
top_p = 0.95
n_passes = 2
seed = 0

[budgets]
instruct_max = 16384
thinking_max = 32768

[controller]
suffix_len = 8
cooldown_window = 8
max_injections = 2
template_policy = "round_robin"

[branching]
enabled = false

[probe]
bins = 10

[mining]
min_support = 5
min_enrichment = 4.0

[paths]
questions = "questions.jsonl"
traces = "traces_original.jsonl"
vocab = "vocab.json"
reports = "reports"

[report]
ours = "reports/eval_ours.jsonl"
original = "reports/eval_original.jsonl"
"""


def build_workspace(root: str | Path, n_questions: int = 20) -> dict[str, Path]:
    """Write a self-contained runnable workspace under root."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rows = demo_question_rows(n_questions)
    with open(root / "questions.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    for i, row in enumerate(rows):
        (root / row["image"]).write_bytes(tiny_png(i + 1))
    build_mock_script(n_questions).save(root / "mock_script.json")
    (root / "run.toml").write_text(DEMO_CONFIG, encoding="utf-8")
    return {
        "config": root / "run.toml",
        "questions": root / "questions.jsonl",
        "script": root / "mock_script.json",
    }


# --- miner fixtures ----------------------------------------------------------


def _filler_texts(rng: random.Random, vocab: Sequence[str],
                  length: int) -> list[str]:
    return [rng.choice(vocab) + " " for _ in range(length)]


def planted_miner_corpus(
    n_traces: int = 100,
    trace_len: int = 500,
    seed: int = 7,
) -> tuple[list[ThinkingTrace], FlagIndex, str]:
    """A corpus where "let me reconsider" ends only at flagged steps.

    Exactly 2% of all steps are flagged presence-sensitive: the 2 planted
    phrase endings per trace plus 8 background steps. Sub-grams of the
    phrase also occur at unflagged spots so the full phrase strictly
    dominates them.
    """
    if trace_len < 425:
        raise ValueError("trace_len must be >= 425 to fit the planted spans")
    rng = random.Random(seed)
    vocab = [f"w{k:03d}" for k in range(200)]
    phrase = "let me reconsider"
    traces: list[ThinkingTrace] = []
    flags: dict[tuple[str, int, int], StepFlag] = {}

    for t in range(n_traces):
        qid = f"c{t:03d}"
        texts = _filler_texts(rng, vocab, trace_len)
        # Planted full-phrase occurrences (token idx 100.. and 300..).
        for start in (100, 300):
            texts[start], texts[start + 1], texts[start + 2] = (
                "let ", "me ", "reconsider ")
        reserved = {101, 102, 103, 301, 302, 303}
        # Unflagged sub-gram decoys keep the full phrase strictly dominant.
        if t % 2 == 0:
            texts[400] = "reconsider "
            reserved.add(401)
        else:
            texts[420], texts[421] = "me ", "reconsider "
            reserved.update((421, 422))

        tokens = tuple(TraceToken(text=s, logprob=-1.0, phase=Phase.THINKING)
                       for s in texts)
        traces.append(ThinkingTrace(question_id=qid, pass_index=0,
                                    tokens=tokens, model_id="synthetic"))
        for step in (103, 303):
            flags[(qid, 0, step)] = StepFlag.PRESENCE_SENSITIVE
        candidates = [s for s in range(1, trace_len + 1) if s not in reserved]
        for step in rng.sample(candidates, 8):
            flags[(qid, 0, step)] = StepFlag.PRESENCE_SENSITIVE

    index = FlagIndex(flags=flags,
                      thresholds=FlagThresholds(q_p=1.0, q_c=1.0, q_g=-1.0))
    return traces, index, phrase


def alignment_fixture(
    aligned: int = 89,
    total: int = 100,
) -> tuple[PhraseVocabulary, list[ThinkingTrace], FlagIndex]:
    """Corpus where the vocabulary phrase has exactly `aligned`/`total`
    occurrence endpoints on presence-sensitive steps."""
    phrase_words = ("check ", "the ", "image ")
    traces: list[ThinkingTrace] = []
    flags: dict[tuple[str, int, int], StepFlag] = {}
    for t in range(total):
        qid = f"a{t:03d}"
        texts = ["so ", "we ", *phrase_words, "now ", "then "]
        tokens = tuple(TraceToken(text=s, logprob=-1.0, phase=Phase.THINKING)
                       for s in texts)
        traces.append(ThinkingTrace(question_id=qid, pass_index=0,
                                    tokens=tokens, model_id="synthetic"))
        if t < aligned:
            flags[(qid, 0, 5)] = StepFlag.PRESENCE_SENSITIVE  # "image " step
    vocab = PhraseVocabulary(
        pause_phrases=(PhraseEntry(text="check the image", n=3,
                                   enrichment=50.0, support=total),),
        lookback_templates=(PhraseEntry(text="Looking back at the image, ",
                                        n=5, enrichment=0.0, support=0),),
    )
    index = FlagIndex(flags=flags,
                      thresholds=FlagThresholds(q_p=1.0, q_c=1.0, q_g=-1.0))
    return vocab, traces, index


# --- report fixtures ---------------------------------------------------------


def table_fixture_records(
    n_questions: int = 100,
    n_passes: int = 10,
    ours_correct_total: int = 697,
    original_correct_total: int = 670,
    ours_token_total: int = 5720,
    original_token_total: int = 10000,
) -> tuple[list[EvalRecord], list[EvalRecord]]:
    """Eval record pair whose aggregate report reproduces the target cells.

    Correct passes and token counts are spread as evenly as integer counts
    allow; the aggregates (mean accuracy, token sums) are exact.
    """

    def spread(total: int, parts: int, cap: int) -> list[int]:
        base, extra = divmod(total, parts)
        if base > cap or (base == cap and extra):
            raise ValueError(f"cannot place {total} into {parts} parts of {cap}")
        return [base + 1 if i < extra else base for i in range(parts)]

    def build(method: str, correct_total: int, token_total: int) -> list[EvalRecord]:
        per_question_correct = spread(correct_total, n_questions, n_passes)
        n_records = n_questions * n_passes
        per_record_tokens = spread(token_total, n_records, token_total)
        records = []
        r = 0
        for q in range(n_questions):
            for p in range(n_passes):
                total = per_record_tokens[r]
                records.append(EvalRecord(
                    question_id=f"t{q:03d}",
                    category="mmmu",
                    difficulty=Difficulty.MEDIUM,
                    pass_index=p,
                    correct=p < per_question_correct[q],
                    total_tokens=total,
                    thinking_tokens=max(total - 1, 0),
                    method_id=method,
                ))
                r += 1
        return records

    ours = build("ours", ours_correct_total, ours_token_total)
    original = build("original", original_correct_total, original_token_total)
    return ours, original


if __name__ == "__main__":
    import sys

    target = sys.argv[1] if len(sys.argv) > 1 else "demo"
    paths = build_workspace(target)
    for name, path in paths.items():
        print(f"{name}: {path}")
