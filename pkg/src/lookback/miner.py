"""Offline mining of pause phrases and lookback templates.

Pause phrases are word n-grams that end disproportionately often at
presence-sensitive steps; lookback templates are longer n-grams from correct
traces that end at content-grounded steps. Both use the same enrichment
statistic:

    enrichment(g) = (flagged-end occurrences of g / occurrences of g)
                    / (flagged steps / all steps)

i.e. how much more often g ends on a flagged step than chance would give.
Counting is anchored on the step where the n-gram's final word ends.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .errors import DataIntegrityError, PreconditionError, UndefinedRateError
from .probe import FlagIndex, StepFlag
from .traces import ThinkingTrace
from .words import segment_words

VOCAB_FORMAT = "lookback/vocab@1"
SEED_MARKERS = ("hmm", "wait")
FALLBACK_TEMPLATE = "Looking back at the image, "

DEFAULT_PAUSE_N_RANGE = (1, 6)
DEFAULT_TEMPLATE_N_RANGE = (3, 10)
DEFAULT_MIN_SUPPORT = 5
DEFAULT_MIN_ENRICHMENT = 4.0


@dataclass(frozen=True)
class PhraseEntry:
    text: str
    n: int
    enrichment: float
    support: int


@dataclass(frozen=True)
class PhraseVocabulary:
    """Mined pause phrases and lookback templates, plus always-on seed markers."""

    pause_phrases: tuple[PhraseEntry, ...] = ()
    lookback_templates: tuple[PhraseEntry, ...] = ()
    seed_markers: tuple[str, ...] = SEED_MARKERS
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        markers = tuple(self.seed_markers)
        for required in SEED_MARKERS:
            if required not in markers:
                markers = markers + (required,)
        object.__setattr__(self, "seed_markers", markers)

    def pause_set(self) -> tuple[tuple[str, ...], ...]:
        """Word tuples the controller matches: mined phrases plus seed markers."""
        phrases = {tuple(e.text.split()) for e in self.pause_phrases}
        phrases.update((m,) for m in self.seed_markers)
        return tuple(sorted(phrases, key=lambda p: (-len(p), p)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": VOCAB_FORMAT,
            "pause_phrases": [
                {"text": e.text, "n": e.n, "enrichment": e.enrichment, "support": e.support}
                for e in self.pause_phrases
            ],
            "lookback_templates": [
                {"text": e.text, "n": e.n, "enrichment": e.enrichment, "support": e.support}
                for e in self.lookback_templates
            ],
            "seed_markers": list(self.seed_markers),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "PhraseVocabulary":
        if obj.get("format") != VOCAB_FORMAT:
            raise DataIntegrityError(
                f"unrecognized vocabulary format tag: {obj.get('format')!r}"
            )

        def entries(key: str) -> tuple[PhraseEntry, ...]:
            return tuple(
                PhraseEntry(text=str(e["text"]), n=int(e["n"]),
                            enrichment=float(e["enrichment"]), support=int(e["support"]))
                for e in obj.get(key, [])
            )

        return cls(
            pause_phrases=entries("pause_phrases"),
            lookback_templates=entries("lookback_templates"),
            seed_markers=tuple(obj.get("seed_markers", SEED_MARKERS)),
            provenance=dict(obj.get("provenance", {})),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "PhraseVocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# --- counting --------------------------------------------------------------


def _iter_ngram_ends(trace: ThinkingTrace, n_range: tuple[int, int]):
    """Yield (ngram word tuple, end step) for every window in the trace."""
    words = segment_words(trace.token_texts())
    lo, hi = n_range
    for n in range(lo, hi + 1):
        for start in range(len(words) - n + 1):
            window = words[start:start + n]
            yield tuple(w for w, _ in window), window[-1][1]


def _strict_subgrams(gram: tuple[str, ...]) -> Iterable[tuple[str, ...]]:
    n = len(gram)
    for length in range(1, n):
        for start in range(n - length + 1):
            yield gram[start:start + length]


def _mine(
    traces: Sequence[ThinkingTrace],
    flags: FlagIndex,
    target: StepFlag,
    n_range: tuple[int, int],
    min_support: int,
    min_enrichment: float,
) -> list[PhraseEntry]:
    if n_range[0] < 1 or n_range[1] < n_range[0]:
        raise PreconditionError(f"bad n-gram range {n_range!r}")

    total_steps = 0
    flagged_steps = 0
    counts: dict[tuple[str, ...], int] = {}
    flagged: dict[tuple[str, ...], int] = {}
    for trace in traces:
        total_steps += len(trace.tokens)
        for step in range(1, len(trace.tokens) + 1):
            if flags.get(trace.question_id, trace.pass_index, step) is target:
                flagged_steps += 1
        for gram, end_step in _iter_ngram_ends(trace, n_range):
            counts[gram] = counts.get(gram, 0) + 1
            if flags.get(trace.question_id, trace.pass_index, end_step) is target:
                flagged[gram] = flagged.get(gram, 0) + 1

    if total_steps == 0 or flagged_steps == 0:
        return []
    background = flagged_steps / total_steps

    enrichment = {
        gram: (flagged.get(gram, 0) / counts[gram]) / background
        for gram in counts
    }
    supported = {g for g, c in counts.items() if c >= min_support}
    candidates = [
        g for g in supported
        if flagged.get(g, 0) > 0 and enrichment[g] >= min_enrichment
    ]

    # Sub-gram dominance: a longer phrase earns its place only by strictly
    # beating every reliably-counted sub-gram; ties go to the shorter phrase.
    kept = []
    for gram in candidates:
        dominated = any(
            sub in supported and enrichment[sub] >= enrichment[gram]
            for sub in _strict_subgrams(gram)
        )
        if not dominated:
            kept.append(gram)

    entries = [
        PhraseEntry(text=" ".join(g), n=len(g),
                    enrichment=enrichment[g], support=counts[g])
        for g in kept
    ]
    entries.sort(key=lambda e: (-e.enrichment, e.text))
    return entries


def mine_pause_phrases(
    traces: Sequence[ThinkingTrace],
    flags: FlagIndex,
    n_range: tuple[int, int] = DEFAULT_PAUSE_N_RANGE,
    min_support: int = DEFAULT_MIN_SUPPORT,
    min_enrichment: float = DEFAULT_MIN_ENRICHMENT,
) -> list[PhraseEntry]:
    """Mine n-grams enriched at presence-sensitive steps. May be empty."""
    return _mine(traces, flags, StepFlag.PRESENCE_SENSITIVE,
                 n_range, min_support, min_enrichment)


def as_template_text(phrase: str) -> str:
    """Format a mined phrase for injection: initial capital, trailing space."""
    text = phrase.strip()
    return text[:1].upper() + text[1:] + " "


def mine_lookback_templates(
    traces: Sequence[ThinkingTrace],
    flags: FlagIndex,
    n_range: tuple[int, int] = DEFAULT_TEMPLATE_N_RANGE,
    min_support: int = DEFAULT_MIN_SUPPORT,
    min_enrichment: float = DEFAULT_MIN_ENRICHMENT,
) -> list[PhraseEntry]:
    """Mine injection templates from content-grounded steps of correct traces."""
    correct = [t for t in traces if t.correct]
    if not correct:
        raise PreconditionError(
            "template mining needs at least one trace marked correct; supply "
            "labeled validation traces"
        )
    mined = _mine(correct, flags, StepFlag.CONTENT_GROUNDED,
                  n_range, min_support, min_enrichment)
    return [
        PhraseEntry(text=as_template_text(e.text), n=e.n,
                    enrichment=e.enrichment, support=e.support)
        for e in mined
    ]


def build_vocabulary(
    pause_phrases: Sequence[PhraseEntry],
    lookback_templates: Sequence[PhraseEntry],
    provenance: Optional[Mapping[str, Any]] = None,
    use_fallback_template: bool = True,
) -> PhraseVocabulary:
    """Assemble the vocabulary file contents.

    With no mined templates and the fallback enabled, a built-in template is
    supplied so injection stays possible; it carries zero support because it
    was not mined from the corpus.
    """
    templates = tuple(lookback_templates)
    prov = dict(provenance or {})
    if not templates and use_fallback_template:
        templates = (PhraseEntry(text=FALLBACK_TEMPLATE, n=len(FALLBACK_TEMPLATE.split()),
                                 enrichment=0.0, support=0),)
        prov["fallback_template"] = True
    return PhraseVocabulary(
        pause_phrases=tuple(pause_phrases),
        lookback_templates=templates,
        provenance=prov,
    )


# --- validation ------------------------------------------------------------


@dataclass(frozen=True)
class AlignmentReport:
    rate: float
    total_occurrences: int
    aligned_occurrences: int
    per_phrase: Mapping[str, tuple[int, int]]  # text -> (occurrences, aligned)
    unseen_phrases: tuple[str, ...]


def alignment_rate(
    vocab: PhraseVocabulary,
    traces: Sequence[ThinkingTrace],
    flags: FlagIndex,
) -> AlignmentReport:
    """Fraction of pause-phrase occurrence endpoints on presence-sensitive steps.

    Phrases that never occur in the corpus contribute nothing to the
    denominator; they are reported separately rather than dragging the rate.
    """
    phrases = vocab.pause_set()
    if not phrases:
        raise UndefinedRateError("vocabulary has no pause phrases or seed markers")

    occurrences: dict[str, int] = {}
    aligned: dict[str, int] = {}
    for trace in traces:
        words = segment_words(trace.token_texts())
        texts = [w for w, _ in words]
        for phrase in phrases:
            n = len(phrase)
            for start in range(len(texts) - n + 1):
                if tuple(texts[start:start + n]) != phrase:
                    continue
                text = " ".join(phrase)
                occurrences[text] = occurrences.get(text, 0) + 1
                end_step = words[start + n - 1][1]
                flag = flags.get(trace.question_id, trace.pass_index, end_step)
                if flag is StepFlag.PRESENCE_SENSITIVE:
                    aligned[text] = aligned.get(text, 0) + 1

    total = sum(occurrences.values())
    if total == 0:
        raise UndefinedRateError("no vocabulary phrase occurs in the corpus")
    hits = sum(aligned.values())
    per_phrase = {t: (occurrences[t], aligned.get(t, 0)) for t in sorted(occurrences)}
    unseen = tuple(sorted(" ".join(p) for p in phrases
                          if " ".join(p) not in occurrences))
    return AlignmentReport(
        rate=hits / total,
        total_occurrences=total,
        aligned_occurrences=hits,
        per_phrase=per_phrase,
        unseen_phrases=unseen,
    )
