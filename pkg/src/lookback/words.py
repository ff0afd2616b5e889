"""Word segmentation shared by the phrase miner and the streaming controller.

Model tokens are whatever the inference server reports; phrases are mined and
matched over whitespace-delimited words of the detokenized text so that
vocabularies transfer across tokenizers. Both sides must therefore segment and
normalize identically, and this module is the single definition of that rule.
"""

from __future__ import annotations

import string
from typing import Iterable, Sequence

# Trailing/leading characters stripped from a word before matching. Includes
# the common unicode quote/dash variants emitted by chat models.
_STRIP_CHARS = string.punctuation + "‘’“”–—…"


def normalize_word(raw: str) -> str:
    """Casefold and strip surrounding punctuation; may return ''."""
    return raw.strip(_STRIP_CHARS).casefold()


def normalize_phrase(text: str) -> str:
    """Whitespace-normalize and case-fold a multi-word phrase."""
    return " ".join(w for w in (normalize_word(p) for p in text.split()) if w)


def segment_words(token_texts: Sequence[str]) -> list[tuple[str, int]]:
    """Split detokenized text into words, each tagged with the 1-based token
    step at which its last character lives.

    A word "ends at step s" when the token s contributes its final character;
    this is the anchor used for n-gram occurrence counting.
    """
    words: list[tuple[str, int]] = []
    current: list[str] = []
    current_end = 0
    for step, text in enumerate(token_texts, start=1):
        for ch in text:
            if ch.isspace():
                if current:
                    word = normalize_word("".join(current))
                    if word:
                        words.append((word, current_end))
                    current = []
            else:
                current.append(ch)
                current_end = step
    if current:
        word = normalize_word("".join(current))
        if word:
            words.append((word, current_end))
    return words


class WordBuffer:
    """Incremental word stream over concatenated token text.

    Used by the controller to keep a rolling suffix of recent words without
    re-segmenting the whole trace per token. The trailing fragment (a word not
    yet followed by whitespace) counts as a word: the suffix check runs the
    moment a token completes a pause phrase.
    """

    def __init__(self) -> None:
        self._complete: list[str] = []
        self._pending: str = ""

    def push(self, text: str) -> None:
        buf = self._pending + text
        parts = buf.split()
        if buf and not buf[-1].isspace() and parts:
            self._pending = parts[-1]
            parts = parts[:-1]
        else:
            self._pending = ""
        for raw in parts:
            word = normalize_word(raw)
            if word:
                self._complete.append(word)

    def suffix(self, n: int) -> tuple[str, ...]:
        """Last ``n`` normalized words, including the trailing fragment."""
        if n <= 0:
            return ()
        tail = list(self._complete)
        if self._pending:
            frag = normalize_word(self._pending)
            if frag:
                tail.append(frag)
        return tuple(tail[-n:])


def phrase_words(phrase: str) -> tuple[str, ...]:
    """Normalized word tuple of a phrase; empty words dropped."""
    return tuple(w for w in (normalize_word(p) for p in phrase.split()) if w)


def ends_with(words: Sequence[str], suffix: Iterable[str]) -> bool:
    suf = tuple(suffix)
    if not suf or len(suf) > len(words):
        return False
    return tuple(words[-len(suf):]) == suf
