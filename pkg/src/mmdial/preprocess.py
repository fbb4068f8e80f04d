"""Candidate target selection: question exclusion and stop-word-free query tokens.

Only the similarity-query side of a sentence is tokenized and stripped;
stored dialogue text is never mutated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import AbstractSet

from .corpus import Dialogue

# Tokens are maximal runs of alphanumerics; \w minus underscore keeps this
# Unicode-aware without pulling in a tokenizer dependency.
_TOKEN_RE = re.compile(r"[^\W_]+")


def is_question(text: str) -> bool:
    """A sentence counts as a question iff its trimmed text ends with '?'."""
    return text.strip().endswith("?")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def strip_stopwords(tokens: list[str], stoplist: AbstractSet[str]) -> list[str]:
    """Drop stop-list members, preserving order of the remaining tokens."""
    return [tok for tok in tokens if tok not in stoplist]


@dataclass(frozen=True)
class CandidateSentence:
    """A dialogue turn eligible for image replacement."""

    dialogue_id: str
    turn_index: int
    raw_text: str
    query_tokens: tuple[str, ...]

    @property
    def key(self) -> str:
        """Embedding/search key for this sentence."""
        return f"{self.dialogue_id}#{self.turn_index}"


def extract_candidates(dialogue: Dialogue, stoplist: AbstractSet[str]) -> list[CandidateSentence]:
    """Pick the turns of ``dialogue`` that may be replaced by an image.

    Excluded: the first turn (an instance needs at least one preceding
    context turn), questions (they cannot be inferred back from an image),
    and turns whose query tokens are empty after stop-word removal.
    """
    candidates: list[CandidateSentence] = []
    for index, turn in enumerate(dialogue.turns):
        if index == 0:
            continue
        if is_question(turn.text):
            continue
        query = strip_stopwords(tokenize(turn.text), stoplist)
        if not query:
            continue
        candidates.append(
            CandidateSentence(dialogue.dialogue_id, index, turn.text, tuple(query))
        )
    return candidates
