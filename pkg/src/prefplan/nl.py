"""Natural-language nudges: short instructions -> attribute edits.

An instruction is matched against a small phrase corpus by cosine
similarity of hashed lexical features (tokens plus character trigrams),
and the matched intent moves the corresponding target halfway toward its
extreme: increase v -> (v+1)/2, decrease v -> v/2. Deliberately
dependency-free; the corpus carries several phrasings per intent to make
up for the embedding's lexical nature.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EMBED_DIM = 512
SIMILARITY_THRESHOLD = 0.2

INCREASE = "increase"
DECREASE = "decrease"


class NlError(ValueError):
    pass


_PUNCT = re.compile(r"[^a-z0-9\s]+")
_WS = re.compile(r"\s+")


def _normalize(text: str) -> str:
    return _WS.sub(" ", _PUNCT.sub("", text.lower())).strip()


def embed(text: str) -> np.ndarray:
    """Unit-norm hashed count vector over tokens and character trigrams."""
    norm = _normalize(text)
    if not norm:
        raise NlError(f"no usable tokens in instruction {text!r}")
    counts = np.zeros(EMBED_DIM, dtype=np.float32)
    for token in norm.split(" "):
        counts[zlib.crc32(token.encode()) % EMBED_DIM] += 1.0
    for i in range(len(norm) - 2):
        counts[zlib.crc32(norm[i:i + 3].encode()) % EMBED_DIM] += 1.0
    return counts / np.linalg.norm(counts)


@dataclass(frozen=True)
class CorpusEntry:
    text: str
    attr: str
    direction: str
    embedding: np.ndarray

    @classmethod
    def make(cls, text: str, attr: str, direction: str) -> "CorpusEntry":
        if direction not in (INCREASE, DECREASE):
            raise NlError(f"direction must be increase/decrease, got {direction!r}")
        return cls(text=text, attr=attr, direction=direction, embedding=embed(text))


@dataclass(frozen=True)
class MatchResult:
    attr: str | None         # None when nothing clears the threshold
    direction: str | None
    similarity: float
    matched_text: str | None

    @property
    def has_intent(self) -> bool:
        return self.attr is not None


def match(instruction: str, corpus: list[CorpusEntry],
          threshold: float = SIMILARITY_THRESHOLD) -> MatchResult:
    """Best-cosine corpus entry; earliest entry wins ties; below threshold -> no intent."""
    if not corpus:
        raise NlError("corpus is empty")
    query = embed(instruction)
    sims = np.array([float(query @ e.embedding) for e in corpus])
    best = int(np.argmax(sims))
    if sims[best] < threshold:
        return MatchResult(None, None, float(sims[best]), None)
    e = corpus[best]
    return MatchResult(e.attr, e.direction, float(sims[best]), e.text)


def apply(direction: str, v: float) -> float:
    """Halfway toward 1 for increase, halfway toward 0 for decrease."""
    if not 0.0 <= v <= 1.0:
        raise NlError(f"strength must lie in [0, 1], got {v}")
    if direction == INCREASE:
        return (v + 1.0) / 2.0
    if direction == DECREASE:
        return v / 2.0
    raise NlError(f"unknown direction {direction!r}")


def apply_to_query(v_targ: np.ndarray, mask: np.ndarray, attr_index: int,
                   direction: str) -> tuple[np.ndarray, np.ndarray]:
    """Edit one attribute and mark it as interesting (mask bit -> 1)."""
    v = v_targ.copy()
    m = mask.copy()
    v[attr_index] = apply(direction, float(v[attr_index]))
    m[attr_index] = 1.0
    return v, m


def load_corpus(path: str | Path) -> list[CorpusEntry]:
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "v" in obj and "kind" in obj:  # header line
                continue
            entries.append(CorpusEntry.make(obj["text"], obj["attr"], obj["dir"]))
    if not entries:
        raise NlError(f"{path}: corpus has no entries")
    return entries


def save_corpus(path: str | Path, entries: list[CorpusEntry]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"v": 1, "kind": "nl_corpus"}) + "\n")
        for e in entries:
            f.write(json.dumps({"text": e.text, "attr": e.attr, "dir": e.direction}) + "\n")


def default_corpus() -> list[CorpusEntry]:
    return load_corpus(Path(__file__).parent / "assets" / "corpus.jsonl")
