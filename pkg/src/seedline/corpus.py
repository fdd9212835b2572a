"""Curated-corpus ingestion: normalize, tokenize, split, and own the vocabulary.

Lines are short word-level sequences. The corpus file is JSONL, one record
per line: {"text": "<line>", "tag": "<optional theme>"}. Everything here is
immutable after load and safe to share across threads.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

PAD, SOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<sos>", "<eos>", "<unk>")

DEFAULT_MAX_LEN = 15
DEFAULT_MIN_COUNT = 2

# Anything that is not a word character, apostrophe, or whitespace is punctuation.
_PUNCT_RE = re.compile(r"[^\w\s']", flags=re.UNICODE)
_WS_RE = re.compile(r"\s+")


class EmptyLine(ValueError):
    pass


class TooLong(ValueError):
    pass


class MalformedRecord(ValueError):
    def __init__(self, path: str, line_number: int, reason: str):
        super().__init__(f"{path}:{line_number}: {reason}")
        self.line_number = line_number


def normalize(text: str) -> str:
    """Lowercase, strip punctuation except internal apostrophes, collapse whitespace."""
    text = text.lower().replace("’", "'").replace("_", " ")
    text = _PUNCT_RE.sub(" ", text)
    words = []
    for word in _WS_RE.split(text):
        word = word.strip("'")
        if word:
            words.append(word)
    return " ".join(words)


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional word<->id map; ids 0-3 are PAD, SOS, EOS, UNK."""

    id_to_word: tuple[str, ...]
    word_to_id: dict[str, int] = field(compare=False, repr=False)

    @classmethod
    def from_words(cls, words: list[str]) -> "Vocabulary":
        id_to_word = SPECIAL_TOKENS + tuple(words)
        return cls(id_to_word, {w: i for i, w in enumerate(id_to_word)})

    @property
    def size(self) -> int:
        return len(self.id_to_word)

    def id_of(self, word: str) -> int:
        return self.word_to_id.get(word, UNK)

    def word_of(self, idx: int) -> str:
        return self.id_to_word[idx]

    def decode(self, ids) -> str:
        return " ".join(self.id_to_word[i] for i in ids)

    def dump(self) -> str:
        """Deterministic JSON dump: {"words": [...ordered by id...]}."""
        return json.dumps({"words": list(self.id_to_word)}, ensure_ascii=False, separators=(",", ":")) + "\n"

    @classmethod
    def from_dump(cls, text: str) -> "Vocabulary":
        words = json.loads(text)["words"]
        if tuple(words[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary dump does not start with the reserved specials")
        id_to_word = tuple(words)
        return cls(id_to_word, {w: i for i, w in enumerate(id_to_word)})

    def content_hash(self) -> str:
        digest = hashlib.sha256("\n".join(self.id_to_word).encode("utf-8"))
        return digest.hexdigest()


def build_vocabulary(corpus_lines: list[str], min_count: int = DEFAULT_MIN_COUNT) -> Vocabulary:
    """Words occurring >= min_count times, by descending frequency then lexicographic."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for line in corpus_lines:
        counts.update(line.split())
    kept = [(w, c) for w, c in counts.items() if c >= min_count]
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    return Vocabulary.from_words([w for w, _ in kept])


@dataclass(frozen=True)
class TokenizedLine:
    """A normalized line as word ids; never contains PAD/SOS/EOS."""

    ids: tuple[int, ...]
    text: str

    def __len__(self) -> int:
        return len(self.ids)


def encode_line(text: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> TokenizedLine:
    """Encode an already-normalized line; OOV words become UNK.

    Raises EmptyLine for zero tokens and TooLong past max_len (no truncation).
    """
    words = text.split()
    if not words:
        raise EmptyLine("line has no tokens")
    if len(words) > max_len:
        raise TooLong(f"{len(words)} tokens > max_len={max_len}")
    return TokenizedLine(tuple(vocab.id_of(w) for w in words), text)


@dataclass(frozen=True)
class Corpus:
    lines: tuple[TokenizedLine, ...]
    tags: tuple[str | None, ...]
    train_idx: tuple[int, ...]
    val_idx: tuple[int, ...]

    @property
    def tag_inventory(self) -> tuple[str, ...]:
        return tuple(sorted({t for t in self.tags if t is not None}))

    def train_lines(self) -> list[TokenizedLine]:
        return [self.lines[i] for i in self.train_idx]

    def val_lines(self) -> list[TokenizedLine]:
        return [self.lines[i] for i in self.val_idx]


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Deterministic shuffle split; validation gets round(n * val_fraction) items."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError("val_fraction must be in [0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    val = tuple(sorted(int(i) for i in order[:n_val]))
    train = tuple(sorted(int(i) for i in order[n_val:]))
    return train, val


def load_corpus(
    path: str,
    min_count: int = DEFAULT_MIN_COUNT,
    val_fraction: float = 0.1,
    seed: int = 0,
    max_len: int = DEFAULT_MAX_LEN,
) -> tuple[Corpus, Vocabulary]:
    """Read a JSONL corpus file; returns (corpus, vocabulary).

    Lines that normalize to nothing or exceed max_len are skipped with a
    logged count. The vocabulary depends only on the retained lines and
    min_count, not on the split.
    """
    texts: list[str] = []
    tags: list[str | None] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line_number, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as err:
                raise MalformedRecord(path, line_number, f"bad JSON ({err.msg})") from err
            if not isinstance(record, dict) or not isinstance(record.get("text"), str):
                raise MalformedRecord(path, line_number, 'record must be an object with a "text" string')
            tag = record.get("tag")
            if tag is not None and not isinstance(tag, str):
                raise MalformedRecord(path, line_number, '"tag" must be a string when present')
            text = normalize(record["text"])
            n_words = len(text.split())
            if n_words == 0 or n_words > max_len:
                skipped += 1
                continue
            texts.append(text)
            tags.append(tag)
    if skipped:
        log.info("load_corpus(%s): skipped %d empty/too-long lines", path, skipped)

    vocab = build_vocabulary(texts, min_count)
    lines = tuple(encode_line(t, vocab, max_len) for t in texts)
    train, val = split_indices(len(lines), val_fraction, seed)
    return Corpus(lines, tuple(tags), train, val), vocab
