"""Score generated lines and keep the middle of the surprisal range.

Surprisal (LM mean NLL per token) measures how predictable a line is;
novelty is the fraction of a line's word n-grams absent from the reference
corpus. The band drops both extremes: rote corpus repetitions at the low
end, word salad at the high end. Everything here is a pure function over
immutable inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .baseline_lm import LMModel, line_surprisal
from .corpus import Corpus, TokenizedLine
from .lstm_vae import GeneratedLine


class MisalignedScores(ValueError):
    pass


class UnresolvedBand(ValueError):
    pass


DEFAULT_NGRAM_ORDER = 3  # trigrams: smallest unit that catches memorized phrasing


@dataclass(frozen=True)
class LineScore:
    surprisal: float  # nats/token
    novelty: float  # fraction of n-grams absent from the corpus
    in_band: bool

    def __post_init__(self):
        if not 0.0 <= self.novelty <= 1.0:
            raise ValueError(f"novelty {self.novelty} outside [0, 1]")

    @property
    def components(self) -> dict[str, float]:
        return {"surprisal": self.surprisal, "novelty": self.novelty}

    def to_dict(self) -> dict:
        return {"surprisal": self.surprisal, "novelty": self.novelty, "in_band": self.in_band}

    @classmethod
    def from_dict(cls, doc: dict) -> "LineScore":
        return cls(doc["surprisal"], doc["novelty"], doc["in_band"])


@dataclass(frozen=True)
class BandConfig:
    """Either absolute surprisal bounds or quantiles awaiting resolution."""

    band_low: float | None = None
    band_high: float | None = None
    q_low: float | None = None
    q_high: float | None = None

    def __post_init__(self):
        if self.is_quantile:
            if not (0.0 < self.q_low < self.q_high < 1.0):
                raise ValueError("quantiles must satisfy 0 < q_low < q_high < 1")
        else:
            if self.band_low is None or self.band_high is None:
                raise ValueError("band needs either both bounds or both quantiles")
            if not self.band_low < self.band_high:
                raise ValueError("band_low must be < band_high")

    @classmethod
    def absolute(cls, band_low: float, band_high: float) -> "BandConfig":
        return cls(band_low=band_low, band_high=band_high)

    @classmethod
    def quantile(cls, q_low: float = 0.25, q_high: float = 0.75) -> "BandConfig":
        return cls(q_low=q_low, q_high=q_high)

    @classmethod
    def unbounded(cls) -> "BandConfig":
        return cls(band_low=float("-inf"), band_high=float("inf"))

    @property
    def is_quantile(self) -> bool:
        return self.q_low is not None or self.q_high is not None

    def resolve(self, reference_surprisals: list[float]) -> "BandConfig":
        """Pin quantile bounds against a reference sample; absolute bands pass through."""
        if not self.is_quantile:
            return self
        if not reference_surprisals:
            raise ValueError("cannot resolve quantiles against an empty reference")
        lo = float(np.quantile(reference_surprisals, self.q_low))
        hi = float(np.quantile(reference_surprisals, self.q_high))
        if lo == hi:  # degenerate reference (e.g. collapsed model); keep the point
            hi = float(np.nextafter(lo, np.inf))
        return BandConfig(band_low=lo, band_high=hi)

    def contains(self, surprisal: float) -> bool:
        """Inclusive on both bounds."""
        if self.is_quantile:
            raise UnresolvedBand("resolve quantile band against a reference sample first")
        return self.band_low <= surprisal <= self.band_high

    def to_dict(self) -> dict:
        if self.is_quantile:
            return {"q_low": self.q_low, "q_high": self.q_high}
        return {"band_low": self.band_low, "band_high": self.band_high}

    @classmethod
    def from_dict(cls, doc: dict) -> "BandConfig":
        return cls(
            band_low=doc.get("band_low"),
            band_high=doc.get("band_high"),
            q_low=doc.get("q_low"),
            q_high=doc.get("q_high"),
        )


def _ngrams(words: tuple[str, ...], n: int) -> list[tuple[str, ...]]:
    return [words[i : i + n] for i in range(len(words) - n + 1)]


@lru_cache(maxsize=64)
def _corpus_ngrams(corpus: Corpus, n: int) -> frozenset[tuple[str, ...]]:
    grams: set[tuple[str, ...]] = set()
    for line in corpus.lines:
        grams.update(_ngrams(tuple(line.text.split()), n))
    return frozenset(grams)


def novelty(line: TokenizedLine, corpus: Corpus, n: int = DEFAULT_NGRAM_ORDER) -> float:
    """Fraction of the line's word n-grams absent from the corpus.

    Lines shorter than n are scored at their own length, so a verbatim
    short line still scores 0.0 and a fully foreign one 1.0.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    words = tuple(line.text.split())
    if not words:
        return 1.0
    eff_n = min(n, len(words))
    grams = _ngrams(words, eff_n)
    known = _corpus_ngrams(corpus, eff_n)
    hits = sum(1 for g in grams if g in known)
    return 1.0 - hits / len(grams)


def score_line(line: TokenizedLine, lm: LMModel, corpus: Corpus, band: BandConfig, n: int = DEFAULT_NGRAM_ORDER) -> LineScore:
    """Surprisal + novelty + band verdict for one line; band must be absolute."""
    s = line_surprisal(lm, line)
    nov = novelty(line, corpus, n)
    return LineScore(surprisal=s, novelty=nov, in_band=band.contains(s))


def score_pool(
    pool: list[GeneratedLine],
    lm: LMModel,
    corpus: Corpus,
    band: BandConfig,
    n: int = DEFAULT_NGRAM_ORDER,
) -> tuple[list[GeneratedLine], BandConfig]:
    """Attach scores to every line; quantile bands resolve against this pool."""
    tokenized = [TokenizedLine(line.tokens, line.text) for line in pool]
    surprisals = [line_surprisal(lm, t) for t in tokenized]
    resolved = band.resolve(surprisals) if band.is_quantile else band
    scored = []
    for line, t, s in zip(pool, tokenized, surprisals):
        score = LineScore(surprisal=s, novelty=novelty(t, corpus, n), in_band=resolved.contains(s))
        scored.append(replace(line, score=score))
    return scored, resolved


def _quantile_summary(surprisals: list[float]) -> dict[str, float]:
    if not surprisals:
        return {}
    arr = np.asarray(surprisals)
    return {
        "min": float(arr.min()),
        "q25": float(np.quantile(arr, 0.25)),
        "q50": float(np.quantile(arr, 0.50)),
        "q75": float(np.quantile(arr, 0.75)),
        "max": float(arr.max()),
    }


def band_filter(
    pool: list[GeneratedLine],
    scores: list[LineScore],
    band: BandConfig,
) -> tuple[list[GeneratedLine], dict]:
    """Keep lines whose surprisal falls inside the (absolute) band.

    Order is preserved; the report counts below/in/above and summarizes the
    score distribution. Filtering twice with the same band is a no-op.
    """
    if len(pool) != len(scores):
        raise MisalignedScores(f"{len(pool)} lines vs {len(scores)} scores")
    below = above = 0
    kept: list[GeneratedLine] = []
    for line, score in zip(pool, scores):
        if band.contains(score.surprisal):
            kept.append(line)
        elif score.surprisal < band.band_low:
            below += 1
        else:
            above += 1
    report = {
        "total": len(pool),
        "below": below,
        "in": len(kept),
        "above": above,
        "band_low": band.band_low,
        "band_high": band.band_high,
        "quantiles": _quantile_summary([s.surprisal for s in scores]),
    }
    return kept, report


def dedup(pool: list[GeneratedLine]) -> list[GeneratedLine]:
    """Drop exact-text duplicates, keeping the first occurrence."""
    seen: set[str] = set()
    out = []
    for line in pool:
        if line.text in seen:
            continue
        seen.add(line.text)
        out.append(line)
    return out


def score_report(pool: list[GeneratedLine]) -> dict:
    """JSON-ready report: {"lines": [...], "quantiles": {...}}."""
    lines = []
    for line in pool:
        record = {"text": line.text}
        if line.score is not None:
            record.update(line.score.to_dict())
        lines.append(record)
    surprisals = [line.score.surprisal for line in pool if line.score is not None]
    return {"lines": lines, "quantiles": _quantile_summary(surprisals)}
