from __future__ import annotations

import json
import os

import numpy as np
import pytest

from seedline import baseline_lm as blm
from seedline import lstm_vae as lv
from seedline.corpus import Corpus, Vocabulary, build_vocabulary, encode_line
from seedline.lstm import TrainConfig

TINY_TEXTS = [
    "with a shadow beside",
    "all the tears inside",
    "i turned back to the earth",
    "she walks in a better moon",
    "and i let my heart go",
    "rooted in the light",
    "when the promise in the rain",
    "and the stars they go",
    "the river carries my name",
    "a cold wind under the door",
    "my hands are full of sky",
    "the night keeps what we gave",
]


def corpus_from_texts(texts: list[str], min_count: int = 1) -> tuple[Corpus, Vocabulary]:
    vocab = build_vocabulary(texts, min_count=min_count)
    lines = tuple(encode_line(t, vocab) for t in texts)
    corpus = Corpus(lines, tuple([None] * len(lines)), tuple(range(len(lines))), ())
    return corpus, vocab


@pytest.fixture(scope="session")
def tiny_corpus() -> tuple[Corpus, Vocabulary]:
    return corpus_from_texts(TINY_TEXTS)


@pytest.fixture(scope="session")
def tiny_vae(tiny_corpus) -> lv.VAEModel:
    corpus, vocab = tiny_corpus
    cfg = lv.VAEConfig(d_embed=16, d_hidden=32, d_z=8, kl_anneal_epochs=1500, word_dropout=0.4)
    tc = TrainConfig(epochs=150, lr=0.3, batch_size=6, seed=3, momentum=0.9)
    model, _ = lv.train(corpus, vocab, cfg, tc)
    return model


@pytest.fixture(scope="session")
def tiny_lm(tiny_corpus) -> blm.LMModel:
    corpus, vocab = tiny_corpus
    cfg = blm.LMConfig(d_embed=16, d_hidden=32)
    tc = TrainConfig(epochs=400, lr=0.3, batch_size=6, seed=3, momentum=0.9)
    model, _ = blm.train_lm(corpus, vocab, tc, cfg)
    return model


# 20 distinct ten-word lines: long enough that the corpus' prefix-tree entropy
# floor (ln 20 / tokens-per-line) sits safely below the 1.4 perplexity target.
OVERFIT_TEXTS = [
    "the river carries my name through the cold winter night",
    "the moon forgets my window when the morning comes again",
    "we slept under borrowed stars at the edge of town",
    "the night train carries my letters to the silent harbor",
    "a shadow learns to walk alone down the empty street",
    "the dark water remembers the moon and the falling snow",
    "i count the hours by their shadows on the wall",
    "the garden keeps a spare key under the broken stone",
    "every road remembers the sea and the long way home",
    "my hands are full of sky and the promise of rain",
    "the light learns my name slowly through the frozen glass",
    "a candle argues with the wind in the open door",
    "the sun counts its lost children across the quiet field",
    "morning spills over the hill and into the sleeping city",
    "the rain rehearses on the roof while we dream below",
    "waves fold the shore like linen at the end of day",
    "the station clock runs backwards when i think of you",
    "a stranger waves from the far field beyond the fence",
    "the old road climbs into the clouds above the valley",
    "we walked until the names ran out along the shore",
]


@pytest.fixture(scope="session")
def tiny_checkpoints(tmp_path_factory, tiny_corpus, tiny_vae, tiny_lm) -> dict:
    """Tiny trained artifacts on disk, for CLI and service tests."""
    root = tmp_path_factory.mktemp("tiny_ckpts")
    corpus_path = root / "corpus.jsonl"
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for text in TINY_TEXTS:
            fh.write(json.dumps({"text": text}) + "\n")
    _, vocab = tiny_corpus
    vae_path = root / "vae.ckpt"
    lm_path = root / "lm.ckpt"
    vocab_path = root / "vocab.json"
    tiny_vae.save(str(vae_path))
    tiny_lm.save(str(lm_path))
    vocab_path.write_text(vocab.dump(), encoding="utf-8")
    return {
        "vae": str(vae_path),
        "lm": str(lm_path),
        "vocab": str(vocab_path),
        "corpus": str(corpus_path),
        "dir": str(root),
    }


def demo_corpus_path() -> str:
    import seedline

    return os.path.join(os.path.dirname(seedline.__file__), "data", "demo_corpus.jsonl")
