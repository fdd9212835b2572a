import math

import numpy as np
import pytest

from seedline import baseline_lm as blm
from seedline.corpus import EOS, PAD, SOS, TokenizedLine, build_vocabulary, encode_line
from seedline.lstm import NonPositiveTemperature, TrainConfig

from conftest import TINY_TEXTS, corpus_from_texts


def test_untrained_perplexity_near_vocab_size():
    corpus, vocab = corpus_from_texts(TINY_TEXTS)
    model = blm.LMModel.create(blm.LMConfig(d_embed=8, d_hidden=8), vocab, seed=0)
    ppl = math.exp(model.loss(list(corpus.lines)).item())
    assert abs(ppl - vocab.size) / vocab.size < 0.10


def test_untrained_surprisal_near_log_vocab():
    corpus, vocab = corpus_from_texts(TINY_TEXTS)
    model = blm.LMModel.create(blm.LMConfig(d_embed=8, d_hidden=8), vocab, seed=0)
    s = blm.line_surprisal(model, corpus.lines[0])
    assert abs(s - math.log(vocab.size)) / math.log(vocab.size) < 0.10


def test_train_reduces_perplexity_and_is_deterministic(tmp_path):
    corpus, vocab = corpus_from_texts(TINY_TEXTS[:6])
    tc = TrainConfig(epochs=40, lr=0.3, batch_size=3, seed=4, momentum=0.9)
    model1, metrics1 = blm.train_lm(corpus, vocab, tc, blm.LMConfig(d_embed=12, d_hidden=16))
    model2, metrics2 = blm.train_lm(corpus, vocab, tc, blm.LMConfig(d_embed=12, d_hidden=16))
    assert metrics1[-1]["perplexity"] < metrics1[0]["perplexity"]
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    model1.save(str(p1))
    model2.save(str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_overfit_perplexity_twenty_lines():
    from conftest import OVERFIT_TEXTS

    corpus, vocab = corpus_from_texts(OVERFIT_TEXTS)
    tc = TrainConfig(epochs=400, lr=0.3, batch_size=10, seed=3, momentum=0.9)
    model, _ = blm.train_lm(corpus, vocab, tc, blm.LMConfig(d_embed=16, d_hidden=32))
    nll = model.loss(list(corpus.lines)).item()
    assert math.exp(nll) < 1.4


def test_empty_corpus_error():
    from seedline.corpus import Corpus

    corpus, vocab = corpus_from_texts(["a line"])
    empty = Corpus((), (), (), ())
    with pytest.raises(blm.EmptyCorpus):
        blm.train_lm(empty, vocab, TrainConfig(epochs=1))


# -- next_distribution --------------------------------------------------------


def test_next_distribution_is_probability_vector(tiny_lm, tiny_corpus):
    corpus, vocab = tiny_corpus
    for line in corpus.lines[:5]:
        probs = blm.next_distribution(tiny_lm, line.ids[:2])
        assert probs.shape == (vocab.size,)
        assert np.all(probs >= 0)
        assert abs(probs.sum() - 1.0) < 1e-12


def test_next_distribution_low_temperature_peaks(tiny_lm):
    probs = blm.next_distribution(tiny_lm, (), temperature=1e-6)
    assert probs.max() >= 1.0 - 1e-9


def test_next_distribution_high_temperature_flattens(tiny_lm):
    probs = blm.next_distribution(tiny_lm, (), temperature=1e6)
    assert probs.max() - probs.min() < 1e-6


def _entropy(probs):
    nonzero = probs[probs > 0]
    return float(-(nonzero * np.log(nonzero)).sum())


def test_next_distribution_entropy_monotone(tiny_lm, tiny_corpus):
    corpus, _ = tiny_corpus
    for line in corpus.lines[:5]:
        entropies = [_entropy(blm.next_distribution(tiny_lm, line.ids[:3], tau)) for tau in (0.5, 1.0, 2.0)]
        assert entropies[0] < entropies[1] < entropies[2]


def test_next_distribution_rejects_bad_temperature(tiny_lm):
    with pytest.raises(NonPositiveTemperature):
        blm.next_distribution(tiny_lm, (), temperature=0.0)


def test_next_distribution_rejects_bad_context(tiny_lm):
    from seedline import numerics as nm

    with pytest.raises(nm.IndexOutOfRange):
        blm.next_distribution(tiny_lm, (10_000,))


# -- generate ------------------------------------------------------------------


def test_generate_seed_determinism(tiny_lm):
    cfg = blm.SamplerConfig(temperature=1.0, max_len=15)
    a = blm.generate(tiny_lm, cfg, np.random.default_rng(7))
    b = blm.generate(tiny_lm, cfg, np.random.default_rng(7))
    assert a == b


def _greedy_rollout(model, max_len):
    """Independent greedy oracle built on next_distribution only."""
    out = []
    while len(out) < max_len:
        probs = blm.next_distribution(model, tuple(out))
        probs = probs.copy()
        probs[PAD] = 0.0
        probs[SOS] = 0.0
        token = int(np.argmax(probs))
        if token == EOS:
            break
        out.append(token)
    return tuple(out)


def test_generate_low_temperature_equals_greedy(tiny_lm):
    expected = _greedy_rollout(tiny_lm, 15)
    for seed in range(10):
        line = blm.generate(tiny_lm, blm.SamplerConfig(temperature=1e-6), np.random.default_rng(seed))
        assert line.ids == expected


def test_generate_contracts(tiny_lm):
    rng = np.random.default_rng(0)
    for _ in range(50):
        line = blm.generate(tiny_lm, blm.SamplerConfig(temperature=1.2), rng)
        assert len(line.ids) <= 15
        assert not {PAD, SOS, EOS} & set(line.ids)


def test_generate_top_k_restricts_support(tiny_lm):
    rng = np.random.default_rng(0)
    probs = blm.next_distribution(tiny_lm, ())
    top2 = set(np.argsort(probs)[-2:])
    firsts = set()
    for _ in range(50):
        line = blm.generate(tiny_lm, blm.SamplerConfig(temperature=2.0, top_k=2), rng)
        if line.ids:
            firsts.add(line.ids[0])
    assert firsts <= top2 | {EOS}


def test_sampler_config_validation():
    with pytest.raises(NonPositiveTemperature):
        blm.SamplerConfig(temperature=-1.0)


# -- surprisal -----------------------------------------------------------------


def test_single_line_overfit_surprisal():
    corpus, vocab = corpus_from_texts(["the river carries my name"] * 6)
    tc = TrainConfig(epochs=120, lr=0.3, batch_size=6, seed=1, momentum=0.9)
    model, _ = blm.train_lm(corpus, vocab, tc, blm.LMConfig(d_embed=12, d_hidden=16))
    assert blm.line_surprisal(model, corpus.lines[0]) < 0.1


def test_training_line_beats_permutation(tiny_lm, tiny_corpus):
    corpus, _ = tiny_corpus
    rng = np.random.default_rng(13)
    wins = trials = 0
    while trials < 50:
        line = corpus.lines[rng.integers(len(corpus.lines))]
        perm = list(line.ids)
        rng.shuffle(perm)
        if tuple(perm) == line.ids:
            continue
        trials += 1
        shuffled = TokenizedLine(tuple(perm), " ".join(tiny_lm.vocab.word_of(i) for i in perm))
        if blm.line_surprisal(tiny_lm, line) < blm.line_surprisal(tiny_lm, shuffled):
            wins += 1
    assert wins >= 45, f"verbatim beat permutation only {wins}/50 times"


def test_scoring_generation_consistency(tiny_lm, tiny_corpus):
    corpus, _ = tiny_corpus
    train_nll = tiny_lm.loss(list(corpus.lines)).item()
    rng = np.random.default_rng(21)
    samples = [blm.generate(tiny_lm, blm.SamplerConfig(temperature=1.0), rng) for _ in range(500)]
    surprisals = [blm.line_surprisal(tiny_lm, line) for line in samples if line.ids]
    mean_s = float(np.mean(surprisals))
    assert abs(mean_s - train_nll) / train_nll < 0.15, f"{mean_s} vs {train_nll}"


# -- persistence ---------------------------------------------------------------


def test_lm_checkpoint_round_trip(tmp_path, tiny_lm, tiny_corpus):
    _, vocab = tiny_corpus
    path = tmp_path / "lm.ckpt"
    tiny_lm.save(str(path))
    again = blm.LMModel.load(str(path), vocab)
    assert np.array_equal(blm.next_distribution(again, (4, 5)), blm.next_distribution(tiny_lm, (4, 5)))


def test_lm_checkpoint_rejects_mismatched_vocab(tmp_path, tiny_lm):
    from seedline import numerics as nm

    path = tmp_path / "lm.ckpt"
    tiny_lm.save(str(path))
    with pytest.raises(nm.CheckpointMismatch):
        blm.LMModel.load(str(path), build_vocabulary(["different words entirely"], 1))


def test_lm_checkpoint_kind_guard(tmp_path, tiny_vae, tiny_corpus):
    from seedline import numerics as nm

    _, vocab = tiny_corpus
    path = tmp_path / "vae.ckpt"
    tiny_vae.save(str(path))
    with pytest.raises(nm.CheckpointError):
        blm.LMModel.load(str(path), vocab)
