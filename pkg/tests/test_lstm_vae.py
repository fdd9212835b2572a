import math

import numpy as np
import pytest

from seedline import lstm_vae as lv
from seedline import numerics as nm
from seedline.corpus import EOS, PAD, SOS, build_vocabulary, encode_line
from seedline.lstm import NonPositiveTemperature, TrainConfig

from conftest import TINY_TEXTS, corpus_from_texts


def micro_model(word_dropout=0.0, conditional=False, tags=()):
    texts = ["and the stars they go", "rooted in the light"]
    vocab = build_vocabulary(texts, min_count=1)
    lines = [encode_line(t, vocab) for t in texts]
    cfg = lv.VAEConfig(d_embed=8, d_hidden=8, d_z=4, word_dropout=word_dropout, conditional=conditional, tag_dim=3)
    model = lv.VAEModel.create(cfg, vocab, tag_inventory=tuple(tags), seed=1)
    return model, lines, vocab


# -- reparameterize ----------------------------------------------------------


def test_reparameterize_zero_eps_is_mu():
    mu, logvar = np.array([1.0, -2.0]), np.array([0.3, -0.7])
    sample = lv.reparameterize(mu, logvar, rng=None)
    assert np.array_equal(sample.z, mu)
    assert np.array_equal(sample.eps, np.zeros(2))


def test_reparameterize_degenerate_variance():
    mu = np.array([0.5, -0.5, 2.0])
    sample = lv.reparameterize(mu, np.full(3, -50.0), rng=np.random.default_rng(0))
    assert np.max(np.abs(np.array(sample.z) - mu)) < 1e-10


def test_reparameterize_records_eps_identity():
    rng = np.random.default_rng(3)
    sample = lv.reparameterize(np.array([1.0, 2.0]), np.array([0.5, -0.5]), rng)
    z = np.array(sample.mu) + np.exp(0.5 * np.array(sample.logvar)) * np.array(sample.eps)
    assert np.allclose(sample.z, z)


def test_reparameterize_monte_carlo_mean():
    rng = np.random.default_rng(42)
    mu = np.array([0.7, -1.2, 0.0, 2.5])
    logvar = np.zeros(4)  # sigma = 1
    draws = np.array([lv.reparameterize(mu, logvar, rng).z for _ in range(100_000)])
    assert np.max(np.abs(draws.mean(axis=0) - mu)) < 0.02


def test_reparameterize_shape_mismatch():
    with pytest.raises(nm.ShapeMismatch):
        lv.reparameterize(np.zeros(3), np.zeros(2), None)


# -- kl_divergence -----------------------------------------------------------


def test_kl_zero_at_prior():
    assert lv.kl_divergence(np.zeros(4), np.zeros(4)) == 0.0


def test_kl_analytic_half():
    assert abs(lv.kl_divergence(np.array([1.0, 0.0]), np.zeros(2)) - 0.5) < 1e-12


def test_kl_non_negative():
    rng = np.random.default_rng(0)
    for _ in range(200):
        mu = rng.normal(scale=2.0, size=5)
        logvar = rng.uniform(-3, 2, size=5)
        assert lv.kl_divergence(mu, logvar) >= 0.0


def kl_monte_carlo(mu, logvar, n, rng):
    """Independent estimate: E_q[log q(z) - log p(z)] by direct density evaluation."""
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * rng.standard_normal((n, mu.size))
    log_q = -0.5 * (((z - mu) / sigma) ** 2 + logvar + math.log(2 * math.pi)).sum(axis=1)
    log_p = -0.5 * (z**2 + math.log(2 * math.pi)).sum(axis=1)
    return float((log_q - log_p).mean())


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(7)
    for _ in range(3):
        mu = rng.uniform(0.5, 2.0, size=4) * rng.choice([-1, 1], size=4)
        logvar = rng.uniform(-1.5, 0.5, size=4)
        closed = lv.kl_divergence(mu, logvar)
        estimate = kl_monte_carlo(mu, logvar, 200_000, rng)
        assert abs(closed - estimate) / closed < 0.02


# -- encode / decode ---------------------------------------------------------


def test_encode_deterministic(tiny_vae, tiny_corpus):
    corpus, _ = tiny_corpus
    line = corpus.lines[0]
    mu1, lv1 = tiny_vae.encode(line)
    mu2, lv2 = tiny_vae.encode(line)
    assert np.array_equal(mu1, mu2) and np.array_equal(lv1, lv2)
    assert np.all(np.isfinite(mu1)) and np.all(np.isfinite(lv1))


def test_decode_greedy_deterministic(tiny_vae):
    z = np.random.default_rng(0).standard_normal(tiny_vae.d_z)
    assert tiny_vae.decode_greedy(z) == tiny_vae.decode_greedy(z)


def test_decode_zero_vector_contract(tiny_vae):
    line = tiny_vae.decode_greedy(np.zeros(tiny_vae.d_z))
    assert len(line.ids) <= tiny_vae.config.max_len
    assert not {PAD, SOS, EOS} & set(line.ids)
    assert "<" not in line.text.replace("<unk>", "")  # UNK is the only special allowed in text


def test_decode_sampled_low_temperature_equals_greedy(tiny_vae):
    rng = np.random.default_rng(5)
    for _ in range(20):
        z = rng.standard_normal(tiny_vae.d_z)
        sampled = tiny_vae.decode_sampled(z, temperature=1e-6, rng=np.random.default_rng(1))
        assert sampled == tiny_vae.decode_greedy(z)


def test_decode_sampled_seed_determinism(tiny_vae):
    z = np.random.default_rng(2).standard_normal(tiny_vae.d_z)
    a = tiny_vae.decode_sampled(z, temperature=1.0, rng=np.random.default_rng(9))
    b = tiny_vae.decode_sampled(z, temperature=1.0, rng=np.random.default_rng(9))
    assert a == b


def test_decode_sampled_rejects_bad_temperature(tiny_vae):
    with pytest.raises(NonPositiveTemperature):
        tiny_vae.decode_sampled(np.zeros(tiny_vae.d_z), temperature=0.0)


def test_first_step_entropy_monotone_in_temperature(tiny_vae):
    z = np.random.default_rng(4).standard_normal(tiny_vae.d_z)
    entropies = []
    for tau in (0.5, 1.0, 2.0):
        probs = tiny_vae.next_distribution(z, temperature=tau)
        nonzero = probs[probs > 0]
        entropies.append(float(-(nonzero * np.log(nonzero)).sum()))
    assert entropies[0] < entropies[1] < entropies[2]


# -- loss ---------------------------------------------------------------------


def test_untrained_recon_near_log_vocab():
    model, lines, vocab = micro_model()
    recon, _, _ = model.loss(lines, rng=None)
    assert abs(recon.item() - math.log(vocab.size)) / math.log(vocab.size) < 0.10


def test_loss_zero_kl_weight_reduces_to_recon():
    model, lines, _ = micro_model()
    recon, kl, objective = model.loss(lines, kl_weight=0.0, rng=np.random.default_rng(0))
    assert objective.item() == recon.item()
    assert kl.item() >= 0.0


def test_loss_empty_batch():
    model, _, _ = micro_model()
    with pytest.raises(lv.EmptyBatch):
        model.loss([])


def test_loss_gradient_check_micro():
    model, lines, _ = micro_model(word_dropout=0.3)

    def f():
        _, _, obj = model.loss(lines, kl_weight=1.0, word_dropout=0.3, rng=np.random.default_rng(42))
        return obj

    err = nm.grad_check(f, model.params, epsilon=1e-4, max_coords_per_param=10, seed=0)
    assert err < 1e-3


def test_kl_weight_schedule():
    assert lv.kl_weight_at(1, 10) == pytest.approx(0.1)
    assert lv.kl_weight_at(10, 10) == 1.0
    assert lv.kl_weight_at(25, 10) == 1.0
    assert lv.kl_weight_at(1, 0) == 1.0


# -- training -----------------------------------------------------------------


def test_train_checkpoint_determinism(tmp_path):
    corpus, vocab = corpus_from_texts(TINY_TEXTS[:6])
    cfg = lv.VAEConfig(d_embed=8, d_hidden=8, d_z=4, kl_anneal_epochs=50)
    tc = TrainConfig(epochs=5, lr=0.2, batch_size=3, seed=11, momentum=0.9)
    paths = []
    for name in ("a.ckpt", "b.ckpt"):
        model, _ = lv.train(corpus, vocab, cfg, tc)
        path = tmp_path / name
        model.save(str(path))
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_overfit_posterior_mean_reconstruction():
    texts = TINY_TEXTS[:8]
    corpus, vocab = corpus_from_texts(texts)
    cfg = lv.VAEConfig(d_embed=32, d_hidden=64, d_z=16, kl_anneal_epochs=6000, word_dropout=0.4)
    tc = TrainConfig(epochs=300, lr=0.3, batch_size=4, seed=5, momentum=0.9)
    model, _ = lv.train(corpus, vocab, cfg, tc)
    exact = sum(1 for line in corpus.lines if model.decode_greedy(model.encode(line)[0]).text == line.text)
    assert exact >= 7, f"only {exact}/8 reconstructed"
    recon_eval, _, _ = model.loss(list(corpus.lines), rng=None)
    assert recon_eval.item() < 0.3


# -- sampling -----------------------------------------------------------------


def test_sample_prior_contracts(tiny_vae):
    rng = np.random.default_rng(8)
    pool = lv.sample_prior(tiny_vae, 25, temperature=1.0, rng=rng)
    assert len(pool) == 25
    for g in pool:
        assert len(g.tokens) <= tiny_vae.config.max_len
        assert not {PAD, SOS, EOS} & set(g.tokens)
        assert g.provenance.kind == "prior"
        assert len(g.provenance.latent) == tiny_vae.d_z


def test_sample_prior_seed_reproducible(tiny_vae):
    a = lv.sample_prior(tiny_vae, 1, rng=np.random.default_rng(3))[0]
    b = lv.sample_prior(tiny_vae, 1, rng=np.random.default_rng(3))[0]
    assert a.text == b.text and a.provenance.latent == b.provenance.latent


def test_sample_prior_n_validation(tiny_vae):
    with pytest.raises(ValueError):
        lv.sample_prior(tiny_vae, 0)


def test_sample_neighborhood_zero_radius_is_seed_decode(tiny_vae):
    z0 = np.random.default_rng(1).standard_normal(tiny_vae.d_z)
    pool = lv.sample_neighborhood(tiny_vae, z0, radius=0.0, n=4, temperature=1e-6, rng=np.random.default_rng(0))
    base = tiny_vae.decode_greedy(z0).text
    assert all(g.text == base for g in pool)


def test_sample_neighborhood_provenance(tiny_vae):
    z0 = np.zeros(tiny_vae.d_z)
    pool = lv.sample_neighborhood(tiny_vae, z0, radius=0.3, n=3, rng=np.random.default_rng(0))
    for g in pool:
        assert g.provenance.kind == "neighborhood"
        assert g.provenance.radius == 0.3
        assert np.array_equal(g.provenance.parent_latent, z0)


def test_sample_neighborhood_rejects_negative_radius(tiny_vae):
    with pytest.raises(ValueError):
        lv.sample_neighborhood(tiny_vae, np.zeros(tiny_vae.d_z), radius=-0.1, n=1)


def test_interpolate_endpoints(tiny_vae):
    rng = np.random.default_rng(6)
    z1, z2 = rng.standard_normal(tiny_vae.d_z), rng.standard_normal(tiny_vae.d_z)
    out = lv.interpolate(tiny_vae, z1, z2, steps=2)
    assert out[0].text == tiny_vae.decode_greedy(z1).text
    assert out[1].text == tiny_vae.decode_greedy(z2).text


def test_interpolate_identical_endpoints(tiny_vae):
    z = np.random.default_rng(7).standard_normal(tiny_vae.d_z)
    out = lv.interpolate(tiny_vae, z, z, steps=5)
    assert len({g.text for g in out}) == 1


def _levenshtein(a: list, b: list) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def test_interpolate_adjacent_steps_no_farther_than_endpoints(tiny_vae, tiny_corpus):
    corpus, _ = tiny_corpus
    mu1, _ = tiny_vae.encode(corpus.lines[0])
    mu2, _ = tiny_vae.encode(corpus.lines[5])
    out = lv.interpolate(tiny_vae, mu1, mu2, steps=7)
    assert len(out) == 7
    words = [g.text.split() for g in out]
    adjacent = [_levenshtein(a, b) for a, b in zip(words, words[1:])]
    end_to_end = _levenshtein(words[0], words[-1])
    assert sum(adjacent) / len(adjacent) <= max(end_to_end, 1)


def test_interpolate_steps_validation(tiny_vae):
    with pytest.raises(ValueError):
        lv.interpolate(tiny_vae, np.zeros(tiny_vae.d_z), np.zeros(tiny_vae.d_z), steps=1)


# -- persistence --------------------------------------------------------------


def test_checkpoint_round_trip_behavior(tmp_path, tiny_vae, tiny_corpus):
    _, vocab = tiny_corpus
    path = tmp_path / "vae.ckpt"
    tiny_vae.save(str(path))
    again = lv.VAEModel.load(str(path), vocab)
    z = np.random.default_rng(12).standard_normal(tiny_vae.d_z)
    assert again.decode_greedy(z) == tiny_vae.decode_greedy(z)


def test_checkpoint_rejects_mismatched_vocab(tmp_path, tiny_vae):
    path = tmp_path / "vae.ckpt"
    tiny_vae.save(str(path))
    other_vocab = build_vocabulary(["completely different words"], 1)
    with pytest.raises(nm.CheckpointMismatch):
        lv.VAEModel.load(str(path), other_vocab)


# -- conditional mode ---------------------------------------------------------


def conditional_corpus():
    texts = ["the sea goes out", "the sea comes home", "a stone in the field", "a stone on the hill"]
    tags = ["sea", "sea", "earth", "earth"]
    vocab = build_vocabulary(texts, 1)
    from seedline.corpus import Corpus

    lines = tuple(encode_line(t, vocab) for t in texts)
    return Corpus(lines, tuple(tags), tuple(range(4)), ()), vocab


def test_conditional_requires_tag():
    corpus, vocab = conditional_corpus()
    cfg = lv.VAEConfig(d_embed=8, d_hidden=8, d_z=4, conditional=True, tag_dim=3)
    model = lv.VAEModel.create(cfg, vocab, corpus.tag_inventory, seed=0)
    with pytest.raises(lv.MissingTag):
        model.encode(corpus.lines[0])
    with pytest.raises(lv.UnknownTag):
        model.encode(corpus.lines[0], tag="sky")
    mu, logvar = model.encode(corpus.lines[0], tag="sea")
    assert mu.shape == (4,)


def test_conditional_train_and_sample(tmp_path):
    corpus, vocab = conditional_corpus()
    cfg = lv.VAEConfig(d_embed=8, d_hidden=12, d_z=4, conditional=True, tag_dim=3, kl_anneal_epochs=300)
    tc = TrainConfig(epochs=30, lr=0.3, batch_size=2, seed=2, momentum=0.9)
    model, _ = lv.train(corpus, vocab, cfg, tc)
    pool = lv.sample_prior(model, 3, rng=np.random.default_rng(0), tag="sea")
    assert len(pool) == 3
    with pytest.raises(lv.MissingTag):
        lv.sample_prior(model, 1, rng=np.random.default_rng(0))
    path = tmp_path / "cvae.ckpt"
    model.save(str(path))
    again = lv.VAEModel.load(str(path), vocab)
    assert again.tag_inventory == ("earth", "sea")
