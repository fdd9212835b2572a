"""Word-level LSTM-VAE over short lines.

The encoder compresses a line into a Gaussian posterior (mu, logvar) over a
latent vector z; the decoder reconstructs token-by-token from z. After
training, new lines come from decoding points sampled in latent space:
from the prior, from a neighborhood around a seed point, or along an
interpolation path between two points.

The latent reaches the decoder twice (projected into its initial state, and
concatenated onto every input embedding) so that nearby latent points decode
to related lines. Posterior collapse is held off by linear KL annealing plus
decoder word dropout.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import numerics as nm
from .corpus import EOS, PAD, SOS, UNK, Corpus, TokenizedLine, Vocabulary
from .lstm import LSTMCell, NonPositiveTemperature, TrainConfig, argmax_token, iter_batches, pad_batch, sample_from_logits


class EmptyBatch(ValueError):
    pass


class MissingTag(ValueError):
    pass


class UnknownTag(ValueError):
    pass


@dataclass(frozen=True)
class VAEConfig:
    d_embed: int = 64
    d_hidden: int = 128
    d_z: int = 32
    kl_anneal_epochs: int = 10
    word_dropout: float = 0.4
    max_len: int = 15
    conditional: bool = False
    tag_dim: int = 8

    def __post_init__(self):
        if min(self.d_embed, self.d_hidden, self.d_z, self.max_len, self.tag_dim) < 1:
            raise ValueError("all dimensions must be >= 1")
        if not 0.0 <= self.word_dropout < 1.0:
            raise ValueError("word_dropout must be in [0, 1)")


@dataclass(frozen=True)
class LatentSample:
    """A realized draw from a posterior: z = mu + exp(0.5 * logvar) * eps."""

    mu: tuple[float, ...]
    logvar: tuple[float, ...]
    z: tuple[float, ...]
    eps: tuple[float, ...]

    def __post_init__(self):
        if not len(self.mu) == len(self.logvar) == len(self.z) == len(self.eps):
            raise ValueError("mu, logvar, z, eps must share one dimension")


def reparameterize(mu: np.ndarray, logvar: np.ndarray, rng: np.random.Generator | None, eps: np.ndarray | None = None) -> LatentSample:
    """Differentiable-sampling identity, applied at the numpy level."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise nm.ShapeMismatch(f"mu {mu.shape} vs logvar {logvar.shape}")
    if eps is None:
        eps = rng.standard_normal(mu.shape) if rng is not None else np.zeros_like(mu)
    z = mu + np.exp(0.5 * logvar) * eps
    return LatentSample(tuple(mu), tuple(logvar), tuple(z), tuple(eps))


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> float:
    """Closed-form KL(N(mu, diag exp(logvar)) || N(0, I)); always >= 0."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise nm.ShapeMismatch(f"mu {mu.shape} vs logvar {logvar.shape}")
    return float(0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar))


@dataclass(frozen=True)
class Provenance:
    """How a generated line came to be; kind decides which fields are set."""

    kind: str  # "prior" | "neighborhood" | "interpolation"
    latent: tuple[float, ...]
    temperature: float | None = None
    radius: float | None = None
    parent_latent: tuple[float, ...] | None = None
    parent_id: int | None = None
    other_parent_id: int | None = None
    t: float | None = None

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "latent": list(self.latent)}
        for key in ("temperature", "radius", "parent_id", "other_parent_id", "t"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        if self.parent_latent is not None:
            out["parent_latent"] = list(self.parent_latent)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "Provenance":
        return cls(
            kind=doc["kind"],
            latent=tuple(doc["latent"]),
            temperature=doc.get("temperature"),
            radius=doc.get("radius"),
            parent_latent=tuple(doc["parent_latent"]) if doc.get("parent_latent") is not None else None,
            parent_id=doc.get("parent_id"),
            other_parent_id=doc.get("other_parent_id"),
            t=doc.get("t"),
        )


@dataclass
class GeneratedLine:
    text: str
    tokens: tuple[int, ...]
    provenance: Provenance
    id: int | None = None
    score: "LineScore | None" = None  # attached by wundt_filter / pool layer

    def with_parents(self, parent_id: int | None, other_parent_id: int | None = None) -> "GeneratedLine":
        prov = replace(self.provenance, parent_id=parent_id, other_parent_id=other_parent_id)
        return replace(self, provenance=prov)


class VAEModel:
    """Parameter bundle plus the forward passes that use it."""

    def __init__(self, config: VAEConfig, vocab: Vocabulary, params: dict[str, nm.Tensor], tag_inventory: tuple[str, ...] = ()):
        self.config = config
        self.vocab = vocab
        self.params = params
        self.tag_inventory = tag_inventory
        self._tag_ids = {tag: i for i, tag in enumerate(tag_inventory)}
        self.encoder = LSTMCell.bind(params, "enc", config.d_hidden)
        self.decoder = LSTMCell.bind(params, "dec", config.d_hidden)
        self._check_shapes()

    # -- construction ---------------------------------------------------

    @classmethod
    def create(cls, config: VAEConfig, vocab: Vocabulary, tag_inventory: tuple[str, ...] = (), seed: int = 0) -> "VAEModel":
        if config.conditional and not tag_inventory:
            raise MissingTag("conditional model requires a non-empty tag inventory")
        rng = np.random.default_rng([seed, 0])
        p: dict[str, nm.Tensor] = {}
        d_in_enc = config.d_embed + (config.tag_dim if config.conditional else 0)
        d_z_eff = config.d_z + (config.tag_dim if config.conditional else 0)
        p["embed"] = nm.parameter((vocab.size, config.d_embed), rng)
        LSTMCell.create(p, "enc", d_in_enc, config.d_hidden, rng)
        p["mu.w"] = nm.parameter((config.d_hidden, config.d_z), rng)
        p["mu.b"] = nm.Tensor(np.zeros(config.d_z), requires_grad=True)
        p["logvar.w"] = nm.parameter((config.d_hidden, config.d_z), rng)
        p["logvar.b"] = nm.Tensor(np.zeros(config.d_z), requires_grad=True)
        p["z2init.w"] = nm.parameter((d_z_eff, 2 * config.d_hidden), rng)
        p["z2init.b"] = nm.Tensor(np.zeros(2 * config.d_hidden), requires_grad=True)
        LSTMCell.create(p, "dec", config.d_embed + d_z_eff, config.d_hidden, rng)
        p["out.w"] = nm.parameter((config.d_hidden, vocab.size), rng)
        p["out.b"] = nm.Tensor(np.zeros(vocab.size), requires_grad=True)
        if config.conditional:
            p["tag_embed"] = nm.parameter((len(tag_inventory), config.tag_dim), rng)
        return cls(config, vocab, p, tag_inventory)

    def _check_shapes(self) -> None:
        cfg = self.config
        d_z_eff = cfg.d_z + (cfg.tag_dim if cfg.conditional else 0)
        expected = {
            "embed": (self.vocab.size, cfg.d_embed),
            "mu.w": (cfg.d_hidden, cfg.d_z),
            "logvar.w": (cfg.d_hidden, cfg.d_z),
            "z2init.w": (d_z_eff, 2 * cfg.d_hidden),
            "out.w": (cfg.d_hidden, self.vocab.size),
        }
        if cfg.conditional:
            expected["tag_embed"] = (len(self.tag_inventory), cfg.tag_dim)
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise nm.CheckpointMismatch(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    @property
    def d_z(self) -> int:
        return self.config.d_z

    # -- tag handling ---------------------------------------------------

    def _tag_index(self, tag: str | None) -> int | None:
        if not self.config.conditional:
            return None
        if tag is None:
            raise MissingTag("conditional model requires a tag")
        if tag not in self._tag_ids:
            raise UnknownTag(f"tag {tag!r} not in {self.tag_inventory}")
        return self._tag_ids[tag]

    def _tag_rows(self, tags: list[str] | None, batch: int) -> nm.Tensor | None:
        if not self.config.conditional:
            return None
        if tags is None:
            raise MissingTag("conditional model requires tags for every line")
        idx = np.array([self._tag_index(t) for t in tags], dtype=np.int64)
        if idx.shape != (batch,):
            raise nm.ShapeMismatch("one tag per line required")
        return nm.embedding(self.params["tag_embed"], idx)

    # -- encoding -------------------------------------------------------

    def _encode_tensors(self, ids: np.ndarray, lengths: np.ndarray, tag_rows: nm.Tensor | None) -> tuple[nm.Tensor, nm.Tensor]:
        batch, steps = ids.shape
        h, c = self.encoder.zero_state(batch)
        for t in range(steps):
            x = nm.embedding(self.params["embed"], ids[:, t])
            if tag_rows is not None:
                x = nm.concat([x, tag_rows], axis=1)
            h_next, c_next = self.encoder.step(x, h, c)
            alive = nm.constant((lengths > t).astype(np.float64)[:, None])
            gone = nm.constant((lengths <= t).astype(np.float64)[:, None])
            h = alive * h_next + gone * h
            c = alive * c_next + gone * c
        mu = nm.matmul(h, self.params["mu.w"]) + self.params["mu.b"]
        logvar = nm.matmul(h, self.params["logvar.w"]) + self.params["logvar.b"]
        return mu, logvar

    def encode(self, line: TokenizedLine, tag: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Posterior parameters (mu, logvar) of a single line; deterministic."""
        if len(line) > self.config.max_len:
            raise ValueError(f"line has {len(line)} tokens > max_len={self.config.max_len}")
        tag_rows = self._tag_rows([tag], 1) if self.config.conditional else None
        ids, lengths = pad_batch([line])
        mu, logvar = self._encode_tensors(ids, lengths, tag_rows)
        return mu.data[0].copy(), logvar.data[0].copy()

    # -- decoding -------------------------------------------------------

    def _z_effective(self, z: np.ndarray, tag: str | None) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.shape != (self.config.d_z,):
            raise nm.ShapeMismatch(f"z has shape {z.shape}, expected ({self.config.d_z},)")
        if self.config.conditional:
            idx = self._tag_index(tag)
            return np.concatenate([z, self.params["tag_embed"].data[idx]])
        return z

    def _decoder_start(self, z_eff: np.ndarray) -> tuple[nm.Tensor, nm.Tensor, nm.Tensor]:
        z_row = nm.constant(z_eff[None, :])
        hc = nm.matmul(z_row, self.params["z2init.w"]) + self.params["z2init.b"]
        d = self.config.d_hidden
        return z_row, nm.slice_cols(hc, 0, d), nm.slice_cols(hc, d, 2 * d)

    def _decoder_step(self, z_row: nm.Tensor, h: nm.Tensor, c: nm.Tensor, token: int):
        x = nm.concat([nm.embedding(self.params["embed"], np.array([token])), z_row], axis=1)
        h, c = self.decoder.step(x, h, c)
        logits = (nm.matmul(h, self.params["out.w"]) + self.params["out.b"]).data[0]
        return logits, h, c

    def _decode_ids(self, z_eff: np.ndarray, max_len: int, pick) -> list[int]:
        z_row, h, c = self._decoder_start(z_eff)
        prev = SOS
        out: list[int] = []
        for _ in range(max_len):
            logits, h, c = self._decoder_step(z_row, h, c, prev)
            token = pick(logits)
            if token == EOS:
                break
            out.append(token)
            prev = token
        return out

    def next_distribution(
        self, z: np.ndarray, prefix: tuple[int, ...] = (), temperature: float = 1.0, tag: str | None = None
    ) -> np.ndarray:
        """Decoder's next-token distribution after emitting `prefix` from `z`.

        PAD and SOS are masked out, exactly as sampling sees it.
        """
        if temperature <= 0:
            raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
        z_row, h, c = self._decoder_start(self._z_effective(z, tag))
        logits, h, c = self._decoder_step(z_row, h, c, SOS)
        for token in prefix:
            logits, h, c = self._decoder_step(z_row, h, c, int(token))
        masked = logits.copy()
        masked[PAD] = -np.inf
        masked[SOS] = -np.inf
        masked = masked / temperature
        masked -= masked.max()
        probs = np.exp(masked)
        return probs / probs.sum()

    def _to_line(self, ids: list[int]) -> TokenizedLine:
        return TokenizedLine(tuple(ids), self.vocab.decode(ids))

    def decode_greedy(self, z: np.ndarray, tag: str | None = None, max_len: int | None = None) -> TokenizedLine:
        """Argmax decoding from SOS; stops at EOS or max_len. Deterministic in z."""
        max_len = self.config.max_len if max_len is None else max_len
        z_eff = self._z_effective(z, tag)
        ids = self._decode_ids(z_eff, max_len, lambda logits: argmax_token(logits, forbidden=(PAD, SOS)))
        return self._to_line(ids)

    def decode_sampled(
        self,
        z: np.ndarray,
        tag: str | None = None,
        temperature: float = 1.0,
        rng: np.random.Generator | None = None,
        max_len: int | None = None,
    ) -> TokenizedLine:
        """Ancestral sampling at softmax(logits / temperature) each step."""
        if temperature <= 0:
            raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
        max_len = self.config.max_len if max_len is None else max_len
        rng = rng if rng is not None else np.random.default_rng()
        z_eff = self._z_effective(z, tag)
        ids = self._decode_ids(
            z_eff, max_len, lambda logits: sample_from_logits(logits, temperature, rng, forbidden=(PAD, SOS))
        )
        return self._to_line(ids)

    # -- training objective ----------------------------------------------

    def loss(
        self,
        batch: list[TokenizedLine],
        kl_weight: float = 1.0,
        word_dropout: float = 0.0,
        rng: np.random.Generator | None = None,
        tags: list[str] | None = None,
    ) -> tuple[nm.Tensor, nm.Tensor, nm.Tensor]:
        """Teacher-forced reconstruction and KL terms for one batch.

        Returns (recon, kl, objective) where objective = recon + kl_weight * kl.
        recon is the mean NLL per unmasked target token; kl is the mean
        per-line KL against the standard normal prior. With rng=None the
        pass is deterministic: eps = 0 (z = mu) and no word dropout.
        """
        if not batch:
            raise EmptyBatch("loss requires at least one line")
        ids, lengths = pad_batch(batch)
        batch_size, max_t = ids.shape
        tag_rows = self._tag_rows(tags, batch_size)

        mu, logvar = self._encode_tensors(ids, lengths, tag_rows)

        if rng is not None:
            eps = rng.standard_normal((batch_size, self.config.d_z))
        else:
            eps = np.zeros((batch_size, self.config.d_z))
        std = nm.exp(nm.scale(logvar, 0.5))
        z = mu + std * nm.constant(eps)
        z_eff = nm.concat([z, tag_rows], axis=1) if tag_rows is not None else z

        # Teacher-forced decoder inputs: SOS then the line, with word dropout.
        inputs = np.full((batch_size, max_t + 1), PAD, dtype=np.int64)
        inputs[:, 0] = SOS
        inputs[:, 1:] = ids
        if rng is not None and word_dropout > 0.0:
            drop = (rng.random((batch_size, max_t)) < word_dropout) & (ids != PAD)
            inputs[:, 1:][drop] = UNK
        targets = np.full((batch_size, max_t + 1), PAD, dtype=np.int64)
        targets[:, :max_t] = ids
        targets[np.arange(batch_size), lengths] = EOS
        mask = targets != PAD

        hc = nm.matmul(z_eff, self.params["z2init.w"]) + self.params["z2init.b"]
        d = self.config.d_hidden
        h = nm.slice_cols(hc, 0, d)
        c = nm.slice_cols(hc, d, 2 * d)
        step_logits: list[nm.Tensor] = []
        for t in range(max_t + 1):
            x = nm.concat([nm.embedding(self.params["embed"], inputs[:, t]), z_eff], axis=1)
            h, c = self.decoder.step(x, h, c)
            step_logits.append(nm.matmul(h, self.params["out.w"]) + self.params["out.b"])
        logits = nm.concat(step_logits, axis=0)  # step-major (B*(T+1), V)
        recon = nm.cross_entropy(logits, targets.T.reshape(-1), mask.T.reshape(-1))

        ex = nm.exp(logvar)
        inner = nm.add_scalar(ex + mu * mu, -1.0) - logvar
        kl = nm.scale(nm.tensor_sum(inner), 0.5 / batch_size)
        objective = recon + kl_weight * kl
        return recon, kl, objective

    # -- persistence ------------------------------------------------------

    def sidecar(self) -> dict:
        return {
            "config": asdict(self.config),
            "vocab_hash": self.vocab.content_hash(),
            "tag_inventory": list(self.tag_inventory),
        }

    def save(self, path: str) -> None:
        """Checkpoint at `path`, plus the `path`.json sidecar guarding vocab identity."""
        nm.save_checkpoint(path, "vae", self.params, meta=self.sidecar())
        nm.atomic_write_text(path + ".json", json.dumps(self.sidecar(), sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str, vocab: Vocabulary) -> "VAEModel":
        _, arrays, meta = nm.load_checkpoint(path, expect_kind="vae")
        try:
            with open(path + ".json", encoding="utf-8") as fh:
                sidecar = json.load(fh)
        except FileNotFoundError:
            sidecar = meta  # sidecar lost; checkpoint meta carries the same fields
        if sidecar.get("vocab_hash") != vocab.content_hash():
            raise nm.CheckpointMismatch(f"{path} was trained against a different vocabulary")
        config = VAEConfig(**sidecar["config"])
        params = {name: nm.Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
        return cls(config, vocab, params, tuple(sidecar.get("tag_inventory", ())))


def kl_weight_at(epoch: int, kl_anneal_epochs: int) -> float:
    """Linear 0 -> 1 schedule over the first kl_anneal_epochs epochs (1-based)."""
    if kl_anneal_epochs <= 0:
        return 1.0
    return min(1.0, epoch / kl_anneal_epochs)


def train(
    corpus: Corpus,
    vocab: Vocabulary,
    config: VAEConfig,
    train_cfg: TrainConfig,
    on_epoch=None,
) -> tuple[VAEModel, list[dict]]:
    """Train a VAE on the corpus train split; returns (model, per-epoch metrics)."""
    train_lines = corpus.train_lines()
    if not train_lines:
        raise EmptyBatch("corpus has no training lines")
    tags_all = [corpus.tags[i] for i in corpus.train_idx]
    if config.conditional and any(t is None for t in tags_all):
        raise MissingTag("conditional training requires a tag on every line")

    model = VAEModel.create(config, vocab, corpus.tag_inventory if config.conditional else (), seed=train_cfg.seed)
    opt = nm.SGD(model.params, lr=train_cfg.lr, momentum=train_cfg.momentum, clip_norm=train_cfg.clip_norm)
    rng = np.random.default_rng([train_cfg.seed, 1])

    val_lines = corpus.val_lines()
    val_tags = [corpus.tags[i] for i in corpus.val_idx] if config.conditional else None

    metrics: list[dict] = []
    for epoch in range(1, train_cfg.epochs + 1):
        weight = kl_weight_at(epoch, config.kl_anneal_epochs)
        total_nll = total_tokens = total_kl = 0.0
        for batch_idx in iter_batches(len(train_lines), train_cfg.batch_size, rng):
            batch = [train_lines[i] for i in batch_idx]
            batch_tags = [tags_all[i] for i in batch_idx] if config.conditional else None
            recon, kl, objective = model.loss(batch, weight, config.word_dropout, rng, batch_tags)
            opt.zero_grad()
            nm.backward(objective)
            opt.step()
            n_tok = sum(len(line) + 1 for line in batch)
            total_nll += recon.item() * n_tok
            total_tokens += n_tok
            total_kl += kl.item() * len(batch)
        nm.assert_finite(model.params["embed"], "embed after epoch")
        record = {
            "epoch": epoch,
            "kl_weight": weight,
            "recon": total_nll / total_tokens,
            "kl": total_kl / len(train_lines),
        }
        if val_lines:
            recon_v, kl_v, _ = model.loss(val_lines, weight, 0.0, None, val_tags)
            record["val_recon"] = recon_v.item()
            record["val_kl"] = kl_v.item()
        metrics.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return model, metrics


def sample_prior(
    model: VAEModel,
    n: int,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
    tag: str | None = None,
) -> list[GeneratedLine]:
    """Decode n draws from the standard-normal prior; duplicates allowed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    out = []
    for _ in range(n):
        z = rng.standard_normal(model.d_z)
        line = model.decode_sampled(z, tag, temperature, rng)
        out.append(GeneratedLine(line.text, line.ids, Provenance("prior", tuple(z), temperature=temperature)))
    return out


def sample_neighborhood(
    model: VAEModel,
    z0: np.ndarray,
    radius: float,
    n: int,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
    tag: str | None = None,
) -> list[GeneratedLine]:
    """Decode n points at z0 + radius * eps; nearby points share traits with z0."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    z0 = np.asarray(z0, dtype=np.float64).reshape(-1)
    out = []
    for _ in range(n):
        z = z0 + radius * rng.standard_normal(z0.shape)
        line = model.decode_sampled(z, tag, temperature, rng)
        prov = Provenance("neighborhood", tuple(z), temperature=temperature, radius=radius, parent_latent=tuple(z0))
        out.append(GeneratedLine(line.text, line.ids, prov))
    return out


def interpolate(model: VAEModel, z1: np.ndarray, z2: np.ndarray, steps: int, tag: str | None = None) -> list[GeneratedLine]:
    """Greedy decodes along the straight line from z1 to z2, endpoints included."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    z1 = np.asarray(z1, dtype=np.float64).reshape(-1)
    z2 = np.asarray(z2, dtype=np.float64).reshape(-1)
    if z1.shape != z2.shape:
        raise nm.ShapeMismatch(f"z1 {z1.shape} vs z2 {z2.shape}")
    out = []
    for k in range(steps):
        t = k / (steps - 1)
        z = (1.0 - t) * z1 + t * z2
        line = model.decode_greedy(z, tag)
        out.append(GeneratedLine(line.text, line.ids, Provenance("interpolation", tuple(z), t=t)))
    return out
