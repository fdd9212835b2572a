"""Small autoregressive LSTM language model.

Trained to predict the next word given the prefix; generation is ancestral
sampling token by token. The same model doubles as the scorer behind the
band filter: `line_surprisal` is the mean per-token negative log-likelihood
at temperature 1, a measure of how predictable a line is.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nm
from .corpus import EOS, PAD, SOS, Corpus, TokenizedLine, Vocabulary
from .lstm import LSTMCell, NonPositiveTemperature, TrainConfig, iter_batches, pad_batch, sample_from_logits


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class LMConfig:
    d_embed: int = 64
    d_hidden: int = 128
    max_len: int = 15

    def __post_init__(self):
        if min(self.d_embed, self.d_hidden, self.max_len) < 1:
            raise ValueError("all dimensions must be >= 1")


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 1.0
    max_len: int = 15
    seed: int | None = None
    top_k: int = 0  # 0 disables truncation; on only for demonstration

    def __post_init__(self):
        if self.temperature <= 0:
            raise NonPositiveTemperature(f"temperature must be > 0, got {self.temperature}")


class LMModel:
    def __init__(self, config: LMConfig, vocab: Vocabulary, params: dict[str, nm.Tensor]):
        self.config = config
        self.vocab = vocab
        self.params = params
        self.cell = LSTMCell.bind(params, "rnn", config.d_hidden)
        if params["embed"].shape != (vocab.size, config.d_embed) or params["out.w"].shape != (config.d_hidden, vocab.size):
            raise nm.CheckpointMismatch("parameter shapes inconsistent with vocabulary size")

    @classmethod
    def create(cls, config: LMConfig, vocab: Vocabulary, seed: int = 0) -> "LMModel":
        rng = np.random.default_rng([seed, 0])
        p: dict[str, nm.Tensor] = {}
        p["embed"] = nm.parameter((vocab.size, config.d_embed), rng)
        LSTMCell.create(p, "rnn", config.d_embed, config.d_hidden, rng)
        p["out.w"] = nm.parameter((config.d_hidden, vocab.size), rng)
        p["out.b"] = nm.Tensor(np.zeros(vocab.size), requires_grad=True)
        return cls(config, vocab, p)

    def loss(self, batch: list[TokenizedLine]) -> nm.Tensor:
        """Mean next-token NLL over SOS-prefixed, EOS-suffixed lines."""
        if not batch:
            raise EmptyCorpus("loss requires at least one line")
        ids, lengths = pad_batch(batch)
        batch_size, max_t = ids.shape
        inputs = np.full((batch_size, max_t + 1), PAD, dtype=np.int64)
        inputs[:, 0] = SOS
        inputs[:, 1:] = ids
        targets = np.full((batch_size, max_t + 1), PAD, dtype=np.int64)
        targets[:, :max_t] = ids
        targets[np.arange(batch_size), lengths] = EOS
        mask = targets != PAD

        h, c = self.cell.zero_state(batch_size)
        step_logits: list[nm.Tensor] = []
        for t in range(max_t + 1):
            x = nm.embedding(self.params["embed"], inputs[:, t])
            h, c = self.cell.step(x, h, c)
            step_logits.append(nm.matmul(h, self.params["out.w"]) + self.params["out.b"])
        logits = nm.concat(step_logits, axis=0)
        return nm.cross_entropy(logits, targets.T.reshape(-1), mask.T.reshape(-1))

    def _step_logits(self, token: int, h: nm.Tensor, c: nm.Tensor) -> tuple[np.ndarray, nm.Tensor, nm.Tensor]:
        x = nm.embedding(self.params["embed"], np.array([token]))
        h, c = self.cell.step(x, h, c)
        logits = (nm.matmul(h, self.params["out.w"]) + self.params["out.b"]).data[0]
        return logits, h, c

    def next_logits(self, context: list[int] | tuple[int, ...]) -> np.ndarray:
        """Raw next-token logits after reading SOS followed by the context ids."""
        h, c = self.cell.zero_state(1)
        logits, h, c = self._step_logits(SOS, h, c)
        for token in context:
            if not 0 <= token < self.vocab.size:
                raise nm.IndexOutOfRange(f"context id {token} outside [0, {self.vocab.size})")
            logits, h, c = self._step_logits(int(token), h, c)
        return logits

    def save(self, path: str) -> None:
        sidecar = {"config": asdict(self.config), "vocab_hash": self.vocab.content_hash()}
        nm.save_checkpoint(path, "lm", self.params, meta=sidecar)
        nm.atomic_write_text(path + ".json", json.dumps(sidecar, sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str, vocab: Vocabulary) -> "LMModel":
        _, arrays, meta = nm.load_checkpoint(path, expect_kind="lm")
        try:
            with open(path + ".json", encoding="utf-8") as fh:
                sidecar = json.load(fh)
        except FileNotFoundError:
            sidecar = meta
        if sidecar.get("vocab_hash") != vocab.content_hash():
            raise nm.CheckpointMismatch(f"{path} was trained against a different vocabulary")
        config = LMConfig(**sidecar["config"])
        params = {name: nm.Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
        return cls(config, vocab, params)


def train_lm(
    corpus: Corpus,
    vocab: Vocabulary,
    train_cfg: TrainConfig,
    config: LMConfig = LMConfig(),
    on_epoch=None,
) -> tuple[LMModel, list[dict]]:
    """Minimize next-token cross-entropy; returns (model, per-epoch metrics)."""
    train_lines = corpus.train_lines()
    if not train_lines:
        raise EmptyCorpus("corpus has no training lines")
    model = LMModel.create(config, vocab, seed=train_cfg.seed)
    opt = nm.SGD(model.params, lr=train_cfg.lr, momentum=train_cfg.momentum, clip_norm=train_cfg.clip_norm)
    rng = np.random.default_rng([train_cfg.seed, 1])
    val_lines = corpus.val_lines()

    metrics: list[dict] = []
    for epoch in range(1, train_cfg.epochs + 1):
        total_nll = total_tokens = 0.0
        for batch_idx in iter_batches(len(train_lines), train_cfg.batch_size, rng):
            batch = [train_lines[i] for i in batch_idx]
            nll = model.loss(batch)
            opt.zero_grad()
            nm.backward(nll)
            opt.step()
            n_tok = sum(len(line) + 1 for line in batch)
            total_nll += nll.item() * n_tok
            total_tokens += n_tok
        record = {"epoch": epoch, "nll": total_nll / total_tokens, "perplexity": float(np.exp(total_nll / total_tokens))}
        if val_lines:
            record["val_nll"] = model.loss(val_lines).item()
            record["val_perplexity"] = float(np.exp(record["val_nll"]))
        metrics.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return model, metrics


def next_distribution(model: LMModel, context: list[int] | tuple[int, ...], temperature: float = 1.0) -> np.ndarray:
    """softmax(next-token logits / temperature); sums to 1 within 1e-12."""
    if temperature <= 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    logits = model.next_logits(context) / temperature
    logits -= logits.max()
    probs = np.exp(logits)
    return probs / probs.sum()


def generate(model: LMModel, cfg: SamplerConfig, rng: np.random.Generator | None = None) -> TokenizedLine:
    """Ancestral sampling from SOS until EOS or max_len tokens."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    h, c = model.cell.zero_state(1)
    logits, h, c = model._step_logits(SOS, h, c)
    out: list[int] = []
    for _ in range(cfg.max_len):
        token = sample_from_logits(logits, cfg.temperature, rng, forbidden=(PAD, SOS), top_k=cfg.top_k)
        if token == EOS:
            break
        out.append(token)
        logits, h, c = model._step_logits(token, h, c)
    return TokenizedLine(tuple(out), model.vocab.decode(out))


def line_surprisal(model: LMModel, line: TokenizedLine) -> float:
    """Mean -ln p(token | prefix) in nats/token, EOS included, at temperature 1."""
    h, c = model.cell.zero_state(1)
    logits, h, c = model._step_logits(SOS, h, c)
    total = 0.0
    for target in list(line.ids) + [EOS]:
        shifted = logits - logits.max()
        logp = shifted - np.log(np.exp(shifted).sum())
        total -= float(logp[target])
        if target != EOS:
            logits, h, c = model._step_logits(int(target), h, c)
    return total / (len(line.ids) + 1)
