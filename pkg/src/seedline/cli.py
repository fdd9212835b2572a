"""Operator entry point: train models, generate and score pools, serve, export.

Every flag has a JSON-config-file equivalent (--config file.json, keys named
like the flag dests); explicit flags override the file. Exit codes: 0 success,
2 usage/input error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback

import numpy as np

from . import baseline_lm as blm
from . import lstm_vae as lv
from .corpus import MalformedRecord, Vocabulary, load_corpus, normalize, encode_line, EmptyLine, TooLong
from .lstm import TrainConfig
from .numerics import atomic_write_text
from .wundt_filter import BandConfig, band_filter, dedup, score_pool, score_report

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


def _add_common_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", help="JSONL corpus file")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--vocab-out", dest="vocab_out", help="vocabulary dump path (default: OUT.vocab.json)")
    p.add_argument("--metrics-log", dest="metrics_log", help="per-epoch JSONL log (default: OUT.metrics.jsonl)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--d-embed", dest="d_embed", type=int)
    p.add_argument("--d-hidden", dest="d_hidden", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seedline", description=__doc__)
    parser.add_argument("--config", help="JSON file of flag defaults; explicit flags override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-vae", help="train the LSTM-VAE generator")
    _add_common_train_flags(p)
    p.add_argument("--d-z", dest="d_z", type=int)
    p.add_argument("--kl-anneal-epochs", dest="kl_anneal_epochs", type=int)
    p.add_argument("--word-dropout", dest="word_dropout", type=float)
    p.add_argument("--conditional", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--tag-dim", dest="tag_dim", type=int)

    p = sub.add_parser("train-lm", help="train the baseline next-token model")
    _add_common_train_flags(p)

    p = sub.add_parser("generate", help="sample, score, and optionally band-filter a pool")
    p.add_argument("--vae", help="VAE checkpoint")
    p.add_argument("--lm", help="LM checkpoint")
    p.add_argument("--vocab", help="vocabulary dump")
    p.add_argument("--corpus", help="reference corpus for novelty")
    p.add_argument("--n", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--tag", help="theme tag (conditional models)")
    p.add_argument("--band-low", dest="band_low", type=float)
    p.add_argument("--band-high", dest="band_high", type=float)
    p.add_argument("--band-quantiles", dest="band_quantiles", nargs=2, type=float, metavar=("QLOW", "QHIGH"))
    p.add_argument("--out", help="JSONL output path (default: stdout)")

    p = sub.add_parser("score", help="score a file of lines against a trained LM")
    p.add_argument("--lm", help="LM checkpoint")
    p.add_argument("--vocab", help="vocabulary dump")
    p.add_argument("--corpus", help="reference corpus for novelty")
    p.add_argument("--lines", help="text file, one candidate line per row")
    p.add_argument("--band-low", dest="band_low", type=float)
    p.add_argument("--band-high", dest="band_high", type=float)
    p.add_argument("--band-quantiles", dest="band_quantiles", nargs=2, type=float, metavar=("QLOW", "QHIGH"))
    p.add_argument("--out", help="report output path (default: stdout)")

    p = sub.add_parser("serve", help="run the curation pool service")
    p.add_argument("--vae", help="VAE checkpoint")
    p.add_argument("--lm", help="LM checkpoint")
    p.add_argument("--vocab", help="vocabulary dump")
    p.add_argument("--corpus", help="reference corpus for novelty")
    p.add_argument("--data-dir", dest="data_dir", help="session persistence directory")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--ui-dir", dest="ui_dir", help="serve a built frontend from this directory")

    p = sub.add_parser("export", help="print a session's poem or full JSON document")
    p.add_argument("--session", help="path to a persisted session JSON file")
    p.add_argument("--format", choices=["text", "json"])

    return parser


def _merge(defaults: dict, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    merged = dict(defaults)
    ns = vars(args)
    if ns.get("config"):
        try:
            with open(ns["config"], encoding="utf-8") as fh:
                file_vals = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"cannot read --config {ns['config']}: {err}") from err
        unknown = set(file_vals) - set(defaults)
        if unknown:
            raise UsageError(f"unknown keys in --config: {sorted(unknown)}")
        merged.update(file_vals)
    for key in defaults:
        if ns.get(key) is not None:
            merged[key] = ns[key]
    return merged


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


TRAIN_DEFAULTS = {
    "corpus": None,
    "out": None,
    "vocab_out": None,
    "metrics_log": None,
    "epochs": 300,
    "lr": 0.3,
    "batch_size": 32,
    "seed": 0,
    "clip_norm": 5.0,
    "momentum": 0.9,
    "d_embed": 64,
    "d_hidden": 128,
    "max_len": 15,
    "min_count": 2,
    "val_fraction": 0.1,
}

VAE_DEFAULTS = {**TRAIN_DEFAULTS, "d_z": 32, "kl_anneal_epochs": 10, "word_dropout": 0.4, "conditional": False, "tag_dim": 8}

GENERATE_DEFAULTS = {
    "vae": None,
    "lm": None,
    "vocab": None,
    "corpus": None,
    "n": 350,
    "temperature": 1.0,
    "seed": 0,
    "tag": None,
    "band_low": None,
    "band_high": None,
    "band_quantiles": None,
    "out": None,
}

SCORE_DEFAULTS = {
    "lm": None,
    "vocab": None,
    "corpus": None,
    "lines": None,
    "band_low": None,
    "band_high": None,
    "band_quantiles": None,
    "out": None,
}

SERVE_DEFAULTS = {
    "vae": None,
    "lm": None,
    "vocab": None,
    "corpus": None,
    "data_dir": None,
    "host": "127.0.0.1",
    "port": 8765,
    "ui_dir": None,
}

EXPORT_DEFAULTS = {"session": None, "format": "text"}


def _train_setup(cfg: dict):
    _require(cfg, "corpus", "out")
    corpus, vocab = load_corpus(
        cfg["corpus"],
        min_count=cfg["min_count"],
        val_fraction=cfg["val_fraction"],
        seed=cfg["seed"],
        max_len=cfg["max_len"],
    )
    train_cfg = TrainConfig(
        epochs=cfg["epochs"],
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
        clip_norm=cfg["clip_norm"],
        momentum=cfg["momentum"],
    )
    vocab_out = cfg["vocab_out"] or cfg["out"] + ".vocab.json"
    metrics_log = cfg["metrics_log"] or cfg["out"] + ".metrics.jsonl"
    return corpus, vocab, train_cfg, vocab_out, metrics_log


def cmd_train_vae(args: argparse.Namespace) -> int:
    cfg = _merge(VAE_DEFAULTS, args)
    corpus, vocab, train_cfg, vocab_out, metrics_log = _train_setup(cfg)
    model_cfg = lv.VAEConfig(
        d_embed=cfg["d_embed"],
        d_hidden=cfg["d_hidden"],
        d_z=cfg["d_z"],
        kl_anneal_epochs=cfg["kl_anneal_epochs"],
        word_dropout=cfg["word_dropout"],
        max_len=cfg["max_len"],
        conditional=cfg["conditional"],
        tag_dim=cfg["tag_dim"],
    )
    with open(metrics_log, "w", encoding="utf-8") as log:
        def stream(record: dict) -> None:
            log.write(json.dumps(record) + "\n")
            log.flush()

        model, metrics = lv.train(corpus, vocab, model_cfg, train_cfg, on_epoch=stream)
    model.save(cfg["out"])
    atomic_write_text(vocab_out, vocab.dump())
    last = metrics[-1]
    print(
        f"trained VAE on {len(corpus.train_idx)} lines for {len(metrics)} epochs: "
        f"recon {last['recon']:.3f} kl {last['kl']:.3f} -> {cfg['out']}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_train_lm(args: argparse.Namespace) -> int:
    cfg = _merge(TRAIN_DEFAULTS, args)
    corpus, vocab, train_cfg, vocab_out, metrics_log = _train_setup(cfg)
    model_cfg = blm.LMConfig(d_embed=cfg["d_embed"], d_hidden=cfg["d_hidden"], max_len=cfg["max_len"])
    with open(metrics_log, "w", encoding="utf-8") as log:
        def stream(record: dict) -> None:
            log.write(json.dumps(record) + "\n")
            log.flush()

        model, metrics = blm.train_lm(corpus, vocab, train_cfg, model_cfg, on_epoch=stream)
    model.save(cfg["out"])
    atomic_write_text(vocab_out, vocab.dump())
    print(
        f"trained LM on {len(corpus.train_idx)} lines for {len(metrics)} epochs: "
        f"perplexity {metrics[-1]['perplexity']:.2f} -> {cfg['out']}",
        file=sys.stderr,
    )
    return EXIT_OK


def _band_from_cfg(cfg: dict) -> tuple[BandConfig, bool]:
    """Returns (band, filter_requested): explicit band flags imply filtering."""
    if cfg["band_quantiles"] is not None:
        q_low, q_high = cfg["band_quantiles"]
        return BandConfig.quantile(float(q_low), float(q_high)), True
    if cfg["band_low"] is not None or cfg["band_high"] is not None:
        if cfg["band_low"] is None or cfg["band_high"] is None:
            raise UsageError("--band-low and --band-high must be given together")
        return BandConfig.absolute(cfg["band_low"], cfg["band_high"]), True
    return BandConfig.quantile(), False


def _load_models(cfg: dict):
    with open(cfg["vocab"], encoding="utf-8") as fh:
        vocab = Vocabulary.from_dump(fh.read())
    vae = lv.VAEModel.load(cfg["vae"], vocab) if cfg.get("vae") else None
    lm = blm.LMModel.load(cfg["lm"], vocab)
    corpus, _ = load_corpus(cfg["corpus"], min_count=1, val_fraction=0.0, seed=0, max_len=lm.config.max_len)
    return vae, lm, vocab, corpus


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _merge(GENERATE_DEFAULTS, args)
    _require(cfg, "vae", "lm", "vocab", "corpus")
    if cfg["n"] < 1:
        raise UsageError("--n must be >= 1")
    band, do_filter = _band_from_cfg(cfg)
    vae, lm, vocab, corpus = _load_models(cfg)
    rng = np.random.default_rng(cfg["seed"])
    pool = lv.sample_prior(vae, cfg["n"], cfg["temperature"], rng, tag=cfg["tag"])
    pool = dedup(pool)
    scored, resolved = score_pool(pool, lm, corpus, band)
    if do_filter:
        scored, report = band_filter(scored, [line.score for line in scored], resolved)
        print(json.dumps(report), file=sys.stderr)
    records = []
    for line in scored:
        records.append(
            json.dumps(
                {
                    "text": line.text,
                    "surprisal": line.score.surprisal,
                    "novelty": line.score.novelty,
                    "in_band": line.score.in_band,
                    "provenance": line.provenance.to_dict(),
                },
                ensure_ascii=False,
            )
        )
    payload = "\n".join(records) + ("\n" if records else "")
    if cfg["out"]:
        atomic_write_text(cfg["out"], payload)
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _merge(SCORE_DEFAULTS, args)
    _require(cfg, "lm", "vocab", "corpus", "lines")
    band, _ = _band_from_cfg(cfg)
    _, lm, vocab, corpus = _load_models(cfg)
    pool = []
    skipped = 0
    with open(cfg["lines"], encoding="utf-8") as fh:
        for raw in fh:
            text = normalize(raw)
            try:
                tok = encode_line(text, vocab, lm.config.max_len)
            except (EmptyLine, TooLong):
                skipped += 1
                continue
            pool.append(lv.GeneratedLine(tok.text, tok.ids, lv.Provenance("prior", ())))
    if skipped:
        print(f"skipped {skipped} empty/too-long lines", file=sys.stderr)
    scored, _resolved = score_pool(pool, lm, corpus, band)
    report = json.dumps(score_report(scored), ensure_ascii=False, indent=2) + "\n"
    if cfg["out"]:
        atomic_write_text(cfg["out"], report)
    else:
        sys.stdout.write(report)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .pool_service import ModelRefs, create_app, load_bundle

    cfg = _merge(SERVE_DEFAULTS, args)
    _require(cfg, "vae", "lm", "vocab", "corpus", "data_dir")
    refs = ModelRefs(cfg["vae"], cfg["lm"], cfg["vocab"], cfg["corpus"])
    load_bundle(refs)  # fail fast on bad refs, before binding the port
    app = create_app(cfg["data_dir"], refs, ui_dir=cfg["ui_dir"])
    uvicorn.run(app, host=cfg["host"], port=cfg["port"], log_level="warning")
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    from .pool_service import Session

    cfg = _merge(EXPORT_DEFAULTS, args)
    _require(cfg, "session")
    with open(cfg["session"], encoding="utf-8") as fh:
        doc = json.load(fh)
    session = Session.from_doc(doc)
    if cfg["format"] == "json":
        sys.stdout.write(json.dumps(session.to_doc(), sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n")
    else:
        by_id = {line.id: line for line in session.pool}
        sys.stdout.write("\n".join(by_id[i].text for i in session.arrangement))
        if session.arrangement:
            sys.stdout.write("\n")
    return EXIT_OK


COMMANDS = {
    "train-vae": cmd_train_vae,
    "train-lm": cmd_train_lm,
    "generate": cmd_generate,
    "score": cmd_score,
    "serve": cmd_serve,
    "export": cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (UsageError, FileNotFoundError, MalformedRecord, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
