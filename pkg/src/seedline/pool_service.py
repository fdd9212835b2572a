"""HTTP/JSON curation service: generate, score, pin, arrange, vary, export.

One JSON document per session on disk, written atomically, so a restarted
service resumes exactly where it stopped. Per-session operations are
serialized behind a lock; separate sessions run concurrently against
shared read-only model parameters. Binds to localhost by default and has
no authentication: this is a single-artist desk tool.
"""
from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from . import lstm_vae as lv
from . import numerics as nm
from .baseline_lm import LMModel
from .corpus import Corpus, Vocabulary, load_corpus
from .lstm import NonPositiveTemperature
from .wundt_filter import BandConfig, LineScore, band_filter, dedup, score_pool

MAX_POOL_REQUEST = 10_000


class ServiceError(Exception):
    def __init__(self, code: str, detail: str, status: int):
        super().__init__(detail)
        self.code = code
        self.detail = detail
        self.status = status


def _not_found(code: str, detail: str) -> ServiceError:
    return ServiceError(code, detail, 404)


def _conflict(code: str, detail: str) -> ServiceError:
    return ServiceError(code, detail, 409)


def _bad_params(detail: str) -> ServiceError:
    return ServiceError("BadParams", detail, 400)


@dataclass(frozen=True)
class ModelRefs:
    vae_checkpoint: str
    lm_checkpoint: str
    vocab: str
    corpus: str

    def to_dict(self) -> dict:
        return {
            "vae_checkpoint": self.vae_checkpoint,
            "lm_checkpoint": self.lm_checkpoint,
            "vocab": self.vocab,
            "corpus": self.corpus,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelRefs":
        return cls(doc["vae_checkpoint"], doc["lm_checkpoint"], doc["vocab"], doc["corpus"])


@dataclass
class ModelBundle:
    vae: lv.VAEModel
    lm: LMModel
    vocab: Vocabulary
    corpus: Corpus


_bundle_cache: dict[tuple[str, str, str, str], ModelBundle] = {}
_bundle_lock = threading.Lock()


def load_bundle(refs: ModelRefs) -> ModelBundle:
    """Load and pair checkpoints; any mismatch or missing file refuses the refs."""
    key = (refs.vae_checkpoint, refs.lm_checkpoint, refs.vocab, refs.corpus)
    with _bundle_lock:
        if key in _bundle_cache:
            return _bundle_cache[key]
    try:
        with open(refs.vocab, encoding="utf-8") as fh:
            vocab = Vocabulary.from_dump(fh.read())
        vae = lv.VAEModel.load(refs.vae_checkpoint, vocab)
        lm = LMModel.load(refs.lm_checkpoint, vocab)
        corpus, _ = load_corpus(refs.corpus, min_count=1, val_fraction=0.0, seed=0, max_len=vae.config.max_len)
    except (OSError, ValueError, KeyError) as err:
        raise ServiceError("CheckpointMismatch", f"cannot load model refs: {err}", 400) from err
    bundle = ModelBundle(vae, lm, vocab, corpus)
    with _bundle_lock:
        _bundle_cache[key] = bundle
    return bundle


def _line_to_doc(line: lv.GeneratedLine) -> dict:
    return {
        "id": line.id,
        "text": line.text,
        "tokens": list(line.tokens),
        "provenance": line.provenance.to_dict(),
        "score": line.score.to_dict() if line.score is not None else None,
    }


def _line_from_doc(doc: dict) -> lv.GeneratedLine:
    return lv.GeneratedLine(
        text=doc["text"],
        tokens=tuple(doc["tokens"]),
        provenance=lv.Provenance.from_dict(doc["provenance"]),
        id=doc["id"],
        score=LineScore.from_dict(doc["score"]) if doc.get("score") else None,
    )


@dataclass
class Session:
    id: str
    model_refs: ModelRefs
    band: BandConfig
    resolved_band: BandConfig | None = None
    pool: list[lv.GeneratedLine] = field(default_factory=list)
    pinned: set[int] = field(default_factory=set)
    arrangement: list[int] = field(default_factory=list)
    next_line_id: int = 1
    created: str = ""
    modified: str = ""

    def line_ids(self) -> set[int]:
        return {line.id for line in self.pool}

    def check_invariants(self) -> None:
        ids = [line.id for line in self.pool]
        if len(ids) != len(set(ids)):
            raise AssertionError("pool ids not unique")
        if not self.pinned <= set(ids):
            raise AssertionError("pinned not a subset of pool ids")
        if len(self.arrangement) != len(set(self.arrangement)):
            raise AssertionError("arrangement has duplicates")
        if not set(self.arrangement) <= self.pinned:
            raise AssertionError("arrangement not a subset of pinned")

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "created": self.created,
            "modified": self.modified,
            "model_refs": self.model_refs.to_dict(),
            "band": self.band.to_dict(),
            "resolved_band": self.resolved_band.to_dict() if self.resolved_band else None,
            "next_line_id": self.next_line_id,
            "pool": [_line_to_doc(line) for line in self.pool],
            "pinned": sorted(self.pinned),
            "arrangement": list(self.arrangement),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Session":
        return cls(
            id=doc["id"],
            model_refs=ModelRefs.from_dict(doc["model_refs"]),
            band=BandConfig.from_dict(doc["band"]),
            resolved_band=BandConfig.from_dict(doc["resolved_band"]) if doc.get("resolved_band") else None,
            pool=[_line_from_doc(rec) for rec in doc["pool"]],
            pinned=set(doc["pinned"]),
            arrangement=list(doc["arrangement"]),
            next_line_id=doc["next_line_id"],
            created=doc["created"],
            modified=doc["modified"],
        )


def session_to_json(session: Session) -> str:
    return json.dumps(session.to_doc(), sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class PoolService:
    """Owns the session store; every public method maps to one endpoint."""

    def __init__(self, data_dir: str, default_refs: ModelRefs | None = None):
        self.data_dir = data_dir
        self.default_refs = default_refs
        os.makedirs(data_dir, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._store_lock = threading.Lock()
        self._counter = self._scan_counter()

    def _scan_counter(self) -> int:
        highest = 0
        for name in os.listdir(self.data_dir):
            match = re.fullmatch(r"s(\d+)\.json", name)
            if match:
                highest = max(highest, int(match.group(1)))
        return highest

    def _path(self, session_id: str) -> str:
        return os.path.join(self.data_dir, f"{session_id}.json")

    def _persist(self, session: Session) -> None:
        session.modified = _now()
        session.check_invariants()
        nm.atomic_write_text(self._path(session.id), session_to_json(session))

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._store_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def _get(self, session_id: str) -> Session:
        with self._store_lock:
            if session_id in self._sessions:
                return self._sessions[session_id]
        path = self._path(session_id)
        if not re.fullmatch(r"s\d+", session_id) or not os.path.exists(path):
            raise _not_found("SessionNotFound", f"no session {session_id!r}")
        with open(path, encoding="utf-8") as fh:
            session = Session.from_doc(json.load(fh))
        with self._store_lock:
            self._sessions.setdefault(session_id, session)
            return self._sessions[session_id]

    def _bundle(self, session: Session) -> ModelBundle:
        return load_bundle(session.model_refs)

    # -- operations -------------------------------------------------------

    def create_session(self, refs: ModelRefs | None = None, band: BandConfig | None = None) -> Session:
        refs = refs or self.default_refs
        if refs is None:
            raise _bad_params("no model refs given and the service has no defaults")
        load_bundle(refs)  # validates checkpoints and vocabulary pairing
        band = band or BandConfig.quantile()
        with self._store_lock:
            self._counter += 1
            session = Session(id=f"s{self._counter:04d}", model_refs=refs, band=band, created=_now())
            self._sessions[session.id] = session
            self._locks[session.id] = threading.Lock()
        self._persist(session)
        return session

    def get_session(self, session_id: str) -> Session:
        return self._get(session_id)

    def _score_new(self, session: Session, bundle: ModelBundle, lines: list[lv.GeneratedLine]) -> list[lv.GeneratedLine]:
        band = session.resolved_band or session.band
        scored, resolved = score_pool(lines, bundle.lm, bundle.corpus, band)
        session.resolved_band = resolved
        return scored

    def _admit(self, session: Session, lines: list[lv.GeneratedLine]) -> list[lv.GeneratedLine]:
        admitted = []
        for line in lines:
            admitted.append(replace(line, id=session.next_line_id))
            session.next_line_id += 1
        session.pool.extend(admitted)
        return admitted

    def generate_pool(
        self,
        session_id: str,
        n: int,
        temperature: float = 1.0,
        seed: int | None = None,
        apply_band: bool = False,
        tag: str | None = None,
    ) -> tuple[list[lv.GeneratedLine], dict]:
        if not 1 <= n <= MAX_POOL_REQUEST:
            raise _bad_params(f"n must be in [1, {MAX_POOL_REQUEST}]")
        session = self._get(session_id)
        with self._lock_for(session_id):
            bundle = self._bundle(session)
            used_seed = int(seed) if seed is not None else int(np.random.default_rng().integers(2**31))
            rng = np.random.default_rng(used_seed)
            try:
                raw = lv.sample_prior(bundle.vae, n, temperature, rng, tag=tag)
            except (NonPositiveTemperature, lv.MissingTag, lv.UnknownTag, ValueError) as err:
                raise _bad_params(str(err)) from err
            unique = dedup(raw)
            scored = self._score_new(session, bundle, unique)
            report = {"requested": n, "after_dedup": len(unique), "seed": used_seed}
            if apply_band:
                kept, filter_report = band_filter(scored, [line.score for line in scored], session.resolved_band)
                report.update(filter_report)
                scored = kept
            else:
                surprisals = [line.score.surprisal for line in scored]
                in_count = sum(1 for line in scored if line.score.in_band)
                below = sum(1 for s in surprisals if s < session.resolved_band.band_low)
                report.update(
                    {
                        "total": len(scored),
                        "below": below,
                        "in": in_count,
                        "above": len(scored) - in_count - below,
                        "band_low": session.resolved_band.band_low,
                        "band_high": session.resolved_band.band_high,
                    }
                )
            added = self._admit(session, scored)
            self._persist(session)
            return added, report

    def pin(self, session_id: str, line_id: int) -> Session:
        session = self._get(session_id)
        with self._lock_for(session_id):
            if line_id not in session.line_ids():
                raise _not_found("UnknownLine", f"no line {line_id} in session {session_id}")
            session.pinned.add(line_id)
            self._persist(session)
            return session

    def unpin(self, session_id: str, line_id: int) -> Session:
        session = self._get(session_id)
        with self._lock_for(session_id):
            if line_id not in session.line_ids():
                raise _not_found("UnknownLine", f"no line {line_id} in session {session_id}")
            session.pinned.discard(line_id)
            # unpinning repairs the arrangement-subset-of-pinned invariant
            session.arrangement = [i for i in session.arrangement if i != line_id]
            self._persist(session)
            return session

    def arrange(self, session_id: str, line_ids: list[int]) -> Session:
        session = self._get(session_id)
        with self._lock_for(session_id):
            if len(line_ids) != len(set(line_ids)):
                raise _conflict("DuplicateId", "arrangement contains duplicate line ids")
            not_pinned = [i for i in line_ids if i not in session.pinned]
            if not_pinned:
                raise _conflict("NotPinned", f"lines not pinned: {not_pinned}")
            session.arrangement = list(line_ids)
            self._persist(session)
            return session

    def vary(
        self,
        session_id: str,
        line_id: int,
        mode: str,
        radius: float | None = None,
        n: int | None = None,
        other_line_id: int | None = None,
        steps: int | None = None,
        temperature: float = 1.0,
        seed: int | None = None,
    ) -> tuple[list[lv.GeneratedLine], dict]:
        session = self._get(session_id)
        with self._lock_for(session_id):
            by_id = {line.id: line for line in session.pool}
            if line_id not in by_id:
                raise _not_found("UnknownLine", f"no line {line_id} in session {session_id}")
            bundle = self._bundle(session)
            used_seed = int(seed) if seed is not None else int(np.random.default_rng().integers(2**31))
            rng = np.random.default_rng(used_seed)
            parent = by_id[line_id]
            z0 = np.array(parent.provenance.latent)

            if mode == "neighborhood":
                if radius is None or radius <= 0 or n is None or n < 1:
                    raise _bad_params("neighborhood mode needs radius > 0 and n >= 1")
                try:
                    raw = lv.sample_neighborhood(bundle.vae, z0, radius, n, temperature, rng)
                except (NonPositiveTemperature, ValueError) as err:
                    raise _bad_params(str(err)) from err
                raw = [line.with_parents(line_id) for line in raw]
            elif mode == "interpolate":
                if other_line_id is None:
                    raise _bad_params("interpolate mode needs other_line_id")
                if other_line_id not in by_id:
                    raise _not_found("UnknownLine", f"no line {other_line_id} in session {session_id}")
                if steps is None or steps < 2:
                    raise _bad_params("interpolate mode needs steps >= 2")
                z1 = np.array(by_id[other_line_id].provenance.latent)
                raw = lv.interpolate(bundle.vae, z0, z1, steps)
                raw = [line.with_parents(line_id, other_line_id) for line in raw]
            else:
                raise _bad_params(f"unknown vary mode {mode!r}")

            scored = self._score_new(session, bundle, raw)
            added = self._admit(session, scored)
            self._persist(session)
            return added, {"mode": mode, "seed": used_seed, "added": len(added)}

    def export_text(self, session_id: str) -> str:
        session = self._get(session_id)
        by_id = {line.id: line for line in session.pool}
        return "\n".join(by_id[i].text for i in session.arrangement)

    def export_json(self, session_id: str) -> dict:
        return self._get(session_id).to_doc()


# -- HTTP layer -----------------------------------------------------------


class CreateSessionBody(BaseModel):
    vae_checkpoint: str | None = None
    lm_checkpoint: str | None = None
    vocab: str | None = None
    corpus: str | None = None
    band: dict | None = None


class PoolBody(BaseModel):
    n: int
    temperature: float = 1.0
    seed: int | None = None
    apply_band: bool = False
    tag: str | None = None


class PinBody(BaseModel):
    line_id: int


class ArrangementBody(BaseModel):
    line_ids: list[int]


class VaryBody(BaseModel):
    line_id: int
    mode: str
    radius: float | None = None
    n: int | None = None
    other_line_id: int | None = None
    steps: int | None = None
    temperature: float = 1.0
    seed: int | None = None


def create_app(data_dir: str, default_refs: ModelRefs | None = None, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="seedline pool service")
    service = PoolService(data_dir, default_refs)
    app.state.service = service

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, err: ServiceError):
        return JSONResponse({"error": err.code, "detail": err.detail}, status_code=err.status)

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(_request: Request, err: RequestValidationError):
        return JSONResponse({"error": "BadParams", "detail": str(err.errors())}, status_code=400)

    def parse_band(doc: dict | None) -> BandConfig | None:
        if doc is None:
            return None
        try:
            return BandConfig.from_dict(doc)
        except (ValueError, TypeError) as err:
            raise _bad_params(f"bad band config: {err}") from err

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        refs = None
        given = {body.vae_checkpoint, body.lm_checkpoint, body.vocab, body.corpus}
        if given != {None}:
            if None in given:
                raise _bad_params("model refs need vae_checkpoint, lm_checkpoint, vocab, and corpus together")
            refs = ModelRefs(body.vae_checkpoint, body.lm_checkpoint, body.vocab, body.corpus)
        session = service.create_session(refs, parse_band(body.band))
        return {"id": session.id}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return service.get_session(session_id).to_doc()

    @app.post("/sessions/{session_id}/pool")
    def generate_pool(session_id: str, body: PoolBody):
        added, report = service.generate_pool(
            session_id, body.n, body.temperature, body.seed, body.apply_band, body.tag
        )
        return {"added": [_line_to_doc(line) for line in added], "report": report}

    @app.post("/sessions/{session_id}/pin")
    def pin(session_id: str, body: PinBody):
        return service.pin(session_id, body.line_id).to_doc()

    @app.post("/sessions/{session_id}/unpin")
    def unpin(session_id: str, body: PinBody):
        return service.unpin(session_id, body.line_id).to_doc()

    @app.put("/sessions/{session_id}/arrangement")
    def arrange(session_id: str, body: ArrangementBody):
        return service.arrange(session_id, body.line_ids).to_doc()

    @app.post("/sessions/{session_id}/vary")
    def vary(session_id: str, body: VaryBody):
        added, report = service.vary(
            session_id,
            body.line_id,
            body.mode,
            radius=body.radius,
            n=body.n,
            other_line_id=body.other_line_id,
            steps=body.steps,
            temperature=body.temperature,
            seed=body.seed,
        )
        return {"added": [_line_to_doc(line) for line in added], "report": report}

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str, format: str = "text"):
        if format == "text":
            return PlainTextResponse(service.export_text(session_id))
        if format == "json":
            return JSONResponse(service.export_json(session_id))
        raise _bad_params(f"unknown export format {format!r}")

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
