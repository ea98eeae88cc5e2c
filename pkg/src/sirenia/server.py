"""HTTP review service: the machine-facing half of the relabeling loop.

Read endpoints serve a per-request snapshot of the candidate queue; the
only mutation is POST .../decision, serialized through the append-only
store so a crash after any request loses at most the in-flight one.
Dataset mutation (applying decisions, retraining) is deliberately not
exposed here; that happens in the CLI where it can be audited.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from fastapi import Body, FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import dataset as ds
from . import model as mdl
from .audio import wav_bytes
from .dataset import LabeledSample, SessionRegistry
from .errors import StateError
from .features import (
    SECONDS_PER_FRAME,
    NormStats,
    default_filterbank,
    log_mel,
    normalize,
)
from .feedback import ReviewStore

CANDIDATE_STATUSES = ("pending", "confirmed", "rejected")


@dataclass(frozen=True)
class ServerConfig:
    manifest_path: str
    checkpoint_path: str
    registry_root: str
    store_path: str
    host: str = "127.0.0.1"
    port: int = 8000
    static_dir: str | None = None


class _ApiError(Exception):
    def __init__(self, status: int, error: str, detail: str):
        self.status, self.error, self.detail = status, error, detail
        super().__init__(detail)


def create_app(config: ServerConfig) -> FastAPI:
    for label, p in (
        ("manifest", config.manifest_path),
        ("checkpoint", config.checkpoint_path),
        ("session registry", config.registry_root),
    ):
        if not Path(p).exists():
            raise FileNotFoundError(f"{label} path does not exist: {p}")

    manifest = ds.load_manifest(config.manifest_path)
    ckpt = mdl.load_checkpoint(config.checkpoint_path)
    registry = SessionRegistry(config.registry_root)
    store = ReviewStore(config.store_path)
    if ckpt.norm_stats is not None:
        stats = NormStats(mean=ckpt.norm_stats[0], std=ckpt.norm_stats[1])
    else:
        stats = manifest.norm_stats

    app = FastAPI(title="call review", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.exception_handler(_ApiError)
    def _api_error(request, exc: _ApiError):
        return JSONResponse(
            status_code=exc.status, content={"error": exc.error, "detail": exc.detail}
        )

    @app.exception_handler(StarletteHTTPException)
    def _http_error(request, exc: StarletteHTTPException):
        return JSONResponse(
            status_code=exc.status_code,
            content={"error": "http_error", "detail": str(exc.detail)},
        )

    @app.exception_handler(RequestValidationError)
    def _validation_error(request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content={"error": "bad_request", "detail": str(exc.errors())}
        )

    def _get_candidate(cid: str):
        try:
            return store.get(cid)
        except KeyError:
            raise _ApiError(404, "unknown_candidate", f"no candidate with id {cid!r}")

    def _window_clip(candidate):
        sample = LabeledSample(
            session_id=candidate.session_id,
            window_start_s=candidate.window_start_s,
            label="negative",
        )
        try:
            return registry.window_clip(sample)
        except FileNotFoundError:
            raise _ApiError(
                410, "source_missing",
                f"session {candidate.session_id!r} audio is no longer available",
            )

    @app.get("/api/candidates")
    def list_candidates(status: str | None = None, offset: int = 0, limit: int = 50):
        if status is not None and status not in CANDIDATE_STATUSES:
            raise _ApiError(
                400, "bad_request",
                f"status must be one of {CANDIDATE_STATUSES}, got {status!r}",
            )
        if offset < 0 or limit < 1:
            raise _ApiError(
                400, "bad_request", f"need offset >= 0 and limit >= 1, got {offset}/{limit}"
            )
        snapshot = store.candidates()  # per-request snapshot; ordering is stable
        if status is not None:
            snapshot = [c for c in snapshot if c.status == status]
        return {
            "items": [c.to_doc() for c in snapshot[offset : offset + limit]],
            "total": len(snapshot),
            "offset": offset,
            "limit": limit,
        }

    @app.get("/api/candidates/{cid}/spectrogram")
    def spectrogram(cid: str):
        candidate = _get_candidate(cid)
        feature = normalize(log_mel(_window_clip(candidate)), stats)
        bank = default_filterbank()
        return {
            "id": cid,
            "shape": list(feature.values.shape),
            "values": feature.values.tolist(),  # row-major: one list per mel bin
            "mel_centers_hz": bank.center_freqs_hz.tolist(),
            "fmin_hz": bank.fmin_hz,
            "fmax_hz": bank.fmax_hz,
            "seconds_per_frame": SECONDS_PER_FRAME,
        }

    @app.get("/api/candidates/{cid}/audio")
    def audio(cid: str):
        candidate = _get_candidate(cid)
        clip = _window_clip(candidate)
        return Response(content=wav_bytes(clip, bit_depth=16), media_type="audio/wav")

    @app.post("/api/candidates/{cid}/decision")
    def decide(cid: str, payload: dict = Body(...)):
        decision = payload.get("decision")
        if decision not in ("confirm", "reject"):
            raise _ApiError(
                400, "bad_request",
                f"decision must be 'confirm' or 'reject', got {decision!r}",
            )
        note = payload.get("note")
        if note is not None and not isinstance(note, str):
            raise _ApiError(400, "bad_request", "note must be a string")
        _get_candidate(cid)  # 404 before 409
        try:
            updated = store.record_decision(
                cid, "confirmed" if decision == "confirm" else "rejected", note=note
            )
        except StateError as e:
            raise _ApiError(409, "already_decided", str(e))
        return updated.to_doc()

    @app.get("/api/stats")
    def stats_endpoint():
        snapshot = store.candidates()
        by_status = {s: 0 for s in CANDIDATE_STATUSES}
        for c in snapshot:
            by_status[c.status] += 1
        confirmed_keys = {
            (c.session_id, c.window_start_s) for c in snapshot if c.status == "confirmed"
        }
        n_pos = n_neg = train_pos = train_neg = 0
        for s in manifest.samples:
            positive = s.label == "positive" or s.key in confirmed_keys
            split = manifest.split.get(s.key)
            if positive:
                n_pos += 1
                train_pos += split == "train"
            else:
                n_neg += 1
                train_neg += split == "train"
        return {
            **by_status,
            "n_pos": n_pos,
            "n_neg": n_neg,
            "train_n_pos": train_pos,
            "train_n_neg": train_neg,
            "positive_rate": n_pos / (n_pos + n_neg) if n_pos + n_neg else 0.0,
        }

    if config.static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app


def run(config: ServerConfig) -> None:  # pragma: no cover - thin uvicorn shim
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port)
