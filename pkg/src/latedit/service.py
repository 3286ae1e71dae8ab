"""HTTP serving layer for interactive editing sessions.

A session pins a base latent; every applied edit pushes one stack entry
holding the instruction, the strength η, and the cached editor residual
(editor output minus the then-current head).  The head latent at any time is
the base folded through the stack: ``latent_k = latent_{k-1} + η_k * residual_k``.
Because residuals are cached, changing an entry's η is pure tensor arithmetic
plus re-rendering — the editor is never re-invoked — and replaying the stack
from disk reproduces the head bit-exactly.

Sessions persist in SQLite; latents and residuals live on disk in the binary
container format.
"""

from __future__ import annotations

import hashlib
import io
import math
import sqlite3
import threading
import time
import uuid
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import torch
from fastapi import FastAPI, HTTPException, Query, Response
from pydantic import BaseModel

from .codec import AssetSource, turntable_viewpoints
from .config import AppConfig, default_config
from .containers import load_arrays, rgb_png_bytes, save_arrays
from .core import CameraConfig, Latent, make_generator
from .errors import InstructionError, SessionNotFoundError

DEFAULT_TURNTABLE_FRAMES = 12


# ---------------------------------------------------------------------------
# persistence

@dataclass
class EditEntry:
    instruction: str
    eta: float

    def to_dict(self) -> dict:
        return {"instruction": self.instruction, "eta": self.eta}


@dataclass
class EditSession:
    session_id: str
    codec_id: str
    created: float
    updated: float
    edits: list[EditEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "codec_id": self.codec_id,
            "created": self.created,
            "updated": self.updated,
            "edits": [e.to_dict() for e in self.edits],
        }


class SessionStore:
    """SQLite-backed session metadata plus on-disk latent/residual blobs."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.db_path = self.root / "sessions.db"
        self._local = threading.local()
        with self._conn() as conn:
            conn.execute(
                "CREATE TABLE IF NOT EXISTS sessions ("
                " session_id TEXT PRIMARY KEY, codec_id TEXT NOT NULL,"
                " created REAL NOT NULL, updated REAL NOT NULL)"
            )
            conn.execute(
                "CREATE TABLE IF NOT EXISTS edits ("
                " session_id TEXT NOT NULL, idx INTEGER NOT NULL,"
                " instruction TEXT NOT NULL, eta REAL NOT NULL,"
                " PRIMARY KEY (session_id, idx))"
            )

    def _conn(self) -> sqlite3.Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = sqlite3.connect(self.db_path)
            conn.isolation_level = None  # autocommit; our locks serialize writes
            self._local.conn = conn
        return conn

    # -- blob paths ----------------------------------------------------------

    def _blob_dir(self, session_id: str) -> Path:
        d = self.root / "blobs" / session_id
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _latent_path(self, session_id: str, idx: int | None) -> Path:
        name = "base.lat" if idx is None else f"edit_{idx:03d}.lat"
        return self._blob_dir(session_id) / name

    def _residual_path(self, session_id: str, idx: int) -> Path:
        return self._blob_dir(session_id) / f"edit_{idx:03d}.residual"

    def save_tensor(self, path: Path, tensor: torch.Tensor, codec_id: str) -> None:
        save_arrays(path, {"data": tensor.detach().cpu().numpy()},
                    extra={"codec_id": codec_id})

    def load_tensor(self, path: Path) -> tuple[torch.Tensor, str]:
        arrays, manifest = load_arrays(path)
        return torch.from_numpy(arrays["data"].copy()), manifest.get("codec_id", "unknown")

    # -- session CRUD --------------------------------------------------------

    def create(self, base: Latent) -> EditSession:
        session_id = uuid.uuid4().hex
        now = time.time()
        self.save_tensor(self._latent_path(session_id, None), base.data, base.codec_id)
        self._conn().execute(
            "INSERT INTO sessions (session_id, codec_id, created, updated) VALUES (?,?,?,?)",
            (session_id, base.codec_id, now, now),
        )
        return EditSession(session_id, base.codec_id, now, now)

    def get(self, session_id: str) -> EditSession:
        row = self._conn().execute(
            "SELECT session_id, codec_id, created, updated FROM sessions WHERE session_id=?",
            (session_id,),
        ).fetchone()
        if row is None:
            raise SessionNotFoundError(f"unknown session {session_id!r}")
        edits = [
            EditEntry(instruction=r[0], eta=r[1])
            for r in self._conn().execute(
                "SELECT instruction, eta FROM edits WHERE session_id=? ORDER BY idx",
                (session_id,),
            )
        ]
        return EditSession(row[0], row[1], row[2], row[3], edits)

    def base_latent(self, session_id: str) -> Latent:
        data, codec_id = self.load_tensor(self._latent_path(session_id, None))
        return Latent(data, codec_id)

    def entry_latent(self, session_id: str, idx: int) -> Latent:
        data, codec_id = self.load_tensor(self._latent_path(session_id, idx))
        return Latent(data, codec_id)

    def residual(self, session_id: str, idx: int) -> torch.Tensor:
        data, _ = self.load_tensor(self._residual_path(session_id, idx))
        return data

    def head_latent(self, session_id: str, session: EditSession | None = None) -> Latent:
        session = session or self.get(session_id)
        if not session.edits:
            return self.base_latent(session_id)
        return self.entry_latent(session_id, len(session.edits) - 1)

    def append_edit(self, session_id: str, instruction: str, eta: float,
                    residual: torch.Tensor, latent: Latent) -> int:
        session = self.get(session_id)
        idx = len(session.edits)
        self.save_tensor(self._residual_path(session_id, idx), residual, latent.codec_id)
        self.save_tensor(self._latent_path(session_id, idx), latent.data, latent.codec_id)
        self._conn().execute(
            "INSERT INTO edits (session_id, idx, instruction, eta) VALUES (?,?,?,?)",
            (session_id, idx, instruction, eta),
        )
        self._touch(session_id)
        return idx

    def update_entry(self, session_id: str, idx: int, eta: float,
                     latents: list[Latent]) -> None:
        """Store a changed η for entry ``idx`` and the recomputed latents for
        that entry and everything downstream."""
        self._conn().execute(
            "UPDATE edits SET eta=? WHERE session_id=? AND idx=?",
            (eta, session_id, idx),
        )
        for offset, latent in enumerate(latents):
            self.save_tensor(self._latent_path(session_id, idx + offset),
                             latent.data, latent.codec_id)
        self._touch(session_id)

    def _touch(self, session_id: str) -> None:
        self._conn().execute(
            "UPDATE sessions SET updated=? WHERE session_id=?",
            (time.time(), session_id),
        )


# ---------------------------------------------------------------------------
# the stack fold

def fold_entry(prev: Latent, residual: torch.Tensor, eta: float) -> Latent:
    """One stack step: ``prev + eta * residual``.

    η = 0 short-circuits to a bitwise copy of ``prev``.  Creation and replay
    both go through this function, which is what makes replay bit-exact.
    """
    if eta == 0.0:
        return prev.clone()
    return Latent(prev.data + eta * residual, prev.codec_id)


def replay_stack(store: SessionStore, session_id: str,
                 from_idx: int = 0, etas: dict[int, float] | None = None) -> list[Latent]:
    """Recompute entry latents from ``from_idx`` onward using cached
    residuals, with optional η overrides.  Returns one latent per replayed
    entry (not persisted)."""
    session = store.get(session_id)
    etas = etas or {}
    prev = (store.base_latent(session_id) if from_idx == 0
            else store.entry_latent(session_id, from_idx - 1))
    out = []
    for idx in range(from_idx, len(session.edits)):
        eta = etas.get(idx, session.edits[idx].eta)
        prev = fold_entry(prev, store.residual(session_id, idx), eta)
        out.append(prev)
    return out


# ---------------------------------------------------------------------------
# request bodies

class LatentUpload(BaseModel):
    data: list[list[float]]
    codec_id: str | None = None


class AssetUpload(BaseModel):
    points: list[list[float]]
    colors: list[list[float]] | None = None
    class_label: str = ""


class CreateSessionBody(BaseModel):
    latent: LatentUpload | None = None
    asset: AssetUpload | None = None
    prompt: str | None = None


class ApplyEditBody(BaseModel):
    instruction: str
    eta: float = 1.0


class SetStrengthBody(BaseModel):
    eta: float


# ---------------------------------------------------------------------------
# app factory

class _SessionLocks:
    def __init__(self) -> None:
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

    def get(self, session_id: str) -> threading.Lock:
        with self._guard:
            if session_id not in self._locks:
                self._locks[session_id] = threading.Lock()
            return self._locks[session_id]


def create_app(editor, codec, store_dir: str | Path,
               config: AppConfig | None = None) -> FastAPI:
    config = config or default_config()
    store = SessionStore(store_dir)
    locks = _SessionLocks()
    app = FastAPI(title="latedit", version="1")
    app.state.store = store
    app.state.editor = editor
    app.state.codec = codec
    app.state.config = config

    def _session_or_404(session_id: str) -> EditSession:
        try:
            return store.get(session_id)
        except SessionNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    def _turntable_descriptor(session_id: str) -> dict:
        return {
            "frames": DEFAULT_TURNTABLE_FRAMES,
            "url": f"/v1/sessions/{session_id}/turntable",
        }

    def _session_payload(session: EditSession) -> dict:
        payload = session.to_dict()
        payload["turntable"] = _turntable_descriptor(session.session_id)
        return payload

    # -- endpoints -----------------------------------------------------------

    @app.get("/v1/healthz")
    def healthz() -> dict:
        return {
            "status": "ok",
            "codec": codec.codec_id,
            "architecture": getattr(editor, "architecture", "unknown"),
            "instructions": len(editor.instructions),
        }

    @app.get("/v1/instructions")
    def list_instructions() -> dict:
        if not editor.instructions:
            raise HTTPException(status_code=503, detail="checkpoint lists no instructions")
        return {
            "instructions": [
                {
                    "text": ins.text,
                    "kind": ins.kind.value,
                    "target_description": ins.target_description,
                    "attention_token": ins.attention_token,
                }
                for ins in editor.instructions
            ]
        }

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: CreateSessionBody) -> dict:
        sources = [s for s in (body.latent, body.asset, body.prompt) if s is not None]
        if len(sources) != 1:
            raise HTTPException(
                status_code=422,
                detail="provide exactly one of: latent, asset, prompt",
            )
        try:
            if body.latent is not None:
                base = Latent(
                    torch.tensor(body.latent.data, dtype=torch.float64),
                    body.latent.codec_id or codec.codec_id,
                )
                if tuple(base.data.shape) != tuple(codec.latent_shape):
                    raise HTTPException(
                        status_code=422,
                        detail=f"latent shape {tuple(base.data.shape)} does not match "
                               f"codec shape {tuple(codec.latent_shape)}",
                    )
            elif body.asset is not None:
                asset = AssetSource(
                    points=torch.tensor(body.asset.points, dtype=torch.float64),
                    colors=(torch.tensor(body.asset.colors, dtype=torch.float64)
                            if body.asset.colors else None),
                    class_label=body.asset.class_label,
                )
                base = codec.encode(asset)
            else:
                digest = hashlib.sha256(body.prompt.encode()).digest()
                seed = int.from_bytes(digest[:8], "big") % (2**63)
                base = codec.random_latent(make_generator(seed))
        except HTTPException:
            raise
        except Exception as exc:  # noqa: BLE001 - map codec validation to 422
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        session = store.create(base)
        return _session_payload(session)

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        return _session_payload(_session_or_404(session_id))

    @app.get("/v1/sessions/{session_id}/latent")
    def get_head_latent(session_id: str) -> Response:
        session = _session_or_404(session_id)
        head = store.head_latent(session_id, session)
        buf = io.BytesIO()
        save_arrays(buf, {"data": head.data.numpy()}, extra={"codec_id": head.codec_id})
        return Response(content=buf.getvalue(), media_type="application/zip")

    @app.post("/v1/sessions/{session_id}/edits", status_code=201)
    def apply_edit(session_id: str, body: ApplyEditBody) -> dict:
        _session_or_404(session_id)
        if not math.isfinite(body.eta):
            raise HTTPException(status_code=422, detail="eta must be finite")
        with locks.get(session_id):
            session = store.get(session_id)
            head = store.head_latent(session_id, session)
            gen = make_generator(config.inference_seed)
            try:
                edited = editor.edit_latent(head, body.instruction, gen)
            except InstructionError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            residual = edited.data - head.data
            new_latent = fold_entry(head, residual, body.eta)
            idx = store.append_edit(session_id, body.instruction, body.eta,
                                    residual, new_latent)
            session = store.get(session_id)
        payload = _session_payload(session)
        payload["entry_index"] = idx
        return payload

    @app.patch("/v1/sessions/{session_id}/edits/{idx}")
    def set_strength(session_id: str, idx: int, body: SetStrengthBody) -> dict:
        _session_or_404(session_id)
        with locks.get(session_id):
            session = store.get(session_id)
            if not 0 <= idx < len(session.edits):
                raise HTTPException(
                    status_code=404,
                    detail=f"edit index {idx} out of range "
                           f"(session has {len(session.edits)} edits)",
                )
            latents = replay_stack(store, session_id, from_idx=idx,
                                   etas={idx: body.eta})
            store.update_entry(session_id, idx, body.eta, latents)
            session = store.get(session_id)
        return _session_payload(session)

    @app.get("/v1/sessions/{session_id}/turntable")
    def get_turntable(
        session_id: str,
        frames: int = Query(DEFAULT_TURNTABLE_FRAMES, ge=1, le=120),
        res: int | None = Query(None, ge=8, le=1024),
        frame: int | None = Query(None, ge=0),
    ) -> Response:
        session = _session_or_404(session_id)
        resolution = res if res is not None else config.camera_eval.render_resolution
        if frame is not None and frame >= frames:
            raise HTTPException(status_code=422,
                                detail=f"frame {frame} out of range for {frames} frames")
        head = store.head_latent(session_id, session)
        camera = CameraConfig(
            radius=config.camera_eval.radius,
            elevation_deg=config.camera_eval.elevation_deg,
            azimuth_range_deg=config.camera_eval.azimuth_range_deg,
            render_resolution=resolution,
        )
        viewpoints = turntable_viewpoints(camera, frames)
        fields = codec.decode(head)
        if frame is not None:
            with torch.no_grad():
                view = codec.render(fields, viewpoints[frame], resolution)
            return Response(content=rgb_png_bytes(view.rgb), media_type="image/png")
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w") as zf:
            for k, vp in enumerate(viewpoints):
                with torch.no_grad():
                    view = codec.render(fields, vp, resolution)
                zf.writestr(f"frame_{k:03d}.png", rgb_png_bytes(view.rgb))
        return Response(content=buf.getvalue(), media_type="application/zip")

    return app


def serve(editor, codec, store_dir: str | Path, port: int = 8000,
          host: str = "127.0.0.1", config: AppConfig | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(editor, codec, store_dir, config), host=host, port=port)
