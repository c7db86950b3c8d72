"""HTTP annotation service bridging stored manifests/proposals and the
review UI; records timed human decisions.

Data root layout (one subdirectory per dataset):

    <root>/<dataset>/manifest.json
    <root>/<dataset>/images/...          served statically under /files/
    <root>/<dataset>/proposals/<mode>.json   (modes "ssl" and "dc3")
    <root>/<dataset>/sessions/<session>.jsonl

Sessions persist as JSON lines compatible with the proposals module, so
stored records feed directly into consistency/speed-up reports.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .dataset import AnnotationRecord, DatasetManifest, load_manifest
from .proposals import (
    PROPOSAL_MODES,
    AnnotationSession,
    ProposalSet,
    build_report,
    load_proposals,
    load_sessions,
    save_session,
)


@dataclass
class TaskQueueState:
    """Mutable per-session bookkeeping; only touched under the store lock."""

    session: AnnotationSession
    dataset: str
    remaining: list[str]
    served_at: dict[str, float] = field(default_factory=dict)
    proposals: ProposalSet | None = None


class SessionCreate(BaseModel):
    annotator: str
    manifest: str
    mode: str = "none"
    repetition: int = 1


class AnnotationIn(BaseModel):
    image_id: str
    class_index: int


def create_app(root: str | Path, clock=time.time) -> FastAPI:
    root = Path(root)
    app = FastAPI(title="annotation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.mount("/files", StaticFiles(directory=root), name="files")

    lock = threading.Lock()
    sessions: dict[str, TaskQueueState] = {}
    manifests: dict[str, DatasetManifest] = {}

    def dataset_dirs() -> list[Path]:
        return sorted(p for p in root.iterdir() if (p / "manifest.json").exists())

    def get_manifest(name: str) -> DatasetManifest:
        if name not in manifests:
            path = root / name / "manifest.json"
            if not path.exists():
                raise HTTPException(404, f"unknown dataset {name!r}")
            manifests[name] = load_manifest(path)
        return manifests[name]

    def get_state(session_id: str) -> TaskQueueState:
        state = sessions.get(session_id)
        if state is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return state

    def session_path(state: TaskQueueState) -> Path:
        sessions_dir = root / state.dataset / "sessions"
        sessions_dir.mkdir(exist_ok=True)
        return sessions_dir / f"{state.session.session_id}.jsonl"

    @app.get("/api/datasets")
    def list_datasets() -> list[dict]:
        out = []
        for d in dataset_dirs():
            m = get_manifest(d.name)
            modes = ["none"] + [
                p.stem for p in sorted((d / "proposals").glob("*.json"))
            ] if (d / "proposals").exists() else ["none"]
            out.append(
                {
                    "name": d.name,
                    "num_classes": m.num_classes,
                    "class_names": m.class_names,
                    "n_items": len(m.items),
                    "modes": modes,
                }
            )
        return out

    @app.post("/api/sessions")
    def create_session(body: SessionCreate) -> dict:
        if body.mode not in PROPOSAL_MODES:
            raise HTTPException(422, f"mode must be one of {PROPOSAL_MODES}")
        if body.repetition < 1:
            raise HTTPException(422, "repetition must be >= 1")
        manifest = get_manifest(body.manifest)
        proposals = None
        if body.mode != "none":
            ppath = root / body.manifest / "proposals" / f"{body.mode}.json"
            if not ppath.exists():
                raise HTTPException(
                    404, f"no {body.mode!r} proposals for dataset {body.manifest!r}"
                )
            proposals = load_proposals(ppath)
        session_id = uuid.uuid4().hex[:12]
        session = AnnotationSession(
            annotator_id=body.annotator,
            proposal_mode=body.mode,
            repetition=body.repetition,
            started=clock(),
            session_id=session_id,
            manifest_name=manifest.name,
        )
        state = TaskQueueState(
            session=session,
            dataset=body.manifest,
            remaining=[it.image_id for it in manifest.items],
            proposals=proposals,
        )
        with lock:
            sessions[session_id] = state
            save_session(session, session_path(state))
        return {
            "session_id": session_id,
            "n_images": len(state.remaining),
            "num_classes": manifest.num_classes,
            "class_names": manifest.class_names,
            "mode": body.mode,
        }

    @app.get("/api/sessions/{session_id}/next")
    def next_task(session_id: str) -> dict:
        with lock:
            state = get_state(session_id)
            manifest = get_manifest(state.dataset)
            if not state.remaining:
                return {"done": True, "n_done": len(state.session.records)}
            image_id = state.remaining[0]
            # keep the first served-at on re-fetch so retries don't reset timing
            state.served_at.setdefault(image_id, clock())
            item = manifest.item_by_id(image_id)
            task = {
                "done": False,
                "image_id": image_id,
                "image_url": f"/files/{state.dataset}/{item.image_path}",
                "index": len(state.session.records),
                "total": len(state.session.records) + len(state.remaining),
            }
            if state.proposals is not None:
                entry = state.proposals.entry_for(image_id)
                if entry.kind == "certain":
                    task["proposal"] = {
                        "kind": "certain",
                        "class_index": entry.proposed_class,
                        "class_name": manifest.class_names[entry.proposed_class],
                        "p_a": entry.p_a,
                    }
                else:
                    cluster = state.proposals.cluster_for(entry.cluster_id)
                    task["proposal"] = {
                        "kind": "fuzzy",
                        "cluster_id": cluster.cluster_id,
                        "description": cluster.description,
                        "suggested_class": state.proposals.suggested_class(entry),
                        "p_a": entry.p_a,
                        "members": [
                            {
                                "image_id": mid,
                                "image_url": "/files/{}/{}".format(
                                    state.dataset, manifest.item_by_id(mid).image_path
                                ),
                            }
                            for mid in cluster.members
                        ],
                    }
            return task

    @app.post("/api/sessions/{session_id}/annotations")
    def annotate(session_id: str, body: AnnotationIn) -> dict:
        with lock:
            state = get_state(session_id)
            manifest = get_manifest(state.dataset)
            if not 0 <= body.class_index < manifest.num_classes:
                raise HTTPException(422, "class index out of range")
            for record in state.session.records:
                if record.image_id == body.image_id:
                    if record.class_index == body.class_index:
                        # idempotent replay of the same decision
                        return {"recorded": True, "duration": record.duration, "replay": True}
                    raise HTTPException(409, f"{body.image_id} already annotated")
            if body.image_id not in state.served_at:
                raise HTTPException(409, f"{body.image_id} was not served in this session")
            duration = max(0.0, clock() - state.served_at[body.image_id])
            record = AnnotationRecord(
                image_id=body.image_id,
                annotator_id=state.session.annotator_id,
                class_index=body.class_index,
                repetition=state.session.repetition,
                timestamp=clock(),
                duration=duration,
            )
            state.session.records.append(record)
            if body.image_id in state.remaining:
                state.remaining.remove(body.image_id)
            if not state.remaining:
                state.session.ended = clock()
            save_session(state.session, session_path(state))
            return {
                "recorded": True,
                "duration": duration,
                "n_done": len(state.session.records),
                "n_remaining": len(state.remaining),
            }

    @app.get("/api/report")
    def report(manifest: str) -> dict:
        sessions_dir = root / manifest / "sessions"
        get_manifest(manifest)  # 404 on unknown dataset
        stored = load_sessions(sessions_dir) if sessions_dir.exists() else []
        stored = [s for s in stored if s.records]
        if not stored:
            return {"manifest": manifest, "n_records": 0, "annotators": {}, "modes": {}}
        rep = build_report(stored)
        return {
            "manifest": manifest,
            "n_records": sum(len(s.records) for s in stored),
            **rep.to_dict(),
        }

    return app


def serve(root: str | Path, port: int = 8000, host: str = "127.0.0.1") -> None:
    import uvicorn

    uvicorn.run(create_app(root), host=host, port=port)
