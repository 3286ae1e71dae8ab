"""Record canonical HTTP interactions against a toy-backed editing service.

The web UI's tests replay these files verbatim instead of talking to a live
server: each fixture is an ordered list of request/response pairs, with
binary bodies base64-encoded.  While recording, this script also asserts the
service-side guarantees the UI tests rely on (the edited turntable differs
from the base one; scrubbing the strength back to zero restores the base
frames bitwise), so a fixture that records successfully is self-consistent.

Regenerate from ``frontend/`` with the latedit package importable:

    python3 tools/record_fixtures.py
"""

import base64
import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from latedit.config import AppConfig
from latedit.core import CameraConfig, EditInstruction, EditKind
from latedit.editor import ToyBaseDenoiser, init_from_pretrained
from latedit.service import create_app
from latedit.toytask import make_color_shift_task

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
FRAMES = 4
RES = 16


class Recorder:
    def __init__(self, client: TestClient) -> None:
        self.client = client
        self.interactions: list[dict] = []

    def json_call(self, method: str, path: str, body=None, expect: int = 200):
        kwargs = {} if body is None else {"json": body}
        resp = self.client.request(method, path, **kwargs)
        assert resp.status_code == expect, (method, path, resp.status_code, resp.text)
        record = {
            "request": {"method": method, "path": path},
            "response": {
                "status": resp.status_code,
                "content_type": "application/json",
                "json": resp.json(),
            },
        }
        if body is not None:
            record["request"]["body"] = body
        self.interactions.append(record)
        return resp.json()

    def binary_call(self, method: str, path: str, expect: int = 200) -> bytes:
        resp = self.client.request(method, path)
        assert resp.status_code == expect, (method, path, resp.status_code)
        self.interactions.append({
            "request": {"method": method, "path": path},
            "response": {
                "status": resp.status_code,
                "content_type": resp.headers.get("content-type", ""),
                "body_b64": base64.b64encode(resp.content).decode("ascii"),
            },
        })
        return resp.content

    def write(self, name: str) -> None:
        path = FIXTURE_DIR / name
        path.write_text(json.dumps({"interactions": self.interactions}, indent=2))
        print(f"{name}: {len(self.interactions)} interactions, {path.stat().st_size} bytes")


def build_client(store_dir: str) -> TestClient:
    task = make_color_shift_task(grid_size=2)
    instructions = [
        task.instruction,
        EditInstruction(
            text="give it a santa hat",
            kind=EditKind.LOCAL,
            target_description="a blob grid wearing a santa hat",
            attention_token="santa",
        ),
    ]
    base = ToyBaseDenoiser.identity(task.codec.latent_shape, hidden=8)
    editor = init_from_pretrained(base, instructions, task.schedule)
    config = AppConfig(camera_eval=CameraConfig(render_resolution=RES))
    return TestClient(create_app(editor, task.codec, store_dir, config=config))


def frame_path(sid: str, k: int) -> str:
    return f"/v1/sessions/{sid}/turntable?frames={FRAMES}&res={RES}&frame={k}"


def turntable(rec: Recorder, sid: str) -> list[bytes]:
    return [rec.binary_call("GET", frame_path(sid, k)) for k in range(FRAMES)]


def record_catalog(client: TestClient) -> None:
    rec = Recorder(client)
    rec.json_call("GET", "/v1/healthz")
    catalog = rec.json_call("GET", "/v1/instructions")
    texts = [i["text"] for i in catalog["instructions"]]
    assert texts == ["shift the colors", "give it a santa hat"]
    rec.write("catalog.json")


def record_edit_scrub(client: TestClient) -> None:
    rec = Recorder(client)
    rec.json_call("GET", "/v1/instructions")
    session = rec.json_call("POST", "/v1/sessions", {"prompt": "demo blob"}, expect=201)
    sid = session["session_id"]
    base = turntable(rec, sid)

    applied = rec.json_call(
        "POST", f"/v1/sessions/{sid}/edits",
        {"instruction": "shift the colors", "eta": 1.0}, expect=201,
    )
    assert [e["instruction"] for e in applied["edits"]] == ["shift the colors"]
    edited = turntable(rec, sid)
    assert edited != base, "the edit must change the turntable"

    # rapid scrubbing coalesces client-side: only the settled values hit the wire
    rec.json_call("PATCH", f"/v1/sessions/{sid}/edits/0", {"eta": 0.5})
    turntable(rec, sid)
    rec.json_call("PATCH", f"/v1/sessions/{sid}/edits/0", {"eta": 0.0})
    zeroed = turntable(rec, sid)
    assert zeroed == base, "strength 0 must restore the base turntable bitwise"

    final = rec.json_call("GET", f"/v1/sessions/{sid}")
    assert [(e["instruction"], e["eta"]) for e in final["edits"]] == [("shift the colors", 0.0)]
    rec.write("edit_scrub.json")


def record_errors(client: TestClient) -> None:
    rec = Recorder(client)
    session = rec.json_call("POST", "/v1/sessions", {"prompt": "demo blob"}, expect=201)
    sid = session["session_id"]
    turntable(rec, sid)
    failed = rec.json_call(
        "POST", f"/v1/sessions/{sid}/edits",
        {"instruction": "paint it neon", "eta": 1.0}, expect=422,
    )
    assert "shift the colors" in failed["detail"], "422 detail should list known instructions"
    rec.write("errors.json")


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as store:
        with build_client(store) as client:
            record_catalog(client)
            record_edit_scrub(client)
            record_errors(client)


if __name__ == "__main__":
    main()
