import base64
import io

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient
from PIL import Image

from roundseg.core import BinaryMask, ImageGrid
from roundseg.datagen import GenConfig, generate_scene
from roundseg.errors import PlacementFailure
from roundseg.inference import JcmConfig, run_round, start_session
from roundseg.model import SegModel, load_model
from roundseg.model.jcm import FeatureCorrector, QualityJudge
from roundseg.service import create_app


@pytest.fixture(scope="module")
def model(tiny_checkpoint):
    return load_model(tiny_checkpoint)


@pytest.fixture()
def client(model, tmp_path):
    torch.manual_seed(5)
    judge = QualityJudge(32).eval()
    corrector = FeatureCorrector(32).eval()
    app = create_app(model=model, judge=judge, corrector=corrector, sessions_dir=tmp_path / "sessions")
    with TestClient(app) as c:
        yield c, model, tmp_path


def _png_b64(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def test_healthz(client):
    c, _, _ = client
    r = c.get("/healthz")
    assert r.status_code == 200
    assert r.json()["model_loaded"] is True


def test_create_from_seed_matches_generator(client):
    c, model, _ = client
    r = c.post("/sessions", json={"seed": 7})
    assert r.status_code == 200
    body = r.json()
    assert body["width"] == 128 and body["height"] == 128
    seed = body["scene"]["used_seed"]
    scene = None
    s = 7
    while scene is None:
        try:
            scene = generate_scene(s, GenConfig(seed=7, image_size=128))
        except PlacementFailure:
            s += 1
    assert s == seed
    img = np.asarray(Image.open(io.BytesIO(base64.b64decode(body["image_base64"]))))
    assert np.array_equal(img, np.round(scene.image.pixels * 255).astype(np.uint8))
    assert len(body["scene"]["entities"]) == len(scene.entities)


def test_create_from_upload_echoes_dims(client):
    c, _, _ = client
    rng = np.random.default_rng(5)
    arr = (rng.random((64, 64)) * 255).astype(np.uint8)
    r = c.post("/sessions", json={"image_base64": _png_b64(arr)})
    assert r.status_code == 200
    assert r.json()["width"] == 64 and r.json()["height"] == 64


def test_create_distinct_ids_and_bad_image(client):
    c, _, _ = client
    a = c.post("/sessions", json={"seed": 3}).json()["session_id"]
    b = c.post("/sessions", json={"seed": 3}).json()["session_id"]
    assert a != b
    r = c.post("/sessions", json={"image_base64": base64.b64encode(b"junk").decode()})
    assert r.status_code == 400
    # undecodable dims (not divisible by 16)
    arr = np.zeros((50, 50), dtype=np.uint8)
    r = c.post("/sessions", json={"image_base64": _png_b64(arr)})
    assert r.status_code == 400
    r = c.post("/sessions", json={})
    assert r.status_code == 400


def test_post_round_matches_library(client):
    c, model, _ = client
    rng = np.random.default_rng(6)
    arr = (rng.random((64, 64)) * 255).astype(np.uint8)
    payload = _png_b64(arr)
    sid = c.post("/sessions", json={"image_base64": payload}).json()["session_id"]
    c.patch(f"/sessions/{sid}/config", json={"jcm": False})
    r = c.post(f"/sessions/{sid}/rounds", json={"query_text": "Please segment the organ-a.", "ref_round": 0})
    assert r.status_code == 200
    got = r.json()

    image = ImageGrid(arr.astype(np.float32) / np.float32(255.0))
    state = start_session(image, model)
    want = run_round(state, "Please segment the organ-a.", 0, model, JcmConfig(enabled=False))
    got_mask = np.asarray(Image.open(io.BytesIO(base64.b64decode(got["mask_base64"])))) == 255
    assert np.array_equal(got_mask, want.mask.bits)
    assert got["answer_text"] == want.answer_text
    # raw PNG endpoint byte-decodes to the same mask
    raw = c.get(f"/sessions/{sid}/rounds/1/mask.png")
    assert raw.status_code == 200
    assert np.array_equal(np.asarray(Image.open(io.BytesIO(raw.content))) == 255, want.mask.bits)


def test_invalid_ref_round_422(client):
    c, _, _ = client
    sid = c.post("/sessions", json={"seed": 2}).json()["session_id"]
    r = c.post(f"/sessions/{sid}/rounds", json={"query_text": "q", "ref_round": 3})
    assert r.status_code == 422


def test_unknown_session_404(client):
    c, _, _ = client
    assert c.get("/sessions/nope").status_code == 404
    assert c.post("/sessions/nope/rounds", json={"query_text": "q", "ref_round": 0}).status_code == 404


def test_config_patch_validation_and_effect(client):
    c, _, _ = client
    sid = c.post("/sessions", json={"seed": 4}).json()["session_id"]
    assert c.patch(f"/sessions/{sid}/config", json={"beta": 2.0}).status_code == 422
    r = c.patch(f"/sessions/{sid}/config", json={"beta": 0.25, "jcm": True})
    assert r.json() == {"beta": 0.25, "jcm": True}
    # beta=0 with gate on decodes exactly like gate off
    c.patch(f"/sessions/{sid}/config", json={"beta": 0.0})
    on = c.post(f"/sessions/{sid}/rounds", json={"query_text": "Outline the organ-a.", "ref_round": 0}).json()
    assert on["corrected"] is False


def test_history_is_append_only_and_stable(client):
    c, _, _ = client
    sid = c.post("/sessions", json={"seed": 9}).json()["session_id"]
    for k in range(3):
        c.post(f"/sessions/{sid}/rounds", json={"query_text": "Mark the organ-a region.", "ref_round": 0})
    h1 = c.get(f"/sessions/{sid}").json()
    h2 = c.get(f"/sessions/{sid}").json()
    assert len(h1["rounds"]) == 3
    assert h1 == h2
    assert [r["round_index"] for r in h1["rounds"]] == [1, 2, 3]


def test_restart_replays_sessions(model, tmp_path):
    sessions = tmp_path / "persist"
    app1 = create_app(model=model, sessions_dir=sessions)
    with TestClient(app1) as c1:
        sid = c1.post("/sessions", json={"seed": 11}).json()["session_id"]
        c1.post(f"/sessions/{sid}/rounds", json={"query_text": "Please segment the organ-a.", "ref_round": 0})
        c1.post(f"/sessions/{sid}/rounds", json={"query_text": "Outline the organ-b.", "ref_round": 1})
        before = c1.get(f"/sessions/{sid}").json()
    app2 = create_app(model=model, sessions_dir=sessions)
    with TestClient(app2) as c2:
        after = c2.get(f"/sessions/{sid}").json()
    assert after == before


def test_concurrent_round_409(model, tmp_path):
    import threading
    import time as _time

    app = create_app(model=model)
    with TestClient(app) as c:
        sid = c.post("/sessions", json={"seed": 12}).json()["session_id"]
        res = app.state.core.get(sid)
        codes = []

        def post():
            r = c.post(f"/sessions/{sid}/rounds", json={"query_text": "Mark the organ-a region.", "ref_round": 0})
            codes.append(r.status_code)

        with res.lock:  # simulate an in-flight round
            t = threading.Thread(target=post)
            t.start()
            t.join()
        assert codes == [409]
        post()
        assert codes[-1] == 200
