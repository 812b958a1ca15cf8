import jsonschema
import pytest
from fastapi.testclient import TestClient

from dqa.service import STATE_SNAPSHOT_SCHEMA, TURN_RESPONSE_SCHEMA, create_app

COMPLAINT = "vpn keeps failing with a certificate warning. vpn error message mentions expired certificate."


@pytest.fixture(scope="module")
def client(bundle):
    return TestClient(create_app(bundle))


def _create(client, variant="dqa"):
    resp = client.post("/sessions", json={"variant": variant})
    assert resp.status_code == 201
    return resp.json()["session_id"]


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert body["artifacts_loaded"]


def test_create_then_fetch_empty_history(client):
    sid = _create(client)
    snap = client.get(f"/sessions/{sid}").json()
    assert snap["history"] == []
    assert snap["turns"] == 0
    assert not snap["terminated"]


def test_session_ids_distinct_and_unguessable(client):
    a, b = _create(client), _create(client)
    assert a != b
    assert len(a) == 32  # 128 bits hex


def test_unknown_variant_rejected(client):
    resp = client.post("/sessions", json={"variant": "super_rag"})
    assert resp.status_code == 422


def test_post_turn_returns_candidates_and_weights(client):
    sid = _create(client)
    resp = client.post(f"/sessions/{sid}/turns", json={"text": COMPLAINT})
    assert resp.status_code == 200
    body = resp.json()
    jsonschema.validate(body, TURN_RESPONSE_SCHEMA)
    jsonschema.validate(body["state"], STATE_SNAPSHOT_SCHEMA)
    weights = [c["weight"] for c in body["state"]["candidates"]]
    assert weights
    assert abs(sum(weights) - 1.0) < 1e-6
    assert body["action_type"] in ("clarify", "investigate", "resolve")


def test_get_state_matches_last_turn(client):
    sid = _create(client)
    turn = client.post(f"/sessions/{sid}/turns", json={"text": COMPLAINT}).json()
    snap = client.get(f"/sessions/{sid}").json()
    assert snap["state"] == turn["state"]
    assert [u["text"] for u in snap["history"]][0] == COMPLAINT


def test_turn_after_resolve_conflicts(client):
    sid = _create(client)
    terminated = False
    for _ in range(15):
        body = client.post(f"/sessions/{sid}/turns", json={"text": COMPLAINT}).json()
        if body["terminated"]:
            terminated = True
            break
    assert terminated
    resp = client.post(f"/sessions/{sid}/turns", json={"text": "hello?"})
    assert resp.status_code == 409


def test_concurrent_turn_conflicts(client):
    sid = _create(client)
    app = client.app
    session = app.state.sessions[sid]
    assert session.lock.acquire(blocking=False)
    try:
        resp = client.post(f"/sessions/{sid}/turns", json={"text": COMPLAINT})
        assert resp.status_code == 409
    finally:
        session.lock.release()


def test_empty_text_rejected(client):
    sid = _create(client)
    resp = client.post(f"/sessions/{sid}/turns", json={"text": "   "})
    assert resp.status_code == 422


def test_unknown_session_not_found(client):
    assert client.get("/sessions/doesnotexist").status_code == 404
    assert client.post("/sessions/doesnotexist/turns", json={"text": "x"}).status_code == 404


def test_list_sessions(client):
    before = len(client.get("/sessions").json()["sessions"])
    _create(client)
    after = client.get("/sessions").json()["sessions"]
    assert len(after) == before + 1
    assert all({"session_id", "variant", "turns", "terminated"} <= set(s) for s in after)


def test_service_unavailable_without_artifacts():
    bare = TestClient(create_app(None))
    assert bare.get("/health").json()["status"] == "degraded"
    assert bare.post("/sessions", json={"variant": "dqa"}).status_code == 503


def test_persistence_restores_snapshot(tmp_path, bundle):
    app = create_app(bundle, persist_dir=tmp_path)
    client = TestClient(app)
    sid = _create(client)
    client.post(f"/sessions/{sid}/turns", json={"text": COMPLAINT})
    files = list(tmp_path.glob("*.json"))
    assert any(sid in f.name for f in files)


def test_sessions_restored_on_restart(tmp_path, bundle):
    app1 = create_app(bundle, persist_dir=tmp_path)
    c1 = TestClient(app1)
    sid = _create(c1)
    turn = c1.post(f"/sessions/{sid}/turns", json={"text": COMPLAINT}).json()

    app2 = create_app(bundle, persist_dir=tmp_path)
    c2 = TestClient(app2)
    snap = c2.get(f"/sessions/{sid}").json()
    assert snap["state"] == turn["state"]
    assert [u["text"] for u in snap["history"]][0] == COMPLAINT
    if not snap["terminated"]:
        resp = c2.post(f"/sessions/{sid}/turns", json={"text": "anything new?"})
        assert resp.status_code == 200
