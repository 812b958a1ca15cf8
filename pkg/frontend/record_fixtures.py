#!/usr/bin/env python3
"""Record real HTTP API fixtures for the frontend test suite.

Drives one scripted 3-turn session (clarify -> investigate -> resolve)
against the in-process service and captures every wire payload verbatim.
Regenerate with: python3 frontend/record_fixtures.py
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fastapi.testclient import TestClient  # noqa: E402

from dqa.artifacts import build_bundle  # noqa: E402
from dqa.corpus import SyntheticCorpusConfig, generate_synthetic  # noqa: E402
from dqa.dialogue import PolicyParams  # noqa: E402
from dqa.service import create_app  # noqa: E402

OUT = Path(__file__).resolve().parent / "test" / "fixtures.json"

USER_TURNS = [
    "the problem started this morning. my computer is acting up. the vpn shows errors every morning.",
    "Yes, exactly: vpn keeps failing with a certificate warning.",
    "I checked the vpn certificate: it is definitely expired.",
]


def record() -> None:
    tickets, kb, _ = generate_synthetic(
        SyntheticCorpusConfig(seed=5, num_causes=3, tickets_per_cause=(20, 20))
    )
    bundle = build_bundle(tickets, kb, k_clusters=3, seed=5)
    app = create_app(bundle, params=PolicyParams(k_retrieve=15, tau_probe=0.45))
    client = TestClient(app)

    created = client.post("/sessions", json={"variant": "dqa"})
    session_id = created.json()["session_id"]
    turns = []
    for text in USER_TURNS:
        resp = client.post(f"/sessions/{session_id}/turns", json={"text": text})
        assert resp.status_code == 200, resp.text
        turns.append({"request": {"text": text}, "response": resp.json()})
    snapshot = client.get(f"/sessions/{session_id}").json()
    assert turns[-1]["response"]["action_type"] == "resolve", "expected a resolve at turn 3"

    fixtures = {
        "note": "recorded from the live service; regenerate with record_fixtures.py",
        "create": {"request": {"variant": "dqa"}, "response": created.json()},
        "turns": turns,
        "snapshot": snapshot,
        "health": client.get("/health").json(),
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(fixtures, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {OUT} ({len(turns)} turns, final action "
          f"{turns[-1]['response']['action_type']!r})")


if __name__ == "__main__":
    record()
