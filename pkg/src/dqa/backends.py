"""Pluggable generation-side backends over one small HTTP JSON protocol.

The engine, simulated user, and judge all run deterministic defaults; each
slot can be replaced by a remote model through these clients without touching
the calling code. POST {prompt: str, ...} -> {text: str} for generation, and
POST {transcript, rubric} -> {diagnosis, resolution, antipattern_ok} for
judging.
"""

from __future__ import annotations

from typing import Protocol

from .errors import RemoteProviderError


class GenerationBackend(Protocol):
    def complete(self, prompt: str) -> str: ...


class HttpGenerationBackend:
    def __init__(self, endpoint: str, *, model: str | None = None,
                 auth_token: str | None = None, timeout: float = 30.0, transport=None):
        import httpx

        self.endpoint = endpoint
        self.model = model
        headers = {}
        if auth_token:
            headers["authorization"] = f"Bearer {auth_token}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def complete(self, prompt: str) -> str:
        payload: dict = {"prompt": prompt}
        if self.model:
            payload["model"] = self.model
        try:
            resp = self._client.post(self.endpoint, json=payload)
        except Exception as exc:
            raise RemoteProviderError(f"generation endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise RemoteProviderError(
                f"generation endpoint returned {resp.status_code}",
                status=resp.status_code,
                retryable=resp.status_code >= 500,
            )
        text = resp.json().get("text")
        if not isinstance(text, str):
            raise RemoteProviderError("generation endpoint returned no text", retryable=False)
        return text


class HttpJudgeBackend:
    """Plug-in judge: receives the transcript plus the scenario rubric and must
    return the three criterion scores; the prompt is the backend's business."""

    def __init__(self, endpoint: str, *, auth_token: str | None = None,
                 timeout: float = 60.0, transport=None):
        import httpx

        self.endpoint = endpoint
        headers = {}
        if auth_token:
            headers["authorization"] = f"Bearer {auth_token}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def judge(self, transcript: dict, rubric: dict) -> dict:
        try:
            resp = self._client.post(
                self.endpoint, json={"transcript": transcript, "rubric": rubric}
            )
        except Exception as exc:
            raise RemoteProviderError(f"judge endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise RemoteProviderError(
                f"judge endpoint returned {resp.status_code}",
                status=resp.status_code,
                retryable=resp.status_code >= 500,
            )
        data = resp.json()
        for key in ("diagnosis_score", "resolution_score", "antipattern_ok"):
            if key not in data:
                raise RemoteProviderError(f"judge response missing {key!r}", retryable=False)
        return data
