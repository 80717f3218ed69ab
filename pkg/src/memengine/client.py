"""HTTP client mirroring the local model interface, one session per client."""

from __future__ import annotations

import httpx

from .core import RecallResult, ScoredRecord, Trajectory
from .errors import MemEngineError


class ServiceError(MemEngineError):
    """The service answered with an error status."""

    def __init__(self, status, payload):
        reason = payload.get("reason") if isinstance(payload, dict) else payload
        super().__init__(f"service returned {status}: {reason}")
        self.status = status
        self.payload = payload


class MemoryClient:
    """Remote counterpart of a MemoryModel.

    Create one client per session; verbs raise ServiceError on non-2xx
    answers and otherwise return the same shapes as the local model.
    """

    def __init__(self, base_url, timeout=30.0):
        self._http = httpx.Client(base_url=base_url, timeout=timeout)
        self.session_id = None

    # -- lifecycle ---------------------------------------------------------

    def create_session(self, kind, overlay=None):
        payload = {"kind": kind}
        if overlay:
            payload["config"] = overlay
        body = self._post("/sessions", payload, expect=201)
        self.session_id = body["session_id"]
        return self.session_id

    def delete_session(self):
        response = self._http.delete(f"/sessions/{self.session_id}")
        return self._check(response)

    def health(self):
        return self._check(self._http.get("/healthz"))

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- verbs ---------------------------------------------------------------

    def store(self, text, now=None):
        body = self._verb("store", {"text": text, "now": now})
        return body["record_id"]

    def recall(self, text, top_k=None, token_budget=None, now=None):
        body = self._verb("recall", {
            "text": text, "top_k": top_k,
            "token_budget": token_budget, "now": now,
        })
        items = [ScoredRecord(**item) for item in body["items"]]
        return RecallResult(items, body["context"])

    def manage(self, now=None):
        return self._verb("manage", {"now": now})["report"]

    def optimize(self, trajectory, now=None):
        if isinstance(trajectory, Trajectory):
            trajectory = trajectory.to_dict()
        return self._verb("optimize",
                          {"trajectory": trajectory, "now": now})["report"]

    def reset(self):
        return self._verb("reset", {})

    def dump(self):
        response = self._http.get(f"/sessions/{self.session_id}/dump")
        return self._check(response)

    # -- plumbing --------------------------------------------------------------

    def _verb(self, verb, payload):
        payload = {k: v for k, v in payload.items() if v is not None}
        return self._post(f"/sessions/{self.session_id}/{verb}", payload)

    def _post(self, path, payload, expect=200):
        response = self._http.post(path, json=payload)
        return self._check(response, expect)

    @staticmethod
    def _check(response, expect=200):
        if response.status_code != expect:
            try:
                payload = response.json()
            except ValueError:
                payload = response.text
            raise ServiceError(response.status_code, payload)
        return response.json()
