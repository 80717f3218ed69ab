"""Shared fixtures: repo paths and a real loopback HTTP server."""

import threading
import time
from pathlib import Path

import pytest
import uvicorn

from memengine.service import create_app

REPO_ROOT = Path(__file__).resolve().parent.parent
TRACES_DIR = REPO_ROOT / "traces"


@pytest.fixture
def mixed_trace():
    return TRACES_DIR / "mixed.jsonl"


@pytest.fixture
def labeled_trace():
    return TRACES_DIR / "labeled.jsonl"


class LoopbackServer:
    """Runs the service in a background thread on an ephemeral port."""

    def __init__(self, app=None):
        config = uvicorn.Config(app or create_app(), host="127.0.0.1", port=0,
                                log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)
        self.base_url = None

    def start(self):
        self.thread.start()
        deadline = time.time() + 15
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("loopback server did not start")
            time.sleep(0.01)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        self.base_url = f"http://127.0.0.1:{port}"
        return self

    def stop(self):
        self.server.should_exit = True
        self.thread.join(timeout=15)


@pytest.fixture(scope="session")
def loopback():
    server = LoopbackServer().start()
    yield server
    server.stop()
