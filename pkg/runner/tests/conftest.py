"""Fixtures: deterministic test scenes and a minimal stdio protocol client.

The client talks to a real subprocess exactly the way the production
consumer does.  Stdout is drained on a thread so a silent or dead server
surfaces as a timeout or a closed-stream assertion instead of a hang.
"""

from __future__ import annotations

import json
import subprocess
import sys
import threading
import time
from pathlib import Path
from queue import Empty, Queue

import numpy as np
import pytest
from PIL import Image

RESPONSE_TIMEOUT = 30.0


class BridgeClient:
    def __init__(self, args: list[str], env: dict | None = None):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "segrunner", *args],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            bufsize=1,
            env=env,
        )
        self._lines: Queue = Queue()
        self._stderr: list[str] = []
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()

    def _pump_stdout(self) -> None:
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _pump_stderr(self) -> None:
        for line in self.proc.stderr:
            self._stderr.append(line.rstrip("\n"))

    def send_raw(self, text: str) -> None:
        self.proc.stdin.write(text + "\n")
        self.proc.stdin.flush()

    def read_response(self, timeout: float = RESPONSE_TIMEOUT) -> dict:
        try:
            line = self._lines.get(timeout=timeout)
        except Empty:
            raise AssertionError(f"no response within {timeout}s") from None
        assert line is not None, "runner closed stdout"
        return json.loads(line)

    def request(self, obj: dict, timeout: float = RESPONSE_TIMEOUT) -> dict:
        self.send_raw(json.dumps(obj))
        return self.read_response(timeout)

    def stderr_text(self, contains: str | None = None, deadline: float = 2.0) -> str:
        """Joined stderr; optionally poll until ``contains`` shows up."""
        if contains is not None:
            end = time.monotonic() + deadline
            while time.monotonic() < end and contains not in "\n".join(self._stderr):
                time.sleep(0.02)
        return "\n".join(self._stderr)

    def close(self) -> int:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=10)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()
        return self.proc.returncode


@pytest.fixture
def runner_factory(tmp_path):
    """Spawn stub runners with a per-test work dir; everything closes at teardown."""
    clients: list[BridgeClient] = []

    def spawn(*args: str, work_dir: bool = True, env: dict | None = None) -> BridgeClient:
        extra: list[str] = list(args)
        path = None
        if work_dir:
            path = tmp_path / f"work{len(clients)}"
            extra += ["--work-dir", str(path)]
        client = BridgeClient(extra, env=env)
        client.work_dir = path
        clients.append(client)
        return client

    yield spawn
    for client in clients:
        client.close()


def _save(path: Path, array: np.ndarray) -> Path:
    Image.fromarray(array).save(path)
    return path


@pytest.fixture(scope="session")
def scene_512(tmp_path_factory) -> Path:
    """512x512: orange rectangle on a blue-to-teal gradient."""
    rgb = np.zeros((512, 512, 3), np.uint8)
    rgb[..., 2] = np.linspace(60, 200, 512, dtype=np.uint8)[None, :]
    rgb[..., 1] = np.linspace(30, 90, 512, dtype=np.uint8)[:, None]
    rgb[100:300, 150:350] = (210, 130, 40)
    return _save(tmp_path_factory.mktemp("scenes") / "scene512.png", rgb)


@pytest.fixture(scope="session")
def scene_odd(tmp_path_factory) -> Path:
    """300 wide by 200 high, rectangle at a known spot; exercises non-square input."""
    rgb = np.full((200, 300, 3), (25, 80, 150), np.uint8)
    rgb[40:120, 60:180] = (220, 120, 35)
    return _save(tmp_path_factory.mktemp("scenes") / "scene_odd.png", rgb)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One status line per conformance clause, when the gate ran."""
    gate = sys.modules.get("test_conformance")
    results = getattr(gate, "RESULTS", None) if gate else None
    if not results:
        return
    terminalreporter.section("bridge conformance")
    for name, status, note in results:
        suffix = f" — {note}" if note else ""
        terminalreporter.write_line(f"{status}  {name}{suffix}")
