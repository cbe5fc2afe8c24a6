"""Client side of the guest-program execution protocol.

The actual executor is a separate process speaking line-delimited JSON over
stdio (one request per line in, one response per line out, with a handshake
line on startup). This module holds the client, plus in-process stand-ins
used when the harness runs with the sandbox mocked.
"""

from __future__ import annotations

import contextlib
import io
import json
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, runtime_checkable

PROTOCOL_VERSION = "sandbox/1"

EXIT_STATUSES = ("ok", "nonzero", "timeout", "protocol_error")


@dataclass(frozen=True)
class ExecutionResult:
    exit_status: str
    stdout: str = ""
    stderr: str = ""
    duration_ms: int = 0


class SandboxError(Exception):
    pass


@runtime_checkable
class SandboxClient(Protocol):
    def run(self, source: str, timeout_ms: int = 10_000) -> ExecutionResult: ...

    def libs(self) -> list[str]: ...


class StdioSandboxClient:
    """Talks to an external runner process over stdio.

    The runner multiplexes by request id; this client issues requests
    sequentially per instance and respawns the runner if it dies.
    """

    def __init__(self, command: list[str], spawn_timeout_s: float = 15.0):
        self._command = command
        self._spawn_timeout_s = spawn_timeout_s
        self._proc: Optional[subprocess.Popen] = None
        self._libs: list[str] = []
        self._counter = 0
        self._lock = threading.Lock()

    def _ensure_process(self):
        if self._proc is not None and self._proc.poll() is None:
            return
        self._proc = subprocess.Popen(
            self._command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        handshake = self._proc.stdout.readline()
        try:
            d = json.loads(handshake)
            if d.get("protocol") != PROTOCOL_VERSION:
                raise SandboxError(f"unexpected protocol handshake: {handshake!r}")
            self._libs = list(d.get("libs", []))
        except json.JSONDecodeError as exc:
            raise SandboxError(f"bad handshake line: {handshake!r}") from exc

    def libs(self) -> list[str]:
        with self._lock:
            self._ensure_process()
            return list(self._libs)

    def run(self, source: str, timeout_ms: int = 10_000) -> ExecutionResult:
        with self._lock:
            self._ensure_process()
            self._counter += 1
            req = {
                "id": f"r{self._counter}",
                "source": source,
                "timeout_ms": timeout_ms,
                "limits": {"max_stdout_bytes": 65536, "max_memory_mb": 512},
            }
            try:
                self._proc.stdin.write(json.dumps(req) + "\n")
                self._proc.stdin.flush()
                deadline = time.monotonic() + timeout_ms / 1000.0 + self._spawn_timeout_s
                while True:
                    line = self._proc.stdout.readline()
                    if not line:
                        return ExecutionResult(exit_status="protocol_error", stderr="runner process died")
                    try:
                        resp = json.loads(line)
                    except json.JSONDecodeError:
                        continue
                    if resp.get("id") == req["id"]:
                        return ExecutionResult(
                            exit_status=resp.get("exit_status", "protocol_error"),
                            stdout=resp.get("stdout", ""),
                            stderr=resp.get("stderr", ""),
                            duration_ms=int(resp.get("duration_ms", 0)),
                        )
                    if time.monotonic() > deadline:
                        return ExecutionResult(exit_status="protocol_error", stderr="runner response timeout")
            except (BrokenPipeError, OSError) as exc:
                self._proc = None
                return ExecutionResult(exit_status="protocol_error", stderr=str(exc))

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            self._proc = None


class StaticSandbox:
    """Always returns a fixed result; the default mock for replay runs."""

    def __init__(self, result: ExecutionResult = ExecutionResult(exit_status="ok", stdout=""), libs_: tuple[str, ...] = ()):
        self._result = result
        self._libs = list(libs_)

    def libs(self) -> list[str]:
        return list(self._libs)

    def run(self, source: str, timeout_ms: int = 10_000) -> ExecutionResult:
        return self._result


class CallableSandbox:
    """Delegates to a function mapping source text to a result; for tests."""

    def __init__(self, fn: Callable[[str], ExecutionResult], libs_: tuple[str, ...] = ()):
        self._fn = fn
        self._libs = list(libs_)

    def libs(self) -> list[str]:
        return list(self._libs)

    def run(self, source: str, timeout_ms: int = 10_000) -> ExecutionResult:
        return self._fn(source)


class InProcessSandbox:
    """Executes guest source with exec() in this interpreter.

    No isolation and no timeout enforcement: strictly for trusted, checked-in
    fixture programs (demo runs without the external runner).
    """

    def __init__(self, libs_: tuple[str, ...] = ()):
        self._libs = list(libs_)

    def libs(self) -> list[str]:
        return list(self._libs)

    def run(self, source: str, timeout_ms: int = 10_000) -> ExecutionResult:
        start = time.monotonic()
        out = io.StringIO()
        err = io.StringIO()
        namespace: dict = {"__name__": "__main__"}
        try:
            with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
                exec(compile(source, "<guest>", "exec"), namespace)
            status = "ok"
        except BaseException as exc:  # guest failures must never kill the host
            err.write(f"{type(exc).__name__}: {exc}")
            status = "nonzero"
        duration_ms = int((time.monotonic() - start) * 1000)
        return ExecutionResult(exit_status=status, stdout=out.getvalue(), stderr=err.getvalue(), duration_ms=duration_ms)


def verify_tactic_requirements(sandbox: SandboxClient, libraries: tuple[str, ...]) -> list[str]:
    """Libraries a tactic needs but the sandbox does not report as importable.

    "Any builtin Python libs" is a blanket entry in tactic documents and is
    always considered satisfied.
    """
    available = {x.lower() for x in sandbox.libs()}
    missing = []
    for lib in libraries:
        if lib.lower().startswith("any builtin"):
            continue
        if lib.lower() not in available:
            missing.append(lib)
    return missing
