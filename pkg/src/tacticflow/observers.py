"""Observers: turn parsed agent actions into observations, executing
agent-written programs through the sandbox protocol where the action calls
for one."""

from __future__ import annotations

import re
from typing import Optional

from .codec import ActionSpec, CodeFence, Observation, ParsedResponse, Tactic, extract_code_fence
from .sandbox import SandboxClient

PARSER_OBSERVER = "Action parser"

# Older fixtures spell the runner observer "python interpreter", newer ones
# "Runner"; both are accepted on parse, and the tactic decides what we emit.
RUNNER_OBSERVER_NAMES = ("Runner", "python interpreter")

TACTIC_OK_PREFIX = "Tactic execution successful. Tactic output:"
TACTIC_FAIL_PREFIX = "Tactic execution failed."

_IMPORT_RE = re.compile(r"^\s*(import\s+\w|from\s+\w)", re.MULTILINE)
_DEF_MAIN_RE = re.compile(r"^\s*def\s+main\s*\(", re.MULTILINE)
_CALL_MAIN_RE = re.compile(r"^(?!\s*def\s)\s*main\s*\(\s*\)", re.MULTILINE)


def assemble_program(fence_source: str, tactic: Tactic) -> str:
    """Build the runnable program from an agent-emitted code fence.

    Agents that emit only main() get the tactic template's preamble (imports
    and helpers) prepended; agents that emit a full program (own imports) run
    verbatim. A main() call is appended if main() is defined but never
    invoked.
    """
    source = fence_source
    if tactic.code_template and _DEF_MAIN_RE.search(source) and not _IMPORT_RE.search(source):
        preamble = _template_preamble(tactic.code_template)
        if preamble:
            source = preamble.rstrip() + "\n\n" + source
    if _DEF_MAIN_RE.search(source) and not _CALL_MAIN_RE.search(source):
        source = source.rstrip() + "\n\nmain()\n"
    return source


def _template_preamble(template: str) -> str:
    """Template text before its own main() stub."""
    m = _DEF_MAIN_RE.search(template)
    if m is None:
        return template
    return template[: m.start()]


def observe(
    action: ParsedResponse,
    tactic: Tactic,
    sandbox: Optional[SandboxClient] = None,
    timeout_ms: int = 10_000,
) -> list[Observation]:
    """Produce the observations for one validated action.

    Unknown actions were turned into parser error observations upstream; this
    sees only actions present in the tactic's action space.
    """
    spec = tactic.find_action(action.action_name)
    assert spec is not None, f"action {action.action_name!r} not validated against tactic"

    if spec.terminal:
        return [Observation(observer=PARSER_OBSERVER, status="ok", content="Answer recorded")]

    observations = [
        Observation(observer=PARSER_OBSERVER, status="ok", content=f"Performing action: {spec.name}")
    ]
    if spec.produces_program:
        observations.append(_run_program(action.action_output, tactic, sandbox, timeout_ms))
    return observations


def _run_program(
    output_text: str, tactic: Tactic, sandbox: Optional[SandboxClient], timeout_ms: int
) -> Observation:
    fence = extract_code_fence(output_text)
    if fence is None:
        return Observation(observer=tactic.observer_id, status="error", content="no program found")
    if sandbox is None:
        return Observation(observer=tactic.observer_id, status="error", content="no sandbox configured")
    program = assemble_program(fence.source, tactic)
    result = sandbox.run(program, timeout_ms=timeout_ms)
    if result.exit_status == "ok":
        return Observation(observer=tactic.observer_id, status="ok", content="stdout:\n" + result.stdout)
    if result.exit_status == "timeout":
        content = f"execution timed out after {result.duration_ms} ms"
    elif result.exit_status == "protocol_error":
        content = f"sandbox protocol failure: {result.stderr}"
    else:
        content = result.stderr or "program exited with an error"
    return Observation(observer=tactic.observer_id, status="error", content=content)
