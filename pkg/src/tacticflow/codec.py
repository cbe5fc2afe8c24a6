"""Parsing and rendering between structured trajectories/tactics and their
textual formats, plus JSONL persistence.

The textual forms exist for prompting and fixtures; canonical storage is
structured JSONL.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

TRAJECTORY_STATUSES = ("running", "answered", "max_steps", "error_limit")

RESPONSE_SEP = "=== response ==="
OBSERVATIONS_SEP = "=== observations ==="
TRAJECTORY_HEADER = "=== trajectory ==="

CALL_TACTIC_ACTION = "Call tactic"


class CodecError(Exception):
    """Base class for parse failures in this module."""


class TacticParseError(CodecError):
    pass


class FormatError(CodecError):
    """LLM response is missing mandatory headers."""


class UnknownActionError(CodecError):
    def __init__(self, name: str, allowed: list[str]):
        super().__init__(f"unknown action {name!r}; allowed: {', '.join(allowed)}")
        self.name = name
        self.allowed = allowed


# ---------------------------------------------------------------------------
# Tactics


@dataclass(frozen=True)
class ActionSpec:
    """One allowable action of a tactic: input, functionality, output."""

    name: str
    input_desc: str
    functionality_desc: str
    output_desc: str
    terminal: bool = False
    produces_program: bool = False


@dataclass(frozen=True)
class Tactic:
    """A problem-solving guideline: description, action space, code template,
    and the observer bound to it."""

    name: str
    description: str
    action_specs: tuple[ActionSpec, ...]
    code_template: str = ""
    code_template_lang: str = "python"
    libraries: tuple[str, ...] = ()
    observer_id: str = "python interpreter"

    def action_names(self) -> list[str]:
        return [a.name for a in self.action_specs]

    def terminal_action(self) -> ActionSpec:
        return next(a for a in self.action_specs if a.terminal)

    def find_action(self, name: str) -> Optional[ActionSpec]:
        for a in self.action_specs:
            if a.name == name:
                return a
        return None


_SECTION_NAME = "### Tactic name"
_SECTION_TYPE = "### Problem type and tactic"
_SECTION_DETAILS = "### Tactic details"
_MARK_TEMPLATE = "**Code template**"
_MARK_ACTIONS = "**Action space**"
_MARK_ACTION = "#A#"

_LIBS_HEADER = "You will use the following python libs to solve the problem:"
_TEMPLATE_INTRO = "You will use the following code template to solve the problem."
_ACTIONS_INTRO = (
    "You will use and ONLY use the following actions to solve the problem.\n"
    "You can apply actions in arbitrary order and arbitrary number of times."
)


def _find_line(lines: list[str], marker: str, start: int = 0) -> int:
    for i in range(start, len(lines)):
        if lines[i].strip() == marker:
            return i
    return -1


def _block_between(lines: list[str], start: int, end: int) -> str:
    return "\n".join(lines[start:end]).strip("\n").rstrip()


def parse_tactic_document(doc: str, observer_id: str = "python interpreter") -> Tactic:
    """Parse a tactic document into its structured form.

    Raises TacticParseError naming the section when a mandatory part is
    missing, and on duplicate action names.
    """
    lines = doc.splitlines()
    i_name = _find_line(lines, _SECTION_NAME)
    i_type = _find_line(lines, _SECTION_TYPE)
    i_details = _find_line(lines, _SECTION_DETAILS)
    i_actions = _find_line(lines, _MARK_ACTIONS)
    for idx, section in (
        (i_name, _SECTION_NAME),
        (i_type, _SECTION_TYPE),
        (i_details, _SECTION_DETAILS),
        (i_actions, _MARK_ACTIONS),
    ):
        if idx < 0:
            raise TacticParseError(f"missing mandatory section: {section}")

    name_block = _block_between(lines, i_name + 1, i_type)
    name = name_block.splitlines()[0].strip() if name_block else ""
    if not name:
        raise TacticParseError(f"missing mandatory section: {_SECTION_NAME}")

    description = _block_between(lines, i_type + 1, i_details)
    if not description:
        raise TacticParseError(f"missing mandatory section: {_SECTION_TYPE}")

    i_template = _find_line(lines, _MARK_TEMPLATE, i_details)
    if i_template >= i_actions:
        i_template = -1

    libs_end = i_template if i_template >= 0 else i_actions
    libraries: list[str] = []
    i_libs = _find_line(lines, _LIBS_HEADER, i_details)
    if 0 <= i_libs < libs_end:
        for line in lines[i_libs + 1 : libs_end]:
            if not line.strip():
                break
            libraries.append(line.strip())

    code_template = ""
    code_template_lang = "python"
    if i_template >= 0:
        fence = extract_code_fence("\n".join(lines[i_template:i_actions]))
        if fence is not None:
            code_template, code_template_lang = fence.source, fence.language

    specs = _parse_action_blocks(lines[i_actions + 1 :])
    if not specs:
        raise TacticParseError("missing mandatory section: #A# action blocks")
    names = [s.name for s in specs]
    if len(names) != len(set(names)):
        dup = next(n for n in names if names.count(n) > 1)
        raise TacticParseError(f"duplicate action name: {dup}")
    terminals = [s for s in specs if s.terminal]
    if len(terminals) != 1:
        raise TacticParseError(
            f"expected exactly one terminal action (name containing 'answer'), found {len(terminals)}"
        )

    return Tactic(
        name=name,
        description=description,
        action_specs=tuple(specs),
        code_template=code_template,
        code_template_lang=code_template_lang,
        libraries=tuple(libraries),
        observer_id=observer_id,
    )


def _parse_action_blocks(lines: list[str]) -> list[ActionSpec]:
    blocks: list[tuple[str, list[str]]] = []
    current: Optional[tuple[str, list[str]]] = None
    for line in lines:
        stripped = line.strip()
        if stripped.startswith(_MARK_ACTION):
            current = (stripped[len(_MARK_ACTION) :].strip(), [])
            blocks.append(current)
        elif current is not None:
            current[1].append(line)
    specs = []
    for name, body in blocks:
        fields = {"Input": "", "Functionality": "", "Output": ""}
        key = None
        collected: dict[str, list[str]] = {k: [] for k in fields}
        for line in body:
            m = re.match(r"^- (Input|Functionality|Output):\s?(.*)$", line)
            if m:
                key = m.group(1)
                collected[key].append(m.group(2))
            elif key is not None:
                collected[key].append(line)
        for k in fields:
            fields[k] = "\n".join(collected[k]).rstrip()
        terminal = "answer" in name.lower()
        produces_program = "```" in fields["Output"]
        specs.append(
            ActionSpec(
                name=name,
                input_desc=fields["Input"],
                functionality_desc=fields["Functionality"],
                output_desc=fields["Output"],
                terminal=terminal,
                produces_program=produces_program,
            )
        )
    return specs


def render_tactic_document(t: Tactic) -> str:
    """Canonical textual form of a tactic; inverse of parse_tactic_document."""
    parts = [_SECTION_NAME, t.name, "", _SECTION_TYPE, t.description, "", _SECTION_DETAILS]
    if t.libraries:
        parts.append(_LIBS_HEADER)
        parts.extend(t.libraries)
        parts.append("")
    if t.code_template:
        parts.append(_MARK_TEMPLATE)
        parts.append(_TEMPLATE_INTRO)
        parts.append("")
        parts.append(f"```{t.code_template_lang}")
        parts.append(t.code_template)
        parts.append("```")
        parts.append("")
    parts.append(_MARK_ACTIONS)
    parts.append(_ACTIONS_INTRO)
    for spec in t.action_specs:
        parts.append("")
        parts.append(f"{_MARK_ACTION} {spec.name}")
        parts.append(f"- Input: {spec.input_desc}")
        parts.append(f"- Functionality: {spec.functionality_desc}")
        parts.append(f"- Output: {spec.output_desc}")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# Code fences


@dataclass(frozen=True)
class CodeFence:
    source: str
    language: str
    total_fences: int


_FENCE_RE = re.compile(r"^\s*```([A-Za-z0-9_+-]*)\s*$")


def extract_code_fence(text: str) -> Optional[CodeFence]:
    """Contents of the first fenced code block, or None when absent.

    The fence language tag is recorded but ignored for extraction; the total
    number of fenced blocks is recorded too (extra fences are LLM noise).
    """
    lines = text.splitlines()
    fences = []
    i = 0
    while i < len(lines):
        m = _FENCE_RE.match(lines[i])
        if m:
            lang = m.group(1)
            body = []
            j = i + 1
            while j < len(lines) and not _FENCE_RE.match(lines[j]):
                body.append(lines[j])
                j += 1
            fences.append((lang, "\n".join(body)))
            i = j + 1
        else:
            i += 1
    if not fences:
        return None
    lang, source = fences[0]
    return CodeFence(source=source, language=lang or "python", total_fences=len(fences))


# ---------------------------------------------------------------------------
# LLM responses


@dataclass(frozen=True)
class ParsedResponse:
    """The four fields of one Thought/Action response block.

    For routing calls written as "Call tactic: <target>", action_name is
    "Call tactic" and the target is carried separately.
    """

    thought: str
    action_name: str
    action_input: str
    action_output: str
    raw_name: str = ""
    call_target: Optional[str] = None


_H_THOUGHT = "### Thought"
_H_ACTION = "### Action"
_H_NAME = "## Name"
_H_INPUT = "## Input"
_H_OUTPUT = "## Output"
_RESPONSE_HEADERS = (_H_THOUGHT, _H_ACTION, _H_NAME, _H_INPUT, _H_OUTPUT)

_BLOCK_BOUNDARIES = (_H_THOUGHT, RESPONSE_SEP, OBSERVATIONS_SEP)


def parse_llm_response(raw: str, tactic: Tactic) -> ParsedResponse:
    """Extract the first complete Thought/Action block from untrusted output.

    Raises FormatError when headers are missing and UnknownActionError when
    the declared action is not in the tactic's action space. Never raises
    anything else, for arbitrary byte input.
    """
    if not isinstance(raw, str):
        raise FormatError("response is not text")
    lines = raw.splitlines()
    idx = {}
    order = []
    for header in _RESPONSE_HEADERS:
        pos = _find_line(lines, header, idx[order[-1]] + 1 if order else 0)
        if pos < 0:
            raise FormatError(f"missing header: {header}")
        idx[header] = pos
        order.append(header)

    def until_boundary(start: int, *stops: str) -> str:
        end = len(lines)
        for i in range(start, len(lines)):
            s = lines[i].strip()
            if s in stops or s in _BLOCK_BOUNDARIES and i > start:
                end = i
                break
        return "\n".join(lines[start:end]).strip("\n").rstrip()

    thought = _block_between(lines, idx[_H_THOUGHT] + 1, idx[_H_ACTION])
    name_block = _block_between(lines, idx[_H_NAME] + 1, idx[_H_INPUT])
    raw_name = name_block.splitlines()[0].strip() if name_block else ""
    action_input = _block_between(lines, idx[_H_INPUT] + 1, idx[_H_OUTPUT])
    action_output = until_boundary(idx[_H_OUTPUT] + 1)

    if not raw_name:
        raise FormatError("missing action name under ## Name")

    call_target = None
    lowered = raw_name.lower()
    if lowered.startswith(CALL_TACTIC_ACTION.lower()):
        action_name = CALL_TACTIC_ACTION
        rest = raw_name[len(CALL_TACTIC_ACTION) :].strip()
        if rest.startswith(":"):
            call_target = rest[1:].strip()
    else:
        action_name = raw_name
    if tactic.find_action(action_name) is None:
        raise UnknownActionError(raw_name, tactic.action_names())

    return ParsedResponse(
        thought=thought,
        action_name=action_name,
        action_input=action_input,
        action_output=action_output,
        raw_name=raw_name,
        call_target=call_target,
    )


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True)
class Observation:
    observer: str
    status: str  # "ok" | "error"
    content: str


@dataclass(frozen=True)
class Action:
    name: str
    input: str
    output: str


@dataclass(frozen=True)
class Step:
    thought: str
    action: Action
    observations: tuple[Observation, ...]

    def all_errors(self) -> bool:
        return bool(self.observations) and all(o.status == "error" for o in self.observations)


@dataclass(frozen=True)
class Trajectory:
    problem_id: str
    tactic_name: str
    steps: tuple[Step, ...] = ()
    status: str = "running"
    final_answer: Optional[str] = None
    children: tuple[str, ...] = ()
    token_count: int = 0
    warnings: tuple[str, ...] = ()

    def to_json(self) -> dict:
        d = {
            "problem_id": self.problem_id,
            "tactic": self.tactic_name,
            "status": self.status,
            "steps": [
                {
                    "thought": s.thought,
                    "action": {"name": s.action.name, "input": s.action.input, "output": s.action.output},
                    "observations": [
                        {"observer": o.observer, "status": o.status, "content": o.content}
                        for o in s.observations
                    ],
                }
                for s in self.steps
            ],
            "final_answer": self.final_answer,
            "children": list(self.children),
            "token_count": self.token_count,
        }
        if self.warnings:
            d["warnings"] = list(self.warnings)
        return d

    @staticmethod
    def from_json(d: dict) -> "Trajectory":
        return Trajectory(
            problem_id=d["problem_id"],
            tactic_name=d["tactic"],
            status=d["status"],
            steps=tuple(
                Step(
                    thought=s["thought"],
                    action=Action(
                        name=s["action"]["name"],
                        input=s["action"]["input"],
                        output=s["action"]["output"],
                    ),
                    observations=tuple(
                        Observation(observer=o["observer"], status=o["status"], content=o["content"])
                        for o in s["observations"]
                    ),
                )
                for s in d["steps"]
            ),
            final_answer=d.get("final_answer"),
            children=tuple(d.get("children") or ()),
            token_count=int(d.get("token_count", 0)),
            warnings=tuple(d.get("warnings") or ()),
        )


def _status_to_feedback(status: str) -> str:
    return "feedback ok" if status == "ok" else "feedback error"


def _feedback_to_status(feedback: str) -> str:
    return "ok" if feedback.strip() == "feedback ok" else "error"


def render_step_response(step: Step) -> str:
    return "\n".join(
        [
            _H_THOUGHT,
            step.thought,
            _H_ACTION,
            _H_NAME,
            step.action.name,
            _H_INPUT,
            step.action.input,
            _H_OUTPUT,
            step.action.output,
        ]
    )


def render_observation(obs: Observation) -> str:
    return "\n".join(
        [
            f"# Observer: {obs.observer}",
            f"# Feedback status: {_status_to_feedback(obs.status)}",
            "# Content:",
            obs.content,
        ]
    )


def render_steps(steps: Iterable[Step], elide_outputs: bool = False) -> str:
    """The step body shared by storage rendering and prompt assembly."""
    parts = []
    for step in steps:
        if elide_outputs:
            step = replace(step, action=replace(step.action, output="(content omitted)"))
        parts.append(RESPONSE_SEP)
        parts.append("")
        parts.append(render_step_response(step))
        parts.append("")
        parts.append(OBSERVATIONS_SEP)
        for obs in step.observations:
            parts.append("")
            parts.append(render_observation(obs))
        parts.append("")
    return "\n".join(parts)


def render_trajectory(traj: Trajectory) -> str:
    """Deterministic textual form of a trajectory; inverse of parse_trajectory."""
    header = [
        TRAJECTORY_HEADER,
        f"# Problem: {traj.problem_id}",
        f"# Tactic: {traj.tactic_name}",
        f"# Status: {traj.status}",
        f"# Tokens: {traj.token_count}",
    ]
    if traj.children:
        header.append("# Children: " + ", ".join(traj.children))
    if traj.warnings:
        header.append("# Warnings: " + "; ".join(traj.warnings))
    body = render_steps(traj.steps)
    if not body:
        return "\n".join(header) + "\n"
    return "\n".join(header) + "\n\n" + body + "\n"


def parse_trajectory(text: str) -> Trajectory:
    """Parse the textual trajectory form back into its structure."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != TRAJECTORY_HEADER:
        raise CodecError(f"missing trajectory header line: {TRAJECTORY_HEADER}")
    meta = {"Children": "", "Warnings": ""}
    i = 1
    while i < len(lines) and lines[i].startswith("# "):
        key, _, value = lines[i][2:].partition(":")
        meta[key.strip()] = value.strip()
        i += 1
    for key in ("Problem", "Tactic", "Status", "Tokens"):
        if key not in meta:
            raise CodecError(f"missing trajectory metadata line: # {key}")

    steps = _parse_step_blocks(lines[i:])
    status = meta["Status"]
    final_answer = None
    if status == "answered" and steps:
        final_answer = steps[-1].action.output
    return Trajectory(
        problem_id=meta["Problem"],
        tactic_name=meta["Tactic"],
        steps=tuple(steps),
        status=status,
        final_answer=final_answer,
        children=tuple(x.strip() for x in meta["Children"].split(",") if x.strip()),
        token_count=int(meta["Tokens"]),
        warnings=tuple(x.strip() for x in meta["Warnings"].split(";") if x.strip()),
    )


def _parse_step_blocks(lines: list[str]) -> list[Step]:
    # Segment on the exact separator lines; blocks alternate response /
    # observations.
    segments: list[tuple[str, list[str]]] = []
    current_kind = None
    for line in lines:
        s = line.strip()
        if s == RESPONSE_SEP:
            current_kind = "response"
            segments.append((current_kind, []))
        elif s == OBSERVATIONS_SEP:
            current_kind = "observations"
            segments.append((current_kind, []))
        elif current_kind is not None:
            segments[-1][1].append(line)

    steps: list[Step] = []
    pending_response: Optional[list[str]] = None
    for kind, body in segments:
        if kind == "response":
            if pending_response is not None:
                steps.append(_response_lines_to_step(pending_response, []))
            pending_response = body
        else:
            if pending_response is None:
                raise CodecError("observations block without a preceding response block")
            steps.append(_response_lines_to_step(pending_response, body))
            pending_response = None
    if pending_response is not None:
        steps.append(_response_lines_to_step(pending_response, []))
    return steps


def _response_lines_to_step(response_lines: list[str], obs_lines: list[str]) -> Step:
    idx = {}
    pos = 0
    for header in _RESPONSE_HEADERS:
        found = _find_line(response_lines, header, pos)
        if found < 0:
            raise CodecError(f"step response missing header: {header}")
        idx[header] = found
        pos = found + 1
    thought = _block_between(response_lines, idx[_H_THOUGHT] + 1, idx[_H_ACTION])
    name = _block_between(response_lines, idx[_H_NAME] + 1, idx[_H_INPUT])
    action_input = _block_between(response_lines, idx[_H_INPUT] + 1, idx[_H_OUTPUT])
    action_output = _block_between(response_lines, idx[_H_OUTPUT] + 1, len(response_lines))
    observations = _parse_observation_lines(obs_lines)
    return Step(
        thought=thought,
        action=Action(name=name, input=action_input, output=action_output),
        observations=tuple(observations),
    )


def _parse_observation_lines(lines: list[str]) -> list[Observation]:
    observations = []
    i = 0
    while i < len(lines):
        if lines[i].startswith("# Observer: "):
            observer = lines[i][len("# Observer: ") :]
            if i + 2 >= len(lines) or not lines[i + 1].startswith("# Feedback status: "):
                raise CodecError("observation block missing feedback status")
            status = _feedback_to_status(lines[i + 1][len("# Feedback status: ") :])
            if lines[i + 2].strip() != "# Content:":
                raise CodecError("observation block missing content marker")
            j = i + 3
            content_lines = []
            while j < len(lines) and not lines[j].startswith("# Observer: "):
                content_lines.append(lines[j])
                j += 1
            observations.append(
                Observation(observer=observer, status=status, content="\n".join(content_lines).strip("\n").rstrip())
            )
            i = j
        else:
            i += 1
    return observations


# ---------------------------------------------------------------------------
# JSONL persistence


def write_jsonl(path: Path | str, trajectories: Iterable[Trajectory]) -> None:
    lines = [json.dumps(t.to_json()) for t in trajectories]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_jsonl(path: Path | str) -> list[Trajectory]:
    """Read one trajectory per line; malformed lines fail with their index
    and nothing partial is returned."""
    trajectories = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            trajectories.append(Trajectory.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CodecError(f"{path}:{lineno}: malformed trajectory line: {exc}") from exc
    return trajectories
