"""The two-level trajectory state machine: sub-trajectories under one tactic
and routing trajectories over a tactic pool, with step/error limits and
prompt assembly."""

from __future__ import annotations

import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import codec
from .codec import (
    CALL_TACTIC_ACTION,
    Action,
    CodecError,
    Observation,
    ParsedResponse,
    Step,
    Tactic,
    Trajectory,
    parse_llm_response,
    parse_tactic_document,
    render_steps,
    render_tactic_document,
    render_trajectory,
)
from .gateway import (
    Completion,
    CompletionParams,
    CompletionProvider,
    GatewayError,
    ReplayMismatch,
    ScriptExhausted,
)

# Fixture drift and script exhaustion are infrastructure faults, not agent
# behavior; they abort the run instead of becoming error observations.
FATAL_GATEWAY_ERRORS = (ReplayMismatch, ScriptExhausted)
from .observers import PARSER_OBSERVER, TACTIC_FAIL_PREFIX, TACTIC_OK_PREFIX, observe
from .sandbox import SandboxClient


@dataclass(frozen=True)
class EngineLimits:
    max_steps: int = 7
    max_consecutive_errors: int = 3

    def __post_init__(self):
        if self.max_steps < 1 or self.max_consecutive_errors < 1:
            raise ValueError("engine limits must be >= 1")


@dataclass(frozen=True)
class PromptPolicy:
    """How many ICL exemplars to include and when to switch styles.

    For the first ``head_steps_cutoff`` steps the prompt carries up to
    ``head_shots`` first-two-step exemplars; afterwards it carries
    ``full_shots`` complete trajectories with their main outputs elided.
    Routing prompts always carry ``routing_full_shots`` full routing
    trajectories.
    """

    head_shots: int = 5
    full_shots: int = 2
    routing_full_shots: int = 2
    head_steps_cutoff: int = 2


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff_s: float = 0.5
    multiplier: float = 2.0


@dataclass(frozen=True)
class Subproblem:
    """The minimal problem view the engine needs: an id and a text."""

    id: str
    body: str

    def text(self) -> str:
        return self.body


def default_tokenizer(text: str) -> int:
    # Rough byte-based approximation; only used for corpus statistics.
    return max(1, len(text.encode("utf-8")) // 4)


class IclBank:
    """Fixture store of per-tactic exemplars.

    Layout: ``<root>/<tactic>/heads.jsonl`` (first-two-step exemplars) and
    ``<root>/<tactic>/full.jsonl`` (complete trajectories).
    """

    def __init__(self, root: Optional[Path | str] = None):
        self.root = Path(root) if root is not None else None

    def _load(self, tactic_name: str, kind: str) -> list[Trajectory]:
        if self.root is None:
            return []
        path = self.root / tactic_name / f"{kind}.jsonl"
        if not path.exists():
            return []
        return codec.read_jsonl(path)

    def heads(self, tactic_name: str) -> list[Trajectory]:
        return self._load(tactic_name, "heads")

    def full(self, tactic_name: str) -> list[Trajectory]:
        return self._load(tactic_name, "full")


class TacticPool:
    """Named tactics plus display-name aliases used in "Call tactic:" lines."""

    def __init__(self, tactics: Sequence[Tactic], aliases: Optional[dict[str, str]] = None):
        self.tactics = {t.name: t for t in tactics}
        if len(self.tactics) != len(tactics):
            raise ValueError("pool tactics must be uniquely named")
        self.aliases = {k.lower(): v for k, v in (aliases or {}).items()}

    @staticmethod
    def from_dir(path: Path | str) -> "TacticPool":
        path = Path(path)
        tactics = []
        for doc_path in sorted(path.glob("*.md")):
            tactics.append(parse_tactic_document(doc_path.read_text()))
        aliases_path = path / "aliases.json"
        aliases = json.loads(aliases_path.read_text()) if aliases_path.exists() else {}
        return TacticPool(tactics, aliases)

    def names(self) -> list[str]:
        return sorted(self.tactics)

    def get(self, name: str) -> Optional[Tactic]:
        return self.tactics.get(name)

    def resolve(self, name: str) -> Optional[Tactic]:
        if name in self.tactics:
            return self.tactics[name]
        canonical = self.aliases.get(name.strip().lower())
        if canonical is not None:
            return self.tactics.get(canonical)
        return None


@dataclass
class RoutingResult:
    parent: Trajectory
    children: list[Trajectory]

    def all_trajectories(self) -> list[Trajectory]:
        return [self.parent] + self.children


def build_prompt(
    problem_text: str,
    tactic: Tactic,
    steps_so_far: Sequence[Step],
    policy: PromptPolicy,
    icl_bank: IclBank,
    routing: bool = False,
) -> tuple[list[dict], list[str]]:
    """Assemble the chat messages for the next step.

    Returns (messages, warnings); an empty exemplar bank degrades to a
    zero-shot prompt with a warning flag for the trajectory metadata.
    """
    warnings: list[str] = []
    exemplar_parts: list[str] = []
    if routing:
        for ex in icl_bank.full(tactic.name)[: policy.routing_full_shots]:
            exemplar_parts.append(render_steps(ex.steps))
    elif len(steps_so_far) < policy.head_steps_cutoff:
        for ex in icl_bank.heads(tactic.name)[: policy.head_shots]:
            exemplar_parts.append(render_steps(ex.steps[: policy.head_steps_cutoff]))
    else:
        for ex in icl_bank.full(tactic.name)[: policy.full_shots]:
            exemplar_parts.append(render_steps(ex.steps, elide_outputs=True))
    if not exemplar_parts:
        warnings.append(f"no ICL exemplars for tactic {tactic.name}; zero-shot prompt")

    system = render_tactic_document(tactic)
    user_parts = []
    if exemplar_parts:
        user_parts.append("below are example steps that solve problems with this tactic")
        user_parts.extend(exemplar_parts)
    user_parts.append("=== problem ===")
    user_parts.append(problem_text)
    if steps_so_far:
        user_parts.append(render_steps(steps_so_far))
    user_parts.append(
        "Produce the next step: a ### Thought section and a ### Action section "
        "with ## Name, ## Input, and ## Output."
    )
    messages = [
        {"role": "system", "content": system},
        {"role": "user", "content": "\n\n".join(user_parts)},
    ]
    return messages, warnings


def _call_with_retries(
    llm: CompletionProvider, messages: list[dict], params: CompletionParams, retry: RetryPolicy
) -> Completion:
    delay = retry.backoff_s
    last: Optional[GatewayError] = None
    for attempt in range(retry.attempts):
        try:
            return llm.complete(messages, params)
        except FATAL_GATEWAY_ERRORS:
            raise
        except GatewayError as exc:
            last = exc
            if attempt + 1 < retry.attempts and delay > 0:
                time.sleep(delay)
                delay *= retry.multiplier
    raise last


def _failure_step(raw_output: str, observer: str, message: str) -> Step:
    return Step(
        thought="",
        action=Action(name="", input="", output=raw_output),
        observations=(Observation(observer=observer, status="error", content=message),),
    )


@dataclass
class _Loop:
    """Shared step-accumulation and termination bookkeeping."""

    limits: EngineLimits
    steps: list[Step] = field(default_factory=list)
    consecutive_errors: int = 0
    status: str = "running"
    final_answer: Optional[str] = None
    warnings: list[str] = field(default_factory=list)

    def push(self, step: Step) -> None:
        self.steps.append(step)
        if step.all_errors():
            self.consecutive_errors += 1
        else:
            self.consecutive_errors = 0

    def check_termination(self) -> bool:
        if self.status == "answered":
            return True
        if self.consecutive_errors >= self.limits.max_consecutive_errors:
            self.status = "error_limit"
            return True
        if len(self.steps) >= self.limits.max_steps:
            self.status = "max_steps"
            return True
        return False

    def answer(self, text: str) -> None:
        self.status = "answered"
        self.final_answer = text


def run_subtrajectory(
    problem,
    tactic: Tactic,
    llm: CompletionProvider,
    limits: EngineLimits = EngineLimits(),
    prompt_policy: PromptPolicy = PromptPolicy(),
    icl_bank: Optional[IclBank] = None,
    sandbox: Optional[SandboxClient] = None,
    params: CompletionParams = CompletionParams(),
    retry: RetryPolicy = RetryPolicy(),
    mode: str = "evaluate",
    is_answer_correct: Optional[Callable[[str], bool]] = None,
    tokenizer: Callable[[str], int] = default_tokenizer,
    sandbox_timeout_ms: int = 10_000,
) -> Trajectory:
    """Iterate thought/action/observation under one tactic until termination.

    In "evaluate" mode the terminal action always ends the trajectory; in
    "generate" mode an incorrect terminal answer (judged by
    ``is_answer_correct``) does not terminate, matching how training
    trajectories are collected without letting evaluation peek at gold
    labels.
    """
    bank = icl_bank or IclBank()
    loop = _Loop(limits=limits)
    problem_text = problem.text()
    while True:
        messages, prompt_warnings = build_prompt(
            problem_text, tactic, loop.steps, prompt_policy, bank, routing=False
        )
        for w in prompt_warnings:
            if w not in loop.warnings:
                loop.warnings.append(w)
        step = _one_step(messages, tactic, llm, params, retry, sandbox, sandbox_timeout_ms, loop, mode, is_answer_correct)
        loop.push(step)
        if loop.check_termination():
            break
    return _finish(problem.id, tactic.name, loop, tokenizer)


def _one_step(
    messages,
    tactic: Tactic,
    llm: CompletionProvider,
    params: CompletionParams,
    retry: RetryPolicy,
    sandbox,
    sandbox_timeout_ms: int,
    loop: _Loop,
    mode: str,
    is_answer_correct,
) -> Step:
    try:
        completion = _call_with_retries(llm, messages, params, retry)
    except FATAL_GATEWAY_ERRORS:
        raise
    except GatewayError as exc:
        return _failure_step("", "llm-gateway", f"{type(exc).__name__}: {exc}")
    try:
        parsed = parse_llm_response(completion.text, tactic)
    except CodecError as exc:
        return _failure_step(completion.text, PARSER_OBSERVER, str(exc))
    spec = tactic.find_action(parsed.action_name)
    observations = observe(parsed, tactic, sandbox, timeout_ms=sandbox_timeout_ms)
    if spec.terminal:
        if mode == "generate" and is_answer_correct is not None and not is_answer_correct(parsed.action_output):
            observations = [
                Observation(
                    observer=PARSER_OBSERVER,
                    status="error",
                    content="Answer rejected; continue solving",
                )
            ]
        else:
            loop.answer(parsed.action_output)
    return Step(
        thought=parsed.thought,
        action=Action(name=parsed.raw_name, input=parsed.action_input, output=parsed.action_output),
        observations=tuple(observations),
    )


def _finish(problem_id: str, tactic_name: str, loop: _Loop, tokenizer) -> Trajectory:
    traj = Trajectory(
        problem_id=problem_id,
        tactic_name=tactic_name,
        steps=tuple(loop.steps),
        status=loop.status,
        final_answer=loop.final_answer,
        warnings=tuple(loop.warnings),
    )
    return replace(traj, token_count=tokenizer(render_trajectory(traj)))


_OPTION_SECTION_RE = re.compile(r"^###\s*option\s*$", re.IGNORECASE)
_SUBPROBLEM_SECTION_RE = re.compile(r"^###\s*subproblem\s*$", re.IGNORECASE)


def parse_call_payload(output: str) -> Optional[tuple[int, str]]:
    """Extract (option index, subproblem text) from a Call tactic output."""
    lines = output.splitlines()
    option = None
    sub_start = None
    i = 0
    while i < len(lines):
        if _OPTION_SECTION_RE.match(lines[i].strip()):
            j = i + 1
            while j < len(lines) and not lines[j].strip():
                j += 1
            if j < len(lines):
                try:
                    option = int(lines[j].strip())
                except ValueError:
                    return None
                i = j
        elif _SUBPROBLEM_SECTION_RE.match(lines[i].strip()):
            sub_start = i + 1
            break
        i += 1
    if option is None or sub_start is None:
        return None
    subproblem = "\n".join(lines[sub_start:]).strip("\n").strip()
    if not subproblem:
        return None
    return option, subproblem


def run_routing(
    problem,
    pool: TacticPool,
    routing_tactic: Tactic,
    llm: CompletionProvider,
    limits: EngineLimits = EngineLimits(),
    prompt_policy: PromptPolicy = PromptPolicy(),
    icl_bank: Optional[IclBank] = None,
    sandbox: Optional[SandboxClient] = None,
    params: CompletionParams = CompletionParams(),
    retry: RetryPolicy = RetryPolicy(),
    tokenizer: Callable[[str], int] = default_tokenizer,
    sandbox_timeout_ms: int = 10_000,
) -> RoutingResult:
    """Top-level routing loop: dispatch Call tactic actions to child
    sub-trajectories and aggregate the final answer.

    Children run sequentially in spawn order (the routing update is
    sequential by definition) and inherit the parent's limits.
    """
    if routing_tactic.find_action(CALL_TACTIC_ACTION) is None:
        raise ValueError("routing tactic must define a 'Call tactic' action")
    bank = icl_bank or IclBank()
    loop = _Loop(limits=limits)
    children: list[Trajectory] = []
    problem_text = problem.text()
    while True:
        messages, prompt_warnings = build_prompt(
            problem_text, routing_tactic, loop.steps, prompt_policy, bank, routing=True
        )
        for w in prompt_warnings:
            if w not in loop.warnings:
                loop.warnings.append(w)
        step = _routing_step(
            messages,
            problem,
            pool,
            routing_tactic,
            llm,
            limits,
            prompt_policy,
            bank,
            sandbox,
            params,
            retry,
            tokenizer,
            sandbox_timeout_ms,
            loop,
            children,
        )
        loop.push(step)
        if loop.check_termination():
            break
    parent = _finish(problem.id, routing_tactic.name, loop, tokenizer)
    parent = replace(parent, children=tuple(c.problem_id for c in children))
    parent = replace(parent, token_count=tokenizer(render_trajectory(parent)))
    return RoutingResult(parent=parent, children=children)


def _routing_step(
    messages,
    problem,
    pool: TacticPool,
    routing_tactic: Tactic,
    llm,
    limits,
    prompt_policy,
    bank,
    sandbox,
    params,
    retry,
    tokenizer,
    sandbox_timeout_ms,
    loop: _Loop,
    children: list[Trajectory],
) -> Step:
    try:
        completion = _call_with_retries(llm, messages, params, retry)
    except FATAL_GATEWAY_ERRORS:
        raise
    except GatewayError as exc:
        return _failure_step("", "llm-gateway", f"{type(exc).__name__}: {exc}")
    try:
        parsed = parse_llm_response(completion.text, routing_tactic)
    except CodecError as exc:
        return _failure_step(completion.text, PARSER_OBSERVER, str(exc))

    spec = routing_tactic.find_action(parsed.action_name)
    if parsed.action_name == CALL_TACTIC_ACTION:
        observations = _handle_call(
            parsed, problem, pool, llm, limits, prompt_policy, bank, sandbox,
            params, retry, tokenizer, sandbox_timeout_ms, children,
        )
    else:
        observations = observe(parsed, routing_tactic, sandbox, timeout_ms=sandbox_timeout_ms)
        if spec.terminal:
            loop.answer(parsed.action_output)
    return Step(
        thought=parsed.thought,
        action=Action(name=parsed.raw_name, input=parsed.action_input, output=parsed.action_output),
        observations=tuple(observations),
    )


def _handle_call(
    parsed: ParsedResponse,
    problem,
    pool: TacticPool,
    llm,
    limits,
    prompt_policy,
    bank,
    sandbox,
    params,
    retry,
    tokenizer,
    sandbox_timeout_ms,
    children: list[Trajectory],
) -> list[Observation]:
    payload = parse_call_payload(parsed.action_output)
    if payload is None:
        return [
            Observation(
                observer=PARSER_OBSERVER,
                status="error",
                content="could not parse '### option' / '### subproblem' sections from Call tactic output",
            )
        ]
    option, subproblem_text = payload
    target = parsed.call_target or ""
    child_tactic = pool.resolve(target)
    if child_tactic is None:
        return [
            Observation(
                observer=PARSER_OBSERVER,
                status="error",
                content=f"unknown tactic {target!r}; pool tactics: {', '.join(pool.names())}",
            )
        ]
    child_id = f"{problem.id}::opt{option}.{len(children) + 1}"
    child = run_subtrajectory(
        Subproblem(id=child_id, body=subproblem_text),
        child_tactic,
        llm,
        limits=limits,
        prompt_policy=prompt_policy,
        icl_bank=bank,
        sandbox=sandbox,
        params=params,
        retry=retry,
        tokenizer=tokenizer,
        sandbox_timeout_ms=sandbox_timeout_ms,
    )
    children.append(child)
    observations = [
        Observation(
            observer=PARSER_OBSERVER,
            status="ok",
            content=f"Solving subproblem with tactic {child_tactic.name}",
        )
    ]
    if child.status == "answered":
        observations.append(
            Observation(
                observer="Runner",
                status="ok",
                content=f"{TACTIC_OK_PREFIX}\n{child.final_answer}",
            )
        )
    else:
        observations.append(
            Observation(
                observer="Runner",
                status="error",
                content=f"{TACTIC_FAIL_PREFIX} Child trajectory ended with status: {child.status}",
            )
        )
    return observations


def run_many(
    jobs: Sequence[Callable[[], object]],
    parallelism: int = 1,
) -> list[object]:
    """Run independent trajectory jobs through a bounded work pool."""
    if parallelism <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]
