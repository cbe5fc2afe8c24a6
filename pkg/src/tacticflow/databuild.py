"""Training-data pipeline: hybrid-problem blending, routing-trajectory
synthesis, trajectory filtering, bad-step detection, and the two
trajectory-to-training-sample transforms (step rewriting vs. label masking)."""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

from .codec import (
    Action,
    Observation,
    Step,
    Tactic,
    Trajectory,
    extract_code_fence,
)
from .gateway import (
    Completion,
    CompletionParams,
    CompletionProvider,
    GatewayError,
    ReplayMismatch,
    ScriptExhausted,
)
from .model import (
    AnswerValue,
    HybridProblem,
    NLI3_LABELS,
    OptionSource,
    Problem,
    validate_hybrid,
)
from .observers import PARSER_OBSERVER, TACTIC_OK_PREFIX

DIFFICULTY_LETTER_SOURCES = {"G": "gsm8k", "F": "folio", "R": "reclor"}

ORIGINS = ("PJ", "IPJ")


class BlendRejected(Exception):
    """Blend verification failed; carries the judge rationales."""

    def __init__(self, message: str, verdicts: Sequence["JudgeVerdict"] = ()):
        super().__init__(message)
        self.verdicts = tuple(verdicts)


class ProvenanceError(Exception):
    """A hybrid problem lacks the source data needed for reconstruction."""


@dataclass(frozen=True)
class JudgeVerdict:
    judge_id: str
    program_good: bool
    rationale: str


@dataclass(frozen=True)
class TrainSample:
    """One training-ready rendered trajectory with a trainable-token mask.

    ``trainable_mask`` entries are (start, end, trainable) index ranges into
    ``rendered_text``; they are disjoint, ordered, and cover exactly the
    thought, action, and observation spans (structural boilerplate between
    them carries no mask entry and is never trained on).
    """

    rendered_text: str
    trainable_mask: tuple[tuple[int, int, bool], ...]
    origin: str
    source_trajectory_id: str

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown sample origin {self.origin!r}")
        prev_end = -1
        for start, end, _ in self.trainable_mask:
            if start < 0 or end > len(self.rendered_text) or start > end:
                raise ValueError(f"mask span ({start}, {end}) out of bounds")
            if start < prev_end:
                raise ValueError("mask spans must be ordered and disjoint")
            prev_end = end

    def to_json(self) -> dict:
        return {
            "text": self.rendered_text,
            "mask": [[s, e, t] for s, e, t in self.trainable_mask],
            "origin": self.origin,
            "source_trajectory_id": self.source_trajectory_id,
        }

    @staticmethod
    def from_json(d: dict) -> "TrainSample":
        return TrainSample(
            rendered_text=d["text"],
            trainable_mask=tuple((int(s), int(e), bool(t)) for s, e, t in d["mask"]),
            origin=d["origin"],
            source_trajectory_id=d.get("source_trajectory_id", ""),
        )


# ---------------------------------------------------------------------------
# Difficulty sampling


def _sources_for_difficulty(difficulty: str) -> list[str]:
    letters = list(difficulty.upper())
    for letter in letters:
        if letter not in DIFFICULTY_LETTER_SOURCES and letter != "X":
            raise ValueError(f"unknown difficulty letter {letter!r} in {difficulty!r}")
    if letters and letters[0] == "X":
        raise ValueError("difficulty cannot start with the wildcard letter X")
    return letters


def sample_difficulty(
    difficulty: str,
    pools: dict[str, list[Problem]],
    rng: random.Random,
) -> list[Problem]:
    """Pick source problems for one hybrid according to its difficulty word.

    Letters map G/F/R to their datasets; X is sampled uniformly from the
    datasets named by the preceding letters. Deterministic under a seeded
    ``rng``; an empty pool for a required dataset is a configuration error.
    """
    letters = _sources_for_difficulty(difficulty)
    used: dict[str, list[Problem]] = {}
    picked: list[Problem] = []
    preceding: list[str] = []
    for letter in letters:
        if letter == "X":
            candidates = [
                d
                for d in sorted(set(preceding))
                if any(p not in used.get(d, []) for p in pools.get(d) or [])
            ]
            if not candidates:
                raise ValueError(f"no dataset has problems left for the X option of {difficulty!r}")
            dataset = rng.choice(candidates)
        else:
            dataset = DIFFICULTY_LETTER_SOURCES[letter]
            preceding.append(dataset)
        pool = pools.get(dataset) or []
        remaining = [p for p in pool if p not in used.get(dataset, [])]
        if not remaining:
            raise ValueError(f"empty pool for dataset {dataset!r} required by {difficulty!r}")
        choice = rng.choice(remaining)
        used.setdefault(dataset, []).append(choice)
        picked.append(choice)
    return picked


# ---------------------------------------------------------------------------
# Blending


_SENTENCE_RE = re.compile(r"[^.!?]*[.!?]+(?:\s|$)|[^.!?]+$")

_TRANSITIONS = (
    "Meanwhile, here is another situation.",
    "Separately, consider the following.",
    "In an unrelated development, the next events took place.",
)


def _sentences(text: str) -> list[str]:
    return [m.group(0).strip() for m in _SENTENCE_RE.finditer(text) if m.group(0).strip()]


def _blend_contexts(contexts: Sequence[str], granularity: str, rng: random.Random) -> str:
    if granularity == "easy":
        parts = []
        for i, ctx in enumerate(contexts):
            if i > 0:
                parts.append(_TRANSITIONS[(i - 1) % len(_TRANSITIONS)])
            parts.append(ctx)
        return " ".join(parts)
    if granularity == "hard":
        streams = [list(_sentences(ctx)) for ctx in contexts]
        merged = []
        while any(streams):
            nonempty = [s for s in streams if s]
            order = list(range(len(nonempty)))
            rng.shuffle(order)
            for idx in order:
                merged.append(nonempty[idx].pop(0))
        return " ".join(merged)
    raise ValueError(f"unknown granularity {granularity!r}")


def _gold_precision(value: float) -> int:
    text = repr(value)
    if "." in text and not float(value).is_integer():
        return len(text.split(".")[1])
    return 0


def _perturb_answer(problem: Problem, rng: random.Random) -> str:
    """An answer text for a distractor option: definitely not the gold."""
    gold = problem.gold
    if gold.number is not None:
        base = gold.number
        for _ in range(50):
            pct = rng.uniform(0.01, 0.20) * rng.choice((-1.0, 1.0))
            delta = base * pct if base != 0 else pct
            wrong = round(base + delta, _gold_precision(base)) if _gold_precision(base) else round(base + delta)
            if wrong != base:
                return AnswerValue.of_number(wrong).as_text()
        return AnswerValue.of_number(base + 1).as_text()
    if gold.label is not None:
        return rng.choice([l for l in NLI3_LABELS if l != gold.label])
    if gold.option is not None:
        n = max(len(problem.statements), 2)
        return str(gold.option % n + 1)
    # Graph gold: flip one edge's direction.
    a, b = sorted(gold.graph)[0]
    flipped = (gold.graph - {(a, b)}) | {(b, a)}
    return AnswerValue.of_graph(flipped).as_text()


def _statement_for(problem: Problem, answer_text: str, index: int) -> str:
    return f"The answer to part {index} is: {answer_text}"


def blend(
    sources: Sequence[Problem],
    granularity: str,
    rng: random.Random,
    hybrid_id: str,
    llm: Optional[CompletionProvider] = None,
    difficulty: Optional[str] = None,
    judges: Sequence[CompletionProvider] = (),
) -> HybridProblem:
    """Blend source problems into one multichoice hybrid problem.

    The context parts become one passage (easy: contiguous with transition
    sentences; hard: sentences interleaved); each source contributes one
    statement, exactly one of which (the label, chosen by ``rng``) states
    its source's true answer while the rest state perturbed wrong answers.
    With an ``llm`` the passage is rewritten by it and checked by ``judges``;
    a failed check raises BlendRejected with the rationales.
    """
    if not 1 <= len(sources) <= 4:
        raise ValueError("blend takes 1-4 source problems")
    contexts = [p.text() for p in sources]
    passage = _blend_contexts(contexts, granularity, rng)
    if llm is not None:
        prompt = (
            "Rewrite the following scenarios as one coherent passage without "
            "dropping any fact:\n\n" + "\n\n".join(contexts)
        )
        completion = llm.complete(
            [{"role": "user", "content": prompt}], CompletionParams()
        )
        passage = completion.text.strip()

    label = rng.randrange(len(sources)) + 1
    statements = []
    option_sources = []
    for i, src in enumerate(sources, start=1):
        correct = i == label
        answer_text = src.gold.as_text() if correct else _perturb_answer(src, rng)
        statements.append(_statement_for(src, answer_text, i))
        option_sources.append(
            OptionSource(
                source_id=src.id,
                source_dataset=src.source,
                gold_tactic=src.gold_tactic or "",
                is_correct=correct,
                source_text=src.text(),
                gold_text=src.gold.as_text(),
                gold_program=src.gold_program,
            )
        )
    inferred = difficulty or "".join(
        next(k for k, v in DIFFICULTY_LETTER_SOURCES.items() if v == p.source) for p in sources
    )
    hybrid = HybridProblem(
        base=Problem(
            id=hybrid_id,
            source="hybrid",
            context=passage,
            question="Which one of the following statements is true?",
            statements=tuple(statements),
            gold=AnswerValue.of_option(label),
            answer_kind="option_index",
            gold_tactic="routing",
        ),
        difficulty=inferred,
        granularity=granularity,
        option_sources=tuple(option_sources),
        label=label,
    )
    if judges:
        passed, verdicts = verify_blend(hybrid, sources, judges)
        if not passed:
            raise BlendRejected(
                "blend verification failed: " + "; ".join(v.rationale for v in verdicts),
                verdicts,
            )
    return hybrid


_YES_RE = re.compile(r"\b(yes|pass|preserved)\b", re.IGNORECASE)
_NO_RE = re.compile(r"\b(no|fail|missing|dropped)\b", re.IGNORECASE)


def verify_blend(
    hybrid: HybridProblem,
    sources: Sequence[Problem],
    judges: Sequence[CompletionProvider],
) -> tuple[bool, list[JudgeVerdict]]:
    """Majority vote over judges on whether the blended passage preserves
    every source fact. A judge transport failure abstains; if every judge
    abstains the blend fails (conservative)."""
    if not judges:
        raise ValueError("verify_blend requires at least one judge")
    prompt = (
        "Original scenarios:\n\n"
        + "\n\n".join(p.text() for p in sources)
        + "\n\nBlended passage:\n\n"
        + hybrid.base.context
        + "\n\nIs every fact from the original scenarios recoverable from the "
        "blended passage? Answer yes or no with a short reason."
    )
    verdicts: list[JudgeVerdict] = []
    votes: list[bool] = []
    for i, judge in enumerate(judges):
        judge_id = f"judge-{i + 1}"
        try:
            reply = judge.complete([{"role": "user", "content": prompt}], CompletionParams()).text
        except (ReplayMismatch, ScriptExhausted):
            raise
        except GatewayError as exc:
            verdicts.append(JudgeVerdict(judge_id, False, f"abstained: {exc}"))
            continue
        vote = _parse_yes_no(reply)
        if vote is None:
            verdicts.append(JudgeVerdict(judge_id, False, f"abstained: unparseable reply {reply!r}"))
            continue
        votes.append(vote)
        verdicts.append(JudgeVerdict(judge_id, vote, reply.strip()))
    if not votes:
        return False, verdicts
    return sum(votes) * 2 > len(votes), verdicts


def _parse_yes_no(reply: str) -> Optional[bool]:
    yes = _YES_RE.search(reply)
    no = _NO_RE.search(reply)
    if yes and (no is None or yes.start() < no.start()):
        return True
    if no:
        return False
    return None


# ---------------------------------------------------------------------------
# Routing-trajectory synthesis


def make_routing_trajectory(
    hybrid: HybridProblem,
    terminal_action: str = "Aggregate and answer",
    tactic_name: str = "routing",
) -> Trajectory:
    """Reverse the blending: one Call tactic step per option carrying the
    original source problem verbatim and its gold answer as the tactic
    output, closed by the terminal aggregate step answering the label."""
    steps: list[Step] = []
    children: list[str] = []
    for i, src in enumerate(hybrid.option_sources, start=1):
        if not src.source_text or not src.gold_tactic:
            raise ProvenanceError(
                f"option {i} of {hybrid.base.id} is missing source text or gold tactic"
            )
        child_id = f"{hybrid.base.id}::opt{i}.{i}"
        children.append(child_id)
        steps.append(
            Step(
                thought=(
                    f"Statement {i} comes from a {src.source_dataset} problem; "
                    f"I will solve it with the {src.gold_tactic} tactic."
                ),
                action=Action(
                    name=f"Call tactic: {src.gold_tactic}",
                    input=hybrid.base.statements[i - 1],
                    output=f"### option\n{i}\n### subproblem\n{src.source_text}",
                ),
                observations=(
                    Observation(
                        observer=PARSER_OBSERVER,
                        status="ok",
                        content=f"Solving subproblem with tactic {src.gold_tactic}",
                    ),
                    Observation(
                        observer="Runner",
                        status="ok",
                        content=f"{TACTIC_OK_PREFIX}\n{src.gold_text}",
                    ),
                ),
            )
        )
    steps.append(
        Step(
            thought=(
                "Every option has been checked against its source problem; "
                f"only statement {hybrid.label} states the true answer."
            ),
            action=Action(
                name=terminal_action,
                input="Results of all subproblems solved above",
                output=str(hybrid.label),
            ),
            observations=(
                Observation(observer=PARSER_OBSERVER, status="ok", content="Answer recorded"),
            ),
        )
    )
    return Trajectory(
        problem_id=hybrid.base.id,
        tactic_name=tactic_name,
        steps=tuple(steps),
        status="answered",
        final_answer=str(hybrid.label),
        children=tuple(children),
    )


def wrap_standalone(problem: Problem, hybrid_id: Optional[str] = None) -> HybridProblem:
    """Degenerate one-option hybrid wrapping a standalone problem, used for
    with-routing runs over standalone datasets."""
    statement = _statement_for(problem, problem.gold.as_text(), 1)
    return HybridProblem(
        base=Problem(
            id=hybrid_id or f"{problem.id}::wrapped",
            source="hybrid",
            context=problem.text(),
            question="Which one of the following statements is true?",
            statements=(statement,),
            gold=AnswerValue.of_option(1),
            answer_kind="option_index",
            gold_tactic="routing",
        ),
        difficulty={"gsm8k": "GG", "folio": "GF", "reclor": "GFR"}.get(problem.source, "GG"),
        granularity="easy",
        option_sources=(
            OptionSource(
                source_id=problem.id,
                source_dataset=problem.source,
                gold_tactic=problem.gold_tactic or "",
                is_correct=True,
                source_text=problem.text(),
                gold_text=problem.gold.as_text(),
                gold_program=problem.gold_program,
            ),
        ),
        label=1,
    )


# ---------------------------------------------------------------------------
# Filtering


def _program_outcomes(traj: Trajectory) -> list[bool]:
    """Run success per program-emitting step (fence plus runner feedback)."""
    outcomes = []
    for step in traj.steps:
        fence = extract_code_fence(step.action.output)
        runner_obs = [o for o in step.observations if o.observer not in (PARSER_OBSERVER, "llm-gateway")]
        if fence is not None and runner_obs:
            outcomes.append(all(o.status == "ok" for o in runner_obs))
    return outcomes


def filter_no_program(trajs: Sequence[Trajectory]) -> tuple[list[Trajectory], list[Trajectory]]:
    """Drop trajectories that never wrote a program or whose final program
    failed to run; an earlier failure later revised successfully is kept."""
    kept, dropped = [], []
    for traj in trajs:
        outcomes = _program_outcomes(traj)
        (kept if outcomes and outcomes[-1] else dropped).append(traj)
    return kept, dropped


_VERDICT_RE = re.compile(r"###\s*Program good\s*\n\s*([YN])", re.IGNORECASE)


def classify_trivial(
    program: str,
    icl_examples: str,
    judges: Sequence[CompletionProvider],
) -> tuple[bool, list[JudgeVerdict]]:
    """Majority vote over judges on whether a program hardcodes its answer.

    Each judge sees the labeled exemplar blocks and replies in the same
    "### Program good" Y/N format; unparseable replies abstain, and a tie
    among the remaining votes counts as trivial (conservative).
    """
    if not judges or len(judges) % 2 == 0:
        raise ValueError("classify_trivial requires an odd number of judges")
    prompt = (
        icl_examples.rstrip()
        + "\n\n=== Proposed program\n```python\n"
        + program.rstrip()
        + "\n```\n\nDoes the program genuinely model the problem (Y) or "
        "hardcode the answer / hide the reasoning in comments (N)? Reply in "
        "the exemplar format: '### Program good' followed by Y or N."
    )
    verdicts: list[JudgeVerdict] = []
    votes: list[bool] = []
    for i, judge in enumerate(judges):
        judge_id = f"judge-{i + 1}"
        try:
            reply = judge.complete([{"role": "user", "content": prompt}], CompletionParams()).text
        except (ReplayMismatch, ScriptExhausted):
            raise
        except GatewayError as exc:
            verdicts.append(JudgeVerdict(judge_id, False, f"abstained: {exc}"))
            continue
        m = _VERDICT_RE.search(reply)
        if m is None:
            stripped = reply.strip()
            if stripped[:1].upper() in ("Y", "N") and (len(stripped) == 1 or not stripped[1].isalnum()):
                good = stripped[0].upper() == "Y"
            else:
                verdicts.append(JudgeVerdict(judge_id, False, f"abstained: unparseable reply {reply!r}"))
                continue
        else:
            good = m.group(1).upper() == "Y"
        votes.append(good)
        verdicts.append(JudgeVerdict(judge_id, good, reply.strip()))
    good_votes = sum(votes)
    bad_votes = len(votes) - good_votes
    trivial = good_votes <= bad_votes  # tie (including zero votes) -> trivial
    return trivial, verdicts


# ---------------------------------------------------------------------------
# Bad-step detection and the two training transforms


def _is_revise(name: str) -> bool:
    return "revise" in name.lower()


def _is_answer(name: str) -> bool:
    return "answer" in name.lower()


def _emits_program(step: Step, tactic: Optional[Tactic]) -> bool:
    if tactic is not None:
        spec = tactic.find_action(step.action.name)
        if spec is not None:
            return spec.produces_program
    return extract_code_fence(step.action.output) is not None


def detect_bad_steps(traj: Trajectory, tactic: Optional[Tactic] = None) -> set[int]:
    """Indices of steps invalidated later in the trajectory.

    A revise-type action invalidates every earlier program-producing step;
    an answer-type action invalidates every earlier answer-type step.
    """
    bad: set[int] = set()
    for k, step in enumerate(traj.steps):
        if _is_revise(step.action.name):
            for j in range(k):
                if _emits_program(traj.steps[j], tactic):
                    bad.add(j)
        if _is_answer(step.action.name):
            for j in range(k):
                if _is_answer(traj.steps[j].action.name):
                    bad.add(j)
    return bad


def to_pj(traj: Trajectory, tactic: Optional[Tactic] = None) -> Trajectory:
    """Rewrite a flawed trajectory into a clean one.

    Each bad step keeps its thought but takes the action and observations of
    the next not-yet-absorbed correct step with the same action name; the
    absorbed step is removed. A bad step with no such successor is dropped
    entirely and flagged in the trajectory warnings. The result has no
    detectable bad steps (the rewrite is applied to a fixed point).
    """
    current = traj
    warnings = list(traj.warnings)
    for _ in range(len(traj.steps) + 1):
        bad = detect_bad_steps(current, tactic)
        if not bad:
            break
        current, pass_warnings = _pj_pass(current, bad, tactic)
        warnings.extend(pass_warnings)
    current = replace(current, warnings=tuple(warnings))
    if current.status == "answered" and current.steps:
        current = replace(current, final_answer=current.steps[-1].action.output)
    return current


def _pj_pass(traj: Trajectory, bad: set[int], tactic: Optional[Tactic]) -> tuple[Trajectory, list[str]]:
    consumed: set[int] = set()
    dropped: set[int] = set()
    rewritten: dict[int, Step] = {}
    warnings: list[str] = []
    for k in sorted(bad):
        successor = None
        for j in range(k + 1, len(traj.steps)):
            if j in bad or j in consumed:
                continue
            if traj.steps[j].action.name == traj.steps[k].action.name:
                successor = j
                break
        if successor is None:
            dropped.add(k)
            warnings.append(f"pj: dropped step {k} ({traj.steps[k].action.name!r}); no correct successor")
            continue
        consumed.add(successor)
        rewritten[k] = Step(
            thought=traj.steps[k].thought,
            action=traj.steps[successor].action,
            observations=traj.steps[successor].observations,
        )
    new_steps = [
        rewritten.get(i, step)
        for i, step in enumerate(traj.steps)
        if i not in consumed and i not in dropped
    ]
    return replace(traj, steps=tuple(new_steps)), warnings


# ---------------------------------------------------------------------------
# Rendering with trainable spans


@dataclass(frozen=True)
class StepSpans:
    thought: tuple[int, int]
    action: tuple[int, int]
    observations: tuple[tuple[int, int], ...]


class _SpanWriter:
    def __init__(self):
        self.parts: list[str] = []
        self.length = 0

    def emit(self, text: str) -> tuple[int, int]:
        start = self.length
        self.parts.append(text)
        self.length += len(text)
        return start, self.length

    def text(self) -> str:
        return "".join(self.parts)


def render_trajectory_with_spans(traj: Trajectory) -> tuple[str, list[StepSpans]]:
    """Render a trajectory exactly as ``codec.render_trajectory`` does while
    recording the index span of every thought, action, and observation."""
    from .codec import render_trajectory

    w = _SpanWriter()
    spans: list[StepSpans] = []
    header = [
        "=== trajectory ===",
        f"# Problem: {traj.problem_id}",
        f"# Tactic: {traj.tactic_name}",
        f"# Status: {traj.status}",
        f"# Tokens: {traj.token_count}",
    ]
    if traj.children:
        header.append("# Children: " + ", ".join(traj.children))
    if traj.warnings:
        header.append("# Warnings: " + "; ".join(traj.warnings))
    w.emit("\n".join(header) + "\n")
    if traj.steps:
        w.emit("\n")

    # The step body in the canonical renderer is a "\n"-join over flat parts;
    # mirror that by prefixing every part after the first with "\n".
    first_part = True

    def part_sep() -> None:
        nonlocal first_part
        if not first_part:
            w.emit("\n")
        first_part = False

    for step in traj.steps:
        part_sep()
        w.emit("=== response ===")
        part_sep()  # blank line
        part_sep()
        w.emit("### Thought\n")
        thought_span = w.emit(step.thought)
        w.emit("\n### Action\n")
        action_span = w.emit(
            "\n".join(
                ["## Name", step.action.name, "## Input", step.action.input, "## Output", step.action.output]
            )
        )
        part_sep()  # blank line
        part_sep()
        w.emit("=== observations ===")
        obs_spans = []
        for obs in step.observations:
            part_sep()  # blank line
            part_sep()
            feedback = "feedback ok" if obs.status == "ok" else "feedback error"
            obs_spans.append(
                w.emit(
                    "\n".join(
                        [f"# Observer: {obs.observer}", f"# Feedback status: {feedback}", "# Content:", obs.content]
                    )
                )
            )
        part_sep()  # trailing blank part per step
        spans.append(StepSpans(thought=thought_span, action=action_span, observations=tuple(obs_spans)))
    if traj.steps:
        w.emit("\n")
    text = w.text()
    expected = render_trajectory(traj)
    if text != expected:
        raise AssertionError("span-tracking renderer diverged from the canonical renderer")
    return text, spans


def _build_sample(
    traj: Trajectory,
    origin: str,
    thought_action_trainable: Callable[[int], bool],
) -> TrainSample:
    text, spans = render_trajectory_with_spans(traj)
    mask: list[tuple[int, int, bool]] = []
    for i, s in enumerate(spans):
        trainable = thought_action_trainable(i)
        mask.append((s.thought[0], s.thought[1], trainable))
        mask.append((s.action[0], s.action[1], trainable))
        for o in s.observations:
            mask.append((o[0], o[1], False))
    return TrainSample(
        rendered_text=text,
        trainable_mask=tuple(mask),
        origin=origin,
        source_trajectory_id=traj.problem_id,
    )


def to_ipj(traj: Trajectory, tactic: Optional[Tactic] = None) -> TrainSample:
    """Mask instead of rewrite: train on the original trajectory with the
    thought and action of bad steps non-trainable.

    Observations are environment text and are never trainable, including
    those of good steps.
    """
    bad = detect_bad_steps(traj, tactic)
    return _build_sample(traj, "IPJ", lambda i: i not in bad)


def pj_sample(traj: Trajectory, tactic: Optional[Tactic] = None) -> TrainSample:
    """Rewrite via to_pj, then emit a sample with every thought and action
    trainable (observations stay environment text)."""
    clean = to_pj(traj, tactic)
    return _build_sample(clean, "PJ", lambda i: True)
