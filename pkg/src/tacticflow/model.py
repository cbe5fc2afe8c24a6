"""Domain types shared by all modules: problems, answers, and answer equality."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

SOURCES = ("gsm8k", "folio", "proscript", "reclor", "hybrid")
ANSWER_KINDS = ("numeric", "nli3", "graph", "option_index")
NLI3_LABELS = ("Agree", "Contradict", "Uncertain")
DIFFICULTIES = ("GG", "GF", "GFX", "GFR", "GFRX")
GRANULARITIES = ("easy", "hard")

REL_TOL = 1e-9


@dataclass(frozen=True)
class AnswerValue:
    """Tagged union over the four gold-answer shapes.

    Exactly one of ``number``, ``label``, ``graph``, ``option`` is set.
    ``graph`` is a frozenset of directed (from_step, to_step) edges.
    """

    number: Optional[float] = None
    label: Optional[str] = None
    graph: Optional[frozenset[tuple[str, str]]] = None
    option: Optional[int] = None

    def __post_init__(self):
        populated = [v for v in (self.number, self.label, self.graph, self.option) if v is not None]
        if len(populated) != 1:
            raise ValueError("AnswerValue must populate exactly one variant")
        if self.graph is not None and any(a == b for a, b in self.graph):
            raise ValueError("graph answer contains a self-loop")

    @staticmethod
    def of_number(x: float) -> "AnswerValue":
        return AnswerValue(number=float(x))

    @staticmethod
    def of_label(s: str) -> "AnswerValue":
        return AnswerValue(label=s)

    @staticmethod
    def of_graph(edges: Iterable[tuple[str, str]]) -> "AnswerValue":
        return AnswerValue(graph=frozenset((a, b) for a, b in edges))

    @staticmethod
    def of_option(i: int) -> "AnswerValue":
        return AnswerValue(option=int(i))

    def to_json(self):
        if self.number is not None:
            return self.number
        if self.label is not None:
            return self.label
        if self.option is not None:
            return self.option
        return sorted([a, b] for a, b in self.graph)

    @staticmethod
    def from_json(raw, kind: str) -> "AnswerValue":
        if kind == "numeric":
            return AnswerValue.of_number(float(raw))
        if kind == "nli3":
            return AnswerValue.of_label(str(raw))
        if kind == "option_index":
            return AnswerValue.of_option(int(raw))
        if kind == "graph":
            return AnswerValue.of_graph((str(a), str(b)) for a, b in raw)
        raise ValueError(f"unknown answer kind: {kind}")

    def as_text(self) -> str:
        """Render the gold value the way a correct agent answer would state it."""
        if self.number is not None:
            if float(self.number).is_integer():
                return str(int(self.number))
            return repr(self.number)
        if self.label is not None:
            return self.label
        if self.option is not None:
            return str(self.option)
        return "\n".join(f"{a} -> {b}" for a, b in sorted(self.graph))


@dataclass(frozen=True)
class Problem:
    """A reasoning task with a typed gold answer and source provenance."""

    id: str
    source: str
    context: str
    question: str
    statements: tuple[str, ...]
    gold: AnswerValue
    answer_kind: str
    fuzzy_eligible: bool = False
    gold_program: Optional[str] = None
    gold_tactic: Optional[str] = None

    def text(self) -> str:
        """Full problem text: context, question and any multichoice statements."""
        parts = []
        if self.context:
            parts.append(self.context)
        parts.append(self.question)
        if self.statements:
            parts.append("\n".join(f"{i}. {s}" for i, s in enumerate(self.statements, start=1)))
        return "\n\n".join(parts)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "context": self.context,
            "question": self.question,
            "statements": list(self.statements),
            "gold": self.gold.to_json(),
            "answer_kind": self.answer_kind,
            "fuzzy_eligible": self.fuzzy_eligible,
            "gold_program": self.gold_program,
            "gold_tactic": self.gold_tactic,
        }

    @staticmethod
    def from_json(d: dict) -> "Problem":
        return Problem(
            id=d["id"],
            source=d["source"],
            context=d.get("context", ""),
            question=d["question"],
            statements=tuple(d.get("statements") or ()),
            gold=AnswerValue.from_json(d["gold"], d["answer_kind"]),
            answer_kind=d["answer_kind"],
            fuzzy_eligible=bool(d.get("fuzzy_eligible", False)),
            gold_program=d.get("gold_program"),
            gold_tactic=d.get("gold_tactic"),
        )


@dataclass(frozen=True)
class OptionSource:
    """Provenance of one option of a hybrid problem."""

    source_id: str
    source_dataset: str
    gold_tactic: str
    is_correct: bool
    # Original problem text and gold answer text; carried so routing
    # trajectories can be reconstructed and subproblem recognition scored
    # without a separate source-corpus lookup.
    source_text: str = ""
    gold_text: str = ""
    gold_program: Optional[str] = None


@dataclass(frozen=True)
class HybridProblem:
    """A multichoice problem blended from several source problems."""

    base: Problem
    difficulty: str
    granularity: str
    option_sources: tuple[OptionSource, ...]
    label: int

    def to_json(self) -> dict:
        return {
            "base": self.base.to_json(),
            "difficulty": self.difficulty,
            "granularity": self.granularity,
            "option_sources": [
                {
                    "source_id": o.source_id,
                    "source_dataset": o.source_dataset,
                    "gold_tactic": o.gold_tactic,
                    "is_correct": o.is_correct,
                    "source_text": o.source_text,
                    "gold_text": o.gold_text,
                    "gold_program": o.gold_program,
                }
                for o in self.option_sources
            ],
            "label": self.label,
        }

    @staticmethod
    def from_json(d: dict) -> "HybridProblem":
        return HybridProblem(
            base=Problem.from_json(d["base"]),
            difficulty=d["difficulty"],
            granularity=d["granularity"],
            option_sources=tuple(
                OptionSource(
                    source_id=o["source_id"],
                    source_dataset=o["source_dataset"],
                    gold_tactic=o["gold_tactic"],
                    is_correct=bool(o["is_correct"]),
                    source_text=o.get("source_text", ""),
                    gold_text=o.get("gold_text", ""),
                    gold_program=o.get("gold_program"),
                )
                for o in d["option_sources"]
            ),
            label=int(d["label"]),
        )


def validate_problem(p: Problem) -> list[str]:
    """Check every Problem invariant; returns one description per violation."""
    violations = []
    if p.source not in SOURCES:
        violations.append(f"source: unknown source {p.source!r}")
    if p.answer_kind not in ANSWER_KINDS:
        violations.append(f"answer_kind: unknown kind {p.answer_kind!r}")
        return violations
    if bool(p.statements) != (p.answer_kind == "option_index"):
        violations.append("statements: nonempty iff answer_kind is option_index")
    if p.answer_kind == "option_index":
        if p.gold.option is None:
            violations.append("gold: option_index problem requires an option gold")
        elif p.statements and not (1 <= p.gold.option <= len(p.statements)):
            violations.append("gold: gold out of range")
    elif p.answer_kind == "nli3":
        if p.gold.label is None or p.gold.label not in NLI3_LABELS:
            violations.append("gold: gold not in label set")
    elif p.answer_kind == "numeric":
        if p.gold.number is None:
            violations.append("gold: numeric problem requires a number gold")
    elif p.answer_kind == "graph":
        if p.gold.graph is None:
            violations.append("gold: graph problem requires an edge-list gold")
        elif any(not a.strip() or not b.strip() for a, b in p.gold.graph):
            violations.append("gold: graph edges must name nonempty step nodes")
    if p.fuzzy_eligible and p.answer_kind != "numeric":
        violations.append("fuzzy_eligible: only numeric problems may be fuzzy-eligible")
    return violations


def validate_hybrid(h: HybridProblem) -> list[str]:
    violations = validate_problem(h.base)
    if h.base.answer_kind != "option_index":
        violations.append("base: hybrid base must be option_index")
    if h.difficulty not in DIFFICULTIES:
        violations.append(f"difficulty: unknown difficulty {h.difficulty!r}")
    if h.granularity not in GRANULARITIES:
        violations.append(f"granularity: unknown granularity {h.granularity!r}")
    correct = [i for i, o in enumerate(h.option_sources, start=1) if o.is_correct]
    if len(correct) != 1:
        violations.append("option_sources: exactly one option must be correct")
    elif correct[0] != h.label:
        violations.append("label: label must index the correct option")
    if len(h.option_sources) != len(h.base.statements):
        violations.append("option_sources: one entry per base statement required")
    return violations


_EMPHASIS_RE = re.compile(r"(\*\*|__|\*)")
_CURRENCY_RE = re.compile(r"[$€£¥]")
_THOUSANDS_RE = re.compile(r"(?<=\d),(?=\d)")
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


def _normalize_numeric_text(text: str) -> str:
    text = _EMPHASIS_RE.sub("", text)
    text = _CURRENCY_RE.sub("", text)
    return _THOUSANDS_RE.sub("", text)


def extract_numbers(text: str) -> list[float]:
    """All numeric literals in order of appearance.

    Currency symbols, thousands separators, and markdown emphasis are stripped
    first, so "$62.00" and "**40**" yield 62.0 and 40.0.
    """
    return [float(m.group(0)) for m in _NUMBER_RE.finditer(_normalize_numeric_text(text))]


def _numbers_close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=REL_TOL, abs_tol=0.0) or a == b


def _parse_bare_number(text: str) -> Optional[float]:
    stripped = _normalize_numeric_text(text).strip().rstrip(".")
    if not stripped:
        return None
    m = _NUMBER_RE.fullmatch(stripped)
    if m is None:
        return None
    return float(stripped)


def _parse_graph_edges(text: str) -> Optional[set[tuple[str, str]]]:
    edges = set()
    saw_any = False
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "->" not in line:
            # Ignore prose lines, but require at least one edge overall.
            continue
        left, _, right = line.partition("->")
        a = _normalize_step_name(left)
        b = _normalize_step_name(right)
        if not a or not b:
            return None
        edges.add((a, b))
        saw_any = True
    return edges if saw_any else None


def _normalize_step_name(name: str) -> str:
    return " ".join(name.lower().split())


def answers_equal(kind: str, gold: AnswerValue, got: str, fuzzy: bool = False) -> bool:
    """Decide if free-text answer ``got`` matches the gold value.

    Total over arbitrary byte strings: unparseable input is simply wrong.
    """
    if not isinstance(got, str):
        return False
    if kind == "numeric":
        if gold.number is None:
            return False
        if fuzzy:
            return any(_numbers_close(n, gold.number) for n in extract_numbers(got))
        parsed = _parse_bare_number(got)
        return parsed is not None and _numbers_close(parsed, gold.number)
    if kind == "nli3":
        if gold.label is None:
            return False
        return got.strip().lower() == gold.label.strip().lower()
    if kind == "option_index":
        if gold.option is None:
            return False
        stripped = got.strip().rstrip(".")
        try:
            return int(stripped) == gold.option
        except ValueError:
            return False
    if kind == "graph":
        if gold.graph is None:
            return False
        parsed = _parse_graph_edges(got)
        if parsed is None:
            return False
        normalized_gold = {(_normalize_step_name(a), _normalize_step_name(b)) for a, b in gold.graph}
        return parsed == normalized_gold
    return False


def read_problems(path: Path | str) -> list[Problem]:
    """Load a problem fixture file: one JSON object per line."""
    problems = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            problems.append(Problem.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed problem line: {exc}") from exc
    return problems


def write_problems(path: Path | str, problems: Iterable[Problem]) -> None:
    lines = [json.dumps(p.to_json()) for p in problems]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_hybrids(path: Path | str) -> list[HybridProblem]:
    hybrids = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            hybrids.append(HybridProblem.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed hybrid line: {exc}") from exc
    return hybrids


def write_hybrids(path: Path | str, hybrids: Iterable[HybridProblem]) -> None:
    lines = [json.dumps(h.to_json()) for h in hybrids]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
