"""Per-trajectory score records and corpus aggregation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from ..codec import Step, Trajectory, extract_code_fence
from ..engine import parse_call_payload
from ..model import HybridProblem, Problem, answers_equal, extract_numbers, _parse_bare_number, _parse_graph_edges, NLI3_LABELS
from ..observers import PARSER_OBSERVER
from .bleu import bleu
from .codebleu import CodeBleuConfig, codebleu

ERROR_TYPES = ("correct", "wrong_ans", "runtime_err", "wrong_format")

_NON_RUNNER_OBSERVERS = (PARSER_OBSERVER, "llm-gateway")

_SOLVING_RE = re.compile(r"Solving subproblem with tactic (\S+)")


@dataclass(frozen=True)
class OptionScore:
    option: int
    tactic_correct: bool
    subp_bleu: float
    option_codebleu: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "option": self.option,
            "tactic_correct": self.tactic_correct,
            "subp_bleu": self.subp_bleu,
            "option_codebleu": self.option_codebleu,
        }

    @staticmethod
    def from_json(d: dict) -> "OptionScore":
        return OptionScore(
            option=int(d["option"]),
            tactic_correct=bool(d["tactic_correct"]),
            subp_bleu=float(d["subp_bleu"]),
            option_codebleu=d.get("option_codebleu"),
        )


@dataclass(frozen=True)
class ScoreRecord:
    problem_id: str
    source: str
    answered: bool
    correct: bool
    correct_fuzzy: bool
    fuzzy_eligible: bool
    has_program: bool
    program_ran: bool
    codebleu: Optional[float]
    error_type: str
    routing: bool = False
    difficulty: Optional[str] = None
    options: tuple[OptionScore, ...] = ()
    opt_done: Optional[bool] = None

    def to_json(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "source": self.source,
            "answered": self.answered,
            "correct": self.correct,
            "correct_fuzzy": self.correct_fuzzy,
            "fuzzy_eligible": self.fuzzy_eligible,
            "has_program": self.has_program,
            "program_ran": self.program_ran,
            "codebleu": self.codebleu,
            "error_type": self.error_type,
            "routing": self.routing,
            "difficulty": self.difficulty,
            "options": [o.to_json() for o in self.options],
            "opt_done": self.opt_done,
        }

    @staticmethod
    def from_json(d: dict) -> "ScoreRecord":
        return ScoreRecord(
            problem_id=d["problem_id"],
            source=d["source"],
            answered=bool(d["answered"]),
            correct=bool(d["correct"]),
            correct_fuzzy=bool(d["correct_fuzzy"]),
            fuzzy_eligible=bool(d.get("fuzzy_eligible", False)),
            has_program=bool(d["has_program"]),
            program_ran=bool(d["program_ran"]),
            codebleu=d.get("codebleu"),
            error_type=d["error_type"],
            routing=bool(d.get("routing", False)),
            difficulty=d.get("difficulty"),
            options=tuple(OptionScore.from_json(o) for o in d.get("options") or ()),
            opt_done=d.get("opt_done"),
        )


def _is_format_valid(kind: str, text: str) -> bool:
    """Answer-kind-specific format validators for the wrong_format bucket."""
    if kind == "numeric":
        return _parse_bare_number(text) is not None
    if kind == "nli3":
        return text.strip().lower() in {l.lower() for l in NLI3_LABELS}
    if kind == "option_index":
        try:
            int(text.strip().rstrip("."))
            return True
        except ValueError:
            return False
    if kind == "graph":
        return _parse_graph_edges(text) is not None
    return False


def _program_steps(steps: Sequence[Step]) -> list[tuple[str, bool]]:
    """(fence source, ran ok) per program-producing step, in order."""
    out = []
    for step in steps:
        fence = extract_code_fence(step.action.output)
        runner_obs = [o for o in step.observations if o.observer not in _NON_RUNNER_OBSERVERS]
        if fence is not None and runner_obs:
            out.append((fence.source, all(o.status == "ok" for o in runner_obs)))
    return out


def last_program(traj: Trajectory) -> Optional[str]:
    programs = _program_steps(traj.steps)
    return programs[-1][0] if programs else None


def _call_steps(traj: Trajectory) -> list[tuple[int, str, Optional[str], int]]:
    """(option, subproblem, resolved tactic, spawn index) per Call tactic
    step with a parseable payload; spawn index is -1 for failed spawns."""
    out = []
    spawn = 0
    for step in traj.steps:
        if not step.action.name.lower().startswith("call tactic"):
            continue
        spawned = False
        tactic_name = None
        for o in step.observations:
            m = _SOLVING_RE.search(o.content)
            if o.observer == PARSER_OBSERVER and o.status == "ok" and m:
                tactic_name = m.group(1)
                spawned = True
        payload = parse_call_payload(step.action.output)
        if payload is None:
            if spawned:
                spawn += 1
            continue
        option, subtext = payload
        out.append((option, subtext, tactic_name, spawn if spawned else -1))
        if spawned:
            spawn += 1
    return out


def score_trajectory(
    traj: Trajectory,
    problem: Problem,
    config: CodeBleuConfig = CodeBleuConfig(),
    hybrid: Optional[HybridProblem] = None,
    children: Optional[Sequence[Trajectory]] = None,
    routing: bool = False,
) -> ScoreRecord:
    """Score one terminated trajectory against its problem's gold data."""
    answered = traj.status == "answered"
    answer_text = traj.final_answer or ""
    kind = problem.answer_kind
    correct = answered and answers_equal(kind, problem.gold, answer_text, fuzzy=False)
    if kind == "numeric":
        correct_fuzzy = answered and answers_equal(kind, problem.gold, answer_text, fuzzy=True)
    else:
        correct_fuzzy = correct

    programs = _program_steps(traj.steps)
    has_program = bool(programs)
    program_ran = bool(programs) and programs[-1][1]

    score = None
    if has_program and problem.gold_program:
        score = codebleu(programs[-1][0], problem.gold_program, config)

    if not answered:
        error_type = "runtime_err"
    elif correct:
        error_type = "correct"
    elif _is_format_valid(kind, answer_text):
        error_type = "wrong_ans"
    else:
        error_type = "wrong_format"

    options: tuple[OptionScore, ...] = ()
    opt_done: Optional[bool] = None
    if routing and hybrid is not None:
        options = _score_options(traj, hybrid, children or (), config)
        opt_done = correct and all(
            o.tactic_correct and o.option_codebleu is not None and o.option_codebleu >= config.threshold
            for o in options
        )

    return ScoreRecord(
        problem_id=traj.problem_id,
        source=problem.source,
        answered=answered,
        correct=correct,
        correct_fuzzy=correct_fuzzy,
        fuzzy_eligible=problem.fuzzy_eligible,
        has_program=has_program,
        program_ran=program_ran,
        codebleu=score,
        error_type=error_type,
        routing=routing,
        difficulty=hybrid.difficulty if hybrid is not None else None,
        options=options,
        opt_done=opt_done,
    )


def _score_options(
    traj: Trajectory,
    hybrid: HybridProblem,
    children: Sequence[Trajectory],
    config: CodeBleuConfig,
) -> tuple[OptionScore, ...]:
    calls = _call_steps(traj)
    by_option: dict[int, tuple[str, Optional[str], int]] = {}
    for option, subtext, tactic_name, spawn_idx in calls:
        by_option[option] = (subtext, tactic_name, spawn_idx)

    scores = []
    for i, src in enumerate(hybrid.option_sources, start=1):
        entry = by_option.get(i)
        if entry is None:
            scores.append(OptionScore(option=i, tactic_correct=False, subp_bleu=0.0))
            continue
        subtext, tactic_name, spawn_idx = entry
        tactic_correct = tactic_name == src.gold_tactic
        subp = bleu(subtext, src.source_text) if src.source_text else 0.0
        option_cb = None
        if src.gold_program and 0 <= spawn_idx < len(children):
            child_prog = last_program(children[spawn_idx])
            if child_prog is not None:
                option_cb = codebleu(child_prog, src.gold_program, config)
        scores.append(
            OptionScore(option=i, tactic_correct=tactic_correct, subp_bleu=subp, option_codebleu=option_cb)
        )
    return tuple(scores)


# ---------------------------------------------------------------------------
# Aggregation


@dataclass(frozen=True)
class Cell:
    n: int
    acc: float
    acc_w_prog: float
    acc_w_prog_plus: float
    prog_qual: Optional[float]
    tac_recog: Optional[float]
    subp_recog: Optional[float]
    acc_opt_done: Optional[float]
    error_counts: dict

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "acc": self.acc,
            "acc_w_prog": self.acc_w_prog,
            "acc_w_prog_plus": self.acc_w_prog_plus,
            "prog_qual": self.prog_qual,
            "tac_recog": self.tac_recog,
            "subp_recog": self.subp_recog,
            "acc_opt_done": self.acc_opt_done,
            "error_counts": dict(self.error_counts),
        }


@dataclass(frozen=True)
class AggregateReport:
    cells: dict  # group name -> Cell
    threshold: float

    COLUMNS = (
        "Acc (%)",
        "Acc w/ Prog.",
        "Acc w/ Prog+",
        "Prog. Qual.",
        "Tac. Recog.",
        "SubP. Recog.",
        "Acc. Opt done (%)",
    )

    def to_json(self) -> dict:
        return {"threshold": self.threshold, "cells": {g: c.to_json() for g, c in self.cells.items()}}

    def _row_values(self, cell: Cell) -> list[str]:
        def fmt_pct(x: Optional[float]) -> str:
            return "n/a" if x is None else f"{x:.2f}"

        def fmt_frac(x: Optional[float]) -> str:
            return "n/a" if x is None else f"{x:.2f}"

        return [
            fmt_pct(cell.acc),
            fmt_pct(cell.acc_w_prog),
            fmt_pct(cell.acc_w_prog_plus),
            fmt_frac(cell.prog_qual),
            fmt_pct(cell.tac_recog),
            fmt_frac(cell.subp_recog),
            fmt_pct(cell.acc_opt_done),
        ]

    def to_table(self) -> str:
        if not self.cells:
            return "(empty report: no score records)\n"
        header = ["Group"] + list(self.COLUMNS)
        rows = [[group] + self._row_values(cell) for group, cell in self.cells.items()]
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
        lines.append("  ".join("-" * w for w in widths))
        for row in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        header = ["group"] + [c.lower().replace(" ", "_").replace("(%)", "pct").strip("._") for c in self.COLUMNS]
        lines = [",".join(header)]
        for group, cell in self.cells.items():
            lines.append(",".join([group] + [v if v != "n/a" else "" for v in self._row_values(cell)]))
        return "\n".join(lines) + "\n"


def _effective_correct(r: ScoreRecord) -> bool:
    return r.correct or (r.fuzzy_eligible and r.correct_fuzzy)


def _make_cell(records: list[ScoreRecord], threshold: float) -> Cell:
    n = len(records)
    acc = 100.0 * sum(_effective_correct(r) for r in records) / n
    with_prog = [r for r in records if _effective_correct(r) and r.has_program and r.program_ran]
    acc_w_prog = 100.0 * len(with_prog) / n
    plus = [r for r in with_prog if r.codebleu is not None and r.codebleu >= threshold]
    acc_w_prog_plus = 100.0 * len(plus) / n

    scored = [r.codebleu for r in records if r.codebleu is not None]
    prog_qual = sum(scored) / len(scored) if scored else None

    routing_records = [r for r in records if r.routing]
    all_options = [o for r in routing_records for o in r.options]
    tac_recog = 100.0 * sum(o.tactic_correct for o in all_options) / len(all_options) if all_options else None
    subp_recog = sum(o.subp_bleu for o in all_options) / len(all_options) if all_options else None
    done_flags = [r.opt_done for r in routing_records if r.opt_done is not None]
    acc_opt_done = 100.0 * sum(done_flags) / len(done_flags) if done_flags else None

    error_counts = {t: sum(1 for r in records if r.error_type == t) for t in ERROR_TYPES}
    return Cell(
        n=n,
        acc=acc,
        acc_w_prog=acc_w_prog,
        acc_w_prog_plus=acc_w_prog_plus,
        prog_qual=prog_qual,
        tac_recog=tac_recog,
        subp_recog=subp_recog,
        acc_opt_done=acc_opt_done,
        error_counts=error_counts,
    )


def aggregate(records: Sequence[ScoreRecord], config: CodeBleuConfig = CodeBleuConfig()) -> AggregateReport:
    """Corpus aggregation per dataset (standalone) / difficulty (hybrid),
    plus an "all" row; groups with no records simply do not appear, and
    undefined metrics render "n/a"."""
    groups: dict[str, list[ScoreRecord]] = {}
    for r in records:
        key = (r.difficulty.lower() if r.difficulty else r.source)
        groups.setdefault(key, []).append(r)
    cells = {}
    for group in sorted(groups):
        cells[group] = _make_cell(groups[group], config.threshold)
    if records:
        cells["all"] = _make_cell(list(records), config.threshold)
    return AggregateReport(cells=cells, threshold=config.threshold)


def write_records(path: Path | str, records: Iterable[ScoreRecord]) -> None:
    lines = [json.dumps(r.to_json()) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_records(path: Path | str) -> list[ScoreRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(ScoreRecord.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed score record: {exc}") from exc
    return records
