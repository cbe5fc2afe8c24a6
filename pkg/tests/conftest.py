"""Shared fixtures and hypothesis strategies for the test suite."""

from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import strategies as st

from tacticflow.codec import Action, Observation, Step, Trajectory
from tacticflow.engine import TacticPool

FIXTURES = Path(__file__).parent / "fixtures"
TACTICS_DIR = Path(__file__).parents[1] / "src" / "tacticflow" / "tactics"


@pytest.fixture(scope="session")
def pool() -> TacticPool:
    return TacticPool.from_dir(TACTICS_DIR)


# ---------------------------------------------------------------------------
# Strategies for trajectory round-trip properties.
#
# Free text inside trajectories must not collide with the structural markers
# of the textual format (section headers at line starts, separator lines);
# the canonical storage format is JSONL where any text is legal, so the
# textual round-trip is only required on marker-free content.

_MARKER_PREFIXES = ("###", "##", "#", "===", "- ")


def _safe_line(line: str) -> bool:
    stripped = line.strip()
    return not any(stripped.startswith(p) for p in _MARKER_PREFIXES)


# \n is the only line break the codec round-trips; the other characters here
# also split str.splitlines and so must not appear inside free text.
_EXOTIC_BREAKS = "\r\x0b\x0c\x1c\x1d\x1e\x85\u2028\u2029"

safe_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters=_EXOTIC_BREAKS),
    max_size=120,
).filter(lambda t: all(_safe_line(l) for l in t.splitlines()) and t == t.strip("\n").rstrip())

safe_word = st.text(
    alphabet="abcdefghijklmnopqrstuvwxyz_",
    min_size=1,
    max_size=20,
)

observations = st.builds(
    Observation,
    observer=st.sampled_from(["Action parser", "Runner", "python interpreter"]),
    status=st.sampled_from(["ok", "error"]),
    content=safe_text,
)

actions = st.builds(
    Action,
    name=st.sampled_from(["Plan", "Build program", "Revise code", "Aggregate and answer", "Tactic check"]),
    input=safe_text,
    output=safe_text,
)

steps = st.builds(
    Step,
    thought=safe_text,
    action=actions,
    observations=st.lists(observations, min_size=1, max_size=3).map(tuple),
)


@st.composite
def trajectories(draw) -> Trajectory:
    step_list = draw(st.lists(steps, min_size=0, max_size=5))
    status = draw(st.sampled_from(["running", "answered", "max_steps", "error_limit"]))
    if status == "answered" and not step_list:
        status = "running"
    final = step_list[-1].action.output if (status == "answered" and step_list) else None
    return Trajectory(
        problem_id=draw(safe_word),
        tactic_name=draw(safe_word),
        steps=tuple(step_list),
        status=status,
        final_answer=final,
        children=tuple(draw(st.lists(safe_word, max_size=3))),
        token_count=draw(st.integers(min_value=0, max_value=10_000)),
        warnings=(),
    )
