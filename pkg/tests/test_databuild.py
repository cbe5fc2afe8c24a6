"""Training-data pipeline: difficulty sampling, blending, verification,
routing-trajectory synthesis, filtering, bad-step detection, and the two
trajectory-to-sample transforms."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from tacticflow.codec import Action, Observation, Step, Trajectory
from tacticflow.databuild import (
    BlendRejected,
    JudgeVerdict,
    ProvenanceError,
    TrainSample,
    blend,
    classify_trivial,
    detect_bad_steps,
    filter_no_program,
    make_routing_trajectory,
    pj_sample,
    render_trajectory_with_spans,
    sample_difficulty,
    to_ipj,
    to_pj,
    verify_blend,
    wrap_standalone,
)
from tacticflow.gateway import CallableProvider, TransportError
from tacticflow.metrics.bleu import bleu
from tacticflow.metrics.scoring import score_trajectory
from tacticflow.model import AnswerValue, Problem, validate_hybrid

from conftest import trajectories


def problem(pid: str, source: str = "gsm8k", **overrides) -> Problem:
    defaults = {
        "gsm8k": dict(
            context="Ann has 3 apples. She buys 2 more.",
            question="How many apples does Ann have?",
            gold=AnswerValue.of_number(5),
            answer_kind="numeric",
            fuzzy_eligible=True,
            gold_tactic="math",
            gold_program="print(3 + 2)",
        ),
        "folio": dict(
            context="All cats purr. Tom is a cat.",
            question="Conclusion: Tom purrs.",
            gold=AnswerValue.of_label("Agree"),
            answer_kind="nli3",
            gold_tactic="predicate_logic_z3",
        ),
        "reclor": dict(
            context="The council rejected the plan. Critics cheered.",
            question="Which option best explains the cheering?",
            statements=("The critics opposed the plan.", "The critics wrote the plan."),
            gold=AnswerValue.of_option(1),
            answer_kind="option_index",
            gold_tactic="any_program",
        ),
    }[source]
    base = dict(id=pid, source=source, statements=(), fuzzy_eligible=False)
    base.update(defaults)
    base.update(overrides)
    return Problem(**base)


def pools(n: int = 3) -> dict:
    return {
        "gsm8k": [problem(f"g{i}") for i in range(n)],
        "folio": [problem(f"f{i}", "folio") for i in range(n)],
        "reclor": [problem(f"r{i}", "reclor") for i in range(n)],
    }


class TestSampleDifficulty:
    @given(
        st.sampled_from(["GG", "GF", "GFX", "GFR", "GFRX"]),
        st.integers(0, 1000),
    )
    @settings(max_examples=200, deadline=None)
    def test_letter_constraints(self, difficulty, seed):
        picked = sample_difficulty(difficulty, pools(), random.Random(seed))
        assert len(picked) == len(difficulty)
        letter_map = {"G": "gsm8k", "F": "folio", "R": "reclor"}
        preceding = set()
        for letter, p in zip(difficulty, picked):
            if letter == "X":
                assert p.source in preceding
            else:
                assert p.source == letter_map[letter]
                preceding.add(letter_map[letter])
        # no-replacement per dataset
        for ds in letter_map.values():
            ids = [p.id for p in picked if p.source == ds]
            assert len(ids) == len(set(ids))

    def test_deterministic_under_seed(self):
        a = sample_difficulty("GFRX", pools(), random.Random(7))
        b = sample_difficulty("GFRX", pools(), random.Random(7))
        assert [p.id for p in a] == [p.id for p in b]

    def test_x_skips_exhausted_dataset(self):
        small = pools()
        small["reclor"] = small["reclor"][:1]
        picked = sample_difficulty("GFRX", small, random.Random(3))
        # reclor has one problem, already used by R; X must come from G or F
        assert picked[3].source in ("gsm8k", "folio")

    def test_errors(self):
        with pytest.raises(ValueError, match="start with"):
            sample_difficulty("XG", pools(), random.Random(0))
        with pytest.raises(ValueError, match="unknown difficulty letter"):
            sample_difficulty("GQ", pools(), random.Random(0))
        with pytest.raises(ValueError, match="empty pool"):
            sample_difficulty("GF", {"gsm8k": [problem("g0")]}, random.Random(0))


class TestBlend:
    def test_easy_blend_shape(self):
        sources = [problem("g0"), problem("f0", "folio")]
        hybrid = blend(sources, "easy", random.Random(1), "h1")
        assert validate_hybrid(hybrid) == []
        assert hybrid.difficulty == "GF"
        assert hybrid.granularity == "easy"
        assert len(hybrid.base.statements) == 2
        assert sum(s.is_correct for s in hybrid.option_sources) == 1
        assert hybrid.option_sources[hybrid.label - 1].is_correct
        # contiguous contexts joined by a transition sentence
        assert "Ann has 3 apples" in hybrid.base.context
        assert "All cats purr" in hybrid.base.context
        assert "Meanwhile, here is another situation." in hybrid.base.context

    def test_hard_blend_preserves_sentences(self):
        sources = [problem("g0"), problem("f0", "folio")]
        hybrid = blend(sources, "hard", random.Random(5), "h2")
        for sentence in ["Ann has 3 apples.", "She buys 2 more.", "All cats purr.", "Tom is a cat."]:
            assert sentence in hybrid.base.context

    def test_correct_statement_carries_gold_distractors_do_not(self):
        sources = [problem("g0"), problem("g1")]
        hybrid = blend(sources, "easy", random.Random(2), "h3")
        for i, stmt in enumerate(hybrid.base.statements, start=1):
            if i == hybrid.label:
                assert stmt.endswith(": 5")
            else:
                assert not stmt.endswith(": 5")

    def test_deterministic_under_seed(self):
        sources = [problem("g0"), problem("f0", "folio")]
        assert blend(sources, "hard", random.Random(9), "h") == blend(
            sources, "hard", random.Random(9), "h"
        )

    def test_llm_rewrite_used(self):
        sources = [problem("g0")]
        llm = CallableProvider(lambda m, p: "A rewritten passage.")
        hybrid = blend(sources, "easy", random.Random(0), "h4", llm=llm)
        assert hybrid.base.context == "A rewritten passage."

    def test_rejecting_judges_raise(self):
        sources = [problem("g0")]
        judge = CallableProvider(lambda m, p: "No, a fact was dropped.")
        with pytest.raises(BlendRejected) as err:
            blend(sources, "easy", random.Random(0), "h5", judges=[judge])
        assert err.value.verdicts[0].program_good is False

    def test_accepting_judges_pass(self):
        sources = [problem("g0")]
        judge = CallableProvider(lambda m, p: "Yes, everything is preserved.")
        hybrid = blend(sources, "easy", random.Random(0), "h6", judges=[judge, judge, judge])
        assert hybrid.base.id == "h6"

    def test_source_count_bounds(self):
        with pytest.raises(ValueError):
            blend([], "easy", random.Random(0), "h")
        with pytest.raises(ValueError):
            blend([problem(f"g{i}") for i in range(5)], "easy", random.Random(0), "h")


class TestVerifyBlend:
    def make(self):
        sources = [problem("g0")]
        return blend(sources, "easy", random.Random(0), "hv"), sources

    def test_majority_no_fails(self):
        hybrid, sources = self.make()
        judges = [
            CallableProvider(lambda m, p: "yes"),
            CallableProvider(lambda m, p: "no"),
            CallableProvider(lambda m, p: "No, facts are missing."),
        ]
        passed, verdicts = verify_blend(hybrid, sources, judges)
        assert not passed
        assert [v.program_good for v in verdicts] == [True, False, False]

    def test_abstentions_ignored_in_majority(self):
        hybrid, sources = self.make()

        def broken(m, p):
            raise TransportError("down")

        judges = [CallableProvider(broken), CallableProvider(lambda m, p: "yes, preserved")]
        passed, verdicts = verify_blend(hybrid, sources, judges)
        assert passed
        assert "abstained" in verdicts[0].rationale

    def test_all_abstain_fails(self):
        hybrid, sources = self.make()
        judges = [CallableProvider(lambda m, p: "hmm, unclear")]
        passed, verdicts = verify_blend(hybrid, sources, judges)
        assert not passed
        assert "abstained" in verdicts[0].rationale

    def test_requires_a_judge(self):
        hybrid, sources = self.make()
        with pytest.raises(ValueError):
            verify_blend(hybrid, sources, [])


class TestMakeRoutingTrajectory:
    def test_round_trip_recovers_sources_exactly(self):
        sources = [problem("g0"), problem("f0", "folio")]
        hybrid = blend(sources, "easy", random.Random(4), "hr")
        traj = make_routing_trajectory(hybrid)
        assert traj.status == "answered"
        assert traj.final_answer == str(hybrid.label)
        assert len(traj.steps) == 3
        assert traj.children == ("hr::opt1.1", "hr::opt2.2")
        for step, src in zip(traj.steps, sources):
            sub = step.action.output.split("### subproblem\n", 1)[1]
            assert sub == src.text()
            assert bleu(sub, src.text()) == pytest.approx(1.0)

    def test_scores_perfectly_against_its_hybrid(self):
        sources = [problem("g0"), problem("f0", "folio")]
        hybrid = blend(sources, "easy", random.Random(4), "hs")
        traj = make_routing_trajectory(hybrid)
        rec = score_trajectory(traj, hybrid.base, hybrid=hybrid, routing=True)
        assert rec.correct
        assert all(o.tactic_correct for o in rec.options)
        assert all(o.subp_bleu == pytest.approx(1.0) for o in rec.options)

    def test_missing_provenance_raises(self):
        hybrid = blend([problem("g0")], "easy", random.Random(0), "hp")
        src = hybrid.option_sources[0]
        import dataclasses

        broken = dataclasses.replace(
            hybrid, option_sources=(dataclasses.replace(src, source_text=""),)
        )
        with pytest.raises(ProvenanceError, match="option 1"):
            make_routing_trajectory(broken)


class TestWrapStandalone:
    def test_single_option_wrapper(self):
        p = problem("g0")
        hybrid = wrap_standalone(p)
        assert hybrid.base.id == "g0::wrapped"
        assert validate_hybrid(hybrid) == []
        assert hybrid.label == 1
        assert len(hybrid.option_sources) == 1
        assert hybrid.option_sources[0].source_text == p.text()
        traj = make_routing_trajectory(hybrid)
        assert traj.final_answer == "1"


def fstep(name: str, output: str, runner_status=None) -> Step:
    obs = [Observation(observer="Action parser", status="ok", content=f"Performing action: {name}")]
    if runner_status is not None:
        obs.append(Observation(observer="Runner", status=runner_status, content="stdout:\n" if runner_status == "ok" else "boom"))
    return Step(thought=f"thinking about {name}", action=Action(name=name, input="i", output=output), observations=tuple(obs))


def ftraj(steps, status="answered", problem_id="t1") -> Trajectory:
    final = steps[-1].action.output if status == "answered" and steps else None
    return Trajectory(
        problem_id=problem_id,
        tactic_name="math",
        steps=tuple(steps),
        status=status,
        final_answer=final,
    )


PROGRAM_OK = fstep("Build program", "```python\nprint(5)\n```", "ok")
PROGRAM_BAD = fstep("Build program", "```python\n1/0\n```", "error")
ANSWER = fstep("Aggregate and answer", "5")
ANSWER_WRONG = fstep("Aggregate and answer", "4")


class TestFilterNoProgram:
    def test_no_program_dropped(self):
        kept, dropped = filter_no_program([ftraj([ANSWER])])
        assert kept == [] and len(dropped) == 1

    def test_failure_then_success_kept(self):
        kept, dropped = filter_no_program([ftraj([PROGRAM_BAD, PROGRAM_OK, ANSWER])])
        assert len(kept) == 1 and dropped == []

    def test_success_then_failure_dropped(self):
        kept, dropped = filter_no_program([ftraj([PROGRAM_OK, PROGRAM_BAD, ANSWER])])
        assert kept == [] and len(dropped) == 1


class TestClassifyTrivial:
    BANK = "=== Question and answer\nQ; answer 5\n=== Proposed program\n```python\nprint(5)\n```\n### Program good\nN\n"

    def judge(self, reply: str) -> CallableProvider:
        return CallableProvider(lambda m, p: reply)

    def test_majority_good_not_trivial(self):
        trivial, verdicts = classify_trivial(
            "x = 2 + 3\nprint(x)", self.BANK, [self.judge("### Program good\nY")] * 3
        )
        assert not trivial
        assert all(v.program_good for v in verdicts)

    def test_majority_bad_trivial(self):
        judges = [
            self.judge("### Program good\nN"),
            self.judge("### Program good\nN"),
            self.judge("### Program good\nY"),
        ]
        trivial, _ = classify_trivial("print(5)", self.BANK, judges)
        assert trivial

    def test_bare_letter_fallback(self):
        trivial, _ = classify_trivial("print(5)", self.BANK, [self.judge("N.")] * 3)
        assert trivial

    def test_tie_after_abstention_is_trivial(self):
        judges = [
            self.judge("### Program good\nY"),
            self.judge("### Program good\nN"),
            self.judge("cannot say"),
        ]
        trivial, verdicts = classify_trivial("print(5)", self.BANK, judges)
        assert trivial
        assert "abstained" in verdicts[2].rationale

    def test_all_abstain_is_trivial(self):
        trivial, _ = classify_trivial("print(5)", self.BANK, [self.judge("???")] * 3)
        assert trivial

    def test_even_judges_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            classify_trivial("print(5)", self.BANK, [self.judge("Y")] * 2)


class TestDetectBadSteps:
    def test_revise_flags_earlier_programs(self):
        traj = ftraj([PROGRAM_BAD, fstep("Revise code", "```python\nprint(5)\n```", "ok"), ANSWER])
        assert detect_bad_steps(traj) == {0}

    def test_answer_flags_earlier_answers(self):
        traj = ftraj([ANSWER_WRONG, ANSWER])
        assert detect_bad_steps(traj) == {0}

    def test_program_then_double_answer(self):
        traj = ftraj([PROGRAM_OK, ANSWER_WRONG, ANSWER])
        assert detect_bad_steps(traj) == {1}

    def test_clean_trajectory_empty(self):
        assert detect_bad_steps(ftraj([fstep("Plan", "p"), PROGRAM_OK, ANSWER])) == set()

    def test_tactic_spec_overrides_fence_heuristic(self, pool):
        math = pool.get("math")
        # "Tactic check" emits no program per the spec, even with a fence in its output
        check = fstep("Tactic check", "```python\nnot a program step\n```")
        traj = ftraj([check, fstep("Revise code", "```python\nx\n```", "ok"), ANSWER])
        assert detect_bad_steps(traj, math) == set()
        assert detect_bad_steps(traj) == {0}


class TestToPj:
    def test_wrong_answer_absorbs_corrected_one(self):
        plan = fstep("Plan", "p")
        traj = ftraj([plan, ANSWER_WRONG, ANSWER])
        clean = to_pj(traj)
        assert len(clean.steps) == 2
        assert clean.steps[0] == plan
        # bad step keeps its own thought but takes the successor's action
        assert clean.steps[1].thought == ANSWER_WRONG.thought
        assert clean.steps[1].action == ANSWER.action
        assert clean.steps[1].observations == ANSWER.observations
        assert clean.final_answer == "5"
        assert detect_bad_steps(clean) == set()

    def test_double_bad_collapses_with_warning(self):
        traj = ftraj([ANSWER_WRONG, fstep("Aggregate and answer", "3"), ANSWER])
        clean = to_pj(traj)
        assert len(clean.steps) == 1
        assert clean.steps[0].thought == ANSWER_WRONG.thought
        assert clean.steps[0].action == ANSWER.action
        assert clean.final_answer == "5"
        assert any("pj: dropped step" in w for w in clean.warnings)

    def test_no_successor_drops_step(self):
        traj = ftraj([PROGRAM_BAD, fstep("Revise code", "```python\nprint(5)\n```", "ok"), ANSWER])
        clean = to_pj(traj)
        assert [s.action.name for s in clean.steps] == ["Revise code", "Aggregate and answer"]
        assert any("no correct successor" in w for w in clean.warnings)

    def test_idempotent(self):
        traj = ftraj([fstep("Plan", "p"), ANSWER_WRONG, ANSWER])
        once = to_pj(traj)
        assert to_pj(once) == once

    def test_clean_passthrough(self):
        traj = ftraj([fstep("Plan", "p"), PROGRAM_OK, ANSWER])
        assert to_pj(traj) == traj

    @given(trajectories())
    @settings(max_examples=150, deadline=None)
    def test_fixed_point_has_no_bad_steps(self, traj):
        assert detect_bad_steps(to_pj(traj)) == set()


class TestSpansAndSamples:
    def test_spans_slice_to_fields(self):
        traj = ftraj([fstep("Plan", "p"), PROGRAM_OK, ANSWER])
        text, spans = render_trajectory_with_spans(traj)
        for step, span in zip(traj.steps, spans):
            assert text[span.thought[0] : span.thought[1]] == step.thought
            action_text = text[span.action[0] : span.action[1]]
            assert step.action.name in action_text
            assert step.action.output in action_text
            for obs, (s, e) in zip(step.observations, span.observations):
                assert obs.content in text[s:e]

    def test_ipj_masks_bad_thought_and_action_and_all_observations(self):
        traj = ftraj([fstep("Plan", "p"), ANSWER_WRONG, ANSWER])
        sample = to_ipj(traj)
        assert sample.origin == "IPJ"
        text, spans = render_trajectory_with_spans(traj)
        assert sample.rendered_text == text
        flags = {(s, e): t for s, e, t in sample.trainable_mask}
        assert flags[spans[0].thought] is True
        assert flags[spans[0].action] is True
        assert flags[spans[1].thought] is False  # bad step
        assert flags[spans[1].action] is False
        assert flags[spans[2].thought] is True
        for span in spans:
            for o in span.observations:
                assert flags[o] is False

    def test_pj_sample_fully_trainable(self):
        traj = ftraj([fstep("Plan", "p"), ANSWER_WRONG, ANSWER])
        sample = pj_sample(traj)
        assert sample.origin == "PJ"
        thought_action_flags = [t for _, _, t in sample.trainable_mask]
        # observations always False; every thought/action True
        spans_per_step = 3  # thought, action, one parser observation
        assert all(
            sample.trainable_mask[i * spans_per_step + 2][2] is False
            for i in range(len(sample.trainable_mask) // spans_per_step)
        )
        assert sample.source_trajectory_id == "t1"

    def test_train_sample_validation(self):
        with pytest.raises(ValueError, match="origin"):
            TrainSample("abc", (), "XX", "t")
        with pytest.raises(ValueError, match="out of bounds"):
            TrainSample("abc", ((0, 9, True),), "PJ", "t")
        with pytest.raises(ValueError, match="ordered"):
            TrainSample("abcdef", ((2, 4, True), (1, 3, False)), "PJ", "t")

    def test_train_sample_json_round_trip(self):
        sample = TrainSample("abcdef", ((0, 2, True), (3, 6, False)), "IPJ", "t9")
        assert TrainSample.from_json(sample.to_json()) == sample

    @given(trajectories())
    @settings(max_examples=150, deadline=None)
    def test_mask_accounting(self, traj):
        sample = to_ipj(traj)
        text = sample.rendered_text
        bad = detect_bad_steps(traj)
        _, spans = render_trajectory_with_spans(traj)
        # every step contributes thought + action + one entry per observation
        expected_entries = sum(2 + len(s.observations) for s in traj.steps)
        assert len(sample.trainable_mask) == expected_entries
        prev_end = -1
        for s, e, _ in sample.trainable_mask:
            assert 0 <= s <= e <= len(text)
            assert s >= prev_end
            prev_end = e
        for i, span in enumerate(spans):
            assert text[span.thought[0] : span.thought[1]] == traj.steps[i].thought
