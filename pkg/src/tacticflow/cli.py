"""Batch command-line entry points: solve, route, blend, filter, prep-train,
and report, wired for reproducible runs over fixture or live providers.

Exit codes: 0 success (wrong answers are data, not failures), 1 configuration
error, 2 infrastructure failure (provider transport, replay drift, sandbox).
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path
from typing import Optional, Sequence

import click

from . import codec, databuild, engine, model
from .gateway import (
    CompletionProvider,
    GatewayError,
    HttpEndpoint,
    HttpProvider,
    ReplayMismatch,
    ReplayProvider,
    ScriptExhausted,
)
from .metrics import CodeBleuConfig, aggregate, read_records, score_trajectory, write_records
from .sandbox import ExecutionResult, SandboxClient, SandboxError, StaticSandbox, StdioSandboxClient

EXIT_CONFIG = 1
EXIT_INFRA = 2

API_URL_ENV = "TACTICFLOW_API_URL"
API_KEY_ENV = "TACTICFLOW_API_KEY"


class ConfigError(Exception):
    pass


def _fail_config(message: str) -> None:
    click.echo(f"configuration error: {message}", err=True)
    sys.exit(EXIT_CONFIG)


def _fail_infra(message: str) -> None:
    click.echo(f"infrastructure error: {message}", err=True)
    sys.exit(EXIT_INFRA)


def _guard(fn, *args, **kwargs):
    """Run a command body mapping exception classes onto exit codes."""
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        _fail_config(str(exc))
    except (ReplayMismatch, ScriptExhausted) as exc:
        _fail_infra(f"{type(exc).__name__}: {exc}")
    except (GatewayError, SandboxError) as exc:
        _fail_infra(f"{type(exc).__name__}: {exc}")
    except OSError as exc:
        _fail_config(str(exc))


def _build_provider(provider: str, replay: Optional[str], model_name: str) -> CompletionProvider:
    if provider == "replay":
        if not replay:
            raise ConfigError("--provider replay requires --replay <script.jsonl>")
        path = Path(replay)
        if not path.exists():
            raise ConfigError(f"replay script not found: {path}")
        return ReplayProvider.from_jsonl(path)
    if provider == "http":
        import os

        url = os.environ.get(API_URL_ENV, "")
        if not url:
            raise ConfigError(f"--provider http requires the {API_URL_ENV} environment variable")
        return HttpProvider(HttpEndpoint(url=url, model=model_name, api_key_env=API_KEY_ENV))
    raise ConfigError(f"unknown provider {provider!r}")


def _build_sandbox(sandbox: str, sandbox_cmd: Optional[str]) -> Optional[SandboxClient]:
    if sandbox == "none":
        return None
    if sandbox == "mock":
        return StaticSandbox(ExecutionResult(exit_status="ok", stdout=""))
    if sandbox == "command":
        if not sandbox_cmd:
            raise ConfigError("--sandbox command requires --sandbox-cmd")
        return StdioSandboxClient(sandbox_cmd.split())
    raise ConfigError(f"unknown sandbox mode {sandbox!r}")


def _load_pool(tactics_dir: str) -> engine.TacticPool:
    path = Path(tactics_dir)
    if not path.is_dir():
        raise ConfigError(f"tactics directory not found: {path}")
    try:
        pool = engine.TacticPool.from_dir(path)
    except codec.CodecError as exc:
        raise ConfigError(f"bad tactic document: {exc}") from exc
    if not pool.names():
        raise ConfigError(f"no tactic documents in {path}")
    return pool


def _load_problems(problems: str) -> list[model.Problem]:
    path = Path(problems)
    if not path.exists():
        raise ConfigError(f"problems file not found: {path}")
    try:
        return model.read_problems(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _read_jsonl_objects(path: Path) -> list[dict]:
    objs = []
    for line in path.read_text().splitlines():
        if line.strip():
            objs.append(json.loads(line))
    return objs


def _limits(max_steps: int, max_consecutive_errors: int) -> engine.EngineLimits:
    try:
        return engine.EngineLimits(max_steps=max_steps, max_consecutive_errors=max_consecutive_errors)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _codebleu_config(threshold: float) -> CodeBleuConfig:
    try:
        return CodeBleuConfig(threshold=threshold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _out_dir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


run_options = [
    click.option("--problems", required=True, help="Problem fixture JSONL."),
    click.option("--tactics-dir", required=True, help="Directory of tactic documents (*.md)."),
    click.option("--icl-bank", default=None, help="Root of per-tactic exemplar banks."),
    click.option("--provider", default="replay", type=click.Choice(["replay", "http"])),
    click.option("--model", "model_name", default="default", help="Model name for http providers."),
    click.option("--replay", default=None, help="Replay script JSONL for --provider replay."),
    click.option("--sandbox", default="none", type=click.Choice(["none", "mock", "command"])),
    click.option("--sandbox-cmd", default=None, help="Command line spawning a sandbox runner."),
    click.option("--max-steps", default=7, show_default=True),
    click.option("--max-consecutive-errors", default=3, show_default=True),
    click.option("--codebleu-threshold", default=0.15, show_default=True),
    click.option("--seed", default=0, show_default=True),
    click.option("--parallelism", default=1, show_default=True),
    click.option("--out", required=True, help="Output directory."),
]


def _apply(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return wrap


@click.group()
def main() -> None:
    """Tactic-guided reasoning runs, metrics, and training-data preparation."""


@main.command()
@_apply(run_options)
def solve(**kw) -> None:
    """Solve each problem under its ground-truth tactic."""
    _guard(_cmd_solve, **kw)


def _cmd_solve(
    problems, tactics_dir, icl_bank, provider, model_name, replay, sandbox, sandbox_cmd,
    max_steps, max_consecutive_errors, codebleu_threshold, seed, parallelism, out,
) -> None:
    probs = _load_problems(problems)
    pool = _load_pool(tactics_dir)
    limits = _limits(max_steps, max_consecutive_errors)
    config = _codebleu_config(codebleu_threshold)
    for p in probs:
        if not p.gold_tactic:
            raise ConfigError(f"problem {p.id} has no gold_tactic; required for solve mode")
        if pool.get(p.gold_tactic) is None:
            raise ConfigError(f"problem {p.id} names unknown tactic {p.gold_tactic!r}")
        violations = model.validate_problem(p)
        if violations:
            raise ConfigError(f"problem {p.id}: " + "; ".join(violations))
    llm = _build_provider(provider, replay, model_name)
    box = _build_sandbox(sandbox, sandbox_cmd)
    bank = engine.IclBank(icl_bank)
    out_path = _out_dir(out)

    trajectories = []
    records = []
    for p in probs:
        traj = engine.run_subtrajectory(
            p, pool.get(p.gold_tactic), llm, limits=limits, icl_bank=bank, sandbox=box
        )
        trajectories.append(traj)
        records.append(score_trajectory(traj, p, config))
    codec.write_jsonl(out_path / "trajectories.jsonl", trajectories)
    write_records(out_path / "records.jsonl", records)
    (out_path / "report.txt").write_text(aggregate(records, config).to_table())
    if not probs:
        click.echo("no problems in input; wrote empty outputs")
    click.echo(f"solved {len(probs)} problems -> {out_path}")


@main.command()
@_apply(run_options)
@click.option("--routing-tactic", default="routing", show_default=True)
def route(**kw) -> None:
    """Route hybrid problems over the tactic pool."""
    _guard(_cmd_route, **kw)


def _cmd_route(
    problems, tactics_dir, icl_bank, provider, model_name, replay, sandbox, sandbox_cmd,
    max_steps, max_consecutive_errors, codebleu_threshold, seed, parallelism, out, routing_tactic,
) -> None:
    path = Path(problems)
    if not path.exists():
        raise ConfigError(f"problems file not found: {path}")
    hybrids: list[model.HybridProblem] = []
    try:
        for obj in _read_jsonl_objects(path):
            if "base" in obj:
                hybrids.append(model.HybridProblem.from_json(obj))
            else:
                hybrids.append(databuild.wrap_standalone(model.Problem.from_json(obj)))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed problem line: {exc}") from exc
    for h in hybrids:
        violations = model.validate_hybrid(h)
        if violations:
            raise ConfigError(f"hybrid {h.base.id}: " + "; ".join(violations))

    pool = _load_pool(tactics_dir)
    routing = pool.get(routing_tactic)
    if routing is None:
        raise ConfigError(f"routing tactic {routing_tactic!r} not in {tactics_dir}")
    limits = _limits(max_steps, max_consecutive_errors)
    config = _codebleu_config(codebleu_threshold)
    llm = _build_provider(provider, replay, model_name)
    box = _build_sandbox(sandbox, sandbox_cmd)
    bank = engine.IclBank(icl_bank)
    out_path = _out_dir(out)

    trajectories = []
    records = []
    for h in hybrids:
        result = engine.run_routing(h.base, pool, routing, llm, limits=limits, icl_bank=bank, sandbox=box)
        trajectories.extend(result.all_trajectories())
        records.append(
            score_trajectory(
                result.parent, h.base, config, hybrid=h, children=result.children, routing=True
            )
        )
    codec.write_jsonl(out_path / "trajectories.jsonl", trajectories)
    write_records(out_path / "records.jsonl", records)
    (out_path / "report.txt").write_text(aggregate(records, config).to_table())
    click.echo(f"routed {len(hybrids)} problems -> {out_path}")


@main.command()
@click.option("--problems", required=True, help="Source problem pools (JSONL with source field).")
@click.option("--count", default=10, show_default=True)
@click.option("--difficulty", default="GG", type=click.Choice(list(model.DIFFICULTIES)))
@click.option("--granularity", default="easy", type=click.Choice(list(model.GRANULARITIES)))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, help="Output hybrid JSONL file.")
def blend(problems, count, difficulty, granularity, seed, out) -> None:
    """Synthesize hybrid problems from source pools."""
    _guard(_cmd_blend, problems, count, difficulty, granularity, seed, out)


def _cmd_blend(problems, count, difficulty, granularity, seed, out) -> None:
    probs = _load_problems(problems)
    pools: dict[str, list[model.Problem]] = {}
    for p in probs:
        pools.setdefault(p.source, []).append(p)
    rng = random.Random(seed)
    hybrids = []
    for i in range(count):
        try:
            sources = databuild.sample_difficulty(difficulty, pools, rng)
            hybrids.append(
                databuild.blend(
                    sources, granularity, rng, f"hybrid-{difficulty.lower()}-{i + 1}", difficulty=difficulty
                )
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    model.write_hybrids(out, hybrids)
    click.echo(f"blended {len(hybrids)} {difficulty}/{granularity} hybrids -> {out}")


@main.command("filter")
@click.option("--trajectories", required=True, help="Trajectory JSONL to filter.")
@click.option("--out", required=True, help="Output directory (kept.jsonl / dropped.jsonl).")
def filter_cmd(trajectories, out) -> None:
    """Drop trajectories without a working final program."""
    _guard(_cmd_filter, trajectories, out)


def _cmd_filter(trajectories, out) -> None:
    path = Path(trajectories)
    if not path.exists():
        raise ConfigError(f"trajectory file not found: {path}")
    try:
        trajs = codec.read_jsonl(path)
    except codec.CodecError as exc:
        raise ConfigError(str(exc)) from exc
    kept, dropped = databuild.filter_no_program(trajs)
    out_path = _out_dir(out)
    codec.write_jsonl(out_path / "kept.jsonl", kept)
    codec.write_jsonl(out_path / "dropped.jsonl", dropped)
    click.echo(f"kept {len(kept)}, dropped {len(dropped)} -> {out_path}")


@main.command("prep-train")
@click.option("--trajectories", required=True, help="Trajectory JSONL to transform.")
@click.option("--transform", default="pj", type=click.Choice(["pj", "ipj"]), show_default=True)
@click.option("--out", required=True, help="Output training-sample JSONL file.")
def prep_train(trajectories, transform, out) -> None:
    """Turn trajectories into masked training samples."""
    _guard(_cmd_prep_train, trajectories, transform, out)


def _cmd_prep_train(trajectories, transform, out) -> None:
    path = Path(trajectories)
    if not path.exists():
        raise ConfigError(f"trajectory file not found: {path}")
    try:
        trajs = codec.read_jsonl(path)
    except codec.CodecError as exc:
        raise ConfigError(str(exc)) from exc
    samples = [
        databuild.pj_sample(t) if transform == "pj" else databuild.to_ipj(t) for t in trajs
    ]
    lines = [json.dumps(s.to_json()) for s in samples]
    Path(out).write_text("\n".join(lines) + ("\n" if lines else ""))
    click.echo(f"wrote {len(samples)} {transform} samples -> {out}")


@main.command()
@click.option("--records", required=True, help="Score-record JSONL.")
@click.option("--layout", default="table", type=click.Choice(["table", "json", "csv"]), show_default=True)
@click.option("--codebleu-threshold", default=0.15, show_default=True)
@click.option("--out", default=None, help="Optional output file; defaults to stdout.")
def report(records, layout, codebleu_threshold, out) -> None:
    """Aggregate score records into the metric table."""
    _guard(_cmd_report, records, layout, codebleu_threshold, out)


def _cmd_report(records, layout, codebleu_threshold, out) -> None:
    path = Path(records)
    if not path.exists():
        raise ConfigError(f"records file not found: {path}")
    try:
        recs = read_records(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    config = _codebleu_config(codebleu_threshold)
    agg = aggregate(recs, config)
    if layout == "table":
        text = agg.to_table()
    elif layout == "json":
        text = json.dumps(agg.to_json(), indent=2) + "\n"
    else:
        text = agg.to_csv()
    if not recs:
        click.echo("no score records in input; empty report", err=True)
    if out:
        Path(out).write_text(text)
        click.echo(f"report -> {out}")
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
