"""Command-line surface: snapshot -> harvest -> genprompts -> assemble ->
validate -> run -> score -> report, plus verify-bundle.

Configuration comes from a TOML file with flag overrides (flags win). Every
subcommand reads and writes only the documented artifacts under the output
directory: snapshot/, archive/, prompts/, taskset/, runs/, report/. Exit
status is 0 on success, 1 on a domain error (the structured error name is
printed), and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version specific
    import tomli as tomllib

from . import ab_runner, metrics
from .analysis_report import (
    AnalysisBundle,
    cross_condition_table,
    emit_report,
    extreme_outcome_rates,
    f1_histogram,
    minimal_to_guided_gain,
)
from .canonical import format_utc, parse_utc, read_json, write_canonical
from .errors import (
    BundleUnverified,
    EmptyOutcomeSet,
    MissingEndpoint,
    SourceUnavailable,
    TempoBenchError,
)
from .forge import ForgeSource
from .pr_harvest import (
    ArchiveSource,
    EligibilityPolicy,
    HarvestWindow,
    PullRequest,
    filter_eligible,
    harvest_pull_requests,
    sample_pull_requests,
    write_archive,
)
from .prompt_gen import (
    Granularity,
    GeneratorConfig,
    HttpChatClient,
    LeakagePolicy,
    TaskPrompt,
    TranscriptCache,
    generate_prompt,
)
from .repo_snapshot import (
    SnapshotSpec,
    load_boundary,
    load_bundle_manifest,
    load_snapshot,
    materialize_snapshot,
    resolve_snapshot_commit,
    verify_knowledge_bundle,
    write_snapshot_dir,
)
from .task_set import assemble_task_set, load_task_set, persist_task_set, validate_task_set

LEVEL_NAMES = tuple(g.level for g in Granularity)


class ConfigError(TempoBenchError):
    """Required configuration is absent or inconsistent."""


@dataclass
class PipelineConfig:
    repo_path: Path = Path(".")
    branch: str | None = None
    repo_label: str = ""
    t0: datetime | None = None
    t1: datetime | None = None
    output_dir: Path = Path("out")
    archive: Path | None = None
    forge_api: str = "https://api.github.com"
    forge_repo: str | None = None
    token_env: str = "TEMPOBENCH_FORGE_TOKEN"
    eligibility: EligibilityPolicy = field(default_factory=EligibilityPolicy)
    sample_n: int = 0
    sample_seed: int = 0
    leakage: LeakagePolicy = field(default_factory=LeakagePolicy)
    level: Granularity = Granularity.CONTEXTUAL
    fallback_only: bool = True
    llm_endpoint: str = ""
    llm_model: str = ""
    llm_api_key_env: str = "TEMPOBENCH_LLM_API_KEY"
    max_attempts: int = 3
    strict_body: bool = False
    adapter: ab_runner.AgentAdapterConfig | None = None
    bundle_path: Path | None = None
    isolation: str = "copy"
    model_label: str = "agent"
    interior_bins: int = 5
    f1_from_means: bool = False

    @property
    def window(self) -> HarvestWindow:
        if self.t0 is None or self.t1 is None:
            raise ConfigError("window requires both t0 and t1 (config or flags)")
        return HarvestWindow(t0=self.t0, t1=self.t1)

    @property
    def label(self) -> str:
        return self.repo_label or Path(self.repo_path).resolve().name


def _leakage_from_dict(raw: dict) -> LeakagePolicy:
    kwargs: dict = {}
    if "forbid_diff_verbatim" in raw:
        kwargs["forbid_diff_verbatim"] = bool(raw["forbid_diff_verbatim"])
    if "forbid_exact_paths_below" in raw:
        kwargs["forbid_exact_paths_below"] = Granularity.from_level(raw["forbid_exact_paths_below"])
    if "forbid_symbol_names_below" in raw:
        kwargs["forbid_symbol_names_below"] = Granularity.from_level(raw["forbid_symbol_names_below"])
    for bound in ("min_words", "max_words"):
        if bound in raw:
            default = getattr(LeakagePolicy(), bound)
            table = dict(default)
            for level_name, value in raw[bound].items():
                table[Granularity.from_level(level_name)] = int(value)
            kwargs[bound] = table
    return LeakagePolicy(**kwargs)


def load_config(path: Path | None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is None:
        return cfg
    try:
        raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    repo = raw.get("repo", {})
    if "path" in repo:
        cfg.repo_path = Path(repo["path"])
    cfg.branch = repo.get("branch", cfg.branch)
    cfg.repo_label = repo.get("label", cfg.repo_label)

    window = raw.get("window", {})
    if "t0" in window:
        cfg.t0 = parse_utc(window["t0"])
    if "t1" in window:
        cfg.t1 = parse_utc(window["t1"])

    output = raw.get("output", {})
    if "dir" in output:
        cfg.output_dir = Path(output["dir"])

    harvest = raw.get("harvest", {})
    if "archive" in harvest:
        cfg.archive = Path(harvest["archive"])
    cfg.forge_api = harvest.get("forge_api", cfg.forge_api)
    cfg.forge_repo = harvest.get("forge_repo", cfg.forge_repo)
    cfg.token_env = harvest.get("token_env", cfg.token_env)

    eligibility = raw.get("eligibility", {})
    cfg.eligibility = EligibilityPolicy(
        max_files=int(eligibility.get("max_files", 50)),
        min_files=int(eligibility.get("min_files", 1)),
        exclude_bots=bool(eligibility.get("exclude_bots", True)),
        path_excludes=tuple(eligibility.get("path_excludes", EligibilityPolicy().path_excludes)),
    )
    cfg.sample_n = int(eligibility.get("sample_n", 0))
    cfg.sample_seed = int(eligibility.get("sample_seed", 0))

    cfg.leakage = _leakage_from_dict(raw.get("leakage", {}))

    prompts = raw.get("prompts", {})
    if "level" in prompts:
        cfg.level = Granularity.from_level(prompts["level"])
    cfg.fallback_only = bool(prompts.get("fallback_only", cfg.fallback_only))
    cfg.llm_endpoint = prompts.get("llm_endpoint", cfg.llm_endpoint)
    cfg.llm_model = prompts.get("llm_model", cfg.llm_model)
    cfg.llm_api_key_env = prompts.get("llm_api_key_env", cfg.llm_api_key_env)
    cfg.max_attempts = int(prompts.get("max_attempts", cfg.max_attempts))
    cfg.strict_body = bool(prompts.get("strict_body", cfg.strict_body))

    adapter = raw.get("adapter", {})
    if "command" in adapter:
        cfg.adapter = ab_runner.AgentAdapterConfig(
            command=tuple(adapter["command"]),
            timeout_s=int(adapter.get("timeout_s", 300)),
            max_parallel=int(adapter.get("max_parallel", 1)),
            env_allowlist=tuple(adapter.get("env_allowlist", ())),
        )

    run = raw.get("run", {})
    if "bundle" in run and run["bundle"]:
        cfg.bundle_path = Path(run["bundle"])
    cfg.isolation = run.get("isolation", cfg.isolation)

    report = raw.get("report", {})
    cfg.model_label = report.get("model_label", cfg.model_label)
    cfg.interior_bins = int(report.get("interior_bins", cfg.interior_bins))
    cfg.f1_from_means = bool(report.get("f1_from_means", cfg.f1_from_means))
    return cfg


def _apply_common_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "output_dir", None):
        cfg.output_dir = Path(args.output_dir)
    if getattr(args, "repo", None):
        cfg.repo_path = Path(args.repo)
    if getattr(args, "branch", None):
        cfg.branch = args.branch
    if getattr(args, "t0", None):
        cfg.t0 = parse_utc(args.t0)
    if getattr(args, "t1", None):
        cfg.t1 = parse_utc(args.t1)
    if getattr(args, "level", None):
        cfg.level = Granularity.from_level(args.level)
    if getattr(args, "bundle", None):
        cfg.bundle_path = Path(args.bundle)
    return cfg


def _cfg(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(Path(args.config) if args.config else None)
    return _apply_common_overrides(cfg, args)


# --- subcommand implementations ---

def _snapshot_dir(cfg: PipelineConfig) -> Path:
    return cfg.output_dir / "snapshot"


def cmd_snapshot(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    if cfg.t0 is None:
        raise ConfigError("snapshot requires t0")
    spec = SnapshotSpec(repo_path=cfg.repo_path, t0=cfg.t0, branch=cfg.branch)
    ref = resolve_snapshot_commit(spec)
    snap_dir = _snapshot_dir(cfg)
    snapshot = materialize_snapshot(spec, ref, snap_dir / "worktree", overwrite=True)
    manifest_path = write_snapshot_dir(snapshot, snap_dir)
    print(f"snapshot {ref.commit_id[:12]} ({format_utc(ref.committer_time)}) -> {manifest_path}")
    return 0


def cmd_harvest(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    window = cfg.window
    target = cfg.output_dir / "archive"
    source_dir = Path(args.archive) if args.archive else cfg.archive
    if source_dir is not None:
        prs = harvest_pull_requests(ArchiveSource(directory=source_dir), window)
        if source_dir.resolve() != target.resolve():
            import shutil

            if target.exists():
                shutil.rmtree(target)
            write_archive(prs, target)
    elif cfg.forge_repo:
        source = ForgeSource(
            api_base=cfg.forge_api,
            repo=cfg.forge_repo,
            archive_dir=target,
            token_env=cfg.token_env,
        )
        prs = harvest_pull_requests(source, window)
    else:
        raise SourceUnavailable("harvest needs --archive or a configured forge_repo")
    print(f"harvested {len(prs)} merged PRs into {target}")
    return 0


def _eligible_prs(cfg: PipelineConfig) -> list[PullRequest]:
    prs = harvest_pull_requests(
        ArchiveSource(directory=cfg.output_dir / "archive"), cfg.window
    )
    eligible = filter_eligible(prs, cfg.eligibility)
    if cfg.sample_n:
        eligible = sample_pull_requests(eligible, cfg.sample_n, cfg.sample_seed)
    return eligible


def _prompt_path(cfg: PipelineConfig, task_id: str) -> Path:
    return cfg.output_dir / "prompts" / f"{task_id}.json"


def _prompt_to_dict(prompt: TaskPrompt) -> dict:
    return {
        "task_id": prompt.task_id,
        "text": prompt.text,
        "granularity": prompt.granularity.level,
        "source_pr": prompt.source_pr,
        "generator": prompt.generator,
        "prompt_hash": prompt.prompt_hash,
    }


def _prompt_from_dict(doc: dict) -> TaskPrompt:
    return TaskPrompt(
        task_id=doc["task_id"],
        text=doc["text"],
        granularity=Granularity.from_level(doc["granularity"]),
        source_pr=doc["source_pr"],
        generator=doc["generator"],
        prompt_hash=doc["prompt_hash"],
    )


def cmd_genprompts(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    if args.fallback_only:
        cfg.fallback_only = True
    client = None
    cache = None
    if not cfg.fallback_only:
        if not cfg.llm_endpoint or not cfg.llm_model:
            raise ConfigError("LLM generation needs llm_endpoint and llm_model (or --fallback-only)")
        client = HttpChatClient(
            endpoint=cfg.llm_endpoint, model=cfg.llm_model, api_key_env=cfg.llm_api_key_env
        )
        cache = TranscriptCache(cfg.output_dir / "prompt_cache")
    gen_cfg = GeneratorConfig(
        policy=cfg.leakage,
        client=client,
        cache=cache,
        max_attempts=cfg.max_attempts,
        strict_body=cfg.strict_body,
    )
    count = 0
    for pr in _eligible_prs(cfg):
        prompt = generate_prompt(pr, cfg.level, gen_cfg)
        write_canonical(_prompt_path(cfg, prompt.task_id), _prompt_to_dict(prompt))
        count += 1
    print(f"generated {count} {cfg.level.level} prompts under {cfg.output_dir / 'prompts'}")
    return 0


def cmd_assemble(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    snapshot = load_snapshot(_snapshot_dir(cfg))
    prs = _eligible_prs(cfg)
    prompts = {}
    for pr in prs:
        path = _prompt_path(cfg, f"{pr.pr_id}-{cfg.level.level}")
        if path.is_file():
            prompts[pr.pr_id] = _prompt_from_dict(read_json(path))
    ts = assemble_task_set(snapshot, cfg.window, prs, prompts)
    persist_task_set(ts, cfg.output_dir / "taskset")
    print(f"assembled {len(ts.tasks)} tasks (hash {ts.manifest_hash[:12]})")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    ts = load_task_set(cfg.output_dir / "taskset")
    snapshot = load_snapshot(_snapshot_dir(cfg))
    prs = {
        pr.pr_id: pr
        for pr in harvest_pull_requests(
            ArchiveSource(directory=cfg.output_dir / "archive"), ts.window
        )
    }
    report = validate_task_set(ts, snapshot, cfg.leakage, prs=prs)
    if report.ok:
        print(f"task set valid: {len(ts.tasks)} tasks")
        return 0
    for issue in report.issues:
        print(f"violation: {issue.task_id}: {issue.kind}: {issue.detail}", file=sys.stderr)
    return 1


def _require_adapter(cfg: PipelineConfig) -> ab_runner.AgentAdapterConfig:
    if cfg.adapter is None:
        raise ab_runner.AdapterMissing("no adapter command configured")
    return cfg.adapter


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    ts = load_task_set(cfg.output_dir / "taskset")
    snapshot = load_snapshot(_snapshot_dir(cfg))
    adapter = _require_adapter(cfg)
    runs_dir = cfg.output_dir / "runs"
    condition = args.condition
    if condition == "base":
        records = ab_runner.run_condition(
            ts, ab_runner.Condition(kind="base"), adapter, snapshot, runs_dir, cfg.isolation
        )
        ab_runner.write_run_records(records, runs_dir / "base" / "records.json")
    elif condition == "aug":
        if cfg.bundle_path is None:
            raise BundleUnverified("aug condition requires --bundle")
        records = ab_runner.run_condition(
            ts,
            ab_runner.Condition(kind="aug", knowledge_bundle=cfg.bundle_path),
            adapter,
            snapshot,
            runs_dir,
            cfg.isolation,
        )
        ab_runner.write_run_records(records, runs_dir / "aug" / "records.json")
    else:  # matched
        matched = ab_runner.run_matched(
            ts, adapter, snapshot, runs_dir, bundle=cfg.bundle_path, isolation=cfg.isolation
        )
        ab_runner.write_run_records(list(matched.base), runs_dir / "base" / "records.json")
        if not matched.base_only:
            ab_runner.write_run_records(list(matched.aug), runs_dir / "aug" / "records.json")
        write_canonical(
            runs_dir / "matched.json",
            {
                "base_only": matched.base_only,
                "attestations": [
                    {"task_id": a.task_id, "differing_fields": list(a.differing_fields)}
                    for a in matched.attestations
                ],
            },
        )
    print(f"run complete ({condition}) under {runs_dir}")
    return 0


def _outcomes_for(ts, records, condition: str) -> list[metrics.TaskOutcome]:
    truths = {e.task_id: set(e.ground_truth.files) for e in ts.tasks}
    outcomes = []
    for rec in records:
        failed = rec.failure is not None
        pred = set() if failed else set(rec.prediction.files)
        outcomes.append(
            metrics.task_outcome(rec.task_id, condition, pred, truths[rec.task_id], failed=failed)
        )
    return outcomes


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    ts = load_task_set(cfg.output_dir / "taskset")
    runs_dir = cfg.output_dir / "runs"
    score_doc: dict = {}
    outcome_sets: dict[str, list[metrics.TaskOutcome]] = {}
    for condition in ("base", "aug"):
        records_path = runs_dir / condition / "records.json"
        if not records_path.is_file():
            continue
        records = ab_runner.load_run_records(records_path)
        outcomes = _outcomes_for(ts, records, condition)
        outcome_sets[condition] = outcomes
        metrics.write_outcomes(outcomes, runs_dir / "outcomes" / f"{condition}.json")
        agg = metrics.aggregate_score(outcomes, f1_from_means=cfg.f1_from_means)
        score_doc[condition] = metrics.aggregate_to_dict(agg)
    if not outcome_sets:
        raise EmptyOutcomeSet("no run records found; run the agent first")
    if "base" in outcome_sets and "aug" in outcome_sets:
        score_doc["paired"] = metrics.paired_to_dict(
            metrics.paired_deltas(outcome_sets["base"], outcome_sets["aug"])
        )
    write_canonical(runs_dir / "score.json", score_doc)
    for condition, doc in sorted(score_doc.items()):
        if condition in ("base", "aug"):
            print(f"{condition}: mean F1 {doc['mean_f1']:.4f} over {doc['n_tasks']} tasks")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    ts = load_task_set(cfg.output_dir / "taskset")
    runs_dir = cfg.output_dir / "runs"
    level_of = {e.task_id: e.prompt.granularity for e in ts.tasks}
    outcome_sets = {}
    for condition in ("base", "aug"):
        path = runs_dir / "outcomes" / f"{condition}.json"
        if path.is_file():
            outcome_sets[condition] = metrics.load_outcomes(path)
    if not outcome_sets:
        raise EmptyOutcomeSet("no outcomes found; run `score` first")

    table_source = outcome_sets.get("base", next(iter(outcome_sets.values())))
    by_level: dict[Granularity, list[metrics.TaskOutcome]] = {}
    for outcome in table_source:
        by_level.setdefault(level_of[outcome.task_id], []).append(outcome)
    results = {
        (cfg.label, cfg.model_label, level): metrics.aggregate_score(outs)
        for level, outs in by_level.items()
    }
    table = cross_condition_table(results)
    try:
        gains = minimal_to_guided_gain(table)
    except MissingEndpoint:
        gains = ()
    paired = None
    if "base" in outcome_sets and "aug" in outcome_sets:
        paired = metrics.paired_deltas(outcome_sets["base"], outcome_sets["aug"])
    bundle = AnalysisBundle(
        table=table,
        extremes={c: extreme_outcome_rates(o) for c, o in outcome_sets.items()},
        histograms={c: f1_histogram(o, cfg.interior_bins) for c, o in outcome_sets.items()},
        scores={c: metrics.aggregate_score(o) for c, o in outcome_sets.items()},
        paired=paired,
        gains=gains,
    )
    paths = emit_report(bundle, cfg.output_dir / "report")
    print(f"report written: {', '.join(p.name for p in paths)}")
    return 0


def cmd_verify_bundle(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    if cfg.bundle_path is None:
        raise BundleUnverified("verify-bundle requires --bundle")
    boundary = load_boundary(_snapshot_dir(cfg))
    manifest = load_bundle_manifest(cfg.bundle_path)
    report = verify_knowledge_bundle(manifest, boundary)
    if report.clean:
        print("bundle clean: within the knowledge boundary")
        return 0
    for v in report.violations:
        print(f"violation: {v.kind}: {v.offending_item}", file=sys.stderr)
    return 1


# --- parser / dispatch ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempobench",
        description="Time-consistent PR benchmark harness with matched A/B agent evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--output-dir", help="artifact root (default: out)")

    p = sub.add_parser("snapshot", help="resolve and materialize the repository at t0")
    common(p)
    p.add_argument("--repo", help="path to a local git clone")
    p.add_argument("--branch")
    p.add_argument("--t0", help="RFC3339 UTC cutoff")
    p.set_defaults(func=cmd_snapshot)

    p = sub.add_parser("harvest", help="collect merged PRs in (t0, t1] into the archive")
    common(p)
    p.add_argument("--archive", help="offline archive directory to read")
    p.add_argument("--t0")
    p.add_argument("--t1")
    p.set_defaults(func=cmd_harvest)

    p = sub.add_parser("genprompts", help="generate task prompts at one granularity")
    common(p)
    p.add_argument("--level", choices=LEVEL_NAMES)
    p.add_argument("--fallback-only", action="store_true", default=False)
    p.add_argument("--t0")
    p.add_argument("--t1")
    p.set_defaults(func=cmd_genprompts)

    p = sub.add_parser("assemble", help="assemble and persist the task set")
    common(p)
    p.add_argument("--level", choices=LEVEL_NAMES)
    p.add_argument("--t0")
    p.add_argument("--t1")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("validate", help="re-check window, leakage, and snapshot paths")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="execute the agent over the task set")
    common(p)
    p.add_argument("--condition", choices=("base", "aug", "matched"), default="base")
    p.add_argument("--bundle", help="knowledge bundle for the aug arm")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="compute per-task outcomes and aggregate scores")
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="emit tables, rates, histograms, and the summary")
    common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify-bundle", help="check a knowledge bundle against the boundary")
    common(p)
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_verify_bundle)
    return parser


def command_dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except TempoBenchError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(command_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
