"""Benchmark task-set assembly, validation, and tamper-evident persistence.

A task set pairs each prompt with its ground truth and full provenance.
On disk the ground truth lives in a separate ``truth/`` subtree so the
runner can hand agents ``tasks/`` without ever mounting the oracle. The
manifest hash covers every entry; a load that does not reproduce it fails.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Mapping, Sequence

from .canonical import content_hash, format_utc, parse_utc, read_json, write_canonical
from .errors import (
    DuplicateTaskId,
    HashMismatch,
    IoFailure,
    MissingPrompt,
    SnapshotMismatch,
)
from .pr_harvest import GroundTruth, HarvestWindow, PullRequest, extract_ground_truth
from .prompt_gen import Granularity, LeakagePolicy, TaskPrompt, screen_leakage
from .repo_snapshot import RepoSnapshot, SnapshotRef

MANIFEST_NAME = "manifest.json"
TASKS_DIR = "tasks"
TRUTH_DIR = "truth"


@dataclass(frozen=True)
class PrMeta:
    pr_id: int
    merged_at: datetime
    merge_commit: str


@dataclass(frozen=True)
class TaskEntry:
    task_id: str
    prompt: TaskPrompt
    ground_truth: GroundTruth
    pr_meta: PrMeta
    absent_at_snapshot: frozenset[str] = frozenset()


@dataclass(frozen=True)
class TaskSet:
    snapshot_ref: SnapshotRef
    window: HarvestWindow
    tasks: tuple[TaskEntry, ...]
    manifest_hash: str


@dataclass(frozen=True)
class ValidationIssue:
    task_id: str
    kind: str  # window | leakage | missing_path
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues


def _entry_dict(entry: TaskEntry) -> dict:
    return {
        "task_id": entry.task_id,
        "prompt": {
            "text": entry.prompt.text,
            "granularity": entry.prompt.granularity.level,
            "source_pr": entry.prompt.source_pr,
            "generator": entry.prompt.generator,
            "prompt_hash": entry.prompt.prompt_hash,
        },
        "ground_truth": sorted(entry.ground_truth.files),
        "absent_at_snapshot": sorted(entry.absent_at_snapshot),
        "pr_meta": {
            "pr_id": entry.pr_meta.pr_id,
            "merged_at": format_utc(entry.pr_meta.merged_at),
            "merge_commit": entry.pr_meta.merge_commit,
        },
    }


def _hash_entries(entries: Sequence[TaskEntry]) -> str:
    return content_hash([_entry_dict(e) for e in entries])


def assemble_task_set(
    snapshot: RepoSnapshot,
    window: HarvestWindow,
    prs: Sequence[PullRequest],
    prompts: Mapping[int, TaskPrompt],
) -> TaskSet:
    """One task entry per PR, merged_at-ordered, with a manifest hash."""
    entries = []
    seen_ids: set[str] = set()
    for pr in prs:
        prompt = prompts.get(pr.pr_id)
        if prompt is None:
            raise MissingPrompt(f"no prompt for PR {pr.pr_id}")
        truth = extract_ground_truth(pr)
        if prompt.task_id in seen_ids:
            raise DuplicateTaskId(prompt.task_id)
        seen_ids.add(prompt.task_id)
        entries.append(
            TaskEntry(
                task_id=prompt.task_id,
                prompt=prompt,
                ground_truth=truth,
                pr_meta=PrMeta(
                    pr_id=pr.pr_id, merged_at=pr.merged_at, merge_commit=pr.merge_commit
                ),
                absent_at_snapshot=frozenset(truth.files - snapshot.file_manifest),
            )
        )
    entries.sort(key=lambda e: (e.pr_meta.merged_at, e.task_id))
    return TaskSet(
        snapshot_ref=snapshot.ref,
        window=window,
        tasks=tuple(entries),
        manifest_hash=_hash_entries(entries),
    )


def validate_task_set(
    ts: TaskSet,
    snapshot: RepoSnapshot,
    policy: LeakagePolicy,
    prs: Mapping[int, PullRequest] | None = None,
) -> ValidationReport:
    """Check window membership, leakage, and snapshot path consistency.

    With the source PRs available the leakage re-screen is complete
    (diff-based rules included) and added-file exemptions come from the
    recorded change kinds. Without them, diff rules are skipped and the
    ``absent_at_snapshot`` flags recorded at assembly stand in for the
    added-file exemption.
    """
    if snapshot.ref.commit_id != ts.snapshot_ref.commit_id:
        raise SnapshotMismatch(
            f"task set built at {ts.snapshot_ref.commit_id}, "
            f"snapshot is {snapshot.ref.commit_id}"
        )
    issues: list[ValidationIssue] = []
    for entry in ts.tasks:
        if not ts.window.contains(entry.pr_meta.merged_at):
            issues.append(
                ValidationIssue(
                    task_id=entry.task_id,
                    kind="window",
                    detail=f"merged_at {format_utc(entry.pr_meta.merged_at)} outside window",
                )
            )
        pr = prs.get(entry.pr_meta.pr_id) if prs else None
        if pr is not None:
            report = screen_leakage(entry.prompt, pr, policy)
            for violation in report.violations:
                issues.append(
                    ValidationIssue(
                        task_id=entry.task_id,
                        kind="leakage",
                        detail=f"{violation.rule}: {violation.matched_span}",
                    )
                )
            exempt = {
                c.path_after for c in pr.changed_files if c.kind == "added" and c.path_after
            }
        else:
            for path in sorted(entry.ground_truth.files):
                if path in entry.prompt.text and (
                    entry.prompt.granularity.ordinal
                    <= policy.forbid_exact_paths_below.ordinal
                ):
                    issues.append(
                        ValidationIssue(
                            task_id=entry.task_id, kind="leakage", detail=f"exact_path: {path}"
                        )
                    )
            exempt = set(entry.absent_at_snapshot)
        for path in sorted(entry.ground_truth.files):
            if path not in snapshot.file_manifest and path not in exempt:
                issues.append(
                    ValidationIssue(
                        task_id=entry.task_id,
                        kind="missing_path",
                        detail=f"{path} not present at snapshot",
                    )
                )
    return ValidationReport(issues=tuple(issues))


# --- persistence ---

def persist_task_set(ts: TaskSet, directory: str | Path) -> Path:
    """Write manifest + per-task prompt and truth files (truth in its own subtree)."""
    directory = Path(directory)
    try:
        write_canonical(
            directory / MANIFEST_NAME,
            {
                "snapshot_ref": {
                    "commit_id": ts.snapshot_ref.commit_id,
                    "committer_time": format_utc(ts.snapshot_ref.committer_time),
                },
                "window": {
                    "t0": format_utc(ts.window.t0),
                    "t1": format_utc(ts.window.t1),
                },
                "manifest_hash": ts.manifest_hash,
            },
        )
        for entry in ts.tasks:
            doc = _entry_dict(entry)
            write_canonical(
                directory / TASKS_DIR / f"{entry.task_id}.json",
                {
                    "task_id": doc["task_id"],
                    "prompt": doc["prompt"],
                    "pr_meta": doc["pr_meta"],
                },
            )
            write_canonical(
                directory / TRUTH_DIR / f"{entry.task_id}.json",
                {
                    "task_id": doc["task_id"],
                    "files": doc["ground_truth"],
                    "absent_at_snapshot": doc["absent_at_snapshot"],
                },
            )
        (directory / TASKS_DIR).mkdir(exist_ok=True)
        (directory / TRUTH_DIR).mkdir(exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot persist task set under {directory}: {exc}") from exc
    return directory


def load_task_set(directory: str | Path) -> TaskSet:
    """Load a persisted task set, failing on any manifest-hash mismatch."""
    directory = Path(directory)
    try:
        manifest = read_json(directory / MANIFEST_NAME)
        entries = []
        for task_file in sorted((directory / TASKS_DIR).glob("*.json")):
            task_doc = read_json(task_file)
            truth_doc = read_json(directory / TRUTH_DIR / task_file.name)
            prompt_doc = task_doc["prompt"]
            level = Granularity.from_level(prompt_doc["granularity"])
            prompt = TaskPrompt(
                task_id=task_doc["task_id"],
                text=prompt_doc["text"],
                granularity=level,
                source_pr=prompt_doc["source_pr"],
                generator=prompt_doc["generator"],
                prompt_hash=prompt_doc["prompt_hash"],
            )
            meta = task_doc["pr_meta"]
            entries.append(
                TaskEntry(
                    task_id=task_doc["task_id"],
                    prompt=prompt,
                    ground_truth=GroundTruth(
                        task_ref=meta["pr_id"], files=frozenset(truth_doc["files"])
                    ),
                    pr_meta=PrMeta(
                        pr_id=meta["pr_id"],
                        merged_at=parse_utc(meta["merged_at"]),
                        merge_commit=meta["merge_commit"],
                    ),
                    absent_at_snapshot=frozenset(truth_doc["absent_at_snapshot"]),
                )
            )
    except FileNotFoundError as exc:
        raise IoFailure(f"incomplete task set under {directory}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise IoFailure(f"corrupt task set under {directory}: {exc}") from exc

    entries.sort(key=lambda e: (e.pr_meta.merged_at, e.task_id))
    recomputed = _hash_entries(entries)
    stored = manifest["manifest_hash"]
    if recomputed != stored:
        raise HashMismatch(
            f"task set under {directory} fails its hash check "
            f"(stored {stored[:12]}, recomputed {recomputed[:12]})"
        )
    return TaskSet(
        snapshot_ref=SnapshotRef(
            commit_id=manifest["snapshot_ref"]["commit_id"],
            committer_time=parse_utc(manifest["snapshot_ref"]["committer_time"]),
        ),
        window=HarvestWindow(
            t0=parse_utc(manifest["window"]["t0"]),
            t1=parse_utc(manifest["window"]["t1"]),
        ),
        tasks=tuple(entries),
        manifest_hash=stored,
    )
