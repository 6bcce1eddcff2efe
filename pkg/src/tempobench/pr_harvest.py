"""Merged pull-request harvesting and ground-truth extraction.

The offline archive directory is the system of record: live forge fetching
(see :mod:`tempobench.forge`) writes the archive first and every downstream
stage reads only the archive. Each PR lives in its own subdirectory as
``pr.json`` + ``files.json`` (+ optional ``diff.patch`` used for leakage
screening).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from datetime import datetime
from fnmatch import fnmatch
from pathlib import Path
from typing import Sequence

from .canonical import format_utc, parse_utc, read_json, write_canonical
from .errors import EmptyDiff, MalformedArchive

CHANGE_KINDS = ("added", "modified", "deleted", "renamed")
AUTHOR_KINDS = ("human", "bot", "unknown")

DEFAULT_PATH_EXCLUDES = (
    "*.lock",
    "package-lock.json",
    "yarn.lock",
    "pnpm-lock.yaml",
    "vendor/*",
    "third_party/*",
    "node_modules/*",
)


@dataclass(frozen=True)
class HarvestWindow:
    """Evaluation interval: exclusive at t0, inclusive at t1."""

    t0: datetime
    t1: datetime

    def __post_init__(self) -> None:
        if not self.t0 < self.t1:
            raise ValueError(f"window requires t0 < t1, got {self.t0} .. {self.t1}")

    def contains(self, instant: datetime) -> bool:
        return self.t0 < instant <= self.t1


@dataclass(frozen=True)
class FileChange:
    path_before: str | None
    path_after: str | None
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in CHANGE_KINDS:
            raise ValueError(f"unknown change kind {self.kind!r}")
        if self.kind == "added" and not (self.path_before is None and self.path_after):
            raise ValueError("added change must have only path_after")
        if self.kind == "deleted" and not (self.path_after is None and self.path_before):
            raise ValueError("deleted change must have only path_before")
        if self.kind == "modified" and not (self.path_before and self.path_after):
            raise ValueError("modified change must have both paths")
        if self.kind == "renamed":
            if not (self.path_before and self.path_after):
                raise ValueError("renamed change must have both paths")
            if self.path_before == self.path_after:
                raise ValueError("renamed change must actually change the path")


@dataclass(frozen=True)
class PullRequest:
    pr_id: int
    title: str
    body: str
    merged_at: datetime
    merge_commit: str
    changed_files: tuple[FileChange, ...]
    author_kind: str = "unknown"
    diff_text: str | None = None


@dataclass(frozen=True)
class GroundTruth:
    task_ref: int
    files: frozenset[str]


@dataclass(frozen=True)
class EligibilityPolicy:
    max_files: int = 50
    min_files: int = 1
    exclude_bots: bool = True
    path_excludes: tuple[str, ...] = DEFAULT_PATH_EXCLUDES

    def __post_init__(self) -> None:
        if not 1 <= self.min_files <= self.max_files:
            raise ValueError("policy requires 1 <= min_files <= max_files")


@dataclass(frozen=True)
class ArchiveSource:
    """Offline archive directory, one subdirectory per PR."""

    directory: Path


def extract_ground_truth(pr: PullRequest) -> GroundTruth:
    """Modified-file set of the PR as landed on the mainline.

    Added/modified files contribute their post-image path, deletions their
    pre-image path, and renames only the post-image (the agent operates on
    the pre-change snapshot, so crediting both sides would double-count).
    """
    files: set[str] = set()
    for change in pr.changed_files:
        if change.kind == "deleted":
            files.add(change.path_before)  # type: ignore[arg-type]
        else:
            files.add(change.path_after)  # type: ignore[arg-type]
    if not files:
        raise EmptyDiff(f"PR {pr.pr_id} changed no files")
    return GroundTruth(task_ref=pr.pr_id, files=frozenset(files))


def eligible_file_count(pr: PullRequest, policy: EligibilityPolicy) -> int:
    """Size of the ground-truth set after dropping excluded paths."""
    try:
        files = extract_ground_truth(pr).files
    except EmptyDiff:
        return 0
    return sum(
        1
        for f in files
        if not any(fnmatch(f, pattern) for pattern in policy.path_excludes)
    )


def filter_eligible(
    prs: Sequence[PullRequest], policy: EligibilityPolicy
) -> list[PullRequest]:
    """Keep PRs whose filtered file count is in range and whose author qualifies."""
    kept = []
    for pr in prs:
        if policy.exclude_bots and pr.author_kind == "bot":
            continue
        n = eligible_file_count(pr, policy)
        if policy.min_files <= n <= policy.max_files:
            kept.append(pr)
    return kept


def sample_pull_requests(
    prs: Sequence[PullRequest], n: int, seed: int
) -> list[PullRequest]:
    """Deterministic order-preserving sample of at most *n* PRs."""
    if n >= len(prs):
        return list(prs)
    picked = sorted(random.Random(seed).sample(range(len(prs)), n))
    return [prs[i] for i in picked]


# --- archive I/O ---

def pr_to_dicts(pr: PullRequest) -> tuple[dict, list[dict]]:
    """(pr.json payload, files.json payload) for one PR."""
    meta = {
        "id": pr.pr_id,
        "title": pr.title,
        "body": pr.body,
        "merged_at": format_utc(pr.merged_at),
        "merge_commit": pr.merge_commit,
        "author_kind": pr.author_kind,
    }
    files = [
        {"path_before": c.path_before, "path_after": c.path_after, "kind": c.kind}
        for c in pr.changed_files
    ]
    return meta, files


def write_archive(prs: Sequence[PullRequest], directory: str | Path) -> Path:
    directory = Path(directory)
    for pr in prs:
        pr_dir = directory / str(pr.pr_id)
        meta, files = pr_to_dicts(pr)
        write_canonical(pr_dir / "pr.json", meta)
        write_canonical(pr_dir / "files.json", files)
        if pr.diff_text is not None:
            pr_dir.mkdir(parents=True, exist_ok=True)
            (pr_dir / "diff.patch").write_text(pr.diff_text, encoding="utf-8")
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _load_pr_dir(pr_dir: Path) -> PullRequest:
    pr_path = pr_dir / "pr.json"
    files_path = pr_dir / "files.json"
    try:
        meta = read_json(pr_path)
        raw_files = read_json(files_path)
    except FileNotFoundError as exc:
        raise MalformedArchive(f"{pr_dir} is missing {exc.filename}") from exc
    except ValueError as exc:
        raise MalformedArchive(f"unreadable JSON in {pr_dir}: {exc}") from exc
    diff_path = pr_dir / "diff.patch"
    diff_text = diff_path.read_text(encoding="utf-8") if diff_path.exists() else None
    try:
        changes = tuple(
            FileChange(
                path_before=f.get("path_before"),
                path_after=f.get("path_after"),
                kind=f["kind"],
            )
            for f in raw_files
        )
        return PullRequest(
            pr_id=int(meta["id"]),
            title=meta["title"],
            body=meta.get("body") or "",
            merged_at=parse_utc(meta["merged_at"]),
            merge_commit=meta["merge_commit"],
            changed_files=changes,
            author_kind=meta.get("author_kind", "unknown"),
            diff_text=diff_text,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedArchive(f"bad PR record in {pr_dir}: {exc}") from exc


def load_archive(directory: str | Path) -> list[PullRequest]:
    """Load every PR in the archive, sorted by (merged_at, pr_id)."""
    directory = Path(directory)
    prs = [
        _load_pr_dir(child)
        for child in sorted(directory.iterdir(), key=lambda p: p.name)
        if child.is_dir()
    ]
    prs.sort(key=lambda p: (p.merged_at, p.pr_id))
    return prs


def harvest_pull_requests(source, window: HarvestWindow) -> list[PullRequest]:
    """All PRs merged inside the window, merged_at ascending with id tiebreak.

    *source* is an :class:`ArchiveSource` or a live forge source from
    :mod:`tempobench.forge`; forge sources write their archive before any
    PR is returned, keeping the archive the single system of record.
    """
    if isinstance(source, ArchiveSource):
        prs = load_archive(source.directory)
    else:
        # Duck-typed live source: must materialize an archive and return its dir.
        archive_dir = source.materialize_archive(window)
        prs = load_archive(archive_dir)
    return [p for p in prs if window.contains(p.merged_at)]
