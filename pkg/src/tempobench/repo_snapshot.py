"""Snapshot a git repository at a wall-clock instant and enforce its knowledge boundary.

The snapshot commit is the latest first-parent commit on the named branch
whose committer time is at or before the cutoff. First-parent lineage is
deliberate: it reflects what the branch actually contained at that moment,
so an early-timestamped commit that only landed through a later merge is
not a candidate. The boundary manifest derived from a snapshot is the
admissibility check applied to any external knowledge bundle before the
augmented evaluation arm may run.
"""

from __future__ import annotations

import io
import shutil
import subprocess
import tarfile
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Mapping

from .canonical import format_utc, parse_utc, read_json, write_canonical
from .errors import (
    BadRepo,
    CheckoutFailed,
    DirtyTargetDir,
    MalformedManifest,
    NoCommitBeforeT0,
)

SNAPSHOT_MANIFEST_NAME = "snapshot.manifest.json"
SNAPSHOT_META_NAME = "meta.json"
BUNDLE_MANIFEST_NAME = "bundle.manifest.json"


@dataclass(frozen=True)
class SnapshotSpec:
    """Request to snapshot *repo_path* as of *t0* on *branch* (default branch if None)."""

    repo_path: Path
    t0: datetime
    branch: str | None = None


@dataclass(frozen=True)
class SnapshotRef:
    commit_id: str
    committer_time: datetime


@dataclass(frozen=True)
class RepoSnapshot:
    ref: SnapshotRef
    worktree_path: Path
    file_manifest: frozenset[str]
    history_ids: tuple[str, ...]
    t0: datetime


@dataclass(frozen=True)
class KnowledgeBoundary:
    """Commits, paths, and cutoff admissible for knowledge construction."""

    allowed_commits: frozenset[str]
    allowed_paths: frozenset[str]
    t0: datetime


@dataclass(frozen=True)
class Violation:
    kind: str  # post_t0_commit | unknown_path | post_t0_timestamp
    offending_item: str


@dataclass(frozen=True)
class ViolationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def clean(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class KnowledgeBundleManifest:
    """Sidecar declaring every source artifact a knowledge pipeline consumed.

    The harness never inspects bundle content, only this manifest: commit
    ids and repo paths it claims to have read, plus creation timestamps for
    any derived artifacts.
    """

    commits: tuple[str, ...] = ()
    paths: tuple[str, ...] = ()
    timestamps: Mapping[str, str] = field(default_factory=dict)


def _git(repo: Path, args: list[str]) -> str:
    try:
        proc = subprocess.run(
            ["git", "-C", str(repo), *args],
            check=True,
            capture_output=True,
        )
    except FileNotFoundError as exc:
        raise BadRepo("git executable not found") from exc
    except subprocess.CalledProcessError as exc:
        raise BadRepo(
            f"git {args[0]} failed in {repo}: {exc.stderr.decode(errors='replace').strip()}"
        ) from exc
    return proc.stdout.decode()


def _default_branch(repo: Path) -> str:
    return _git(repo, ["symbolic-ref", "--short", "HEAD"]).strip()


def resolve_snapshot_commit(spec: SnapshotSpec) -> SnapshotRef:
    """Map the cutoff instant to the branch's first-parent commit at that time."""
    repo = Path(spec.repo_path)
    _git(repo, ["rev-parse", "--git-dir"])  # raises BadRepo if unreadable
    branch = spec.branch or _default_branch(repo)
    cutoff = int(parse_utc(spec.t0).timestamp())
    lines = _git(repo, ["log", "--first-parent", "--format=%H %ct", branch]).splitlines()
    for line in lines:  # newest first
        commit_id, ct = line.split()
        if int(ct) <= cutoff:
            return SnapshotRef(commit_id=commit_id, committer_time=parse_utc(int(ct)))
    raise NoCommitBeforeT0(
        f"branch {branch!r} has no commit with committer time <= {format_utc(spec.t0)}"
    )


def materialize_snapshot(
    spec: SnapshotSpec,
    ref: SnapshotRef,
    dest: str | Path,
    overwrite: bool = False,
) -> RepoSnapshot:
    """Extract the exact tree of *ref* into *dest* and enumerate its contents.

    The file manifest is built by walking the extracted tree, not by asking
    git, so tests can cross-check it against an independent ``git ls-tree``.
    """
    repo = Path(spec.repo_path)
    dest = Path(dest)
    if dest.exists() and any(dest.iterdir()):
        if not overwrite:
            raise DirtyTargetDir(f"{dest} is not empty; pass overwrite to replace it")
        shutil.rmtree(dest)
    dest.mkdir(parents=True, exist_ok=True)

    try:
        proc = subprocess.run(
            ["git", "-C", str(repo), "archive", "--format=tar", ref.commit_id],
            check=True,
            capture_output=True,
        )
        with tarfile.open(fileobj=io.BytesIO(proc.stdout)) as tar:
            tar.extractall(dest)
    except tarfile.ReadError as exc:
        # An empty-tree commit archives to pax header + padding only, which
        # tarfile refuses to open. Anything else is a real failure.
        if _git(repo, ["ls-tree", ref.commit_id]).strip():
            raise CheckoutFailed(
                f"cannot extract {ref.commit_id} from {repo}: {exc}"
            ) from exc
    except (subprocess.CalledProcessError, tarfile.TarError) as exc:
        raise CheckoutFailed(f"cannot extract {ref.commit_id} from {repo}: {exc}") from exc

    manifest = frozenset(
        p.relative_to(dest).as_posix() for p in dest.rglob("*") if p.is_file()
    )
    history = tuple(_git(repo, ["rev-list", ref.commit_id]).split())
    return RepoSnapshot(
        ref=ref,
        worktree_path=dest,
        file_manifest=manifest,
        history_ids=history,
        t0=parse_utc(spec.t0),
    )


def build_boundary_manifest(snapshot: RepoSnapshot) -> KnowledgeBoundary:
    return KnowledgeBoundary(
        allowed_commits=frozenset(snapshot.history_ids),
        allowed_paths=snapshot.file_manifest,
        t0=snapshot.t0,
    )


def verify_knowledge_bundle(
    bundle_manifest: KnowledgeBundleManifest, boundary: KnowledgeBoundary
) -> ViolationReport:
    """Return one violation per artifact the boundary does not cover."""
    violations: list[Violation] = []
    for commit in bundle_manifest.commits:
        if commit not in boundary.allowed_commits:
            violations.append(Violation(kind="post_t0_commit", offending_item=commit))
    for path in bundle_manifest.paths:
        if path not in boundary.allowed_paths:
            violations.append(Violation(kind="unknown_path", offending_item=path))
    for name in sorted(bundle_manifest.timestamps):
        stamp = bundle_manifest.timestamps[name]
        try:
            created = parse_utc(stamp)
        except ValueError as exc:
            raise MalformedManifest(f"bad timestamp for {name!r}: {stamp!r}") from exc
        if created > boundary.t0:
            violations.append(Violation(kind="post_t0_timestamp", offending_item=name))
    return ViolationReport(violations=tuple(violations))


# --- on-disk formats ---

def write_snapshot_dir(snapshot: RepoSnapshot, out_dir: str | Path) -> Path:
    """Write the byte-stable snapshot manifest plus an internal meta sidecar.

    ``snapshot.manifest.json`` carries exactly {commit_id, t0, files,
    history}; the sidecar keeps the committer time and worktree name so
    later pipeline stages can rebuild the snapshot reference without the
    source repository.
    """
    out_dir = Path(out_dir)
    manifest_path = write_canonical(
        out_dir / SNAPSHOT_MANIFEST_NAME,
        {
            "commit_id": snapshot.ref.commit_id,
            "t0": format_utc(snapshot.t0),
            "files": sorted(snapshot.file_manifest),
            "history": list(snapshot.history_ids),
        },
    )
    write_canonical(
        out_dir / SNAPSHOT_META_NAME,
        {
            "commit_id": snapshot.ref.commit_id,
            "committer_time": format_utc(snapshot.ref.committer_time),
            "worktree": snapshot.worktree_path.name,
        },
    )
    return manifest_path


def load_snapshot(snapshot_dir: str | Path) -> RepoSnapshot:
    """Rebuild a RepoSnapshot from a directory written by :func:`write_snapshot_dir`."""
    snapshot_dir = Path(snapshot_dir)
    manifest = read_json(snapshot_dir / SNAPSHOT_MANIFEST_NAME)
    meta = read_json(snapshot_dir / SNAPSHOT_META_NAME)
    ref = SnapshotRef(
        commit_id=manifest["commit_id"],
        committer_time=parse_utc(meta["committer_time"]),
    )
    return RepoSnapshot(
        ref=ref,
        worktree_path=snapshot_dir / meta["worktree"],
        file_manifest=frozenset(manifest["files"]),
        history_ids=tuple(manifest["history"]),
        t0=parse_utc(manifest["t0"]),
    )


def load_boundary(snapshot_dir: str | Path) -> KnowledgeBoundary:
    """Boundary straight from a persisted snapshot manifest (no worktree needed)."""
    manifest = read_json(Path(snapshot_dir) / SNAPSHOT_MANIFEST_NAME)
    return KnowledgeBoundary(
        allowed_commits=frozenset(manifest["history"]),
        allowed_paths=frozenset(manifest["files"]),
        t0=parse_utc(manifest["t0"]),
    )


def write_bundle_manifest(
    manifest: KnowledgeBundleManifest, bundle_dir: str | Path
) -> Path:
    return write_canonical(
        Path(bundle_dir) / BUNDLE_MANIFEST_NAME,
        {
            "commits": list(manifest.commits),
            "paths": list(manifest.paths),
            "timestamps": dict(manifest.timestamps),
        },
    )


def load_bundle_manifest(path: str | Path) -> KnowledgeBundleManifest:
    """Load a bundle manifest from its file or its containing directory."""
    path = Path(path)
    if path.is_dir():
        path = path / BUNDLE_MANIFEST_NAME
    if not path.is_file():
        raise MalformedManifest(f"no bundle manifest at {path}")
    try:
        raw = read_json(path)
    except ValueError as exc:
        raise MalformedManifest(f"unreadable bundle manifest {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise MalformedManifest("bundle manifest must be a JSON object")
    commits = raw.get("commits", [])
    paths = raw.get("paths", [])
    timestamps = raw.get("timestamps", {})
    if (
        not isinstance(commits, list)
        or not isinstance(paths, list)
        or not isinstance(timestamps, dict)
        or not all(isinstance(c, str) for c in commits)
        or not all(isinstance(p, str) for p in paths)
        or not all(isinstance(v, str) for v in timestamps.values())
    ):
        raise MalformedManifest(f"bundle manifest {path} has wrong field types")
    return KnowledgeBundleManifest(
        commits=tuple(commits), paths=tuple(paths), timestamps=dict(timestamps)
    )
