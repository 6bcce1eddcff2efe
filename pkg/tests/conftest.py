from __future__ import annotations

from pathlib import Path

import pytest

from tempobench.canonical import format_utc, parse_utc
from tempobench.pr_harvest import ArchiveSource, EligibilityPolicy, filter_eligible, harvest_pull_requests
from tempobench.prompt_gen import Granularity, template_fallback
from tempobench.repo_snapshot import (
    KnowledgeBundleManifest,
    SnapshotSpec,
    materialize_snapshot,
    resolve_snapshot_commit,
    write_bundle_manifest,
)
from tempobench.task_set import assemble_task_set, persist_task_set

from .worldgen import T0, build_world

AGENTS_DIR = Path(__file__).parent / "agents"


@pytest.fixture(scope="session")
def world(tmp_path_factory):
    return build_world(tmp_path_factory.mktemp("world"))


@pytest.fixture(scope="session")
def world_snapshot(world, tmp_path_factory):
    spec = SnapshotSpec(repo_path=world.repo, t0=parse_utc(T0))
    ref = resolve_snapshot_commit(spec)
    dest = tmp_path_factory.mktemp("snap") / "worktree"
    return materialize_snapshot(spec, ref, dest)


@pytest.fixture(scope="session")
def eligible_prs(world):
    prs = harvest_pull_requests(ArchiveSource(directory=world.archive_dir), world.window)
    return filter_eligible(prs, EligibilityPolicy())


@pytest.fixture(scope="session")
def small_task_set(world, world_snapshot, eligible_prs, tmp_path_factory):
    """Three-task set persisted to disk; returns (TaskSet, taskset_dir)."""
    prs = eligible_prs[:3]
    prompts = {p.pr_id: template_fallback(p, Granularity.CONTEXTUAL) for p in prs}
    ts = assemble_task_set(world_snapshot, world.window, prs, prompts)
    ts_dir = tmp_path_factory.mktemp("taskset")
    persist_task_set(ts, ts_dir)
    return ts, ts_dir


@pytest.fixture(scope="session")
def clean_bundle(world_snapshot, tmp_path_factory) -> Path:
    """Knowledge bundle whose manifest cites only pre-cutoff artifacts."""
    bundle_dir = tmp_path_factory.mktemp("bundle")
    manifest = KnowledgeBundleManifest(
        commits=tuple(world_snapshot.history_ids),
        paths=("README.md", "src/loader/config.py"),
        timestamps={"code-index.bin": format_utc(T0 - 50)},
    )
    write_bundle_manifest(manifest, bundle_dir)
    (bundle_dir / "code-index.bin").write_bytes(b"opaque")
    return bundle_dir


@pytest.fixture(scope="session")
def dirty_bundle(world_snapshot, tmp_path_factory) -> Path:
    bundle_dir = tmp_path_factory.mktemp("bad-bundle")
    manifest = KnowledgeBundleManifest(
        commits=tuple(world_snapshot.history_ids),
        paths=("post_t0.txt",),  # exists only after the cutoff
        timestamps={"late-index.bin": format_utc(T0 + 900)},
    )
    write_bundle_manifest(manifest, bundle_dir)
    return bundle_dir
