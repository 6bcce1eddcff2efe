from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from tempobench.canonical import parse_utc
from tempobench.errors import DuplicateTaskId, HashMismatch, MissingPrompt, SnapshotMismatch
from tempobench.pr_harvest import FileChange, GroundTruth, HarvestWindow, PullRequest
from tempobench.prompt_gen import Granularity, LeakagePolicy, make_task_prompt, template_fallback
from tempobench.repo_snapshot import RepoSnapshot, SnapshotRef
from tempobench.task_set import (
    TaskSet,
    assemble_task_set,
    load_task_set,
    persist_task_set,
    validate_task_set,
)

WINDOW = HarvestWindow(t0=parse_utc(100), t1=parse_utc(1000))


def snapshot(files: set[str], commit: str = "c" * 40) -> RepoSnapshot:
    return RepoSnapshot(
        ref=SnapshotRef(commit_id=commit, committer_time=parse_utc(90)),
        worktree_path=Path("/nonexistent"),
        file_manifest=frozenset(files),
        history_ids=("c" * 40,),
        t0=parse_utc(100),
    )


def mk_pr(pr_id: int, merged_at: int, paths: list[str], kinds: list[str] | None = None) -> PullRequest:
    kinds = kinds or ["modified"] * len(paths)
    changes = []
    for path, kind in zip(paths, kinds):
        if kind == "added":
            changes.append(FileChange(path_before=None, path_after=path, kind=kind))
        elif kind == "deleted":
            changes.append(FileChange(path_before=path, path_after=None, kind=kind))
        else:
            changes.append(FileChange(path_before=path, path_after=path, kind=kind))
    return PullRequest(
        pr_id=pr_id,
        title=f"Fix defect number {pr_id}",
        body="Something misbehaves under load.",
        merged_at=parse_utc(merged_at),
        merge_commit=f"{pr_id:040x}",
        changed_files=tuple(changes),
        author_kind="human",
    )


def prompts_for(prs, level=Granularity.CONTEXTUAL):
    return {pr.pr_id: template_fallback(pr, level) for pr in prs}


def test_assemble_two_entries_with_stable_hash() -> None:
    prs = [mk_pr(1, 200, ["src/a.py"]), mk_pr(2, 300, ["src/b.py"])]
    snap = snapshot({"src/a.py", "src/b.py"})
    one = assemble_task_set(snap, WINDOW, prs, prompts_for(prs))
    two = assemble_task_set(snap, WINDOW, prs, prompts_for(prs))
    assert len(one.tasks) == 2
    assert one.manifest_hash == two.manifest_hash
    assert [e.task_id for e in one.tasks] == ["1-contextual", "2-contextual"]


def test_assemble_sorts_by_merged_at() -> None:
    prs = [mk_pr(5, 400, ["src/a.py"]), mk_pr(2, 200, ["src/b.py"])]
    snap = snapshot({"src/a.py", "src/b.py"})
    ts = assemble_task_set(snap, WINDOW, prs, prompts_for(prs))
    assert [e.pr_meta.pr_id for e in ts.tasks] == [2, 5]


def test_assemble_empty_is_valid() -> None:
    ts = assemble_task_set(snapshot(set()), WINDOW, [], {})
    assert ts.tasks == ()
    assert ts.manifest_hash


def test_assemble_missing_prompt() -> None:
    prs = [mk_pr(1, 200, ["src/a.py"])]
    with pytest.raises(MissingPrompt):
        assemble_task_set(snapshot({"src/a.py"}), WINDOW, prs, {})


def test_assemble_duplicate_task_id() -> None:
    prs = [mk_pr(1, 200, ["src/a.py"]), mk_pr(1, 300, ["src/b.py"])]
    snap = snapshot({"src/a.py", "src/b.py"})
    with pytest.raises(DuplicateTaskId):
        assemble_task_set(snap, WINDOW, prs, prompts_for(prs))


def test_assemble_flags_absent_added_paths() -> None:
    prs = [mk_pr(1, 200, ["src/a.py", "src/new.py"], ["modified", "added"])]
    snap = snapshot({"src/a.py"})
    ts = assemble_task_set(snap, WINDOW, prs, prompts_for(prs))
    assert ts.tasks[0].absent_at_snapshot == {"src/new.py"}
    assert ts.tasks[0].ground_truth.files == {"src/a.py", "src/new.py"}


def test_validate_clean_set() -> None:
    prs = [mk_pr(1, 200, ["src/a.py"])]
    snap = snapshot({"src/a.py"})
    ts = assemble_task_set(snap, WINDOW, prs, prompts_for(prs))
    report = validate_task_set(ts, snap, LeakagePolicy(), prs={p.pr_id: p for p in prs})
    assert report.ok
    assert report.issues == ()


def test_validate_flags_pr_merged_outside_window() -> None:
    prs = [mk_pr(1, 50, ["src/a.py"])]  # merged before t0
    snap = snapshot({"src/a.py"})
    wide = HarvestWindow(t0=parse_utc(10), t1=parse_utc(1000))
    ts = assemble_task_set(snap, wide, prs, prompts_for(prs))
    narrowed = TaskSet(
        snapshot_ref=ts.snapshot_ref, window=WINDOW, tasks=ts.tasks, manifest_hash=ts.manifest_hash
    )
    report = validate_task_set(narrowed, snap, LeakagePolicy(), prs={p.pr_id: p for p in prs})
    assert any(i.kind == "window" for i in report.issues)


def test_validate_flags_modified_path_missing_from_snapshot() -> None:
    prs = [mk_pr(1, 200, ["src/ghost.py"])]
    snap = snapshot({"src/a.py"})
    ts = assemble_task_set(snap, WINDOW, prs, prompts_for(prs))
    report = validate_task_set(ts, snap, LeakagePolicy(), prs={p.pr_id: p for p in prs})
    assert any(i.kind == "missing_path" and "ghost" in i.detail for i in report.issues)


def test_validate_exempts_added_paths() -> None:
    prs = [mk_pr(1, 200, ["src/new.py"], ["added"])]
    snap = snapshot({"src/a.py"})
    ts = assemble_task_set(snap, WINDOW, prs, prompts_for(prs))
    report = validate_task_set(ts, snap, LeakagePolicy(), prs={p.pr_id: p for p in prs})
    assert report.ok


def test_validate_rescreens_prompts() -> None:
    prs = [mk_pr(1, 200, ["src/a.py"])]
    snap = snapshot({"src/a.py"})
    leaky = make_task_prompt(1, "Please edit src/a.py to fix the defect promptly today.", Granularity.CONTEXTUAL, "template")
    ts = assemble_task_set(snap, WINDOW, prs, {1: leaky})
    report = validate_task_set(ts, snap, LeakagePolicy(), prs={p.pr_id: p for p in prs})
    assert any(i.kind == "leakage" for i in report.issues)


def test_validate_snapshot_mismatch() -> None:
    prs = [mk_pr(1, 200, ["src/a.py"])]
    snap = snapshot({"src/a.py"})
    ts = assemble_task_set(snap, WINDOW, prs, prompts_for(prs))
    other = snapshot({"src/a.py"}, commit="d" * 40)
    with pytest.raises(SnapshotMismatch):
        validate_task_set(ts, other, LeakagePolicy())


def test_persist_load_round_trip(tmp_path: Path) -> None:
    prs = [mk_pr(1, 200, ["src/a.py"]), mk_pr(2, 300, ["src/b.py", "src/c.py"])]
    snap = snapshot({"src/a.py", "src/b.py", "src/c.py"})
    ts = assemble_task_set(snap, WINDOW, prs, prompts_for(prs))
    out = persist_task_set(ts, tmp_path / "taskset")
    loaded = load_task_set(out)
    assert loaded == ts
    assert loaded.manifest_hash == ts.manifest_hash


def test_persist_empty_round_trip(tmp_path: Path) -> None:
    ts = assemble_task_set(snapshot(set()), WINDOW, [], {})
    loaded = load_task_set(persist_task_set(ts, tmp_path / "taskset"))
    assert loaded == ts


def test_tamper_detection(tmp_path: Path) -> None:
    prs = [mk_pr(1, 200, ["src/a.py"])]
    snap = snapshot({"src/a.py"})
    ts = assemble_task_set(snap, WINDOW, prs, prompts_for(prs))
    out = persist_task_set(ts, tmp_path / "taskset")
    target = out / "truth" / "1-contextual.json"
    text = target.read_text(encoding="utf-8")
    target.write_text(text.replace("src/a.py", "src/b.py"), encoding="utf-8")
    with pytest.raises(HashMismatch):
        load_task_set(out)


def test_agent_visible_files_contain_no_ground_truth(tmp_path: Path) -> None:
    prs = [mk_pr(1, 200, ["src/secret_target.py"])]
    snap = snapshot({"src/secret_target.py"})
    ts = assemble_task_set(snap, WINDOW, prs, prompts_for(prs))
    out = persist_task_set(ts, tmp_path / "taskset")
    task_doc = json.loads((out / "tasks" / "1-contextual.json").read_text())
    assert set(task_doc) == {"task_id", "prompt", "pr_meta"}
    assert "secret_target" not in (out / "tasks" / "1-contextual.json").read_text()
    assert (out / "truth" / "1-contextual.json").exists()


def random_task_set(rng: random.Random) -> TaskSet:
    n = rng.randint(0, 6)
    prs = []
    for i in range(n):
        paths = [f"src/m{rng.randint(0, 9)}/f{j}.py" for j in range(rng.randint(1, 4))]
        prs.append(mk_pr(i + 1, rng.randint(101, 1000), sorted(set(paths))))
    level = rng.choice(list(Granularity))
    snap = snapshot({p for pr in prs for p in (c.path_after for c in pr.changed_files)})
    return assemble_task_set(snap, WINDOW, prs, prompts_for(prs, level))


def test_round_trip_property(tmp_path: Path) -> None:
    rng = random.Random(4242)
    for trial in range(25):
        ts = random_task_set(rng)
        out = persist_task_set(ts, tmp_path / f"ts{trial}")
        assert load_task_set(out) == ts
