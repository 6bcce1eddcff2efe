"""Matched baseline/knowledge-augmented execution of an external SWE agent.

The agent protocol is file-based subprocess invocation: each task gets an
isolated scratch directory holding a copy of the snapshot worktree and a
``task.json`` manifest (task id, prompt text, worktree path, and, in the
augmented arm only, the knowledge-bundle path). The agent must leave
``prediction.json`` or ``prediction.txt`` in that directory. Ground truth
is never written anywhere an agent can see.

Matched runs prepare both arms' manifests first and attest that, per task,
they differ in exactly the ``knowledge_bundle`` field before any agent is
invoked. Agent nondeterminism is the agent's business; the harness itself
is deterministic.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .canonical import read_json, write_canonical
from .errors import (
    AdapterMissing,
    BundleUnverified,
    ConstancyViolation,
    SnapshotMismatch,
    UnparseableOutput,
)
from .repo_snapshot import (
    RepoSnapshot,
    build_boundary_manifest,
    load_bundle_manifest,
    verify_knowledge_bundle,
)
from .task_set import TaskEntry, TaskSet

logger = logging.getLogger(__name__)

PREDICTION_NAMES = ("prediction.json", "prediction.txt")
TASK_MANIFEST_NAME = "task.json"


@dataclass(frozen=True)
class Condition:
    kind: str  # "base" | "aug"
    knowledge_bundle: Path | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("base", "aug"):
            raise ValueError(f"unknown condition kind {self.kind!r}")
        if (self.kind == "aug") != (self.knowledge_bundle is not None):
            raise ValueError("aug requires a knowledge bundle; base forbids one")


@dataclass(frozen=True)
class AgentAdapterConfig:
    command: tuple[str, ...]
    timeout_s: int = 300
    max_parallel: int = 1
    env_allowlist: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.command:
            raise ValueError("adapter command must not be empty")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be at least 1")


@dataclass(frozen=True)
class Prediction:
    task_id: str
    files: frozenset[str]
    raw_output_ref: Path


@dataclass(frozen=True)
class RunRecord:
    task_id: str
    condition: str
    prediction: Prediction | None
    failure: str | None
    wall_time_s: float
    exit_status: int

    def __post_init__(self) -> None:
        if (self.prediction is None) == (self.failure is None):
            raise ValueError("exactly one of prediction/failure must be set")


@dataclass(frozen=True)
class TaskAttestation:
    task_id: str
    differing_fields: tuple[str, ...]


@dataclass(frozen=True)
class MatchedRun:
    base: tuple[RunRecord, ...]
    aug: tuple[RunRecord, ...]
    attestations: tuple[TaskAttestation, ...]
    base_only: bool = False


def _normalize_path(raw: str) -> str | None:
    path = raw.strip().replace("\\", "/")
    while "//" in path:
        path = path.replace("//", "/")
    while path.startswith("./"):
        path = path[2:]
    return path if path not in ("", ".") else None


def collect_prediction(task_id: str, agent_output_path: str | Path) -> Prediction:
    """Parse an agent's prediction file into a normalized path set.

    ``.json`` files must hold an array of strings; anything else is treated
    as one path per line. Binary or structurally wrong content raises
    :class:`UnparseableOutput`.
    """
    agent_output_path = Path(agent_output_path)
    try:
        text = agent_output_path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise UnparseableOutput(f"{agent_output_path} is not UTF-8 text") from exc
    if agent_output_path.suffix == ".json":
        try:
            items = json.loads(text) if text.strip() else []
        except ValueError as exc:
            raise UnparseableOutput(f"{agent_output_path} is not valid JSON") from exc
        if not isinstance(items, list) or not all(isinstance(i, str) for i in items):
            raise UnparseableOutput(f"{agent_output_path} must be a JSON array of strings")
    else:
        items = text.splitlines()
    files = frozenset(filter(None, (_normalize_path(i) for i in items)))
    return Prediction(task_id=task_id, files=files, raw_output_ref=agent_output_path)


def _write_task_manifest(path: Path, manifest: dict) -> None:
    # Module-level on purpose: the tamper tests monkeypatch this seam.
    write_canonical(path, manifest)


def _prepare_task_dir(
    entry: TaskEntry,
    cond: Condition,
    snapshot: RepoSnapshot,
    task_dir: Path,
    isolation: str,
) -> Path:
    """Create the scratch dir: worktree copy (or shared read-only path) + manifest."""
    if task_dir.exists():
        shutil.rmtree(task_dir)
    task_dir.mkdir(parents=True)
    if isolation == "copy":
        shutil.copytree(snapshot.worktree_path, task_dir / "worktree")
        worktree_field = "worktree"
    elif isolation == "readonly":
        worktree_field = str(Path(snapshot.worktree_path).resolve())
    else:
        raise ValueError(f"unknown isolation mode {isolation!r}")
    manifest = {
        "task_id": entry.task_id,
        "prompt": entry.prompt.text,
        "worktree": worktree_field,
    }
    if cond.kind == "aug":
        manifest["knowledge_bundle"] = str(Path(cond.knowledge_bundle).resolve())
    _write_task_manifest(task_dir / TASK_MANIFEST_NAME, manifest)
    return task_dir


def _check_adapter(adapter: AgentAdapterConfig) -> None:
    exe = adapter.command[0]
    if "/" in exe or Path(exe).is_absolute():
        if not Path(exe).exists():
            raise AdapterMissing(f"agent executable {exe} does not exist")
    elif shutil.which(exe) is None:
        raise AdapterMissing(f"agent executable {exe!r} not found on PATH")


def _agent_argv(adapter: AgentAdapterConfig, task_dir: Path) -> list[str]:
    task_json = str(task_dir / TASK_MANIFEST_NAME)
    substitutions = {
        "{task_json}": task_json,
        "{scratch_dir}": str(task_dir),
    }
    argv = []
    substituted = False
    for arg in adapter.command:
        for placeholder, value in substitutions.items():
            if placeholder in arg:
                arg = arg.replace(placeholder, value)
                substituted = True
        argv.append(arg)
    if not substituted:
        argv.append(task_json)
    return argv


def _execute_task(
    entry: TaskEntry, cond: Condition, adapter: AgentAdapterConfig, task_dir: Path
) -> RunRecord:
    argv = _agent_argv(adapter, task_dir)
    env = {name: os.environ[name] for name in adapter.env_allowlist if name in os.environ}
    start = time.monotonic()
    try:
        proc = subprocess.run(
            argv,
            cwd=task_dir,
            env=env,
            capture_output=True,
            timeout=adapter.timeout_s,
        )
    except subprocess.TimeoutExpired:
        wall = time.monotonic() - start
        logger.warning("task %s timed out after %.1fs", entry.task_id, wall)
        return RunRecord(
            task_id=entry.task_id,
            condition=cond.kind,
            prediction=None,
            failure="timeout",
            wall_time_s=wall,
            exit_status=-1,
        )
    wall = time.monotonic() - start
    (task_dir / "agent_stdout.log").write_bytes(proc.stdout)
    (task_dir / "agent_stderr.log").write_bytes(proc.stderr)

    def failed(reason: str) -> RunRecord:
        return RunRecord(
            task_id=entry.task_id,
            condition=cond.kind,
            prediction=None,
            failure=reason,
            wall_time_s=wall,
            exit_status=proc.returncode,
        )

    if proc.returncode != 0:
        return failed(f"agent_exit_{proc.returncode}")
    for name in PREDICTION_NAMES:
        candidate = task_dir / name
        if candidate.exists():
            try:
                prediction = collect_prediction(entry.task_id, candidate)
            except UnparseableOutput:
                return failed("unparseable_output")
            return RunRecord(
                task_id=entry.task_id,
                condition=cond.kind,
                prediction=prediction,
                failure=None,
                wall_time_s=wall,
                exit_status=proc.returncode,
            )
    return failed("missing_prediction")


def _verify_bundle_for(cond: Condition, snapshot: RepoSnapshot) -> None:
    manifest = load_bundle_manifest(cond.knowledge_bundle)
    report = verify_knowledge_bundle(manifest, build_boundary_manifest(snapshot))
    if not report.clean:
        kinds = ", ".join(f"{v.kind}({v.offending_item})" for v in report.violations)
        raise BundleUnverified(f"bundle {cond.knowledge_bundle} violates boundary: {kinds}")


def _check_snapshot(ts: TaskSet, snapshot: RepoSnapshot) -> None:
    if ts.snapshot_ref.commit_id != snapshot.ref.commit_id:
        raise SnapshotMismatch(
            f"task set expects {ts.snapshot_ref.commit_id}, got {snapshot.ref.commit_id}"
        )


def _execute_prepared(
    ts: TaskSet,
    cond: Condition,
    adapter: AgentAdapterConfig,
    dirs: dict[str, Path],
) -> list[RunRecord]:
    with ThreadPoolExecutor(max_workers=adapter.max_parallel) as pool:
        futures = {
            entry.task_id: pool.submit(_execute_task, entry, cond, adapter, dirs[entry.task_id])
            for entry in ts.tasks
        }
        return [futures[entry.task_id].result() for entry in ts.tasks]


def run_condition(
    ts: TaskSet,
    cond: Condition,
    adapter: AgentAdapterConfig,
    snapshot: RepoSnapshot,
    out_dir: str | Path,
    isolation: str = "copy",
) -> list[RunRecord]:
    """Run one arm over the whole task set; per-task failures never raise."""
    _check_adapter(adapter)
    _check_snapshot(ts, snapshot)
    if cond.kind == "aug":
        _verify_bundle_for(cond, snapshot)
    out_dir = Path(out_dir)
    dirs = {
        entry.task_id: _prepare_task_dir(
            entry, cond, snapshot, out_dir / cond.kind / entry.task_id, isolation
        )
        for entry in ts.tasks
    }
    return _execute_prepared(ts, cond, adapter, dirs)


def _attest_manifests(task_id: str, base_dir: Path, aug_dir: Path) -> TaskAttestation:
    base_doc = read_json(base_dir / TASK_MANIFEST_NAME)
    aug_doc = read_json(aug_dir / TASK_MANIFEST_NAME)
    sentinel = object()
    differing = tuple(
        sorted(
            key
            for key in set(base_doc) | set(aug_doc)
            if base_doc.get(key, sentinel) != aug_doc.get(key, sentinel)
        )
    )
    if differing != ("knowledge_bundle",):
        raise ConstancyViolation(
            f"task {task_id}: manifests differ in {differing or '(nothing)'}, "
            "expected exactly the knowledge_bundle field"
        )
    return TaskAttestation(task_id=task_id, differing_fields=differing)


def run_matched(
    ts: TaskSet,
    adapter: AgentAdapterConfig,
    snapshot: RepoSnapshot,
    out_dir: str | Path,
    bundle: str | Path | None = None,
    isolation: str = "copy",
) -> MatchedRun:
    """Base and augmented arms under identical manifests except the bundle field.

    Both arms' manifests are prepared and attested before any agent runs;
    without a bundle this degrades to a base-only run with an empty aug arm.
    """
    _check_adapter(adapter)
    _check_snapshot(ts, snapshot)
    out_dir = Path(out_dir)
    base_cond = Condition(kind="base")
    base_dirs = {
        entry.task_id: _prepare_task_dir(
            entry, base_cond, snapshot, out_dir / "base" / entry.task_id, isolation
        )
        for entry in ts.tasks
    }
    if bundle is None:
        base_records = _execute_prepared(ts, base_cond, adapter, base_dirs)
        return MatchedRun(
            base=tuple(base_records), aug=(), attestations=(), base_only=True
        )

    aug_cond = Condition(kind="aug", knowledge_bundle=Path(bundle))
    _verify_bundle_for(aug_cond, snapshot)
    aug_dirs = {
        entry.task_id: _prepare_task_dir(
            entry, aug_cond, snapshot, out_dir / "aug" / entry.task_id, isolation
        )
        for entry in ts.tasks
    }
    attestations = tuple(
        _attest_manifests(entry.task_id, base_dirs[entry.task_id], aug_dirs[entry.task_id])
        for entry in ts.tasks
    )
    base_records = _execute_prepared(ts, base_cond, adapter, base_dirs)
    aug_records = _execute_prepared(ts, aug_cond, adapter, aug_dirs)
    return MatchedRun(
        base=tuple(base_records),
        aug=tuple(aug_records),
        attestations=attestations,
        base_only=False,
    )


# --- record persistence ---

def _record_to_dict(record: RunRecord) -> dict:
    prediction = None
    if record.prediction is not None:
        prediction = {
            "files": sorted(record.prediction.files),
            "raw_output_ref": str(record.prediction.raw_output_ref),
        }
    return {
        "task_id": record.task_id,
        "condition": record.condition,
        "prediction": prediction,
        "failure": record.failure,
        "wall_time_s": record.wall_time_s,
        "exit_status": record.exit_status,
    }


def write_run_records(records: list[RunRecord], path: str | Path) -> Path:
    return write_canonical(path, [_record_to_dict(r) for r in records])


def load_run_records(path: str | Path) -> list[RunRecord]:
    records = []
    for doc in read_json(path):
        prediction = None
        if doc["prediction"] is not None:
            prediction = Prediction(
                task_id=doc["task_id"],
                files=frozenset(doc["prediction"]["files"]),
                raw_output_ref=Path(doc["prediction"]["raw_output_ref"]),
            )
        records.append(
            RunRecord(
                task_id=doc["task_id"],
                condition=doc["condition"],
                prediction=prediction,
                failure=doc["failure"],
                wall_time_s=doc["wall_time_s"],
                exit_status=doc["exit_status"],
            )
        )
    return records
