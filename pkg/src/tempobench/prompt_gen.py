"""Turn a pull request into a natural-language task at a chosen granularity.

Four granularities disclose strictly growing category sets: the title, the
affected component, observed behavior, and fix-nature guidance. Every
produced prompt is screened lexically against the PR's diff before it is
accepted: no verbatim added lines, no ground-truth file paths below the
configured granularity, no identifiers lifted from the hunks, and word
counts inside per-level bounds. Generation can run through a chat-completion
client with an on-disk transcript cache (replays are exact) or through the
deterministic template fallback.
"""

from __future__ import annotations

import enum
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Mapping, Protocol, Sequence

from .canonical import read_json, sha256_text, write_canonical
from .errors import EmptyDiff, GenerationFailed, MissingBody
from .pr_harvest import PullRequest, extract_ground_truth


class Granularity(enum.Enum):
    MINIMAL = 0
    CONCISE = 1
    CONTEXTUAL = 2
    GUIDED = 3

    @property
    def ordinal(self) -> int:
        return self.value

    @property
    def level(self) -> str:
        return self.name.lower()

    @classmethod
    def from_level(cls, level: str) -> "Granularity":
        try:
            return cls[level.upper()]
        except KeyError:
            raise ValueError(f"unknown granularity {level!r}") from None


# What each granularity is allowed to disclose. Each level must be a strict
# superset of every lower level; tests assert this configuration directly.
DISCLOSURE_CATEGORIES: dict[Granularity, frozenset[str]] = {
    Granularity.MINIMAL: frozenset({"title"}),
    Granularity.CONCISE: frozenset({"title", "component"}),
    Granularity.CONTEXTUAL: frozenset({"title", "component", "behavior"}),
    Granularity.GUIDED: frozenset({"title", "component", "behavior", "fix_guidance"}),
}

DEFAULT_MIN_WORDS: dict[Granularity, int] = {
    Granularity.MINIMAL: 2,
    Granularity.CONCISE: 7,
    Granularity.CONTEXTUAL: 10,
    Granularity.GUIDED: 14,
}

DEFAULT_MAX_WORDS: dict[Granularity, int] = {
    Granularity.MINIMAL: 60,
    Granularity.CONCISE: 90,
    Granularity.CONTEXTUAL: 130,
    Granularity.GUIDED: 170,
}


@dataclass(frozen=True)
class TaskPrompt:
    task_id: str
    text: str
    granularity: Granularity
    source_pr: int
    generator: str  # "llm" | "template"
    prompt_hash: str


@dataclass(frozen=True)
class LeakagePolicy:
    """Lexical leakage rules; thresholds name the highest granularity at which
    a rule is still enforced (the planted-path contextual case must trip)."""

    forbid_diff_verbatim: bool = True
    forbid_exact_paths_below: Granularity = Granularity.CONTEXTUAL
    forbid_symbol_names_below: Granularity = Granularity.GUIDED
    min_words: Mapping[Granularity, int] = field(
        default_factory=lambda: dict(DEFAULT_MIN_WORDS)
    )
    max_words: Mapping[Granularity, int] = field(
        default_factory=lambda: dict(DEFAULT_MAX_WORDS)
    )


@dataclass(frozen=True)
class LeakageViolation:
    rule: str  # diff_verbatim | exact_path | symbol | word_count
    matched_span: str


@dataclass(frozen=True)
class LeakageReport:
    violations: tuple[LeakageViolation, ...] = ()

    @property
    def passed(self) -> bool:
        return not self.violations


def make_task_prompt(
    source_pr: int, text: str, level: Granularity, generator: str
) -> TaskPrompt:
    return TaskPrompt(
        task_id=f"{source_pr}-{level.level}",
        text=text,
        granularity=level,
        source_pr=source_pr,
        generator=generator,
        prompt_hash=sha256_text(text),
    )


# --- lexical analysis of diffs and prompt text ---

_WORD = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_CALL = re.compile(r"\b([A-Za-z_][A-Za-z0-9_]{2,})\s*\(")
_CODE_KEYWORDS = frozenset(
    "if for while switch return catch def fn func sizeof assert print raise "
    "with elif else try except lambda class new delete do not and or in is".split()
)


def _symbol_like(token: str) -> bool:
    """Code-symbol shape: snake_case or mixed-case, as opposed to prose words."""
    if "_" in token:
        return True
    return any(c.isupper() for c in token[1:]) and any(c.islower() for c in token)


def added_diff_lines(diff_text: str) -> list[str]:
    lines = []
    for line in diff_text.splitlines():
        if line.startswith("+++"):
            continue
        if line.startswith("+"):
            lines.append(line[1:])
    return lines


def extract_diff_identifiers(diff_text: str) -> frozenset[str]:
    """Symbol tokens disclosed by the change itself.

    Only hunk content counts: added lines and the enclosing-function context
    of hunk headers. File-path headers are excluded, otherwise every path
    segment would register as an identifier and component disclosure at the
    concise level could never pass screening.
    """
    idents: set[str] = set()

    def scan(fragment: str) -> None:
        for tok in _WORD.findall(fragment):
            if tok not in _CODE_KEYWORDS and _symbol_like(tok):
                idents.add(tok)
        for tok in _CALL.findall(fragment):
            if tok not in _CODE_KEYWORDS:
                idents.add(tok)

    for line in diff_text.splitlines():
        if line.startswith(("+++", "---", "diff ", "index ")):
            continue
        if line.startswith("@@"):
            parts = line.split("@@")
            if len(parts) > 2:
                scan(parts[2])
        elif line.startswith("+"):
            scan(line[1:])
    return frozenset(idents)


def _trigrams(tokens: Sequence[str]) -> set[tuple[str, str, str]]:
    return {tuple(tokens[i : i + 3]) for i in range(len(tokens) - 2)}  # type: ignore[misc]


def screen_leakage(
    prompt: TaskPrompt, pr: PullRequest, policy: LeakagePolicy
) -> LeakageReport:
    """Lexical leakage check of a prompt against its source PR.

    Deliberately not semantic: token overlap and extracted identifiers are
    auditable and deterministic, which is what makes persisted prompts
    re-screenable offline.
    """
    violations: list[LeakageViolation] = []
    text = prompt.text
    level = prompt.granularity
    tokens = _WORD.findall(text)
    lower_tokens = [t.lower() for t in tokens]

    if policy.forbid_diff_verbatim and pr.diff_text:
        prompt_tris = _trigrams(lower_tokens)
        seen: set[tuple[str, str, str]] = set()
        for line in added_diff_lines(pr.diff_text):
            line_tokens = [t.lower() for t in _WORD.findall(line)]
            for tri in _trigrams(line_tokens):
                if tri in prompt_tris and tri not in seen:
                    seen.add(tri)
                    violations.append(
                        LeakageViolation(rule="diff_verbatim", matched_span=" ".join(tri))
                    )

    if level.ordinal <= policy.forbid_exact_paths_below.ordinal:
        try:
            truth_paths = sorted(extract_ground_truth(pr).files)
        except EmptyDiff:
            truth_paths = []
        for path in truth_paths:
            if path in text:
                violations.append(LeakageViolation(rule="exact_path", matched_span=path))

    if level.ordinal <= policy.forbid_symbol_names_below.ordinal and pr.diff_text:
        token_set = set(tokens)
        for ident in sorted(extract_diff_identifiers(pr.diff_text)):
            if ident in token_set:
                violations.append(LeakageViolation(rule="symbol", matched_span=ident))

    word_count = len(text.split())
    lo = policy.min_words[level]
    hi = policy.max_words[level]
    if not lo <= word_count <= hi:
        violations.append(
            LeakageViolation(
                rule="word_count", matched_span=f"{word_count} words outside [{lo}, {hi}]"
            )
        )
    return LeakageReport(violations=tuple(violations))


# --- deterministic template generation ---

_CHANGE_KIND_KEYWORDS = (
    ("bugfix", ("fix", "bug", "crash", "error", "fail", "broken", "incorrect", "wrong", "leak", "regression", "null")),
    ("refactor", ("refactor", "cleanup", "clean", "simplify", "rename", "restructure", "extract", "move")),
    ("feature", ("add", "support", "implement", "introduce", "enable", "allow", "new")),
)


def infer_change_kind(title: str) -> str:
    words = {t.lower() for t in _WORD.findall(title)}
    for kind, keywords in _CHANGE_KIND_KEYWORDS:
        if words & set(keywords):
            return kind
    return "bugfix"


def component_label(pr: PullRequest) -> str:
    """Deepest directory prefix (depth <= 2) shared by a majority of truth files."""
    try:
        files = extract_ground_truth(pr).files
    except EmptyDiff:
        return "repository root"
    n = len(files)
    counts: Counter[str] = Counter()
    for f in files:
        dirs = PurePosixPath(f).parts[:-1][:2]
        for depth in range(1, len(dirs) + 1):
            counts["/".join(dirs[:depth])] += 1
    majority = [
        (prefix.count("/") + 1, count, prefix)
        for prefix, count in counts.items()
        if count * 2 > n
    ]
    if not majority:
        return "repository root"
    # Deepest wins; then most common; lexicographic as the final tiebreak.
    majority.sort(key=lambda item: (-item[0], -item[1], item[2]))
    return majority[0][2]


def _strip_code_tokens(text: str) -> str:
    """Drop path-like and symbol-like chunks from prose, keeping plain words."""
    kept = []
    for chunk in text.replace("`", " ").split():
        core = chunk.strip(".,;:!?()[]{}'\"")
        if not core:
            continue
        if "/" in core or "\\" in core:
            continue
        if re.search(r"\w\.\w", core):  # dotted names and file extensions
            continue
        if any(_symbol_like(tok) for tok in _WORD.findall(core)):
            continue
        kept.append(chunk.strip())
    return " ".join(kept)


def _clip_words(text: str, limit: int) -> str:
    words = text.split()
    return " ".join(words[:limit])


GENERIC_TITLE = "address the reported defect"
GENERIC_BEHAVIOR = "described in the source request"
GENERIC_COMPONENT = "affected"


def _normalized_title(pr: PullRequest) -> str:
    title = _strip_code_tokens(pr.title)
    title = _clip_words(title, 30).strip().rstrip(".")
    return title or GENERIC_TITLE


def _behavior_sentence(pr: PullRequest) -> str:
    body = pr.body.strip()
    first = re.split(r"(?<=[.!?])\s+|\n", body, maxsplit=1)[0] if body else ""
    first = _strip_code_tokens(first)
    first = _clip_words(first, 25).strip().rstrip(".")
    return first or GENERIC_BEHAVIOR


def _template_text(
    pr: PullRequest,
    level: Granularity,
    generic_title: bool = False,
    generic_body: bool = False,
    generic_component: bool = False,
) -> str:
    title = GENERIC_TITLE if generic_title else _normalized_title(pr)
    component = GENERIC_COMPONENT if generic_component else component_label(pr)
    parts = [f"Task: {title}."]
    if level.ordinal >= Granularity.CONCISE.ordinal:
        parts.append(f"The change concerns the {component} component.")
    if level.ordinal >= Granularity.CONTEXTUAL.ordinal:
        behavior = GENERIC_BEHAVIOR if generic_body else _behavior_sentence(pr)
        parts.append(f"Observed behavior: {behavior}.")
    if level.ordinal >= Granularity.GUIDED.ordinal:
        kind = infer_change_kind(pr.title)
        parts.append(
            f"The fix is expected to be a {kind} localized to {component} internals."
        )
    return " ".join(parts)


def template_fallback(pr: PullRequest, level: Granularity) -> TaskPrompt:
    """Deterministic fill-in prompt that passes the default leakage policy.

    Title and body fragments are symbol-stripped up front; if screening still
    objects (e.g. a prose trigram that also appears in an added diff line),
    the text degrades through generic fragments until it is clean.
    """
    policy = LeakagePolicy()
    ladder = (
        {},
        {"generic_body": True},
        {"generic_title": True, "generic_body": True},
        {"generic_title": True, "generic_body": True, "generic_component": True},
    )
    prompt = None
    for overrides in ladder:
        prompt = make_task_prompt(
            pr.pr_id, _template_text(pr, level, **overrides), level, generator="template"
        )
        if screen_leakage(prompt, pr, policy).passed:
            return prompt
    return prompt  # type: ignore[return-value]  # fully generic last rung


# --- LLM-backed generation with transcript cache ---

INSTRUCTION_VERSION = "task-instructions-v1"

INSTRUCTIONS: dict[Granularity, str] = {
    Granularity.MINIMAL: (
        "Rewrite the pull-request title as a single short task sentence for a "
        "software engineer. Do not mention file paths, directory names, or code "
        "identifiers. Output only the sentence."
    ),
    Granularity.CONCISE: (
        "Write a brief task description (one or two sentences) from the "
        "pull-request title and the named component. Name the component, but do "
        "not mention file paths or code identifiers. Output only the description."
    ),
    Granularity.CONTEXTUAL: (
        "Write a task description of two to three sentences covering the goal, "
        "the affected component, and the observed behavior or failure mode. Do "
        "not mention exact file paths, function names, or how to implement the "
        "change. Output only the description."
    ),
    Granularity.GUIDED: (
        "Write a rich task description: the goal, the affected component, the "
        "observed behavior, and category-level guidance on the nature of the fix "
        "(e.g. missing validation, resource handling). Directory-level hints are "
        "allowed; exact file paths are discouraged and function names or code "
        "lines are forbidden. Output only the description."
    ),
}


class ChatClient(Protocol):
    def complete(self, messages: list[dict]) -> str: ...


class TranscriptCache:
    """Directory of {key}.json transcripts; replays are byte-exact.

    Writes go through a temp file + rename so concurrent readers never see a
    partial record.
    """

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.is_file():
            return None
        return read_json(path)["response"]

    def put(self, key: str, response: str, meta: dict | None = None) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        # Unique temp name per writer: concurrent puts of one key must not
        # clobber each other's half-written files.
        tmp = self.directory / f".{key}.{os.getpid()}.{id(self):x}.tmp"
        write_canonical(tmp, {"key": key, "response": response, "meta": meta or {}})
        os.replace(tmp, self._path(key))


class HttpChatClient:
    """Minimal chat-completion client against an OpenAI-style endpoint."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        temperature: float = 0.0,
        api_key_env: str = "TEMPOBENCH_LLM_API_KEY",
        session=None,
    ) -> None:
        import requests

        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.api_key_env = api_key_env
        self.session = session if session is not None else requests.Session()

    def complete(self, messages: list[dict]) -> str:
        import requests

        headers = {}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = self.session.post(
                self.endpoint,
                json={
                    "model": self.model,
                    "messages": messages,
                    "temperature": self.temperature,
                },
                headers=headers,
                timeout=120,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise GenerationFailed(f"chat completion failed: {exc}") from exc


@dataclass
class GeneratorConfig:
    policy: LeakagePolicy = field(default_factory=LeakagePolicy)
    client: ChatClient | None = None
    cache: TranscriptCache | None = None
    max_attempts: int = 3
    allow_fallback: bool = True
    strict_body: bool = False


def _pr_context(pr: PullRequest, level: Granularity) -> str:
    lines = [f"PR title: {pr.title}"]
    if level.ordinal >= Granularity.CONCISE.ordinal:
        lines.append(f"Affected component: {component_label(pr)}")
    if level.ordinal >= Granularity.CONTEXTUAL.ordinal and pr.body.strip():
        lines.append(f"PR description: {pr.body.strip()}")
    if level is Granularity.GUIDED:
        # Category-level hints only: change kind and breadth, never hunks.
        lines.append(
            f"Change category: {infer_change_kind(pr.title)}; "
            f"files touched: {len(pr.changed_files)}"
        )
    return "\n".join(lines)


def _cache_key(pr: PullRequest, level: Granularity, attempt: int) -> str:
    instr_hash = sha256_text(INSTRUCTION_VERSION + "\n" + INSTRUCTIONS[level])
    return sha256_text(f"{pr.pr_id}|{level.level}|{instr_hash}|{attempt}")[:40]


def generate_prompt(
    pr: PullRequest, level: Granularity, cfg: GeneratorConfig
) -> TaskPrompt:
    """Produce a leakage-clean prompt for *pr* at *level*.

    LLM output is screened on every attempt; a failing or leaking client
    falls back to the deterministic template unless fallback is disabled,
    in which case the retry budget ends in :class:`GenerationFailed`.
    """
    if not pr.title.strip():
        raise GenerationFailed(f"PR {pr.pr_id} has no title")
    needs_body = level.ordinal >= Granularity.CONTEXTUAL.ordinal
    if needs_body and cfg.strict_body and not pr.body.strip():
        raise MissingBody(f"PR {pr.pr_id} has no body for {level.level} generation")

    if cfg.client is None:
        return template_fallback(pr, level)

    messages = [
        {"role": "system", "content": INSTRUCTIONS[level]},
        {"role": "user", "content": _pr_context(pr, level)},
    ]
    last_error: str = "retry budget exhausted"
    for attempt in range(cfg.max_attempts):
        key = _cache_key(pr, level, attempt)
        response = cfg.cache.get(key) if cfg.cache else None
        if response is None:
            try:
                response = cfg.client.complete(messages)
            except GenerationFailed as exc:
                last_error = str(exc)
                continue
            if cfg.cache:
                cfg.cache.put(
                    key,
                    response,
                    meta={"pr_id": pr.pr_id, "level": level.level, "attempt": attempt},
                )
        prompt = make_task_prompt(pr.pr_id, response.strip(), level, generator="llm")
        report = screen_leakage(prompt, pr, cfg.policy)
        if report.passed:
            return prompt
        last_error = f"leakage: {[v.rule for v in report.violations]}"

    if cfg.allow_fallback:
        return template_fallback(pr, level)
    raise GenerationFailed(
        f"no clean prompt for PR {pr.pr_id} at {level.level}: {last_error}"
    )
