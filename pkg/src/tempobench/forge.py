"""Live forge (GitHub-style REST) harvesting into the offline archive.

Fetching is sequential with bounded rate-limit backoff. The client's only
job is to materialize the archive directory; everything downstream reads
the archive, never the network. The HTTP session is injectable so the
client can be exercised without a real forge.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .canonical import parse_utc
from .errors import RateLimited, SourceUnavailable
from .pr_harvest import FileChange, HarvestWindow, PullRequest, write_archive

logger = logging.getLogger(__name__)

DEFAULT_TOKEN_ENV = "TEMPOBENCH_FORGE_TOKEN"

# GitHub file statuses mapped onto the archive's four change kinds.
_STATUS_KIND = {
    "added": "added",
    "copied": "added",
    "removed": "deleted",
    "modified": "modified",
    "changed": "modified",
    "renamed": "renamed",
}


@dataclass(frozen=True)
class ForgeSource:
    """REST endpoint descriptor plus the archive directory it materializes."""

    api_base: str
    repo: str  # "owner/name"
    archive_dir: Path
    token_env: str = DEFAULT_TOKEN_ENV
    fetch_diffs: bool = True

    def materialize_archive(self, window: HarvestWindow) -> Path:
        client = ForgeClient(self)
        return client.materialize_archive(window)


class ForgeClient:
    def __init__(
        self,
        source: ForgeSource,
        session=None,
        max_retries: int = 3,
        backoff_s: float = 1.0,
        sleep=time.sleep,
    ) -> None:
        self.source = source
        self.session = session if session is not None else requests.Session()
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._sleep = sleep

    def _headers(self, accept: str = "application/vnd.github.v3+json") -> dict[str, str]:
        headers = {"Accept": accept}
        token = os.environ.get(self.source.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _get(self, url: str, params: dict | None = None, accept: str | None = None):
        """GET with bounded retry: back off on rate limits and transient errors."""
        headers = self._headers(accept) if accept else self._headers()
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                resp = self.session.get(url, params=params, headers=headers, timeout=30)
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("forge request failed (%s), attempt %d", exc, attempt)
                continue
            if resp.status_code in (403, 429):
                last_error = RateLimited(f"{url} -> {resp.status_code}")
                logger.warning("forge rate limited (attempt %d)", attempt)
                continue
            if resp.status_code >= 500:
                last_error = SourceUnavailable(f"{url} -> {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise SourceUnavailable(f"{url} -> {resp.status_code}")
            return resp
        if isinstance(last_error, RateLimited):
            raise last_error
        raise SourceUnavailable(f"{url} unreachable: {last_error}")

    def _paginate(self, url: str, params: dict):
        while url:
            resp = self._get(url, params=params)
            yield from resp.json()
            nxt = resp.links.get("next", {}).get("url")
            url, params = nxt, None  # follow-up pages carry their own query

    def list_merged(self, window: HarvestWindow) -> list[dict]:
        url = f"{self.source.api_base}/repos/{self.source.repo}/pulls"
        merged = []
        for item in self._paginate(url, {"state": "closed", "per_page": "100"}):
            if not item.get("merged_at"):
                continue
            if window.contains(parse_utc(item["merged_at"])):
                merged.append(item)
        return merged

    def pr_changes(self, number: int) -> tuple[FileChange, ...]:
        url = f"{self.source.api_base}/repos/{self.source.repo}/pulls/{number}/files"
        changes = []
        for entry in self._paginate(url, {"per_page": "100"}):
            kind = _STATUS_KIND.get(entry["status"])
            if kind is None:
                continue
            filename = entry["filename"]
            if kind == "added":
                changes.append(FileChange(path_before=None, path_after=filename, kind=kind))
            elif kind == "deleted":
                changes.append(FileChange(path_before=filename, path_after=None, kind=kind))
            elif kind == "renamed":
                changes.append(
                    FileChange(
                        path_before=entry["previous_filename"],
                        path_after=filename,
                        kind=kind,
                    )
                )
            else:
                changes.append(
                    FileChange(path_before=filename, path_after=filename, kind=kind)
                )
        return tuple(changes)

    def pr_diff(self, number: int) -> str | None:
        url = f"{self.source.api_base}/repos/{self.source.repo}/pulls/{number}"
        try:
            resp = self._get(url, accept="application/vnd.github.v3.diff")
        except (RateLimited, SourceUnavailable):
            logger.warning("diff for PR %d unavailable; leakage screen will skip diff rules", number)
            return None
        return resp.text

    def fetch_window(self, window: HarvestWindow) -> list[PullRequest]:
        prs = []
        for item in self.list_merged(window):
            number = int(item["number"])
            user = item.get("user") or {}
            author_kind = "unknown"
            if user.get("type"):
                author_kind = "bot" if user["type"].lower() == "bot" else "human"
            prs.append(
                PullRequest(
                    pr_id=number,
                    title=item.get("title") or "",
                    body=item.get("body") or "",
                    merged_at=parse_utc(item["merged_at"]),
                    merge_commit=item.get("merge_commit_sha") or "",
                    changed_files=self.pr_changes(number),
                    author_kind=author_kind,
                    diff_text=self.pr_diff(number) if self.source.fetch_diffs else None,
                )
            )
        prs.sort(key=lambda p: (p.merged_at, p.pr_id))
        return prs

    def materialize_archive(self, window: HarvestWindow) -> Path:
        prs = self.fetch_window(window)
        write_archive(prs, self.source.archive_dir)
        logger.info("archived %d merged PRs under %s", len(prs), self.source.archive_dir)
        return self.source.archive_dir
