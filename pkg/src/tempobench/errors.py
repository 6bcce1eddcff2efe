"""Domain error types raised across the harness.

The CLI maps any :class:`TempoBenchError` to exit status 1 and prints the
class name as the structured error name; usage errors exit 2.
"""


class TempoBenchError(Exception):
    """Base class for all harness domain errors."""


# --- snapshot resolution / materialization ---

class BadRepo(TempoBenchError):
    """The git object store is missing or unreadable."""


class NoCommitBeforeT0(TempoBenchError):
    """The branch's first commit postdates the requested snapshot time."""


class CheckoutFailed(TempoBenchError):
    pass


class DirtyTargetDir(TempoBenchError):
    """Materialization target is nonempty and overwrite was not requested."""


class MalformedManifest(TempoBenchError):
    """A knowledge-bundle manifest does not match the documented schema."""


# --- pull-request harvesting ---

class SourceUnavailable(TempoBenchError):
    pass


class RateLimited(TempoBenchError):
    """Forge rate limit persisted through the retry budget."""


class MalformedArchive(TempoBenchError):
    pass


class EmptyDiff(TempoBenchError):
    """The PR's merge diff against its first parent touches no files."""


# --- prompt generation ---

class GenerationFailed(TempoBenchError):
    """No leakage-clean prompt could be produced within the retry budget."""


class MissingBody(TempoBenchError):
    """Body-dependent granularity requested in strict mode on a bodyless PR."""


# --- task-set assembly / persistence ---

class MissingPrompt(TempoBenchError):
    pass


class DuplicateTaskId(TempoBenchError):
    pass


class SnapshotMismatch(TempoBenchError):
    """Task set and snapshot disagree on the underlying commit."""


class IoFailure(TempoBenchError):
    pass


class HashMismatch(TempoBenchError):
    """Persisted task set fails its manifest-hash tamper check."""


# --- matched A/B runner ---

class AdapterMissing(TempoBenchError):
    pass


class BundleUnverified(TempoBenchError):
    """Knowledge bundle failed boundary verification; aug arm refused."""


class ConstancyViolation(TempoBenchError):
    """Base and aug task manifests differ in more than the bundle field."""


class UnparseableOutput(TempoBenchError):
    pass


# --- metrics / analysis ---

class ArmMismatch(TempoBenchError):
    """Base and aug outcome sets cover different task ids."""


class EmptyOutcomeSet(TempoBenchError):
    pass


class MissingEndpoint(TempoBenchError):
    """A minimal-to-guided gain needs both endpoint rows present."""
