"""Exception hierarchy for the pipeline.

Every error raised by this package derives from :class:`PipelineError` so
callers can catch one base type.  Backend errors carry a ``retryable`` flag
that the retry helpers consult; everything else is treated as permanent.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PipelineError):
    """Invalid or missing configuration."""


class RegistryError(PipelineError):
    """Violation of a class-registry invariant (empty name, duplicate, ...)."""


class TemplateError(PipelineError):
    """Bad prompt-template file or unbound placeholder at render time."""


class BackendError(PipelineError):
    """Failure talking to an external model provider."""

    retryable = False


class TransportError(BackendError):
    """Network-level failure (timeout, connection error, 5xx)."""

    retryable = True


class RateLimitError(BackendError):
    """Provider asked us to back off (HTTP 429)."""

    retryable = True


class AuthError(BackendError):
    """Authentication or authorization rejected (HTTP 401/403)."""


class QuotaError(BackendError):
    """Account quota exhausted (HTTP 402)."""


class MalformedResponseError(BackendError):
    """Provider answered but the payload did not match the wire contract."""


class UnmatchedPromptError(BackendError):
    """A scripted mock received a prompt no script entry matches."""


class SimulationError(PipelineError):
    """Virtual class simulation failed for a target class."""


class GalleryError(PipelineError):
    """Gallery construction failed for a class."""


class DescriptionShortfallError(GalleryError):
    """The chat model returned fewer scene descriptions than requested."""

    def __init__(self, class_name: str, got: int, want: int):
        super().__init__(
            f"class {class_name!r}: got {got} descriptions after re-prompt, want {want}"
        )
        self.class_name = class_name
        self.got = got
        self.want = want


class ScoringError(PipelineError):
    """Invalid input to a scoring routine."""


class StoreError(PipelineError):
    """Feature-store lookup or persistence failure."""


class EvaluationError(PipelineError):
    """Invalid evaluation input (bad split, empty score table, ...)."""


class PartialFailure(PipelineError):
    """Part of a multi-unit run failed; partial results are attached.

    ``completed`` holds whatever finished cleanly (shape depends on the
    caller); ``failures`` maps unit name to the error message.
    """

    def __init__(self, message: str, completed=None, failures: dict[str, str] | None = None):
        super().__init__(message)
        self.completed = completed
        self.failures = failures or {}
