"""Exception types shared across the package."""


class RagChatError(Exception):
    """Base class for all errors raised by this package."""


# --- document ingestion ---

class UnsupportedFormat(RagChatError):
    """File type has no configured loader or extractor."""


class InvalidEncoding(RagChatError):
    """Input bytes are not valid UTF-8 for a text format."""


# --- embedding ---

class EmptyInputText(RagChatError):
    """Embedding requested for an empty list or an empty string."""


class NoTokens(RagChatError):
    """Text contains no alphanumeric tokens to hash."""


class ZeroVector(RagChatError):
    """Cannot normalize a vector with zero norm."""


class ProviderUnreachable(RagChatError):
    """Remote provider could not be reached at the transport level."""


class ProviderError(RagChatError):
    """Remote provider answered with an error status."""

    def __init__(self, status: int, body: str = ""):
        super().__init__(f"provider returned status {status}: {body[:200]}")
        self.status = status
        self.body = body


# --- vector store ---

class DimMismatch(RagChatError):
    """Vector dimension does not match the collection or peer vector."""


class InvalidLambda(RagChatError):
    """MMR lambda outside [0, 1]."""


class CorruptStore(RagChatError):
    """Persisted collection failed magic, version, or structural checks."""


# --- retrieval ---

class SourceUnavailable(RagChatError):
    """Knowledge source has no usable collection behind it."""


# --- llm gateway ---

class BudgetTooSmall(RagChatError):
    """Token budget cannot even fit the system and user messages."""


class RequestTimeout(RagChatError):
    """Remote endpoint did not answer within the configured timeout."""


class ProtocolError(RagChatError):
    """Remote endpoint answered with a malformed body."""


class ScriptExhausted(RagChatError):
    """Scripted mock has no responses left."""


class PortInUse(RagChatError):
    """Requested listen port is already bound."""


# --- web tools ---

class FetchError(RagChatError):
    """Page fetch failed (HTTP status, timeout, or redirect limit)."""

    def __init__(self, reason: str, status: int | None = None):
        super().__init__(f"fetch failed: {reason}")
        self.reason = reason
        self.status = status


class BodyTooLarge(RagChatError):
    """Response body exceeded the configured byte cap."""


class NotHtmlText(RagChatError):
    """Response content type is neither HTML nor text."""


class EmptyText(RagChatError):
    """Nothing to summarize."""


class SummarizeLlmError(RagChatError):
    """LLM call inside a summarize run failed; carries the section index."""

    def __init__(self, section_index: int):
        super().__init__(f"llm call failed while summarizing section {section_index}")
        self.section_index = section_index


# --- media clients ---

class EmptyPrompt(RagChatError):
    """Image generation requires a non-empty prompt."""


class MissingImageRef(RagChatError):
    """Image understanding request carries no image reference."""


class NotPng(RagChatError):
    """Image endpoint returned bytes without a PNG signature."""


class EndpointError(RagChatError):
    """Media model endpoint failed."""

    def __init__(self, reason: str, status: int | None = None):
        super().__init__(f"endpoint error: {reason}")
        self.reason = reason
        self.status = status


class SilentAudio(RagChatError):
    """Audio samples are all zero; peak normalization undefined."""


class EmptyAudio(RagChatError):
    """Audio payload carries no samples."""
