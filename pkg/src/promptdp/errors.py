"""Exception hierarchy shared across the toolkit."""


class PromptDPError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(PromptDPError, ValueError):
    """An argument is outside the domain of the computation."""


class AlphabetError(PromptDPError, ValueError):
    """A character outside the alphabet was met in strict mode."""


class CorpusError(PromptDPError, ValueError):
    """A corpus file is malformed or an annotation does not fit its text."""


class RestorerConfigurationError(PromptDPError):
    """The restorer is misconfigured, or the endpoint rejected the request (HTTP 4xx)."""


class TransportError(PromptDPError):
    """The endpoint could not be reached after all retries."""


class ProtocolError(PromptDPError):
    """The endpoint answered with a payload we cannot interpret."""

    def __init__(self, message, raw_payload=None):
        super().__init__(message)
        self.raw_payload = raw_payload
