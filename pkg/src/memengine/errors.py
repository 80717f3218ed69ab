"""Exception types shared by every layer of the engine."""


class MemEngineError(Exception):
    """Base class for all engine errors.

    ``model_kind`` is filled in when an error escapes through a model verb,
    so callers can tell which model a propagated failure came from.
    """

    model_kind = None


class EmptyTextError(MemEngineError):
    """A text argument trimmed to the empty string."""


class DimensionMismatchError(MemEngineError):
    """Vector arguments have different dimensions."""


class ZeroVectorError(MemEngineError):
    """Cosine similarity is undefined for a zero-norm vector."""


class NegativeElapsedError(MemEngineError):
    """Elapsed time must be non-negative."""


class NonpositiveStrengthError(MemEngineError):
    """Retention strength must be positive."""


class EmptyListError(MemEngineError):
    """Operation requires a non-empty list."""


class ProviderError(MemEngineError):
    """An LLM or embedding backend call failed."""

    def __init__(self, message, status=None, body=None):
        super().__init__(message)
        self.status = status
        self.body = body


class ScriptMissError(ProviderError):
    """No scripted response pattern matches the prompt."""


class ProviderTimeoutError(ProviderError):
    """The backend did not answer within the configured timeout."""


class FileIOError(MemEngineError):
    """A snapshot, config, or trace file could not be read or written."""


class SnapshotFormatError(MemEngineError):
    """A snapshot file is malformed; the message names the offending line."""

    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ParseError(MemEngineError):
    """A config or trace file failed to parse."""

    def __init__(self, message, line=None, column=None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)
        self.line = line
        self.column = column


class UnresolvedPlaceholderError(MemEngineError):
    """A prompt template references a variable that was not supplied."""

    def __init__(self, name):
        super().__init__(f"unresolved placeholder {{{name}}}")
        self.name = name


class TemplateError(MemEngineError):
    """A prompt template is syntactically malformed (stray or unclosed brace)."""


class UnknownKindError(MemEngineError):
    """No memory model is registered under the requested kind."""


class ConfigValidationError(MemEngineError):
    """A config value is missing, mistyped, or out of range."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class TypeClashError(ConfigValidationError):
    """A merge tried to overlay a subtree onto a scalar or vice versa."""

    def __init__(self, path):
        super().__init__(path, "subtree and scalar clash at this path")


class NoLabeledRecallsError(MemEngineError):
    """The trace given to the selector has no recall with expected ids."""
