"""Exception types shared across the engine."""


class UmfError(Exception):
    """Base class for all engine errors."""


class ConfigError(UmfError):
    """Experiment configuration is invalid; message carries the field path."""


class UnknownDenoiser(UmfError):
    """A denoiser id was requested that is not registered."""


class NoMaskedPositions(UmfError):
    """An operation that requires masked positions was given none."""


class FullyUnmasked(UmfError):
    """A transition was requested on a state with no masked positions."""


class InvalidRatioPair(UmfError):
    """Bernoulli unmasking requires 0 < alpha_prev < alpha_t <= 1."""


class InvalidSchedule(UmfError):
    """A ratio schedule is unusable for the given generation length."""


class BudgetTooSmall(UmfError):
    """The evaluation budget cannot fit a single full decode."""


class TreeExhausted(UmfError):
    """Every node is fully expanded and at terminal depth."""


class NoUntriedActions(UmfError):
    """Expansion was requested on a fully expanded node."""


class NotTerminal(UmfError):
    """A reward was requested for a state that is not fully unmasked."""


class CommandFailed(UmfError):
    """The external test command exited non-zero without a parseable result."""


class ParseError(UmfError):
    """The external test command output had no parseable pass line."""


class RemoteProtocolError(UmfError):
    """A remote endpoint violated the wire protocol."""


class CodecMismatch(UmfError):
    """Cross-vocabulary mapping could not fit the re-encoded text."""


class UndeclaredSpecialToken(UmfError):
    """A token id is neither a declared special token nor a known piece."""


class MissingResults(UmfError):
    """A report was requested for a result directory with no results."""
