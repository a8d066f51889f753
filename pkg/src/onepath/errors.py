"""Exception types shared across the package."""


class OnePathError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(OnePathError):
    """A parameter combination violates one of the published inequalities."""


class AuthenticationError(OnePathError):
    """Symmetric-ciphertext authentication failed (wrong key or tampering)."""


class OutOfWindowError(OnePathError):
    """Discrete-log recovery fell outside the configured signed window."""


class ProtocolError(OnePathError):
    """An entity received a message that violates the protocol state machine."""


class LeakageViolation(OnePathError):
    """A leakage audit assertion failed; the name of the check is the message."""


class OracleMismatch(OnePathError):
    """An encrypted inference disagreed with the plaintext oracle."""
