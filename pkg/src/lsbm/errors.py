"""Error type shared by every module."""


class LsbmError(ValueError):
    """Raised when an operation cannot produce a valid result.

    ``code`` is a short machine-readable tag such as ``"NON_STOCHASTIC"``
    or ``"SPAN_VIOLATION"``; the message carries the human-readable detail.
    """

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)
