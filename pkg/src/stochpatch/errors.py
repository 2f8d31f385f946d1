"""Exception hierarchy shared by every module."""


class StochPatchError(Exception):
    pass


class ParameterError(StochPatchError, ValueError):
    """An argument is outside its documented range."""


class ContractError(StochPatchError, ValueError):
    """An input violates a structural precondition (centering, orthonormality, ...)."""


class EmptySelectionError(StochPatchError):
    pass


class BudgetExceededError(StochPatchError):
    pass


class FormatError(StochPatchError, ValueError):
    """Malformed SPST bytes. ``field`` names the header/payload part that failed."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class BadMagicError(FormatError):
    def __init__(self, found):
        super().__init__("magic", f"expected b'SPST', found {found!r}")


class BadVersionError(FormatError):
    def __init__(self, found):
        super().__init__("version", f"expected 1, found {found}")


class TruncatedError(FormatError):
    pass
