from enum import Enum


class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    UNDECIDED = "UNDECIDED"


class ConeToolkitError(Exception):
    """
    Base error. Every error carries a structured payload (witness points,
    residuals, intervals) that the CLI writes next to partial outputs.
    """
    exit_code = 2

    def __init__(self, message, **payload):
        super().__init__(message)
        self.payload = payload

    def __str__(self):
        base = super().__str__()
        if not self.payload:
            return base
        details = ", ".join(f"{k}={v!r}" for k, v in self.payload.items())
        return f"{base} ({details})"


class ConfigurationError(ConeToolkitError):
    pass


class ValidationError(ConeToolkitError):
    pass


class NumericalError(ConeToolkitError):
    pass


class PoleError(NumericalError):
    """Evaluation requested exactly at a reported pole."""
