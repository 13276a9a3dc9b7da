"""Exception types shared across the package."""


class CpknnError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(CpknnError):
    """Invalid data, configuration, or arguments.

    Raised for everything the CLI maps to exit code 2: malformed input
    files, contract violations (leakage, fingerprint mismatch), and
    out-of-range parameters. I/O failures stay OSError (exit code 1).
    """
