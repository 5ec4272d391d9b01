"""Exception hierarchy shared by every module and the CLI.

Each error carries a ``detail`` message and the process ``exit_code`` the CLI
reports when the error escapes a command.
"""


class DocCoderError(Exception):
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# --- Usage and configuration (exit 2) ---
class ConfigError(DocCoderError):
    exit_code = 2


class ShapeError(DocCoderError, ValueError):
    exit_code = 2

    def __init__(self, op: str, *shapes):
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")
        self.shapes = shapes


class ContractError(DocCoderError):
    exit_code = 2


class LengthError(DocCoderError, ValueError):
    exit_code = 2


class DataError(DocCoderError):
    exit_code = 2


# --- Numerical failure (exit 3) ---
class NumericalError(DocCoderError):
    exit_code = 3

    def __init__(self, detail: str, diagnostics: dict | None = None):
        super().__init__(detail)
        self.diagnostics = diagnostics or {}


# --- Storage (exit 4) ---
class StorageError(DocCoderError):
    exit_code = 4
