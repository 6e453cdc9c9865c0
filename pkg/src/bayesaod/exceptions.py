"""Exception types raised by the retrieval engine."""


class ConfigurationError(ValueError):
    """Invalid settings, geometry or inputs that make a run impossible."""


class DomainError(ValueError):
    """A forward-model or density argument lies outside its support."""


class FormatError(ValueError):
    """A file does not follow its documented format."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConvergenceWarning(UserWarning):
    """Chains did not reach the requested potential scale reduction."""
