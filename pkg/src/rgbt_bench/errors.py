"""Exception types shared across the toolkit."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class ProtocolError(ValueError):
    """Inputs violate the evaluation or dataset protocol."""


class ConfigurationError(ValueError):
    pass


class GeometryError(ValueError):
    pass


class AttributeUndefinedError(ValueError):
    pass


class ParseError(ValueError):
    """Malformed file content; carries the offending file and line."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
