"""Exception types raised across the toolkit."""


class HierdetError(Exception):
    """Base class for every error raised by hierdet."""


class ParseError(HierdetError):
    """A hierarchy document or CSV file could not be parsed.

    ``line`` and ``column`` are 1-based when known.
    """

    def __init__(self, message, source=None, line=None, column=None):
        self.source = source
        self.line = line
        self.column = column
        where = []
        if source is not None:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class CycleError(HierdetError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"label hierarchy contains a cycle through {label!r}")


class UnknownLabelError(HierdetError, KeyError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"unknown label {label!r}")

    def __str__(self):
        return self.args[0]


class MixedImageError(HierdetError):
    pass


class ConfigError(HierdetError):
    pass


class EmptyIndexError(HierdetError):
    pass
