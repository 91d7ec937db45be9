"""Exception hierarchy. Everything the CLI maps to exit code 2 derives from ValidationError."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class DegenerateInputError(ValidationError):
    """Point configuration too degenerate for a closed-form fit."""


class ShapeError(ValidationError):
    """A layer stack produced a non-positive spatial extent."""


class WatertightError(ValidationError):
    """Mesh has an edge not shared by exactly two faces."""

    def __init__(self, edge, count):
        self.edge = edge
        self.count = count
        super().__init__(f"mesh is not watertight: edge {edge} is shared by {count} face(s)")


class SchemaError(ValidationError):
    """File or config does not match its schema; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
