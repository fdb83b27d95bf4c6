"""Exception types shared across the pipeline.

Every error raised on a domain-level contract violation derives from
IrisBenchError so the CLI can map them to a single exit code.
"""


class IrisBenchError(Exception):
    pass


# ---- parsing / serialization ----

class ParseError(IrisBenchError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class DuplicateId(IrisBenchError):
    def __init__(self, sample_id):
        self.sample_id = sample_id
        super().__init__(f"duplicate sample_id {sample_id!r}")


class InvariantViolation(IrisBenchError):
    def __init__(self, sample_id, field, message):
        self.sample_id = sample_id
        self.field = field
        super().__init__(f"{sample_id!r}.{field}: {message}")


class MixedKinds(IrisBenchError):
    pass


# ---- geometry / preprocessing ----

class NoOverlap(IrisBenchError):
    pass


class DegenerateGeometry(IrisBenchError):
    pass


class MissingAnnotation(IrisBenchError):
    pass


# ---- encoding / matching ----

class ShapeMismatch(IrisBenchError):
    pass


class DimMismatch(IrisBenchError):
    pass


class LayoutMismatch(IrisBenchError):
    pass


class InsufficientOverlap(IrisBenchError):
    pass


class MissingTemplate(IrisBenchError):
    def __init__(self, sample_id):
        self.sample_id = sample_id
        super().__init__(f"no template for sample_id {sample_id!r}")


# ---- protocols ----

class InvalidSpec(IrisBenchError):
    pass


class EmptyPool(IrisBenchError):
    def __init__(self, protocol, constraint):
        self.protocol = protocol
        self.constraint = constraint
        super().__init__(f"protocol {protocol!r}: empty pool ({constraint})")


class TooFewSubjects(IrisBenchError):
    pass


# ---- metrics ----

class InsufficientImpostors(IrisBenchError):
    pass


class EmptyGenuine(IrisBenchError):
    pass


class EmptyGallery(IrisBenchError):
    pass
