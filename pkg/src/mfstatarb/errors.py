"""Exception types raised across the toolkit."""


class StatArbError(Exception):
    """Base class; ``stage`` is filled in by the pipeline runner."""

    stage: str | None = None


class SchemaError(StatArbError):
    pass


class InputError(StatArbError, ValueError):
    pass


class EmptyUniverseError(StatArbError):
    pass


class DegenerateFactorError(StatArbError):
    def __init__(self, factor: str):
        super().__init__(f"factor {factor!r} is constant across tickers")
        self.factor = factor


class DomainError(StatArbError, ValueError):
    pass


class DegenerateSeriesError(StatArbError):
    pass


class DegenerateInputError(StatArbError):
    pass


class FitFailureError(StatArbError):
    pass


class MissingArtifactError(StatArbError):
    pass
