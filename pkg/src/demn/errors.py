"""Exception hierarchy shared by every demn module."""


class DEMNError(Exception):
    """Base class for all pipeline errors."""


class ShapeError(DEMNError, ValueError):
    pass


class DegenerateVectorError(DEMNError, ValueError):
    """A vector too close to zero to normalize or compare by cosine."""


class TrainingDivergenceError(DEMNError, FloatingPointError):
    pass


class OracleError(DEMNError):
    """The finite-difference oracle saw a non-finite loss."""


class CorpusError(DEMNError):
    pass


class GenerationError(CorpusError):
    pass


class SplitError(CorpusError):
    pass


class ParseError(DEMNError):
    """A malformed corpus, memory, checkpoint or config file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class RetrievalError(DEMNError):
    pass


class MissingEpisodeError(DEMNError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ContractError(DEMNError, ValueError):
    pass


class SupervisionError(DEMNError):
    pass
