"""Exception hierarchy shared by every pcrnn module."""


class PCRNNError(Exception):
    """Base class for all errors raised by pcrnn."""


class ShapeError(PCRNNError, ValueError):
    pass


class InvalidMaskError(PCRNNError, ValueError):
    pass


class GraphError(PCRNNError, RuntimeError):
    pass


class EvaluationError(PCRNNError, RuntimeError):
    pass


class EmptyInputError(PCRNNError, ValueError):
    pass


class VocabularyError(PCRNNError, IndexError):
    pass


class OrderingError(PCRNNError, ValueError):
    pass


class ContractError(PCRNNError, ValueError):
    """A caller violated an operation's precondition (lengths, counts, ranges)."""


class OptimizerError(PCRNNError, FloatingPointError):
    pass


class StationarityError(PCRNNError, ValueError):
    pass


class NormalizationError(PCRNNError, ValueError):
    pass


class SchemaError(PCRNNError, KeyError):
    def __str__(self):
        return self.args[0] if self.args else ""


class ConfigError(PCRNNError, ValueError):
    pass


class CheckpointError(PCRNNError, ValueError):
    pass
