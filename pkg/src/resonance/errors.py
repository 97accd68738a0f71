"""Exception types shared across the library."""


class ResonanceError(Exception):
    """Base class for all library-specific errors."""


# Broker errors

class InvalidKeyError(ResonanceError, ValueError):
    """A feature key is empty or uses a reserved character."""


class DuplicateBindingError(ResonanceError):
    """The key is already bound to an input pipe on this node."""


class KindMismatchError(ResonanceError, TypeError):
    """A value's kind does not match the pipe's declared kind."""


class NonFiniteValueError(ResonanceError, ValueError):
    """A real-valued feature payload is NaN or infinite."""


class DuplicatePipeInBatchError(ResonanceError):
    """The same input pipe appears twice in one batch publish."""


class DuplicateOutputNameError(ResonanceError):
    """The output name is already associated on this node."""


class ArityMismatchError(ResonanceError):
    """A model's declared input count differs from the dependency list."""


class UnknownOutputError(ResonanceError, KeyError):
    """No association with this output name on the node or its ancestors."""


# Policy errors

class HashBitsMismatchError(ResonanceError):
    """Policy and hashed vector were built with different hash widths."""


class MalformedModelError(ResonanceError, ValueError):
    """A serialized policy has a bad magic, version, or shape."""


class NonFiniteWeightError(ResonanceError, ValueError):
    """A policy weight is NaN or infinite."""


# Log / learner errors

class ZeroPropensityError(ResonanceError, ValueError):
    """A logged action probability is zero or negative, unusable for IPS."""


class EmptyTrainingSetError(ResonanceError, ValueError):
    """Training or evaluation was invoked with no examples."""


# Simulation errors

class UnknownScenarioError(ResonanceError, ValueError):
    """The scenario name is not one of the built-in environments."""


class ConfigError(ResonanceError, ValueError):
    """A loop or comparison configuration violates its preconditions."""
