"""Exception types raised across the package."""


class AIQError(Exception):
    """Base class for every error raised by :mod:`aiq`."""

    #: process exit code used by the command-line front end
    exit_code = 4


class ConfigError(AIQError):
    exit_code = 2


class DataError(AIQError):
    exit_code = 3


class MalformedManifest(DataError):
    pass


class MissingTensor(DataError):
    def __init__(self, tensor_id):
        super().__init__(f"tensor {tensor_id!r} not found in weights container")
        self.tensor_id = tensor_id


class ShapeMismatch(DataError):
    def __init__(self, what, expected, got):
        super().__init__(f"{what}: expected shape {tuple(expected)}, got {tuple(got)}")
        self.what = what
        self.expected = tuple(expected)
        self.got = tuple(got)


class NonFiniteWeight(DataError):
    def __init__(self, tensor_id):
        super().__init__(f"tensor {tensor_id!r} contains NaN or Inf")
        self.tensor_id = tensor_id


class ShapeMissing(DataError):
    pass


class MalformedFile(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class EmptySubset(DataError):
    pass


class LengthMismatch(ConfigError):
    def __init__(self, expected, got):
        super().__init__(f"scheme has {got} entries, model has {expected} quantizable layers")
        self.expected = expected
        self.got = got


class EmptyModel(LengthMismatch):
    def __init__(self):
        AIQError.__init__(self, "model has no quantizable layers")
        self.expected = 0
        self.got = 0


class SpaceTooLarge(ConfigError):
    pass


class ConfigInvalid(ConfigError):
    pass


class KTooLarge(ConfigError):
    pass
