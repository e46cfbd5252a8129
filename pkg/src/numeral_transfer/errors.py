"""Exception hierarchy. Each error carries the name of the module that raised it
so the CLI can print module-qualified diagnostics."""


class NumeralTransferError(Exception):
    module = "core"

    def qualified(self) -> str:
        return f"{self.module}: {self}"


class ShapeError(NumeralTransferError, ValueError):
    module = "tensor-core"


class ModelError(NumeralTransferError, ValueError):
    module = "nn-graph"


class TraceError(ModelError):
    pass


class ConfigError(NumeralTransferError, ValueError):
    module = "train-engine"


class DatasetError(NumeralTransferError):
    module = "dataset-io"


class CheckpointError(NumeralTransferError):
    module = "checkpoint-store"


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class FingerprintMismatchError(CheckpointError):
    pass


class LengthMismatchError(CheckpointError):
    pass


class ChecksumMismatchError(CheckpointError):
    pass


class FrozenDriftError(NumeralTransferError):
    module = "transfer-engine"
