from .custom_exception import (
    BadMagicError,
    CheckpointError,
    ChecksumError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    IngestionError,
    MultiFitException,
    NumericError,
    TransferError,
    UnsupportedVersionError,
)
