"""Exception hierarchy shared across the package."""


class SkelResError(Exception):
    """Base class for every error raised by skelres."""


# skeleton data
class RowCountError(SkelResError):
    pass


class NumericError(SkelResError):
    pass


class NonFiniteError(SkelResError):
    pass


class SchemaError(SkelResError):
    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or field)


class MissingMetadataError(SkelResError):
    pass


class UnknownProtocolError(SkelResError):
    pass


# encoding
class DegenerateRangeError(SkelResError):
    pass


class LengthMismatchError(SkelResError):
    pass


class CropTooLargeError(SkelResError):
    pass


class UnsupportedPngError(SkelResError):
    pass


# tensor engine / networks
class ShapeError(SkelResError):
    pass


class RateError(SkelResError):
    pass


class LabelRangeError(SkelResError):
    pass


class DepthError(SkelResError):
    pass


class KindError(SkelResError):
    pass


class ChecksumError(SkelResError):
    pass


# training / cli
class OutOfRangeError(SkelResError):
    pass


class EmptyDatasetError(SkelResError):
    pass


class ProtocolMismatchError(SkelResError):
    pass


class ConfigError(SkelResError):
    def __init__(self, field, message=None):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)
