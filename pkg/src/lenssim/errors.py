"""Exception hierarchy shared across the toolkit."""


class LensSimError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(LensSimError):
    """A scalar parameter is out of its valid range."""


class DimensionError(LensSimError):
    """Array shapes or grid layouts are inconsistent."""


class DegeneratePupilError(LensSimError):
    """Pupil carries no energy; PSF is undefined."""


class DegenerateKernelError(LensSimError):
    """Kernel carries no energy; moments are undefined."""


class ResolutionError(LensSimError):
    """Resampling would produce a kernel smaller than one pixel."""


class FileFormatError(LensSimError):
    """A binary file has a bad magic number or unsupported layout."""


class TruncatedFileError(FileFormatError):
    """A binary file ended before its declared payload."""


class ConfigError(LensSimError):
    """Pipeline configuration is malformed or out of range."""


class DatasetBuildError(LensSimError):
    """Dataset build produced no usable samples."""
