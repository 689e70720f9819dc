"""Exception hierarchy shared across the toolkit."""


class RadarFieldError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(RadarFieldError, ValueError):
    """Invalid configuration or incompatible shapes."""


class DegenerateOriginError(RadarFieldError, ValueError):
    """A Cartesian point too close to the origin to define angles."""


class DecompositionError(RadarFieldError, ValueError):
    """A covariance failed Cholesky factorization."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateGeometryError(RadarFieldError, ValueError):
    """Direction vectors do not span 3-space."""

    def __init__(self, message, smallest_singular_value=None):
        super().__init__(message)
        self.smallest_singular_value = smallest_singular_value


class RansacError(RadarFieldError, RuntimeError):
    """RANSAC found no usable consensus."""


class UndefinedMetricError(RadarFieldError, ValueError):
    """A metric was requested on an empty point cloud."""


class RegistrationError(RadarFieldError, RuntimeError):
    """Registration could not produce a transform."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class FileFormatError(RadarFieldError, ValueError):
    """A binary or text file does not match its declared layout."""
