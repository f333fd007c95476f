"""Error taxonomy shared by the library and the CLI.

Exit codes: 2 configuration, 3 data, 4 numerical failure. Plain ValueError
is used for bad arguments to individual operations; the CLI maps it to a
data error.
"""


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError):
    exit_code = 2


class DataError(PipelineError):
    exit_code = 3


class NumericalError(PipelineError):
    exit_code = 4


class VolumeFormatError(DataError):
    """Malformed or truncated volume/series file."""
