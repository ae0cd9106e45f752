"""
Exceptions raised by the repair toolkit.

Every error carries an ``error_code`` so the command line can report it as
machine-readable JSON.
"""


class RepairError(Exception):
    """Base class for all toolkit errors."""

    error_code = 'repair_error'


class InputShapeError(RepairError, ValueError):
    error_code = 'input_shape'


class NNetFormatError(RepairError, ValueError):
    error_code = 'nnet_format'


class PropertyFormatError(RepairError, ValueError):
    error_code = 'property_format'


class ConfigError(RepairError, ValueError):
    error_code = 'config'


class PositivesUnavailable(RepairError):
    """No positive samples found even in the widest domain neighbourhood."""

    error_code = 'positives_unavailable'


class CorrectionImpossible(RepairError):
    """Negative outputs cannot be corrected without positive outputs to imitate."""

    error_code = 'correction_impossible'


class DivergenceError(RepairError, ArithmeticError):
    error_code = 'divergence'


class FetchError(RepairError):
    error_code = 'fetch'
