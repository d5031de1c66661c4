'''
Contains the exception hierarchy raised throughout the library.

Every exception carries a short machine-readable `code` which the command-line
interface prints alongside the message.
'''


class SpsimError(Exception):
    '''
    Base class of all errors raised by this library.
    '''
    code = 'error'


class ConfigError(SpsimError):
    '''
    Raised on invalid configuration values, unknown configuration keys, or
    unknown enumerated names (metrics, losses, objectives).
    '''
    code = 'config'


class DatasetError(SpsimError):
    '''
    Raised on malformed or inconsistent evaluation/embedding data.
    '''
    code = 'dataset'


class DimensionError(SpsimError):
    '''
    Raised when vector or matrix shapes do not line up.
    '''
    code = 'dimension'


class NumericalError(SpsimError):
    '''
    Raised when a parameter, gradient or loss becomes non-finite.
    '''
    code = 'numerical'


class StatisticsError(SpsimError):
    '''
    Raised on invalid input to a statistical routine.
    '''
    code = 'statistics'


class ZeroVarianceError(StatisticsError):
    '''
    Raised when a correlation is requested for a constant vector.
    '''
    code = 'zero-variance'
