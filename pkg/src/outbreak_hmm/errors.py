"""Exception hierarchy. Each class maps to one CLI exit code."""


class OutbreakHmmError(Exception):
    exit_code = 1


class UsageError(OutbreakHmmError, ValueError):
    exit_code = 2


class DataError(OutbreakHmmError, ValueError):
    exit_code = 3


class EvaluationError(DataError):
    pass


class NumericalError(OutbreakHmmError, ArithmeticError):
    exit_code = 4


class TrainingError(OutbreakHmmError, RuntimeError):
    exit_code = 4


class CalibrationError(NumericalError):
    pass
