"""Exception hierarchy. Each family maps to one CLI exit code."""


class QSError(Exception):
    exit_code = 1


class ConfigError(QSError):
    exit_code = 2


class DataError(QSError):
    exit_code = 3


class NumericalError(QSError):
    exit_code = 4


class RankDeficientError(NumericalError):
    def __init__(self, message, cond=float("inf")):
        super().__init__(f"{message} (cond={cond:.3e})")
        self.cond = float(cond)


class IllConditionedError(NumericalError):
    def __init__(self, message, cond):
        super().__init__(f"{message} (cond={cond:.3e})")
        self.cond = float(cond)


class SolverError(NumericalError):
    def __init__(self, message, tau=None):
        super().__init__(message if tau is None else f"{message} at tau={tau:g}")
        self.tau = tau


class BootstrapReliabilityError(QSError):
    exit_code = 5

    def __init__(self, message, failures, replicates):
        super().__init__(f"{message} ({failures}/{replicates} replicates failed)")
        self.failures = failures
        self.replicates = replicates
