class ExitCode:
    ok = 0
    config = 2
    numerical = 3
    io = 4


class Method:
    heom = "heom"
    stochastic = "stochastic"
    augmented = "augmented"
    tdvp = "tdvp"
    ttm = "ttm"
    pt_builders = (heom, stochastic, augmented)
    all = (heom, stochastic, augmented, tdvp, ttm)


class StreamPurpose:
    noise = 1
    fit_starts = 2
    bench = 3


class PtFormat:
    magic = b"PTMP"
    version = 1


class PtControlError(Exception):
    exit_code = ExitCode.numerical


class ConfigError(PtControlError, ValueError):
    exit_code = ExitCode.config


class FileFormatError(PtControlError, IOError):
    exit_code = ExitCode.io


class NumericalError(PtControlError, ArithmeticError):
    exit_code = ExitCode.numerical


class FitError(NumericalError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class NoiseFactorizationError(NumericalError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class StochasticInstabilityError(NumericalError):
    pass


class HierarchyOverflowError(NumericalError):
    pass


class FockOverflowError(NumericalError):
    pass


class OptimizationAbort(NumericalError):
    pass
