"""Exception hierarchy shared by all modules."""


class MlOracleError(Exception):
    """Base class for every error raised by this package."""


class NotPositiveDefinite(MlOracleError):
    pass


class NonFiniteObjective(MlOracleError):
    pass


class InfeasibleBounds(MlOracleError):
    pass


class PenaltyDiverged(MlOracleError):
    def __init__(self, message, x=None, violation=None):
        super().__init__(message)
        self.x = x
        self.violation = violation


class NewtonDiverged(MlOracleError):
    pass


class NonFiniteState(MlOracleError):
    pass


class SimulationError(MlOracleError):
    """Integration failure annotated with the step index where it happened."""

    def __init__(self, message, step, cause=None):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.cause = cause


class DimensionMismatch(MlOracleError, ValueError):
    pass


class EmptyDataset(MlOracleError):
    pass


class AcceptanceNotReached(MlOracleError):
    """Coordinator gave up; ``best`` holds the best map found so far."""

    def __init__(self, message, best=None, best_metric=None):
        super().__init__(message)
        self.best = best
        self.best_metric = best_metric


class TransformFailed(MlOracleError):
    def __init__(self, message, index):
        super().__init__(f"sample {index}: {message}")
        self.index = index


class TrainingSimulationFailed(MlOracleError):
    def __init__(self, message, round_index, step):
        super().__init__(f"round {round_index}, step {step}: {message}")
        self.round_index = round_index
        self.step = step


class MpcRolloutFailed(MlOracleError):
    pass


class InfeasibleBackoff(MlOracleError):
    pass


class InsufficientData(MlOracleError):
    pass


class SingleClassDataset(MlOracleError):
    pass


class ConfigInvalid(MlOracleError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class IoFailure(MlOracleError):
    pass


class ImitationSampleFailed(MlOracleError):
    """MPC could not label a sampled state; ``state`` is the offending point."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


class StepFailed(MlOracleError):
    """A scenario step failed; ``step`` is the sample (or ILC iteration) index."""

    def __init__(self, message, step, cause=None):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.cause = cause
