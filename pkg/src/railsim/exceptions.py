"""Exception hierarchy shared by all railsim modules."""


class RailsimError(Exception):
    """Base class for every error raised by railsim."""


class MalformedRecord(RailsimError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class InvariantViolation(RailsimError, ValueError):
    def __init__(self, field, message, line=None):
        self.field = field
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")


class MixedFrameRates(RailsimError, ValueError):
    pass


class DegeneratePolyline(RailsimError, ValueError):
    pass


class TooFewWaypoints(RailsimError, ValueError):
    pass


class PathTooShort(RailsimError, ValueError):
    pass


class HorizonExceeded(RailsimError, ValueError):
    pass


class EgoAlreadyStopped(RailsimError):
    pass


class NotApplicable(RailsimError):
    pass


class MissingParam(RailsimError, KeyError):
    pass


class IncomparableHorizons(RailsimError, ValueError):
    pass


class EmptySequence(RailsimError, ValueError):
    pass


class MissingTrace(RailsimError, ValueError):
    pass


class EmptyLog(RailsimError, ValueError):
    pass


class AllBucketsEmpty(RailsimError, ValueError):
    pass


class MissingPrediction(RailsimError, KeyError):
    def __init__(self, sample_id):
        self.sample_id = sample_id
        super().__init__(f"no prediction for sample {sample_id!r}")


class ConfigError(RailsimError, ValueError):
    pass
