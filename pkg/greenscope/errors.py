class GreenscopeError(Exception):
    pass


class ParameterError(GreenscopeError, ValueError):
    pass


class FormatError(GreenscopeError, ValueError):
    pass


class VersionError(FormatError):
    pass


class ConvergenceError(GreenscopeError, RuntimeError):
    pass


class CriticalLevelError(GreenscopeError, ValueError):
    pass


class ClassificationError(GreenscopeError, ValueError):
    pass
