"""Exception types shared across the package."""


class LatticeBNFError(Exception):
    """Base class for all package errors."""


class InvalidWindow(LatticeBNFError):
    pass


class WindowMismatch(LatticeBNFError):
    pass


class InvalidRadius(LatticeBNFError):
    pass


class ZeroVector(LatticeBNFError):
    pass


class ResonantDivisor(LatticeBNFError):
    """A small divisor fell below the nonresonance threshold.

    Carries the offending multi-index, the divisor value and the threshold.
    """

    def __init__(self, index, divisor, threshold):
        self.index = index
        self.divisor = divisor
        self.threshold = threshold
        super().__init__(
            f"divisor {divisor:.6e} below threshold {threshold:.6e} for {index}"
        )


class ResonantTermInRHS(LatticeBNFError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"resonant term {index} in homological right-hand side")


class LieSeriesDiverges(LatticeBNFError):
    pass


class BoundViolation(LatticeBNFError):
    """An analytic norm inequality failed under strict checking."""

    def __init__(self, name, lhs, rhs):
        self.name = name
        self.lhs = lhs
        self.rhs = rhs
        super().__init__(f"{name}: {lhs:.6e} > {rhs:.6e}")


class ScheduleExceeded(LatticeBNFError):
    pass


class MalformedDiagonal(LatticeBNFError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"non-quadratic term {index} in diagonal polynomial")


class BarrierLeak(LatticeBNFError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"far-field term {index} violates the tail cancellation identity")


class WindowTooSmall(LatticeBNFError):
    pass


class BoundaryContaminated(LatticeBNFError):
    """Boundary mass crossed the abort threshold at time ``t``.

    The trajectory recorded up to (not including) ``t`` remains valid and is
    attached as ``trajectory``.
    """

    def __init__(self, t, trajectory=None):
        self.t = t
        self.trajectory = trajectory
        super().__init__(f"boundary mass above threshold at t={t:g}")


class ConfigError(LatticeBNFError):
    pass


class UnknownKey(ConfigError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown config key: {name}")


class InvalidValue(ConfigError):
    def __init__(self, name, reason):
        self.name = name
        self.reason = reason
        super().__init__(f"invalid value for {name}: {reason}")


class MissingField(ConfigError):
    def __init__(self, name, mode=None):
        self.name = name
        self.mode = mode
        msg = f"missing required config field: {name}"
        if mode:
            msg += f" (mode={mode})"
        super().__init__(msg)
