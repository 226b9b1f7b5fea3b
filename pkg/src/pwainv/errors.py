"""Exception and warning types raised across the package."""


class PwaError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(PwaError, ValueError):
    pass


class UnclaimedSignature(PwaError):
    """A localization vector is not claimed by any location."""

    def __init__(self, delta):
        self.delta = tuple(int(d) for d in delta)
        super().__init__(f"no location claims signature {self.delta}")


class NonDifferentiablePointWarning(UserWarning):
    """A simulated point lies exactly on a switching hyperplane."""


class Undetermined(PwaError):
    """No global relative degree was found up to the search cap."""

    def __init__(self, max_mu):
        self.max_mu = max_mu
        super().__init__(f"global relative degree undetermined up to {max_mu}")


class SequenceUnresolvable(PwaError):
    pass


class ZeroFeedthrough(PwaError):
    pass


class AssumptionViolated(PwaError):
    def __init__(self, assumption, detail=""):
        self.assumption = assumption
        super().__init__(f"{assumption} violated" + (f": {detail}" if detail else ""))


class SingularCoefficient(PwaError):
    pass


class SingularCB(SingularCoefficient):
    pass


class EigenvalueOnUnitCircle(PwaError):
    pass


class DecouplingFailed(PwaError):
    def __init__(self, location, residual):
        self.location = location
        self.residual = residual
        super().__init__(
            f"shared transform does not decouple location {location} "
            f"(relative off-diagonal residual {residual:.3e})"
        )


class SwitchingClassMismatch(PwaError):
    pass


class NoPredecessor(PwaError):
    def __init__(self, k):
        self.k = k
        super().__init__(f"no valid predecessor state at step {k}")


class Divergence(PwaError):
    pass


class UnstableFilter(PwaError):
    pass


class RealizationFailure(PwaError):
    pass


class ConfigError(PwaError, ValueError):
    pass


class IllConditionedWarning(UserWarning):
    pass
