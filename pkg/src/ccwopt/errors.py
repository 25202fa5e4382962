"""Exception hierarchy shared across the package."""


class CCWError(Exception):
    """Base class for all package errors."""


class DataError(CCWError):
    """Malformed or inconsistent dataset."""


class EmptyDataset(DataError):
    pass


class EmptyCluster(CCWError):
    """A bandwidth query matched no historical point."""

    def __init__(self, message="no historical point within bandwidth", candidate=None):
        super().__init__(message if candidate is None else f"{message} (candidate {candidate})")
        self.candidate = candidate


class ConditioningEventEmpty(CCWError):
    """No Monte Carlo draw fell inside the conditioning event."""


class DegenerateTarget(CCWError):
    """Some scenario makes (p - c) * d exactly equal to the profit target."""


class EmptyInterval(CCWError):
    pass


class BalanceViolation(CCWError):
    """Complementary slackness could not produce a feasible dual."""


class AllCandidatesInfeasible(CCWError):
    pass


class NonconvergenceGuard(CCWError):
    """The Benders loop ran more iterations than there are candidates."""


class SingularDesign(CCWError):
    pass


class ConfigError(CCWError):
    pass
