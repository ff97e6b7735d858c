"""Exception types shared across the package."""


class ProxicboError(Exception):
    """Base class for errors raised by this package."""


class DimensionMismatchError(ProxicboError):
    """An input vector does not match the dimension an operator expects."""


class InvalidParameterError(ProxicboError):
    """A numeric parameter is outside its valid range (e.g. mu <= 0)."""


class DivergenceError(ProxicboError):
    """A solver produced a non-finite particle position.

    Carries enough context to identify the first offending particle.
    """

    def __init__(self, method, particle, iteration):
        self.method = method
        self.particle = particle
        self.iteration = iteration
        super().__init__(
            f"{method}: particle {particle} became non-finite at iteration {iteration}"
        )


class ConsensusSupportError(ProxicboError):
    """Every particle has infinite energy, so no consensus point exists."""


class FisherSingularError(ProxicboError):
    """The Fisher information matrix is numerically singular."""


class ConfigError(ProxicboError):
    """A benchmark or CLI configuration failed validation."""
