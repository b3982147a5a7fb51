"""Exception taxonomy.

Configuration problems derive from :class:`ConfigError`; violations of a
numerical contract (tracking, positivity, degeneracy, ...) derive from
:class:`NumericalContractError`.  The command line maps the two families to
exit codes 2 and 3.
"""


class ConfigError(ValueError):
    pass


class InvalidGrid(ConfigError):
    pass


class NumericalContractError(RuntimeError):
    pass


class DegenerateBand(NumericalContractError, ValueError):
    pass


class DegenerateSpectrum(NumericalContractError):
    pass


class TrackingLost(NumericalContractError):
    """Matched eigenvector overlap fell below the floor between two steps."""

    def __init__(self, message, time=None, overlap=None, suggested_steps=None):
        super().__init__(message)
        self.time = time
        self.overlap = overlap
        self.suggested_steps = suggested_steps


class NonPhysical(NumericalContractError):
    pass


class NullLindblad(NumericalContractError, ValueError):
    pass


class DegenerateSteadyState(NumericalContractError):
    pass


class NoCriticalMode(NumericalContractError):
    pass


class ZeroSlope(NumericalContractError):
    pass


class UnwrapAmbiguity(NumericalContractError):
    pass


class SpinVanishes(NumericalContractError):
    pass


class NoChiralSymmetry(NumericalContractError):
    pass


class NotApplicable(NumericalContractError):
    pass
