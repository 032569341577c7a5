"""Exception taxonomy for the sweep kernel.

Config problems (exit code 2 territory) are kept separate from numerical
stage failures (exit code 3 territory) so the CLI can map them cleanly.
"""


class SweepError(Exception):
    """Base class for all kernel errors."""


class ConfigError(SweepError):
    """Scene-config schema violation; message carries a key/line anchor."""


class DomainError(SweepError):
    """Parameter outside its declared domain (e.g. t outside the interval)."""


class RegularityError(SweepError):
    """Degenerate surface point: ||S_u x S_v|| below the regularity floor."""


class NotOnFunnelError(SweepError):
    """Tangency residual too large for an operation that needs f = 0."""


class TracingError(SweepError):
    """Curve tracing failed to converge or exhausted its node budget."""


class DegenerateSliceError(TracingError):
    """||(f_u, f_v)|| vanished along a contact-curve slice."""


class DegeneracyError(SweepError):
    """General-position violation detected (e.g. f^z identically zero)."""


class ProjectionError(SweepError):
    """Closest-point projection onto the boundary failed to converge."""


class EvaluationError(SweepError):
    """Procedural Newton-Raphson evaluation diverged."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class DerivativeError(SweepError):
    """Procedural derivative system is singular (typically theta ~ 0)."""


class SeedBuildError(SweepError):
    """Seed-surface construction failed (component births/deaths, bad grid)."""


class SingularSeedError(SweepError):
    """Could not start a singular trim curve from a phi root."""


class ExcisionError(SweepError):
    """Trim-region marking is inconsistent with the traced trim curves."""


class ResourceError(SweepError):
    """A memory or size cap would be exceeded."""
